"""Exact arithmetic on free group systems: generators, reduced words, complexity.

A free group system is a finite disjoint union of free groups of positive
rank.  Elements are freely reduced words tagged with the component they live
in; the empty word of component ``c`` is the identity of that component.
Letters are stored as nonzero signed integers (generator ``k``, 1-based, is
``k``; its inverse is ``-k``), which keeps reduction and hashing cheap and
feeds the compiled kernel directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from . import kernel
from .errors import MixedComponents, SystemMismatch


@dataclass(frozen=True)
class Generator:
    """A signed basis letter of one system component."""

    component: int
    ordinal: int
    sign: int

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if self.ordinal < 0:
            raise ValueError("ordinal must be nonnegative")

    def inverse(self) -> "Generator":
        return Generator(self.component, self.ordinal, -self.sign)

    @property
    def letter(self) -> int:
        return self.sign * (self.ordinal + 1)


class Word:
    """A freely reduced word in one component of a free group system.

    Words are immutable; all arithmetic goes through the kernel and returns
    new instances.  ``Word(component, letters)`` reduces its input.
    """

    __slots__ = ("component", "letters", "_hash")

    def __init__(self, component: int, letters: Iterable[int] = (), *, _reduced=False):
        object.__setattr__(self, "component", component)
        lst = list(letters)
        if not _reduced:
            lst = kernel.reduce_word(lst)
        object.__setattr__(self, "letters", tuple(lst))
        object.__setattr__(self, "_hash", None)

    def __setattr__(self, *a):
        raise AttributeError("Word is immutable")

    # -- basic protocol ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.letters)

    def __bool__(self) -> bool:
        return bool(self.letters)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Word)
            and self.component == other.component
            and self.letters == other.letters
        )

    def __hash__(self):
        h = self._hash
        if h is None:
            h = hash((self.component, self.letters))
            object.__setattr__(self, "_hash", h)
        return h

    def __repr__(self) -> str:
        return f"Word({self.component}, '{self}')"

    def __str__(self) -> str:
        if not self.letters:
            return "1"
        return " ".join(letter_str(x) for x in self.letters)

    # -- group operations --------------------------------------------------

    def __mul__(self, other: "Word") -> "Word":
        if self.component != other.component:
            raise MixedComponents(
                f"cannot multiply component {self.component} by {other.component}"
            )
        return Word(self.component, kernel.concat(self.letters, other.letters), _reduced=True)

    def inverse(self) -> "Word":
        return Word(self.component, kernel.invert_word(self.letters), _reduced=True)

    def __pow__(self, n: int) -> "Word":
        base = self if n >= 0 else self.inverse()
        n = abs(n)
        result = Word(self.component)
        acc = base
        while n:
            if n & 1:
                result = result * acc
            n >>= 1
            if n:
                acc = acc * acc
        return result

    def conjugate_by(self, u: "Word") -> "Word":
        """u * self * u^-1."""
        return u * self * u.inverse()

    def is_identity(self) -> bool:
        return not self.letters

    @property
    def generators(self) -> tuple[Generator, ...]:
        return tuple(
            Generator(self.component, abs(x) - 1, 1 if x > 0 else -1) for x in self.letters
        )


def letter_str(x: int) -> str:
    name = chr(ord("a") + (abs(x) - 1) % 26)
    suffix = "" if abs(x) <= 26 else str((abs(x) - 1) // 26)
    return name + suffix + ("'" if x < 0 else "")


@dataclass(frozen=True)
class FreeGroupSystem:
    """Finite list of component ranks."""

    ranks: tuple[int, ...]

    def __post_init__(self):
        if len(self.ranks) == 0:
            raise ValueError("a free group system must have at least one component")
        if any(r < 1 for r in self.ranks):
            raise ValueError("component ranks must be >= 1")

    @property
    def num_components(self) -> int:
        return len(self.ranks)

    def rank(self, component: int) -> int:
        return self.ranks[component]

    def generator(self, component: int, ordinal: int) -> Word:
        if not 0 <= ordinal < self.ranks[component]:
            raise ValueError("ordinal out of range")
        return Word(component, (ordinal + 1,), _reduced=True)

    def generators(self, component: int) -> list[Word]:
        return [self.generator(component, k) for k in range(self.ranks[component])]

    def identity(self, component: int) -> Word:
        return Word(component)

    def word(self, component: int, letters: Iterable[int]) -> Word:
        w = Word(component, letters)
        for x in w.letters:
            if abs(x) > self.ranks[component]:
                raise ValueError(f"letter {x} outside rank-{self.ranks[component]} component")
        return w

    def enumerate_words(self, component: int, max_len: int) -> Iterable[Word]:
        """All reduced words of length <= max_len, shortlex order."""
        rank = self.ranks[component]
        alphabet = [k for g in range(1, rank + 1) for k in (g, -g)]
        frontier = [()]
        yield Word(component)
        for _ in range(max_len):
            nxt = []
            for w in frontier:
                for x in alphabet:
                    if w and w[-1] == -x:
                        continue
                    nxt.append(w + (x,))
                    yield Word(component, w + (x,), _reduced=True)
            frontier = nxt


def reduce(raw: Sequence[Generator]) -> Word:
    """Freely reduce a raw generator sequence into a Word.

    Raises MixedComponents when letters span several components.  The empty
    sequence is not reducible to a component-tagged identity, so it is
    rejected too; use ``FreeGroupSystem.identity`` for that.
    """
    if not raw:
        raise MixedComponents("empty sequence has no component; use identity()")
    comps = {g.component for g in raw}
    if len(comps) != 1:
        raise MixedComponents(f"letters span components {sorted(comps)}")
    return Word(raw[0].component, [g.letter for g in raw])


def cyclic_reduce(w: Word) -> tuple[Word, Word]:
    """Split w as conjugator * core * conjugator^-1 with core cyclically reduced."""
    i, j = kernel.cyclic_bounds(w.letters)
    core = Word(w.component, w.letters[i:j], _reduced=True)
    conj = Word(w.component, w.letters[:i], _reduced=True)
    return core, conj


def cyclic_word(w: Word) -> tuple[int, ...]:
    """Canonical form of the conjugacy class of w: lexicographically least
    rotation of the cyclically reduced core."""
    core, _ = cyclic_reduce(w)
    letters = core.letters
    if not letters:
        return ()
    rotations = [letters[i:] + letters[:i] for i in range(len(letters))]
    return min(rotations)


def conjugate_in_free_group(u: Word, v: Word) -> bool:
    """Exact conjugacy test via cyclic reduction plus rotation comparison."""
    return u.component == v.component and cyclic_word(u) == cyclic_word(v)


def complexity(obj) -> int:
    """Complexity 2*rank - 1 summed over components.

    Accepts a FreeGroupSystem, a plain rank (int), or anything exposing
    ``ranks``; an empty collection of ranks contributes 0.
    """
    if isinstance(obj, int):
        return 2 * obj - 1
    ranks = getattr(obj, "ranks", None)
    if ranks is None:
        raise SystemMismatch(f"cannot take complexity of {obj!r}")
    return sum(2 * r - 1 for r in ranks)
