"""Automorphisms of free group systems: application, composition, inversion.

An automorphism permutes components (``sigma``) and carries each basis
generator of component ``i`` to a word in component ``sigma[i]``.  Nothing is
trusted: ``is_automorphism`` verifies surjectivity by Stallings folding, and
``invert`` recovers the inverse through Nielsen moves.
"""

from __future__ import annotations

import re

from . import kernel, nielsen
from .errors import MixedComponents, NotAnAutomorphism, ParseError, SystemMismatch
from .subgroups import SubgroupGraph
from .words import FreeGroupSystem, Word


class Automorphism:
    """A candidate automorphism of a free group system.

    ``images[i][k]`` is the image of generator ``k`` of component ``i``; it
    must live in component ``sigma[i]``.  The ``verified`` flag is set only
    after :func:`is_automorphism` passes.
    """

    __slots__ = ("system", "sigma", "images", "verified")

    def __init__(self, system: FreeGroupSystem, images, sigma=None):
        self.system = system
        n = system.num_components
        self.sigma = tuple(sigma) if sigma is not None else tuple(range(n))
        if sorted(self.sigma) != list(range(n)):
            raise SystemMismatch("sigma is not a permutation of the components")
        self.images = tuple(tuple(imgs) for imgs in images)
        if len(self.images) != n:
            raise SystemMismatch("one image list per component required")
        for i, imgs in enumerate(self.images):
            if len(imgs) != system.rank(i):
                raise SystemMismatch(f"component {i} needs {system.rank(i)} images")
            if system.rank(self.sigma[i]) != system.rank(i):
                raise NotAnAutomorphism("sigma maps between components of different rank")
            for w in imgs:
                if w.component != self.sigma[i]:
                    raise MixedComponents(
                        f"image {w} of component {i} must live in component {self.sigma[i]}"
                    )
        self.verified = False

    # -- constructors ------------------------------------------------------

    @classmethod
    def identity(cls, system: FreeGroupSystem) -> "Automorphism":
        phi = cls(system, [system.generators(i) for i in range(system.num_components)])
        phi.verified = True
        return phi

    @classmethod
    def from_strings(cls, system: FreeGroupSystem, mapping: dict[str, str]) -> "Automorphism":
        """Single-component convenience: {'a': 'a b', 'b': 'a'}."""
        if system.num_components != 1:
            raise SystemMismatch("from_strings only supports single-component systems")
        images = []
        for k in range(system.rank(0)):
            name = chr(ord("a") + k)
            if name not in mapping:
                raise ParseError(f"missing image for generator {name}")
            images.append(parse_word(system, 0, mapping[name]))
        return cls(system, [images])

    # -- action ------------------------------------------------------------

    def _raw_images(self, component: int):
        return [list(w.letters) for w in self.images[component]]

    def apply(self, w: Word) -> Word:
        """Substitute each letter by its image (inverting negatives), reduce."""
        out = kernel.substitute(w.letters, self._raw_images(w.component))
        return Word(self.sigma[w.component], out, _reduced=True)

    def __call__(self, w: Word) -> Word:
        return self.apply(w)

    def apply_power(self, w: Word, n: int) -> Word:
        for _ in range(n):
            w = self.apply(w)
        return w

    # -- algebra -----------------------------------------------------------

    def compose(self, other: "Automorphism") -> "Automorphism":
        """self after other: (self∘other)(g) = self(other(g))."""
        if self.system != other.system:
            raise SystemMismatch("composition needs a common system")
        images = []
        for i in range(self.system.num_components):
            images.append([self.apply(w) for w in other.images[i]])
        sigma = tuple(self.sigma[other.sigma[i]] for i in range(len(self.sigma)))
        phi = Automorphism(self.system, images, sigma)
        phi.verified = self.verified and other.verified
        return phi

    def __mul__(self, other):
        return self.compose(other)

    def power(self, n: int) -> "Automorphism":
        result = Automorphism.identity(self.system)
        for _ in range(n):
            result = self.compose(result)
        return result

    def is_identity(self) -> bool:
        return all(
            self.sigma[i] == i
            and all(w.letters == (k + 1,) for k, w in enumerate(self.images[i]))
            for i in range(self.system.num_components)
        )

    def __eq__(self, other):
        return (
            isinstance(other, Automorphism)
            and self.system == other.system
            and self.sigma == other.sigma
            and self.images == other.images
        )

    def __repr__(self):
        parts = []
        for i in range(self.system.num_components):
            for k, w in enumerate(self.images[i]):
                parts.append(f"{Word(i, (k + 1,))} -> {w}")
        return "Automorphism(" + ", ".join(parts) + ")"


def is_automorphism(phi: Automorphism) -> bool:
    """Decide surjectivity (hence bijectivity) by folding the image graphs.

    The images of a component's basis generate the full target component
    exactly when the folded graph is the rose: one vertex carrying all
    target generators as loops.  Sets the verified flag on success.
    """
    for i in range(phi.system.num_components):
        target = phi.sigma[i]
        graph = SubgroupGraph(target, phi.system.rank(target), phi.images[i])
        if not graph.is_whole_group():
            return False
    phi.verified = True
    return True


def invert(phi: Automorphism) -> Automorphism:
    """Inverse automorphism via Nielsen reduction of the image tuples."""
    if not phi.verified and not is_automorphism(phi):
        raise NotAnAutomorphism(f"{phi!r} is not an automorphism")
    n = phi.system.num_components
    inv_sigma = [0] * n
    for i, j in enumerate(phi.sigma):
        inv_sigma[j] = i
    images = [None] * n
    for i in range(n):
        j = phi.sigma[i]
        # generators of component j as words in the images of component i
        exprs = nielsen.express_generators([list(w.letters) for w in phi.images[i]])
        images[j] = [Word(i, e, _reduced=True) for e in exprs]
    psi = Automorphism(phi.system, images, tuple(inv_sigma))
    check = phi.compose(psi)
    if not check.is_identity():
        raise NotAnAutomorphism("inversion failed the roundtrip check")
    psi.verified = True
    return psi


# -- text format -----------------------------------------------------------

_GEN_RE = re.compile(r"([a-z])(\d*)('|\^-1)?")


def _parse_letter(token: str, rank: int):
    m = _GEN_RE.fullmatch(token)
    if not m:
        raise ParseError(f"bad generator token {token!r}")
    name, digits, inv = m.groups()
    ordinal = (ord(name) - ord("a")) + (26 * int(digits) if digits else 0)
    if ordinal >= rank:
        raise ParseError(f"generator {token!r} outside rank-{rank} component")
    return (ordinal + 1) * (-1 if inv else 1)


def _tokenize_word(text: str):
    # split on whitespace; also split glued tokens like "ab'" into letters
    tokens = []
    for chunk in text.split():
        pos = 0
        while pos < len(chunk):
            m = _GEN_RE.match(chunk, pos)
            if not m or m.start() != pos or m.end() == pos:
                raise ParseError(f"cannot tokenize {chunk!r}")
            tokens.append(m.group(0))
            pos = m.end()
    return tokens


def parse_word(system: FreeGroupSystem, component: int, text: str) -> Word:
    text = text.strip()
    if text in ("", "1", "e"):
        return Word(component)
    rank = system.rank(component)
    letters = [_parse_letter(t, rank) for t in _tokenize_word(text)]
    return Word(component, letters)


def parse_automorphism(text: str) -> Automorphism:
    """Parse the `gen -> word` format, components separated by `---` lines.

    Example::

        a -> a b
        b -> a

    Inverses are written ``a'`` or ``a^-1``.  All images of one block must
    use that block's generators; cross-component images are expressed by a
    sigma line ``sigma: j`` at the top of a block (defaults to identity).
    """
    blocks = [[]]
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if set(line) == {"-"} and len(line) >= 3:
            blocks.append([])
            continue
        blocks[-1].append(line)
    blocks = [b for b in blocks if b]
    if not blocks:
        raise ParseError("no generator images found")

    sigma = []
    per_block = []
    for bi, block in enumerate(blocks):
        target = bi
        rows = []
        for line in block:
            if line.startswith("sigma:"):
                target = int(line.split(":", 1)[1])
                continue
            if "->" not in line:
                raise ParseError(f"expected 'gen -> word', got {line!r}")
            lhs, rhs = line.split("->", 1)
            rows.append((lhs.strip(), rhs.strip()))
        if not rows:
            raise ParseError(f"component block {bi} has no images")
        sigma.append(target)
        per_block.append(rows)

    ranks = [len(rows) for rows in per_block]
    system = FreeGroupSystem(tuple(ranks))
    if sorted(sigma) != list(range(len(blocks))):
        raise ParseError("sigma lines do not form a permutation")

    images = []
    for bi, rows in enumerate(per_block):
        target = sigma[bi]
        seen = {}
        for lhs, rhs in rows:
            letter = _parse_letter(lhs, ranks[bi])
            if letter < 0:
                raise ParseError("left-hand side must be a positive generator")
            if letter in seen:
                raise ParseError(f"duplicate image for {lhs}")
            seen[letter] = parse_word(system, target, rhs)
        if sorted(seen) != list(range(1, ranks[bi] + 1)):
            raise ParseError(f"component {bi}: images must cover generators 1..{ranks[bi]}")
        images.append([seen[k] for k in range(1, ranks[bi] + 1)])
    return Automorphism(system, images, tuple(sigma))
