"""Nielsen moves on word tuples: basis recognition and change of basis.

Works at the raw letter level (lists of signed ints).  Used to invert
automorphisms and to rewrite subgroup elements in a user-given basis: both
reduce to expressing the standard generators in terms of a basis tuple.
"""

from __future__ import annotations

from collections import deque

from . import kernel
from .errors import IterationBudgetExceeded, NotAnAutomorphism

_DEFAULT_BUDGET = 50_000


def _moves(n):
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for eps in (1, -1):
                yield ("r", i, j, eps)
                yield ("l", i, j, eps)


def _apply(move, tup):
    kind, i, j, eps = move
    wj = tup[j] if eps == 1 else kernel.invert_word(tup[j])
    new = list(tup)
    if kind == "r":
        new[i] = tuple(kernel.concat(tup[i], wj))
    else:
        new[i] = tuple(kernel.concat(wj, tup[i]))
    return tuple(new)


def _total(tup):
    return sum(len(w) for w in tup)


def reduce_to_permutation(ws, budget=_DEFAULT_BUDGET):
    """Nielsen-reduce a basis tuple down to single letters.

    Returns the list of moves applied.  Greedy strict descent on total
    length, with a breadth-first plateau search when the greedy step stalls
    (Nielsen's theorem guarantees a non-increasing path exists for genuine
    bases).  Raises NotAnAutomorphism if the tuple cannot reach length n.
    """
    n = len(ws)
    tup = tuple(tuple(w) for w in ws)
    if any(len(w) == 0 for w in tup):
        raise NotAnAutomorphism("an image is trivial")
    path = []
    nodes = 0
    while _total(tup) > n:
        best = None
        for move in _moves(n):
            cand = _apply(move, tup)
            if _total(cand) < _total(tup):
                best = (move, cand)
                break
        if best is not None:
            path.append(best[0])
            tup = best[1]
            continue
        # plateau: breadth-first over equal-length tuples
        seen = {tup}
        queue = deque([(tup, [])])
        found = None
        while queue:
            cur, curpath = queue.popleft()
            nodes += 1
            if nodes > budget:
                raise IterationBudgetExceeded("Nielsen plateau search budget exceeded")
            for move in _moves(n):
                cand = _apply(move, cur)
                t = _total(cand)
                if t < _total(tup):
                    found = (curpath + [move], cand)
                    break
                if t == _total(tup) and cand not in seen:
                    seen.add(cand)
                    queue.append((cand, curpath + [move]))
            if found:
                break
        if found is None:
            raise NotAnAutomorphism("tuple is not a basis (stuck above minimal length)")
        path.extend(found[0])
        tup = found[1]
    letters = [w[0] for w in tup]
    if sorted(abs(x) for x in letters) != list(range(1, n + 1)):
        raise NotAnAutomorphism("reduced tuple is not a signed permutation")
    return path, tup


def express_generators(ws, budget=_DEFAULT_BUDGET):
    """Express each standard generator as a word in the basis tuple ``ws``.

    ``ws`` must be a basis of the rank-``len(ws)`` free group it lives in.
    Returns ``exprs`` with ``exprs[k-1]`` a word over symbols ``±1..±n``
    (indices into ``ws``) that substitutes to the generator ``k``.
    """
    n = len(ws)
    path, final = reduce_to_permutation(ws, budget)
    # replay the moves on the identity tuple: after the replay, entry i
    # expresses final[i] in the original ws-symbols
    exprs = [(i + 1,) for i in range(n)]
    for kind, i, j, eps in path:
        ej = exprs[j] if eps == 1 else tuple(kernel.invert_word(exprs[j]))
        if kind == "r":
            exprs[i] = tuple(kernel.concat(exprs[i], ej))
        else:
            exprs[i] = tuple(kernel.concat(ej, exprs[i]))
    out = [None] * n
    for i, w in enumerate(final):
        letter = w[0]
        if letter > 0:
            out[letter - 1] = list(exprs[i])
        else:
            out[-letter - 1] = kernel.invert_word(exprs[i])
    return out
