"""Irreducible train tracks: Perron-Frobenius data, legality, and the
Bestvina-Handel search.

The search operates on a mutable working copy of a topological
representative.  Moves: tightening, subdivision, folding (with a possible
vertex-group twist at labeled vertices), valence-one and valence-two
homotopies, and collapsing invariant subgraphs.  A proper invariant subgraph
that is not a forest triggers the lower-stratum outcome: the subgraph
components are collapsed into labeled vertices whose groups properly carry
the previous vertex groups, and the induced representative is returned for
the caller to reprocess.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import IterationBudgetExceeded, NoConvergence, NotIrreducible, SystemMismatch
from .marked_graph import (
    Edge,
    FreeSplitting,
    TopRep,
    Vertex,
    Walk,
    is_irreducible,
    make_walk,
    realize_loop,
    transition_matrix,
    trivial_walk,
    walk_concat,
    walk_invert,
    walk_value,
)
from .words import Word


@dataclass
class PerronFrobeniusData:
    lam: float
    nu: tuple[float, ...]
    tol: float


def perron_frobenius(A, tol=1e-12, max_iter=200_000) -> PerronFrobeniusData:
    """Dominant eigenpair of an irreducible nonnegative integer matrix.

    Power iteration on A + I (primitive whenever A is irreducible, which
    sidesteps periodicity); the eigenvector is normalized to unit l1 norm.
    """
    if not is_irreducible(A):
        raise NotIrreducible("matrix is not irreducible")
    M = np.asarray(A, dtype=float)
    n = M.shape[0]
    B = M + np.eye(n)
    v = np.full(n, 1.0 / n)
    lam_b = None
    for _ in range(max_iter):
        w = B @ v
        s = w.sum()
        w /= s
        if np.max(np.abs(w - v)) < tol and lam_b is not None and abs(s - lam_b) < tol:
            v = w
            lam_b = s
            break
        v = w
        lam_b = s
    else:
        raise NoConvergence("power iteration did not stabilize")
    lam = lam_b - 1.0
    v = v / v.sum()
    resid = np.max(np.abs(M @ v - lam * v))
    if resid > max(tol, 1e-9) * max(1.0, np.max(np.abs(v))) * 10:
        raise NoConvergence(f"eigenpair residual {resid} too large")
    return PerronFrobeniusData(float(lam), tuple(float(x) for x in v), tol)


# -- germs, gates, legality ----------------------------------------------


def germs_at(splitting: FreeSplitting, vid: int) -> list[int]:
    """Outgoing oriented edges at a vertex (a loop contributes both signs)."""
    out = []
    for i, e in enumerate(splitting.edges):
        if e.u == vid:
            out.append(i + 1)
        if e.v == vid:
            out.append(-(i + 1))
    return out


def all_germs(splitting: FreeSplitting) -> list[int]:
    out = []
    for i in range(len(splitting.edges)):
        out.extend((i + 1, -(i + 1)))
    return out


def _image_walk(rep: TopRep, germ: int) -> Walk:
    w = rep.edge_map[abs(germ) - 1]
    return w if germ > 0 else walk_invert(rep.splitting, w)


def derivative(rep: TopRep, germ: int):
    """(image germ, prefix insertion) of an oriented edge germ under f."""
    w = _image_walk(rep, germ)
    if not w.steps:
        raise SystemMismatch("degenerate edge image has no derivative")
    return w.steps[0][0], w.g0


def turn_is_legal(rep: TopRep, d1: int, g: Word, d2: int) -> bool:
    """Decide legality of the turn (d1, g, d2) at the germs' common vertex.

    Iterates the derivative with insertion bookkeeping; a turn is illegal
    exactly when some iterate degenerates (equal germs, trivial insertion).
    Equal germs with a nontrivial insertion stay nontrivial forever, and a
    germ pair that revisits a state without coinciding never degenerates.
    """
    sp = rep.splitting
    vid = sp.oriented(d1)[0]
    seen = set()
    while True:
        if d1 == d2:
            return not g.is_identity()
        if (d1, d2) in seen:
            return True
        seen.add((d1, d2))
        nd1, h1 = derivative(rep, d1)
        nd2, h2 = derivative(rep, d2)
        g = h1.inverse() * rep.image_insertion(vid, g) * h2
        vid = rep.vertex_map[vid]
        d1, d2 = nd1, nd2


def gates(rep: TopRep) -> dict[int, list[list[int]]]:
    """Per-vertex partition of germs under the iterated derivative map."""
    sp = rep.splitting
    D = {}
    for d in all_germs(sp):
        D[d] = derivative(rep, d)[0]
    out = {}
    nger = len(D)
    for vid in range(len(sp.vertices)):
        local = germs_at(sp, vid)
        parent = {d: d for d in local}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for i, d1 in enumerate(local):
            for d2 in local[i + 1 :]:
                a, b = d1, d2
                for _ in range(nger + 1):
                    if a == b:
                        parent[find(d1)] = find(d2)
                        break
                    a, b = D[a], D[b]
        groups = {}
        for d in local:
            groups.setdefault(find(d), []).append(d)
        out[vid] = sorted(sorted(g) for g in groups.values())
    return out


def illegal_turns(rep: TopRep) -> set[frozenset]:
    """Unordered germ pairs (no insertion) that degenerate under iteration."""
    sp = rep.splitting
    out = set()
    for vid in range(len(sp.vertices)):
        local = germs_at(sp, vid)
        c = sp.vertices[vid].component
        for i, d1 in enumerate(local):
            for d2 in local[i + 1 :]:
                if not turn_is_legal(rep, d1, Word(c), d2):
                    out.add(frozenset((d1, d2)))
    return out


def walk_turns(w: Walk):
    """(reversed-incoming germ, insertion, outgoing germ) for interior turns."""
    for i in range(len(w.steps) - 1):
        s, g = w.steps[i]
        yield (-s, g, w.steps[i + 1][0])


def is_legal(path: Walk, rep: TopRep) -> bool:
    """A reduced path is legal when no turn it crosses is illegal."""
    return all(turn_is_legal(rep, d1, g, d2) for d1, g, d2 in walk_turns(path))


def _turn_depth(rep: TopRep, turn) -> Optional[int]:
    """Steps until the turn degenerates, or None when it is legal."""
    sp = rep.splitting
    d1, g, d2 = turn
    vid = sp.oriented(d1)[0]
    seen = set()
    depth = 0
    while True:
        if d1 == d2:
            return depth if g.is_identity() else None
        if (d1, d2) in seen:
            return None
        seen.add((d1, d2))
        nd1, h1 = derivative(rep, d1)
        nd2, h2 = derivative(rep, d2)
        g = h1.inverse() * rep.image_insertion(vid, g) * h2
        vid = rep.vertex_map[vid]
        d1, d2 = nd1, nd2
        depth += 1


def first_illegal_crossing(rep: TopRep):
    """(edge id, turn index, turn) of the illegal turn of minimal degeneracy
    depth crossed by an edge image; None when f is a train track.

    Minimal depth matters for termination: resolving a deepest-first would
    let later cleanups undo the fold chain.
    """
    best = None
    for eid in range(len(rep.splitting.edges)):
        for t, turn in enumerate(walk_turns(rep.edge_map[eid])):
            depth = _turn_depth(rep, turn)
            if depth is not None and (best is None or depth < best[0]):
                best = (depth, eid, t, turn)
    if best is None:
        return None
    return best[1], best[2], best[3]


# -- train tracks ---------------------------------------------------------


def _is_permutation_matrix(A) -> bool:
    n = len(A)
    return all(sum(A[i][j] for i in range(n)) == 1 for j in range(n)) and all(
        sum(A[i][j] for j in range(n)) == 1 for i in range(n)
    )


class TrainTrack:
    """An irreducible topological representative with all edge images legal.

    Simplicial automorphisms (edges map to single edges, so the matrix is a
    permutation) are accepted as lambda = 1 tracks even when the permutation
    has several cycles; the eigenvector is then exactly uniform.
    """

    def __init__(self, rep: TopRep, tol=1e-12, move_log=None):
        self.rep = rep
        self.matrix = transition_matrix(rep)
        n = len(self.matrix)
        if _is_permutation_matrix(self.matrix):
            self.pf = PerronFrobeniusData(1.0, tuple([1.0 / n] * n), tol)
        elif is_irreducible(self.matrix):
            # For edge lengths we need A^T nu = lambda nu so that the image
            # of edge j has eigenlength lambda * nu_j.
            At = [[self.matrix[j][i] for j in range(n)] for i in range(n)]
            self.pf = perron_frobenius(At, tol)
        else:
            raise NotIrreducible("train track needs an irreducible matrix")
        self.gates = gates(rep)
        self.illegal = illegal_turns(rep)
        self.move_log = list(move_log or [])

    @property
    def lam(self) -> float:
        return self.pf.lam

    @property
    def lengths(self) -> tuple[float, ...]:
        return self.pf.nu

    @property
    def splitting(self) -> FreeSplitting:
        return self.rep.splitting

    def is_simplicial(self, tol=1e-9) -> bool:
        return abs(self.lam - 1.0) <= tol

    def eigen_length_of_walk(self, w: Walk) -> float:
        return sum(self.lengths[abs(s) - 1] for s, _ in w.steps)

    def report(self) -> dict:
        return {
            "lambda": self.lam,
            "simplicial": self.is_simplicial(),
            "matrix": self.matrix,
            "lengths": list(self.lengths),
            "gates": {str(v): gs for v, gs in sorted(self.gates.items())},
            "illegal_turns": sorted(sorted(t) for t in self.illegal),
            "moves": list(self.move_log),
        }


def eigen_length(path: Walk, tt: TrainTrack) -> float:
    """Total eigenmetric length of a reduced edge path."""
    return tt.eigen_length_of_walk(path)


def find_legal_axis(tt: TrainTrack, max_power=16) -> Word:
    """A loxodromic element whose axis is legal (Prop on legal axes).

    Simplicial case: any loxodromic element works since every immersed path
    is legal; otherwise iterate an edge until the image contains two
    translates of it and return the quotient of their prefixes.
    """
    sp = tt.splitting
    rep = tt.rep
    if tt.is_simplicial():
        for i, e in enumerate(sp.edges):
            if not e.tree:
                return e.m
        raise SystemMismatch("degenerate splitting has no loxodromic elements")
    for eid in range(len(sp.edges)):
        germ = eid + 1
        w = rep.edge_map[eid]
        for n in range(1, max_power):
            prefixes = []
            c = sp.vertices[w.start].component
            acc = w.g0
            for s, g in w.steps:
                if s == germ:
                    prefixes.append(acc)
                acc = acc * sp.oriented(s)[2] * g
                if len(prefixes) == 2:
                    break
            if len(prefixes) == 2:
                x = prefixes[1] * prefixes[0].inverse()
                from .marked_graph import translation_length

                if translation_length(x, sp) > 0:
                    return x
            w = rep.map_walk(w)
    raise IterationBudgetExceeded("no legal axis found within the power budget")


# -- the Bestvina-Handel machine -------------------------------------------


@dataclass
class BHOutcome:
    kind: str  # "track" | "reduced"
    track: Optional[TrainTrack] = None
    rep: Optional[TopRep] = None
    moves: list = field(default_factory=list)


def _copy_rep(f: TopRep) -> TopRep:
    sp = f.splitting
    nsp = FreeSplitting(
        sp.system,
        [Vertex(v.component, v.label) for v in sp.vertices],
        [Edge(e.component, e.u, e.v, e.m, e.tree) for e in sp.edges],
        dict(sp.base),
        {c: list(ws) for c, ws in sp.marking.items()},
    )
    return TopRep(nsp, f.phi, list(f.vertex_map), list(f.prefixes), list(f.edge_map))


class _Machine:
    """Mutable working copy with surgery primitives; emits a move log."""

    def __init__(self, f: TopRep, budget_factor=10, debug=False):
        self.f = _copy_rep(f)
        self.log: list[str] = []
        self.budget_factor = budget_factor
        self.moves = 0
        self.debug = debug

    # -- bookkeeping helpers -------------------------------------------

    @property
    def sp(self) -> FreeSplitting:
        return self.f.splitting

    def _spend(self, what: str):
        self.moves += 1
        self.log.append(what)
        if self.debug:
            self.f.validate()
        cap = self.budget_factor * max(1, len(self.sp.edges)) ** 2
        if self.moves > cap:
            raise IterationBudgetExceeded(
                f"exceeded {cap} moves while searching for a train track", self.log
            )

    def _rewrite_all_walks(self, fn):
        sp = self.sp
        for c, loops in sp.marking.items():
            sp.marking[c] = [fn(w) for w in loops]
        self.f.edge_map = [fn(w) for w in self.f.edge_map]
        sp._inv_marking = {}
        sp._graphs = {}

    def _retighten(self):
        sp = self.sp
        self._rewrite_all_walks(lambda w: make_walk(sp, w.start, w.g0, list(w.steps)))

    # -- moves -----------------------------------------------------------

    def subdivide(self, eid: int, prefix_steps: int, trailing: Optional[Word] = None) -> int:
        """Split edge eid so the first ``prefix_steps`` steps of its image
        become the image of the first half.

        The prefix is counted in the current image walk; if that walk
        crosses eid itself, the crossing expands to two steps and the split
        index is adjusted.  ``trailing`` chooses the head's final insertion
        (the remainder moves to the tail's initial insertion); the image of
        the fresh vertex is a free choice, so any factorization is valid.
        Returns the id of the second half."""
        sp = self.sp
        f = self.f
        e = sp.edges[eid]
        img = f.edge_map[eid]
        assert 0 < prefix_steps < len(img.steps)
        old_signed = eid + 1
        # index of the split in the rewritten image walk
        new_prefix = sum(
            2 if abs(s) == old_signed else 1 for s, _ in img.steps[:prefix_steps]
        )
        w_new = len(sp.vertices)
        sp.vertices.append(Vertex(e.component))
        e2 = Edge(e.component, w_new, e.v, Word(e.component), tree=e.tree)
        sp.edges.append(e2)
        new_eid = len(sp.edges) - 1
        sp.edges[eid] = Edge(e.component, e.u, w_new, e.m, tree=e.tree)
        new_signed = new_eid + 1

        def rw(w: Walk) -> Walk:
            raw = []
            for s, g in w.steps:
                if s == old_signed:
                    raw.append((old_signed, Word(e.component)))
                    raw.append((new_signed, g))
                elif s == -old_signed:
                    raw.append((-new_signed, Word(e.component)))
                    raw.append((-old_signed, g))
                else:
                    raw.append((s, g))
            return make_walk(sp, w.start, w.g0, raw)

        self._rewrite_all_walks(rw)
        # split the rewritten image walk, moving the split-step insertion
        # (minus the chosen trailing part) onto the tail
        img = f.edge_map[eid]
        comp = sp.vertices[img.start].component
        tau = trailing if trailing is not None else Word(comp)
        gamma = img.steps[new_prefix - 1][1]
        head = list(img.steps[:new_prefix])
        head[-1] = (head[-1][0], tau)
        tail = list(img.steps[new_prefix:])
        head_walk = make_walk(sp, img.start, img.g0, head)
        tail_walk = make_walk(sp, head_walk.end, tau.inverse() * gamma, tail)
        f.edge_map[eid] = head_walk
        f.edge_map.append(tail_walk)
        f.vertex_map.append(head_walk.end)
        # f(w_new~) = phi(m(e1))^-1 x_u value(head)
        x_u = f.prefixes[e.u]
        f.prefixes.append(f.phi.apply(sp.edges[eid].m).inverse() * x_u * walk_value(sp, head_walk))
        self._spend(f"subdivide e{eid} at {prefix_steps}")
        return new_eid

    def reverse_edge(self, eid: int):
        sp = self.sp
        e = sp.edges[eid]
        sp.edges[eid] = Edge(e.component, e.v, e.u, e.m.inverse(), e.tree)
        signed = eid + 1

        def rw(w: Walk) -> Walk:
            raw = [(-s if abs(s) == signed else s, g) for s, g in w.steps]
            return make_walk(sp, w.start, w.g0, raw)

        self._rewrite_all_walks(rw)
        self.f.edge_map[eid] = walk_invert(sp, self.f.edge_map[eid])
        self.log.append(f"reverse e{eid}")

    def _merge_vertices(self, u2: int, u1: int, zeta: Word):
        """Identify lift(u2) = zeta * lift(u1); u2 disappears."""
        sp = self.sp
        f = self.f
        assert u2 != u1
        v2 = sp.vertices[u2]
        v1 = sp.vertices[u1]
        if v2.labeled and v1.labeled:
            raise IterationBudgetExceeded("fold would merge two labeled vertices", self.log)
        for c, b in sp.base.items():
            if b == u2:
                raise IterationBudgetExceeded("fold would absorb the base vertex", self.log)
        if v2.labeled:
            sp.vertices[u1] = Vertex(
                v1.component, tuple(zeta.inverse() * g * zeta for g in v2.label)
            )
        for i, e in enumerate(sp.edges):
            m, uu, vv = e.m, e.u, e.v
            if uu == u2:
                m = zeta.inverse() * m
                uu = u1
            if vv == u2:
                m = m * zeta
                vv = u1
            sp.edges[i] = Edge(e.component, uu, vv, m, e.tree)

        def rw(w: Walk) -> Walk:
            g0 = w.g0
            start = w.start
            if start == u2:
                start = u1
                g0 = zeta.inverse() * g0 * zeta if not g0.is_identity() else g0
            raw = []
            for s, g in w.steps:
                vat = sp.oriented(s)[1]
                if not g.is_identity() and vat == u2:
                    g = zeta.inverse() * g * zeta
                raw.append((s, g))
            return make_walk(sp, start, g0, raw)

        # NOTE: endpoints were already remapped above, so oriented() sees u1.
        self._rewrite_all_walks(rw)
        for v in range(len(f.vertex_map)):
            if f.vertex_map[v] == u2:
                f.vertex_map[v] = u1
                f.prefixes[v] = f.prefixes[v] * zeta
        self._drop_vertex(u2)

    def _drop_vertex(self, vid: int):
        sp = self.sp
        f = self.f
        assert not any(e.u == vid or e.v == vid for e in sp.edges)
        remap = {v: (v if v < vid else v - 1) for v in range(len(sp.vertices)) if v != vid}
        sp.vertices.pop(vid)
        for i, e in enumerate(sp.edges):
            sp.edges[i] = Edge(e.component, remap[e.u], remap[e.v], e.m, e.tree)
        sp.base = {c: remap[b] for c, b in sp.base.items()}
        f.vertex_map.pop(vid)
        f.prefixes.pop(vid)
        f.vertex_map = [remap[v] for v in f.vertex_map]

        def rw(w: Walk) -> Walk:
            return Walk(remap[w.start], w.g0, w.steps, remap[w.end])

        self._rewrite_all_walks(rw)

    def _drop_edge(self, eid: int):
        sp = self.sp
        f = self.f
        signed = eid + 1

        def rw(w: Walk) -> Walk:
            assert all(abs(s) != signed for s, _ in w.steps)
            raw = [(s - 1 if s > signed else (s + 1 if s < -signed else s), g) for s, g in w.steps]
            return make_walk(sp, w.start, w.g0, raw)

        sp.edges.pop(eid)
        f.edge_map.pop(eid)
        self._rewrite_all_walks(rw)

    def fold(self, d1: int, d2: int, twist: Word):
        """Identify oriented germ d1 with twist * d2 (whole edges).

        Requires equal full images: f(d1) = image_insertion(twist) . f(d2),
        which the caller arranges by subdividing first.
        """
        sp = self.sp
        f = self.f
        if d1 < 0:
            self.reverse_edge(abs(d1) - 1)
            d1 = abs(d1)
            if abs(d2) == d1:
                d2 = -d2
        if d2 < 0:
            self.reverse_edge(abs(d2) - 1)
            d2 = abs(d2)
        e1, e2 = d1 - 1, d2 - 1
        w0 = sp.edges[e1].u
        assert sp.edges[e2].u == w0, "fold germs must share their origin"
        # verify image compatibility before touching anything
        w1 = f.edge_map[e1]
        adj = f.image_insertion(w0, twist)
        w2 = walk_concat(sp, trivial_walk(sp, f.edge_map[e2].start, adj), f.edge_map[e2])
        assert w1.g0 == w2.g0 and w1.steps == w2.steps, "fold images must agree"
        u1, u2 = sp.edges[e1].v, sp.edges[e2].v
        m1, m2 = sp.edges[e1].m, sp.edges[e2].m
        if u1 != u2:
            if sp.vertices[u2].labeled or u2 in sp.base.values():
                # absorb u1 into u2 instead
                zeta = m1.inverse() * twist * m2  # lift(u1) = zeta * lift(u2)
                self._merge_vertices(u1, u2, zeta)
            else:
                zeta = m2.inverse() * twist.inverse() * m1  # lift(u2) = zeta * lift(u1)
                self._merge_vertices(u2, u1, zeta)
        else:
            zeta = m1.inverse() * twist * m2
            if not sp.vertices[u1].labeled:
                if not zeta.is_identity():
                    raise IterationBudgetExceeded(
                        "inconsistent fold at an unlabeled vertex", self.log
                    )
            elif not sp.vertex_group_graph(u1).contains(zeta.letters):
                raise IterationBudgetExceeded(
                    "fold twist escapes the vertex group", self.log
                )
        # after any merge, e2 runs parallel to e1:
        #   traversal(e2) = [twist^-1 @ w0] e1 [zeta_ins @ far]
        m1 = sp.edges[e1].m
        m2 = sp.edges[e2].m
        zeta_ins = m1.inverse() * twist * m2
        old_signed, new_signed = e2 + 1, e1 + 1

        def rw(w: Walk) -> Walk:
            raw = []  # placeholder steps (None, g) merge into the previous insertion
            for s, g in w.steps:
                if s == old_signed:
                    raw.append((None, twist.inverse()))
                    raw.append((new_signed, zeta_ins * g))
                elif s == -old_signed:
                    raw.append((None, zeta_ins.inverse()))
                    raw.append((-new_signed, twist * g))
                else:
                    raw.append((s, g))
            clean = []
            g0 = w.g0
            for s, g in raw:
                if s is None:
                    if g.is_identity():
                        continue
                    if clean:
                        clean[-1] = (clean[-1][0], clean[-1][1] * g)
                    else:
                        g0 = g0 * g
                else:
                    clean.append((s, g))
            return make_walk(sp, w.start, g0, clean)

        self._rewrite_all_walks(rw)
        self._drop_edge(e2)
        self._refresh_tree()
        self._spend(f"fold e{e1}~e{e2}")

    def _refresh_tree(self):
        """Recompute a spanning forest and gauge it to trivial marking.

        Prefers already trivially-marked edges so the gauge stays trivial
        when possible.
        """
        sp = self.sp
        chosen = set()
        z = {}
        for c in range(sp.system.num_components):
            verts = set(sp.component_vertices(c))
            root = sp.base[c]
            seen = {root}
            z[root] = Word(c)
            while seen != verts:
                # two passes: trivially-marked edges first
                progressed = False
                for prefer_trivial in (True, False):
                    for i, e in enumerate(sp.edges):
                        if e.component != c or i in chosen:
                            continue
                        if prefer_trivial and not e.m.is_identity():
                            continue
                        if (e.u in seen) != (e.v in seen):
                            chosen.add(i)
                            if e.u in seen:
                                z[e.v] = z[e.u] * e.m
                                seen.add(e.v)
                            else:
                                z[e.u] = z[e.v] * e.m.inverse()
                                seen.add(e.u)
                            progressed = True
                            break
                    if progressed:
                        break
                if not progressed:
                    raise SystemMismatch(f"component {c} became disconnected")
        for v in range(len(sp.vertices)):
            if v not in z:
                z[v] = Word(sp.vertices[v].component)
        for i, e in enumerate(sp.edges):
            sp.edges[i] = Edge(e.component, e.u, e.v, e.m, tree=(i in chosen))
        self._apply_gauge(z)

    def _rebase(self, c: int, new_base: int):
        sp = self.sp
        old = sp.base[c]
        if old == new_base:
            return
        path = sp.tree_path(new_base, old)
        inv = walk_invert(sp, path)
        sp.base[c] = new_base
        sp.marking[c] = [
            walk_concat(sp, walk_concat(sp, path, loop), inv) for loop in sp.marking[c]
        ]
        sp._inv_marking = {}

    def _move_vertex_image(self, v: int, connecting: Walk):
        """Homotope f so that f(v) slides along ``connecting`` to its end."""
        sp, f = self.sp, self.f
        assert connecting.start == f.vertex_map[v]
        val = walk_value(sp, connecting)
        inv = walk_invert(sp, connecting)
        for eid, e in enumerate(sp.edges):
            w = f.edge_map[eid]
            if e.u == v:
                w = walk_concat(sp, inv, w)
            if e.v == v:
                w = walk_concat(sp, w, connecting)
            f.edge_map[eid] = w
        f.vertex_map[v] = connecting.end
        f.prefixes[v] = f.prefixes[v] * val

    def valence_cleanup(self):
        """Remove valence-one unlabeled vertices, merge valence-two ones."""
        sp = self.sp
        changed = True
        while changed:
            changed = False
            for vid in range(len(sp.vertices)):
                v = sp.vertices[vid]
                if v.labeled:
                    continue
                inc = sp.incident(vid)
                if vid in sp.base.values():
                    if len(inc) == 2 and abs(inc[0]) != abs(inc[1]) and len(
                        sp.component_vertices(v.component)
                    ) > 1:
                        # slide the base off the bivalent vertex first
                        other_end = sp.oriented(inc[0])[1]
                        if other_end != vid:
                            self._rebase(v.component, other_end)
                            changed = True
                            break
                    continue
                if len(inc) == 1:
                    self._remove_valence_one(vid, inc[0])
                    changed = True
                    break
                if len(inc) == 2 and abs(inc[0]) != abs(inc[1]):
                    self._merge_valence_two(vid, inc)
                    changed = True
                    break

    def _remove_valence_one(self, vid: int, incoming_signed: int):
        sp = self.sp
        f = self.f
        # incoming_signed points out of vid; the edge connects vid to other
        eid = abs(incoming_signed) - 1
        e = sp.edges[eid]
        other = e.v if e.u == vid else e.u
        # retraction r: lift(vid) -> zeta * lift(other)
        if e.u == vid:
            zeta = e.m  # lift(vid) -> m(e) lift(other)? traversal vid->other reads m
        else:
            zeta = e.m.inverse()
        signed = eid + 1

        def rw(w: Walk) -> Walk:
            assert w.start != vid and w.end != vid
            raw = [(s, g) for s, g in w.steps if abs(s) != signed]
            return make_walk(sp, w.start, w.g0, raw)

        for v in range(len(f.vertex_map)):
            if f.vertex_map[v] == vid:
                f.vertex_map[v] = other
                f.prefixes[v] = f.prefixes[v] * zeta
        # drop occurrences of the edge from images (they occur only as
        # cancelling backtracks or at walk ends mapping to vid)
        def rw_img(w: Walk) -> Walk:
            raw = []
            for s, g in w.steps:
                if abs(s) == signed:
                    # traversal into vid immediately退 back; adjust neighbours
                    if raw:
                        raw[-1] = (raw[-1][0], raw[-1][1] * g)
                    # else absorbed into g0 below
                else:
                    raw.append((s, g))
            start = other if w.start == vid else w.start
            return make_walk(sp, start, w.g0, raw)

        self._rewrite_all_walks(rw_img)
        self._drop_edge(eid)
        self._drop_vertex(vid)
        self._spend(f"valence1 v{vid}")

    def _merge_valence_two(self, vid: int, inc):
        sp = self.sp
        f = self.f
        s1, s2 = inc  # both point out of vid
        # orient the underlying edges along p -> vid -> q
        if s1 > 0:
            self.reverse_edge(s1 - 1)
        ea = abs(s1) - 1
        if s2 < 0:
            self.reverse_edge(-s2 - 1)
        eb = abs(s2) - 1
        e_a, e_b = sp.edges[ea], sp.edges[eb]
        assert e_a.v == vid and e_b.u == vid
        comp = sp.vertices[vid].component
        # homotope any vertex image off vid (slide along eb)
        conn = Walk(vid, Word(comp), ((eb + 1, Word(comp)),), e_b.v)
        for v in range(len(f.vertex_map)):
            if f.vertex_map[v] == vid:
                self._move_vertex_image(v, conn)
        # concatenate the two image walks while the old structure is intact
        merged_img = walk_concat(sp, f.edge_map[ea], f.edge_map[eb])
        f.edge_map[ea] = merged_img
        # structural change: ea swallows eb
        e_a, e_b = sp.edges[ea], sp.edges[eb]
        sp.edges[ea] = Edge(e_a.component, e_a.u, e_b.v, e_a.m * e_b.m, tree=False)
        sa, sb = ea + 1, eb + 1

        def rw(w: Walk) -> Walk:
            raw = []
            i = 0
            steps = list(w.steps)
            while i < len(steps):
                s, g = steps[i]
                if s == sa:
                    assert i + 1 < len(steps) and steps[i + 1][0] == sb and g.is_identity()
                    raw.append((sa, steps[i + 1][1]))
                    i += 2
                elif s == -sb:
                    assert i + 1 < len(steps) and steps[i + 1][0] == -sa and g.is_identity()
                    raw.append((-sa, steps[i + 1][1]))
                    i += 2
                else:
                    assert abs(s) - 1 not in (ea, eb) or s in (sa, -sb), (
                        "unexpected crossing pattern at a valence-two vertex"
                    )
                    raw.append((s, g))
                    i += 1
            start = w.start
            assert start != vid and w.end != vid
            return make_walk(sp, start, w.g0, raw)

        self._rewrite_all_walks(rw)
        self._drop_edge(eb)
        self._drop_vertex(vid)
        self._refresh_tree()
        self._spend(f"valence2 v{vid}")

    # -- reducibility ---------------------------------------------------

    def invariant_subgraph(self):
        """Smallest proper invariant edge set (closure of one edge), or None."""
        A = transition_matrix(self.f)
        n = len(A)
        closures = []
        for e0 in range(n):
            seen = {e0}
            stack = [e0]
            while stack:
                u = stack.pop()
                for v in range(n):
                    if A[v][u] > 0 and v not in seen:
                        seen.add(v)
                        stack.append(v)
            if len(seen) < n:
                closures.append(seen)
        if not closures:
            return None
        best = max(closures, key=lambda s: (len(s), -min(s)))
        return best

    def collapse_edges(self, edge_set) -> bool:
        """Collapse the subgraph spanned by edge_set.

        Returns True when a nontrivial vertex group was created or enlarged
        (the lower-stratum event); False for a plain forest collapse.
        """
        sp = self.sp
        f = self.f
        edge_set = set(edge_set)
        verts = set()
        for eid in edge_set:
            verts.add(sp.edges[eid].u)
            verts.add(sp.edges[eid].v)
        # components of the subgraph
        parent = {v: v for v in verts}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for eid in edge_set:
            parent[find(sp.edges[eid].u)] = find(sp.edges[eid].v)
        comps: dict[int, list[int]] = {}
        for v in verts:
            comps.setdefault(find(v), []).append(v)
        # regauge so each component has an internal spanning tree with m=1,
        # rooted at a representative (prefer base/labeled vertices)
        for root_key, vs in comps.items():
            vs.sort(key=lambda v: (v not in sp.base.values(), not sp.vertices[v].labeled, v))
        self._regauge_for_components(comps, edge_set)
        nontrivial = False
        for vs in comps.values():
            rep_v = vs[0]
            labels = [v for v in vs if sp.vertices[v].labeled]
            internal_tree, internal_loops = self._span_component(vs, edge_set)
            gens = []
            for v in labels:
                gens.extend(sp.vertices[v].label)
            for eid in internal_loops:
                gens.append(sp.edges[eid].m)
            if len(labels) > 1 or internal_loops:
                nontrivial = True
            if gens:
                sp.vertices[rep_v] = Vertex(sp.vertices[rep_v].component, tuple(gens))
            # reroute edges and walks from all vs onto rep_v, then drop the
            # collapsed edges (their marking is trivial after regauge for
            # tree edges; loops become insertions)
            loop_ins = {eid + 1: sp.edges[eid].m for eid in internal_loops}

            def rw(w: Walk) -> Walk:
                raw = []
                for s, g in w.steps:
                    if abs(s) - 1 in edge_set and abs(s) - 1 in internal_tree:
                        # trivial marking, endpoints inside component: drop
                        if raw:
                            raw[-1] = (raw[-1][0], raw[-1][1] * g)
                        else:
                            nonlocal_g0[0] = nonlocal_g0[0] * g
                    elif abs(s) - 1 in edge_set:
                        ins = loop_ins[abs(s)] if s > 0 else loop_ins[abs(s)].inverse()
                        gg = ins * g
                        if raw:
                            raw[-1] = (raw[-1][0], raw[-1][1] * gg)
                        else:
                            nonlocal_g0[0] = nonlocal_g0[0] * gg
                    else:
                        raw.append((s, g))
                start = rep_v if w.start in vs else w.start
                return make_walk(sp, start, nonlocal_g0[0], raw)

            def rw_outer(w: Walk) -> Walk:
                nonlocal_g0[0] = w.g0
                return rw(w)

            nonlocal_g0 = [None]
            # remap endpoints of external edges first
            for i, e in enumerate(sp.edges):
                if i in edge_set:
                    continue
                uu = rep_v if e.u in vs else e.u
                vv = rep_v if e.v in vs else e.v
                sp.edges[i] = Edge(e.component, uu, vv, e.m, e.tree)
            for v in range(len(f.vertex_map)):
                if f.vertex_map[v] in vs:
                    f.vertex_map[v] = rep_v
            for c in list(sp.base):
                if sp.base[c] in vs:
                    sp.base[c] = rep_v
            self._rewrite_all_walks(rw_outer)
        # drop collapsed edges (descending ids) and orphan vertices
        for eid in sorted(edge_set, reverse=True):
            sp.edges.pop(eid)
            f.edge_map.pop(eid)
            signed = eid + 1

            def renum(w: Walk) -> Walk:
                raw = [
                    (s - 1 if s > signed else (s + 1 if s < -signed else s), g)
                    for s, g in w.steps
                ]
                return Walk(w.start, w.g0, tuple(raw), w.end)

            self._rewrite_all_walks(renum)
        for vs in comps.values():
            for v in sorted(vs[1:], reverse=True):
                self._drop_vertex(v)
        # vertex maps may point at stale prefixes: recompute edge images are
        # still consistent; refresh tree and caches
        self._refresh_tree()
        sp.is_identity_rose = False
        self._spend(f"collapse {sorted(edge_set)}")
        return nontrivial

    def _span_component(self, vs, edge_set):
        """(tree edge ids, loop edge ids) of the subgraph component on vs."""
        vs_set = set(vs)
        internal = [
            eid
            for eid in edge_set
            if self.sp.edges[eid].u in vs_set and self.sp.edges[eid].v in vs_set
        ]
        seen = {vs[0]}
        tree = set()
        changed = True
        while changed:
            changed = False
            for eid in internal:
                if eid in tree:
                    continue
                e = self.sp.edges[eid]
                if (e.u in seen) != (e.v in seen):
                    tree.add(eid)
                    seen.update((e.u, e.v))
                    changed = True
        loops = [eid for eid in internal if eid not in tree]
        return tree, loops

    def _regauge_for_components(self, comps, edge_set):
        """Gauge vertex lifts so each component's internal tree has m = 1."""
        sp = self.sp
        f = self.f
        z = {v: None for v in range(len(sp.vertices))}
        for vs in comps.values():
            root = vs[0]
            z[root] = Word(sp.vertices[root].component)
            tree, _ = self._span_component(vs, edge_set)
            # BFS along internal tree edges assigning gauges
            frontier = [root]
            assigned = {root}
            while frontier:
                nxt = []
                for u in frontier:
                    for eid in tree:
                        e = sp.edges[eid]
                        if e.u == u and e.v not in assigned:
                            z[e.v] = z[u] * e.m  # want m_new = z_u^-1 m z_v^-1... solve below
                            assigned.add(e.v)
                            nxt.append(e.v)
                        elif e.v == u and e.u not in assigned:
                            z[e.u] = z[u] * e.m.inverse()
                            assigned.add(e.u)
                            nxt.append(e.u)
                frontier = nxt
        # identity elsewhere
        for v in range(len(sp.vertices)):
            if z[v] is None:
                z[v] = Word(sp.vertices[v].component)
        self._apply_gauge(z)

    def _apply_gauge(self, z: dict):
        """Change canonical lifts: lift'(v) = z_v * lift(v)."""
        sp = self.sp
        f = self.f
        if all(w.is_identity() for w in z.values()):
            return
        for i, e in enumerate(sp.edges):
            m = z[e.u] * e.m * z[e.v].inverse()
            sp.edges[i] = Edge(e.component, e.u, e.v, m, e.tree)
        for vid, v in enumerate(sp.vertices):
            if v.labeled:
                zz = z[vid]
                sp.vertices[vid] = Vertex(
                    v.component, tuple(zz * g * zz.inverse() for g in v.label)
                )

        def rw(w: Walk) -> Walk:
            g0 = z[w.start] * w.g0 * z[w.start].inverse()
            raw = []
            for s, g in w.steps:
                vat = sp.oriented(s)[1]
                raw.append((s, z[vat] * g * z[vat].inverse()))
            return make_walk(sp, w.start, g0, raw)

        self._rewrite_all_walks(rw)
        for v in range(len(f.vertex_map)):
            w = f.vertex_map[v]
            f.prefixes[v] = f.phi.apply(z[v]) * f.prefixes[v] * z[w].inverse()
        sp._graphs = {}

    # -- fold resolution ---------------------------------------------------

    def resolve_illegal(self, turn):
        """Drive one illegal crossed turn to a fold (subdividing as needed)."""
        sp = self.sp
        f = self.f
        d1, g, d2 = turn
        vid = sp.oriented(d1)[0]
        # iterate until the next derivative step degenerates
        guard = 0
        while True:
            guard += 1
            if guard > 4 * (len(sp.edges) * 2 + 2) ** 2:
                raise IterationBudgetExceeded("illegal turn failed to degenerate", self.log)
            nd1, h1 = derivative(self.f, d1)
            nd2, h2 = derivative(self.f, d2)
            gnext = h1.inverse() * f.image_insertion(vid, g) * h2
            if nd1 == nd2 and gnext.is_identity():
                break
            d1, d2, g = nd1, nd2, gnext
            vid = f.vertex_map[vid]
        if d1 == d2:
            raise IterationBudgetExceeded("degenerate self-turn; cannot fold", self.log)
        # cut both germs' edges until their images coincide, then fold
        for _ in range(6):
            sp = self.sp
            w1 = _image_walk(self.f, d1)
            w2raw = _image_walk(self.f, d2)
            adj = self.f.image_insertion(sp.oriented(d2)[0], g)
            w2 = walk_concat(sp, trivial_walk(sp, w2raw.start, adj), w2raw)
            if w1.g0 != w2.g0:
                raise IterationBudgetExceeded("fold prefixes disagree at the origin", self.log)
            n1, n2 = len(w1.steps), len(w2.steps)
            t = 0
            while t < min(n1, n2) and w1.steps[t][0] == w2.steps[t][0]:
                t += 1
                if w1.steps[t - 1][1] != w2.steps[t - 1][1]:
                    break
            if t == 0:
                raise IterationBudgetExceeded("no common prefix to fold", self.log)
            if t == n1 == n2 and w1.steps[-1][1] == w2.steps[-1][1]:
                self.fold(d1, d2, g)
                return
            if t == n1 == n2:
                raise IterationBudgetExceeded(
                    "fold images differ only in the final insertion", self.log
                )
            if t == n1:
                d2, (d1,) = self._cut(d2, t, w1.steps[t - 1][1], [d1])
            elif t == n2:
                d1, (d2,) = self._cut(d1, t, w2.steps[t - 1][1], [d2])
            else:
                d1, (d2,) = self._cut(d1, t, None, [d2])
        raise IterationBudgetExceeded("fold preparation did not converge", self.log)

    def _cut(self, germ: int, t: int, trailing, others):
        """Subdivide the germ's edge so its image has exactly t steps with
        the given trailing insertion.  Returns (germ', remapped others)."""
        sp = self.sp
        eid = abs(germ) - 1
        if germ < 0:
            self.reverse_edge(eid)
            germ = eid + 1
            others = [-o if abs(o) == eid + 1 else o for o in others]
        img = self.f.edge_map[eid]
        comp = sp.vertices[img.start].component
        tau = trailing if trailing is not None else Word(comp)
        if len(img.steps) == t and img.steps[-1][1] == tau:
            return germ, tuple(others)
        assert len(img.steps) > t
        new_eid = self.subdivide(eid, t, tau)
        others = [
            (-(new_eid + 1) if o == -(eid + 1) else o) for o in others
        ]
        return eid + 1, tuple(others)


def find_train_track(f: TopRep, budget_factor=10, tol=1e-12) -> BHOutcome:
    """One pass of the Bestvina-Handel search.

    Returns either an irreducible train track or a representative on a
    splitting whose vertex groups properly carry the old ones; the caller
    repeats on the latter (at most complexity-many times).
    """
    machine = _Machine(f, budget_factor)
    machine._retighten()
    while True:
        sp = machine.sp
        # degenerate edge images must be collapsed first
        trivial = {
            eid
            for eid in range(len(sp.edges))
            if not machine.f.edge_map[eid].steps
        }
        if trivial:
            if machine.collapse_edges(trivial):
                machine.f.validate()
                return BHOutcome("reduced", rep=machine.f, moves=machine.log)
            continue
        # fold illegal turns before any cleanup or collapse; interleaving
        # valence moves can exactly undo a fold chain and cycle forever
        hit = first_illegal_crossing(machine.f)
        if hit is not None:
            machine.resolve_illegal(hit[2])
            continue
        machine.valence_cleanup()
        if not machine.sp.edges:
            raise SystemMismatch("splitting collapsed away entirely")
        if first_illegal_crossing(machine.f) is not None:
            continue
        if all(len(w.steps) == 1 for w in machine.f.edge_map):
            # simplicial automorphism: a lambda = 1 train track
            machine.f.validate()
            tt = TrainTrack(machine.f, tol, machine.log)
            return BHOutcome("track", track=tt, moves=machine.log)
        A = transition_matrix(machine.f)
        if not is_irreducible(A):
            S = machine.invariant_subgraph()
            if S is None:
                raise NotIrreducible("reducible matrix without proper invariant subgraph")
            if machine.collapse_edges(S):
                machine.f.validate()
                return BHOutcome("reduced", rep=machine.f, moves=machine.log)
            continue
        machine.f.validate()
        tt = TrainTrack(machine.f, tol, machine.log)
        return BHOutcome("track", track=tt, moves=machine.log)
