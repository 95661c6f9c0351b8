"""Free splittings as marked graphs of groups with trivial edge groups.

A splitting stores a finite graph per system component: vertices optionally
labeled by a vertex group (given by ambient generator words), edges carrying
a marking element ``m`` in the ambient group, and a spanning forest
normalized to ``m = 1``.  Elements are realized as *walks*: alternating edge
traversals and vertex-group insertions.  With trivial edge groups a tightened
walk is the unique normal form, so translation lengths and topological
representatives reduce to walk surgery.

Conventions.  An oriented edge ``+e`` traverses ``u -> v`` and reads ``m(e)``
(the canonical lift runs from the canonical lift of ``u`` to ``m(e)`` times
the canonical lift of ``v``); ``-e`` reads ``m(e)^-1``.  Walk insertions may
be nontrivial only at labeled vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import Degenerate, NotInvariant, SystemMismatch
from .subgroups import SubgroupGraph, SubgroupSystem
from .words import FreeGroupSystem, Word, complexity


@dataclass
class Vertex:
    component: int
    label: Optional[tuple[Word, ...]] = None  # ambient generators of the vertex group

    @property
    def labeled(self) -> bool:
        return self.label is not None


@dataclass
class Edge:
    component: int
    u: int
    v: int
    m: Word
    tree: bool = False


class FreeSplitting:
    """Finite graph-of-groups decomposition with trivial edge groups."""

    def __init__(self, system: FreeGroupSystem, vertices, edges, base, marking):
        self.system = system
        self.vertices: list[Vertex] = list(vertices)
        self.edges: list[Edge] = list(edges)
        self.base: dict[int, int] = dict(base)  # component -> base vertex id
        # marking[component][k] = based loop Walk realizing generator k+1
        self.marking: dict[int, list["Walk"]] = marking
        self._graphs: dict[int, SubgroupGraph] = {}

    # -- structure queries ---------------------------------------------

    def oriented(self, signed: int) -> tuple[int, int, Word]:
        """(origin, terminus, value) of a signed edge index (1-based)."""
        e = self.edges[abs(signed) - 1]
        if signed > 0:
            return e.u, e.v, e.m
        return e.v, e.u, e.m.inverse()

    def incident(self, vid: int) -> list[int]:
        out = []
        for i, e in enumerate(self.edges):
            if e.u == vid:
                out.append(i + 1)
            if e.v == vid:
                out.append(-(i + 1))
        return out

    def valence(self, vid: int) -> int:
        return len(self.incident(vid))

    def vertex_group_graph(self, vid: int) -> SubgroupGraph:
        if vid not in self._graphs:
            v = self.vertices[vid]
            rank = self.system.rank(v.component)
            self._graphs[vid] = SubgroupGraph(v.component, rank, v.label or ())
        return self._graphs[vid]

    def labeled_vertices(self) -> list[int]:
        return [i for i, v in enumerate(self.vertices) if v.labeled]

    def component_vertices(self, c: int) -> list[int]:
        return [i for i, v in enumerate(self.vertices) if v.component == c]

    def component_edges(self, c: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.component == c]

    def betti(self, c: int) -> int:
        return len(self.component_edges(c)) - len(self.component_vertices(c)) + 1

    def is_degenerate(self, c: int) -> bool:
        return not self.component_edges(c)

    def vertex_system(self) -> SubgroupSystem:
        members = [
            (self.vertices[v].component, self.vertices[v].label)
            for v in self.labeled_vertices()
        ]
        return SubgroupSystem(self.system, members)

    # -- validation ------------------------------------------------------

    def validate(self, strict_bivalent=True):
        for c in range(self.system.num_components):
            vids = self.component_vertices(c)
            if not vids:
                raise SystemMismatch(f"component {c} has no vertices")
            # connected via union-find
            roots = {v: v for v in vids}

            def find(x):
                while roots[x] != x:
                    roots[x] = roots[roots[x]]
                    x = roots[x]
                return x

            tree_count = 0
            for e in self.edges:
                if e.component != c:
                    continue
                if e.tree:
                    tree_count += 1
                    if not e.m.is_identity():
                        raise SystemMismatch("tree edges must carry trivial marking")
                roots[find(e.u)] = find(e.v)
            if len({find(v) for v in vids}) != 1:
                raise SystemMismatch(f"component {c} is not connected")
            if tree_count != len(vids) - 1:
                raise SystemMismatch(f"component {c}: tree edge count wrong")
            label_rank = sum(
                len(self.vertices[v].label) for v in vids if self.vertices[v].labeled
            )
            if self.betti(c) + label_rank != self.system.rank(c):
                raise SystemMismatch(f"component {c}: Bass-Serre rank identity fails")
            if strict_bivalent:
                for v in vids:
                    if not self.vertices[v].labeled and self.valence(v) == 2 and len(vids) > 1:
                        raise SystemMismatch(f"bivalent unlabeled vertex {v}")
            for k, loop in enumerate(self.marking[c]):
                if loop.start != self.base[c] or loop.end != self.base[c]:
                    raise SystemMismatch("marking loops must be based")
                if walk_value(self, loop) != self.system.generator(c, k):
                    raise SystemMismatch(f"marking loop {k} of component {c} is wrong")
        return True

    def tree_path(self, u: int, v: int) -> "Walk":
        """The walk along tree edges from u to v (trivial insertions)."""
        c = self.vertices[u].component
        prev = {u: None}
        queue = [u]
        while queue:
            x = queue.pop(0)
            if x == v:
                break
            for s in self.incident(x):
                e = self.edges[abs(s) - 1]
                if not e.tree:
                    continue
                o, t, _ = self.oriented(s)
                if o == x and t not in prev:
                    prev[t] = (x, s)
                    queue.append(t)
        if v not in prev:
            raise SystemMismatch("vertices in different components")
        steps = []
        x = v
        while prev[x] is not None:
            p, s = prev[x]
            steps.append((s, Word(c)))
            x = p
        steps.reverse()
        return Walk(u, Word(c), tuple(steps), v)


@dataclass(frozen=True)
class Walk:
    """A tightened edge walk with vertex-group insertions.

    ``steps`` is a sequence of (signed edge, insertion-after) pairs; ``g0``
    is the insertion at the start vertex.
    """

    start: int
    g0: Word
    steps: tuple[tuple[int, Word], ...]
    end: int

    def __len__(self):
        return len(self.steps)

    def edge_indices(self):
        return [abs(s) - 1 for s, _ in self.steps]


def make_walk(splitting: FreeSplitting, start: int, g0: Word, raw_steps) -> Walk:
    """Tighten a raw step sequence into a Walk."""
    stack: list[list] = []  # [signed_edge, insertion_after]
    pending = g0
    cur = start
    for signed, g in raw_steps:
        o, t, _ = splitting.oriented(signed)
        if o != cur:
            raise SystemMismatch("steps do not concatenate")
        cur = t
        if stack and stack[-1][0] == -signed and stack[-1][1].is_identity():
            stack.pop()
            if stack:
                stack[-1][1] = stack[-1][1] * g
            else:
                pending = pending * g
            # a merged insertion may enable further cancellation next round
        else:
            stack.append([signed, g])
    steps = tuple((s, g) for s, g in stack)
    end = start
    for s, _ in steps:
        end = splitting.oriented(s)[1]
    return Walk(start, pending, steps, end)


def walk_value(splitting: FreeSplitting, w: Walk) -> Word:
    val = w.g0
    for signed, g in w.steps:
        val = val * splitting.oriented(signed)[2] * g
    return val


def walk_concat(splitting: FreeSplitting, a: Walk, b: Walk) -> Walk:
    if a.end != b.start:
        raise SystemMismatch("walks do not concatenate")
    raw = list(a.steps)
    if raw:
        last = raw[-1]
        raw[-1] = (last[0], last[1] * b.g0)
        raw.extend(b.steps)
        return make_walk(splitting, a.start, a.g0, raw)
    return make_walk(splitting, a.start, a.g0 * b.g0, list(b.steps))


def walk_invert(splitting: FreeSplitting, w: Walk) -> Walk:
    # (g0, e1, g1, ..., ek, gk)^-1 = (gk^-1, -ek, g(k-1)^-1, ..., -e1, g0^-1)
    gs = [w.g0] + [g for _, g in w.steps]
    edges = [s for s, _ in w.steps]
    raw_steps = [(-edges[i], gs[i].inverse()) for i in range(len(edges) - 1, -1, -1)]
    return make_walk(splitting, w.end, gs[-1].inverse(), raw_steps)


def trivial_walk(splitting: FreeSplitting, vid: int, g: Optional[Word] = None) -> Walk:
    c = splitting.vertices[vid].component
    return Walk(vid, g if g is not None else Word(c), (), vid)


def realize_loop(splitting: FreeSplitting, w: Word) -> Walk:
    """The based loop walk realizing an ambient element (single tightening pass)."""
    c = w.component
    base = splitting.base[c]
    loops = splitting.marking[c]
    if not hasattr(splitting, "_inv_marking"):
        splitting._inv_marking = {}
    raw: list[tuple[int, Word]] = []
    pending = Word(c)
    for x in w.letters:
        if x > 0:
            lw = loops[x - 1]
        else:
            key = (c, -x - 1)
            lw = splitting._inv_marking.get(key)
            if lw is None:
                lw = walk_invert(splitting, loops[-x - 1])
                splitting._inv_marking[key] = lw
        if raw:
            last = raw[-1]
            raw[-1] = (last[0], last[1] * lw.g0)
        else:
            pending = pending * lw.g0
        raw.extend(lw.steps)
    return make_walk(splitting, base, pending, raw)


def realize_path(splitting: FreeSplitting, u: int, v: int, value: Word) -> Walk:
    """A walk u -> v whose value is ``value`` (tree-path conjugated loop)."""
    c = splitting.vertices[u].component
    base = splitting.base[c]
    pu = walk_invert(splitting, splitting.tree_path(base, u))
    pv = splitting.tree_path(base, v)
    mid = realize_loop(splitting, value)
    return walk_concat(splitting, walk_concat(splitting, pu, mid), pv)


def cyclic_tighten(splitting: FreeSplitting, w: Walk) -> tuple[list[tuple[int, Word]], Word, int]:
    """Cyclically reduce a based loop walk.

    Returns (cyclic steps, leftover insertion, anchor vertex).  Zero steps
    means the element is conjugate to the leftover insertion, an element of
    the vertex group at the anchor vertex (or trivial).
    """
    if w.start != w.end:
        raise SystemMismatch("cyclic reduction needs a loop")
    steps = [[s, g] for s, g in w.steps]
    if not steps:
        return [], w.g0, w.start
    # fold the basepoint insertion into the final step's insertion
    steps[-1][1] = steps[-1][1] * w.g0
    leftover = None
    anchor = w.start
    changed = True
    while changed and steps:
        changed = False
        i = 0
        while len(steps) >= 2 and i < len(steps):
            j = (i + 1) % len(steps)
            if i != j and steps[j][0] == -steps[i][0] and steps[i][1].is_identity():
                g_after = steps[j][1]
                anchor = splitting.oriented(steps[i][0])[0]
                if j > i:
                    del steps[j]
                    del steps[i]
                else:
                    del steps[i]
                    del steps[j]
                if steps:
                    steps[(i - 1) % len(steps)][1] = steps[(i - 1) % len(steps)][1] * g_after
                else:
                    leftover = g_after
                changed = True
                i = 0
            else:
                i += 1
    if not steps:
        return [], leftover, anchor
    anchor = splitting.oriented(steps[-1][0])[1]
    return [(s, g) for s, g in steps], Word(splitting.vertices[anchor].component), anchor


def _rose_cyclic_letters(splitting: FreeSplitting, x: Word):
    """Fast path for identity-marked roses: cyclic core letters, else None."""
    if not getattr(splitting, "is_identity_rose", False):
        return None
    from . import kernel

    i, j = kernel.cyclic_bounds(x.letters)
    return x.letters[i:j]


def translation_length(x: Word, splitting: FreeSplitting) -> int:
    """Combinatorial translation distance of x on the Bass-Serre tree."""
    if x.is_identity():
        return 0
    fast = _rose_cyclic_letters(splitting, x)
    if fast is not None:
        return len(fast)
    walk = realize_loop(splitting, x)
    steps, _, _ = cyclic_tighten(splitting, walk)
    return len(steps)


def eigen_translation_length(x: Word, splitting: FreeSplitting, lengths: Sequence[float]) -> float:
    """Translation distance in the eigenmetric (edge-orbit lengths given)."""
    if x.is_identity():
        return 0.0
    fast = _rose_cyclic_letters(splitting, x)
    if fast is not None:
        edge_of = splitting.rose_edge_of_generator
        return sum(lengths[edge_of[(x.component, abs(l) - 1)]] for l in fast)
    walk = realize_loop(splitting, x)
    steps, _, _ = cyclic_tighten(splitting, walk)
    return sum(lengths[abs(s) - 1] for s, _ in steps)


# -- builders ----------------------------------------------------------


def rose(system: FreeGroupSystem) -> FreeSplitting:
    """One unlabeled vertex and rank loops per component, identity marking."""
    sp = FreeSplitting(system, [], [], {}, {})
    sp.is_identity_rose = True
    sp.rose_edge_of_generator = {}
    for c in range(system.num_components):
        vid = len(sp.vertices)
        sp.vertices.append(Vertex(c))
        sp.base[c] = vid
        sp.marking[c] = []
        for k in range(system.rank(c)):
            sp.edges.append(Edge(c, vid, vid, system.generator(c, k)))
            eid = len(sp.edges)
            sp.rose_edge_of_generator[(c, k)] = eid - 1
            sp.marking[c].append(Walk(vid, Word(c), ((eid, Word(c)),), vid))
    return sp


def from_basis_partition(system: FreeGroupSystem, parts: dict[int, list[list[int]]]) -> FreeSplitting:
    """Splitting whose vertex groups are spanned by disjoint basis subsets.

    ``parts[c]`` lists groups of generator ordinals (0-based) of component
    ``c``; leftover generators become loops.  The small shapes are special
    cased so no bivalent unlabeled vertex appears.
    """
    sp = FreeSplitting(system, [], [], {}, {})
    for c in range(system.num_components):
        sp.marking[c] = [None] * system.rank(c)
        groups = parts.get(c, [])
        used = [o for grp in groups for o in grp]
        if len(set(used)) != len(used):
            raise SystemMismatch("overlapping generator groups")
        loops = [k for k in range(system.rank(c)) if k not in used]
        labels = [tuple(system.generator(c, o) for o in grp) for grp in groups]

        def add_loops(vid):
            for k in loops:
                sp.edges.append(Edge(c, vid, vid, system.generator(c, k)))
                sp.marking[c][k] = Walk(vid, Word(c), ((len(sp.edges), Word(c)),), vid)

        if not groups:
            vid = len(sp.vertices)
            sp.vertices.append(Vertex(c))
            sp.base[c] = vid
            add_loops(vid)
            continue
        if len(groups) == 1 and not loops:
            raise Degenerate("single vertex group covering the component is degenerate")
        if len(groups) == 1:
            vid = len(sp.vertices)
            sp.vertices.append(Vertex(c, labels[0]))
            sp.base[c] = vid
            for o in groups[0]:
                sp.marking[c][o] = Walk(vid, system.generator(c, o), (), vid)
            add_loops(vid)
            continue
        if len(groups) == 2 and not loops:
            v0 = len(sp.vertices)
            sp.vertices.append(Vertex(c, labels[0]))
            v1 = len(sp.vertices)
            sp.vertices.append(Vertex(c, labels[1]))
            sp.base[c] = v0
            sp.edges.append(Edge(c, v0, v1, Word(c), tree=True))
            eid = len(sp.edges)
            for o in groups[0]:
                sp.marking[c][o] = Walk(v0, system.generator(c, o), (), v0)
            for o in groups[1]:
                sp.marking[c][o] = Walk(
                    v0, Word(c), ((eid, system.generator(c, o)), (-eid, Word(c))), v0
                )
            continue
        center = len(sp.vertices)
        sp.vertices.append(Vertex(c))
        sp.base[c] = center
        for gi, grp in enumerate(groups):
            vid = len(sp.vertices)
            sp.vertices.append(Vertex(c, labels[gi]))
            sp.edges.append(Edge(c, center, vid, Word(c), tree=True))
            eid = len(sp.edges)
            for o in grp:
                sp.marking[c][o] = Walk(
                    center, Word(c), ((eid, system.generator(c, o)), (-eid, Word(c))), center
                )
        add_loops(center)
    return sp


# -- topological representatives ----------------------------------------


class TopRep:
    """A cellular representative of an automorphism on a free splitting."""

    def __init__(self, splitting: FreeSplitting, phi, vertex_map, prefixes, edge_map):
        self.splitting = splitting
        self.phi = phi
        self.vertex_map = list(vertex_map)
        self.prefixes = list(prefixes)  # ambient Word per vertex: f(v~) = x_v * vm(v)~
        self.edge_map = list(edge_map)  # Walk per edge (for +orientation)

    def validate(self):
        sp = self.splitting
        for i, e in enumerate(sp.edges):
            w = self.edge_map[i]
            if w.start != self.vertex_map[e.u] or w.end != self.vertex_map[e.v]:
                raise SystemMismatch(f"edge {i} image endpoints wrong")
            want = self.prefixes[e.u].inverse() * self.phi.apply(e.m) * self.prefixes[e.v]
            if walk_value(sp, w) != want:
                raise SystemMismatch(f"edge {i} image value violates equivariance")
        for v in sp.labeled_vertices():
            w = self.vertex_map[v]
            if not sp.vertices[w].labeled:
                raise NotInvariant(f"labeled vertex {v} maps to unlabeled vertex")
            target = sp.vertex_group_graph(w)
            for g in sp.vertices[v].label:
                img = self.prefixes[v].inverse() * self.phi.apply(g) * self.prefixes[v]
                if not target.contains(img.letters):
                    raise NotInvariant(f"vertex group at {v} not carried into {w}")
        return True

    def image_insertion(self, vid: int, g: Word) -> Word:
        return self.prefixes[vid].inverse() * self.phi.apply(g) * self.prefixes[vid]

    def map_walk(self, w: Walk) -> Walk:
        sp = self.splitting
        out = trivial_walk(sp, self.vertex_map[w.start], self.image_insertion(w.start, w.g0))
        for signed, g in w.steps:
            eid = abs(signed) - 1
            img = self.edge_map[eid]
            if signed < 0:
                img = walk_invert(sp, img)
            out = walk_concat(sp, out, img)
            vat = sp.oriented(signed)[1]
            if not g.is_identity():
                out = walk_concat(sp, out, trivial_walk(sp, self.vertex_map[vat], self.image_insertion(vat, g)))
        return out

    def iterate_edge(self, eid: int, n: int) -> Walk:
        w = self.edge_map[eid]
        for _ in range(n - 1):
            w = self.map_walk(w)
        return w


def top_rep(phi, splitting: FreeSplitting) -> TopRep:
    """Build a topological representative of a verified automorphism.

    Labeled vertices go to labeled vertices via a conjugacy witness for the
    image group (NotInvariant when none exists); unlabeled vertices go to
    the base of the target component.
    """
    from .automorphisms import is_automorphism

    sp = splitting
    if not phi.verified and not is_automorphism(phi):
        raise NotInvariant("need a verified automorphism")
    n_vertices = len(sp.vertices)
    vertex_map = [None] * n_vertices
    prefixes = [None] * n_vertices
    labeled = sp.labeled_vertices()
    for v in labeled:
        comp = sp.vertices[v].component
        target_comp = phi.sigma[comp]
        imgs = [phi.apply(g) for g in sp.vertices[v].label]
        img_graph = SubgroupGraph(target_comp, sp.system.rank(target_comp), imgs)
        found = None
        for w in labeled:
            if sp.vertices[w].component != target_comp:
                continue
            x = img_graph.conjugacy_witness(sp.vertex_group_graph(w))
            if x is not None:
                found = (w, x)
                break
        if found is None:
            raise NotInvariant(f"image of vertex group at {v} matches no vertex group")
        vertex_map[v], prefixes[v] = found
    for v in range(n_vertices):
        if vertex_map[v] is None:
            comp = sp.vertices[v].component
            target_comp = phi.sigma[comp]
            vertex_map[v] = sp.base[target_comp]
            prefixes[v] = Word(target_comp)
    edge_map = []
    for e in sp.edges:
        value = prefixes[e.u].inverse() * phi.apply(e.m) * prefixes[e.v]
        edge_map.append(realize_path(sp, vertex_map[e.u], vertex_map[e.v], value))
    rep = TopRep(sp, phi, vertex_map, prefixes, edge_map)
    rep.validate()
    return rep


def transition_matrix(f: TopRep) -> list[list[int]]:
    """A[i][j] = number of times the image of edge j crosses edge i."""
    n = len(f.splitting.edges)
    A = [[0] * n for _ in range(n)]
    for j in range(n):
        for s, _ in f.edge_map[j].steps:
            A[abs(s) - 1][j] += 1
    return A


def is_irreducible(A) -> bool:
    """Standard Perron-Frobenius irreducibility: positive-entry digraph is
    strongly connected (and the matrix is not the 1x1 zero matrix)."""
    n = len(A)
    if n == 0:
        return False
    if n == 1:
        return A[0][0] > 0

    def reach(start, transpose=False):
        seen = {start}
        stack = [start]
        while stack:
            u = stack.pop()
            for v in range(n):
                a = A[v][u] if not transpose else A[u][v]
                if a > 0 and v not in seen:
                    seen.add(v)
                    stack.append(v)
        return seen

    return len(reach(0)) == n and len(reach(0, transpose=True)) == n


def restriction(f: TopRep):
    """Restrict an automorphism to the vertex-group system.

    Returns (SubgroupSystem, Automorphism of the abstract system, prefixes),
    where the restriction at a labeled vertex v is inn(x_v^-1) . phi mapped
    through the given bases.  The empty system yields (system, None, {}).
    """
    sp = f.splitting
    labeled = sp.labeled_vertices()
    subsys = sp.vertex_system()
    if not labeled:
        return subsys, None, {}
    abstract = subsys.abstract_system()
    index_of = {v: i for i, v in enumerate(labeled)}
    sigma = []
    images = []
    prefixes = {}
    for v in labeled:
        w = f.vertex_map[v]
        if w not in index_of:
            raise NotInvariant("labeled vertex maps to unlabeled vertex")
        sigma.append(index_of[w])
        prefixes[v] = f.prefixes[v]
        imgs = []
        for g in sp.vertices[v].label:
            amb = f.prefixes[v].inverse() * f.phi.apply(g) * f.prefixes[v]
            abstract_img = subsys.rewrite(index_of[w], amb)
            if abstract_img is None:
                raise NotInvariant("restriction image escapes the target vertex group")
            imgs.append(abstract_img)
        images.append(imgs)
    from .automorphisms import Automorphism

    # order images by source member index
    ordered = [None] * len(labeled)
    for pos, v in enumerate(labeled):
        ordered[index_of[v]] = images[pos]
    sig = [None] * len(labeled)
    for pos, v in enumerate(labeled):
        sig[index_of[v]] = sigma[pos]
    rest = Automorphism(abstract, ordered, tuple(sig))
    return subsys, rest, prefixes


def to_dot(splitting: FreeSplitting) -> str:
    """Deterministic DOT rendering of the quotient graphs."""
    lines = ["graph splitting {"]
    for i, v in enumerate(splitting.vertices):
        if v.labeled:
            label = ",".join(str(g) for g in v.label)
            lines.append(f'  v{i} [shape=doublecircle, label="v{i}: <{label}>"];')
        else:
            lines.append(f'  v{i} [shape=circle, label="v{i}"];')
    for i, e in enumerate(splitting.edges):
        style = ", style=bold" if e.tree else ""
        lines.append(f'  v{e.u} -- v{e.v} [label="e{i}: {e.m}"{style}];')
    lines.append("}")
    return "\n".join(lines)
