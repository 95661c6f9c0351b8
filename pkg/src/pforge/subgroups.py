"""Stallings graphs for finitely generated subgroups of free groups.

Folded based labeled graphs decide membership, rank, whole-group and
finite-index questions exactly; together with the Nielsen machinery they
rewrite elements in a user-given basis and find conjugators between
conjugate subgroups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import kernel, nielsen
from .errors import SystemMismatch
from .words import FreeGroupSystem, Word


class SubgroupGraph:
    """Folded Stallings graph of ⟨generator_words⟩ inside one component."""

    def __init__(self, component: int, ambient_rank: int, generator_words):
        self.component = component
        self.ambient_rank = ambient_rank
        self.given = [tuple(w.letters) if isinstance(w, Word) else tuple(w) for w in generator_words]
        self._build()
        self._tree()
        self._given_exprs = None

    # -- construction --------------------------------------------------

    def _build(self):
        edges = []  # (u, letter>0, v)
        next_v = 1
        for w in self.given:
            if not w:
                continue
            cur = 0
            for idx, x in enumerate(w):
                last = idx == len(w) - 1
                tgt = 0 if last else next_v
                if not last:
                    next_v += 1
                if x > 0:
                    edges.append((cur, x, tgt))
                else:
                    edges.append((tgt, -x, cur))
                cur = tgt
        parent = list(range(next_v))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        changed = True
        while changed:
            changed = False
            seen = {}
            merged = set()
            for u, lab, v in edges:
                key = (find(u), lab)
                tv = find(v)
                if key in seen:
                    other = seen[key]
                    if other != tv:
                        parent[max(other, tv)] = min(other, tv)
                        changed = True
                else:
                    seen[key] = tv
                # also fold on reversed reading
                rkey = (find(v), -lab)
                tu = find(u)
                if rkey in seen:
                    other = seen[rkey]
                    if other != tu:
                        parent[max(other, tu)] = min(other, tu)
                        changed = True
                else:
                    seen[rkey] = tu
            del merged
        # compact
        classes = sorted({find(v) for v in range(next_v)})
        remap = {c: i for i, c in enumerate(classes)}
        uniq = {}
        for u, lab, v in edges:
            uniq[(remap[find(u)], lab, remap[find(v)])] = True
        self.num_vertices = len(classes)
        self.base = remap[find(0)]
        self.edges = sorted(uniq)  # (u, lab, v), deterministic order
        # transition maps with edge ids
        self.trans = [dict() for _ in range(self.num_vertices)]
        for eid, (u, lab, v) in enumerate(self.edges):
            self.trans[u][lab] = (v, eid, 1)
            self.trans[v][-lab] = (u, eid, -1)

    def _tree(self):
        self.tree_parent = {self.base: None}
        order = [self.base]
        i = 0
        while i < len(order):
            v = order[i]
            i += 1
            for lab in sorted(self.trans[v]):
                w, eid, _ = self.trans[v][lab]
                if w not in self.tree_parent:
                    self.tree_parent[w] = (v, lab, eid)
                    order.append(w)
        tree_eids = {info[2] for info in self.tree_parent.values() if info}
        self.nontree = [eid for eid in range(len(self.edges)) if eid not in tree_eids]
        self.basis_index = {eid: k for k, eid in enumerate(self.nontree)}

    # -- queries ---------------------------------------------------------

    @property
    def rank(self) -> int:
        return len(self.nontree)

    def path_word(self, v) -> list[int]:
        out = []
        while self.tree_parent[v] is not None:
            u, lab, _ = self.tree_parent[v]
            out.append(lab)
            v = u
        out.reverse()
        return out

    def trace(self, letters, start=None):
        v = self.base if start is None else start
        for x in letters:
            nxt = self.trans[v].get(x)
            if nxt is None:
                return None
            v = nxt[0]
        return v

    def contains(self, w) -> bool:
        letters = w.letters if isinstance(w, Word) else w
        return self.trace(letters) == self.base

    def is_whole_group(self) -> bool:
        return self.num_vertices == 1 and self.rank == self.ambient_rank

    def index(self):
        """Index in the ambient group if finite, else None."""
        full = 2 * self.ambient_rank
        for v in range(self.num_vertices):
            if len(self.trans[v]) != full:
                return None
        return self.num_vertices

    def basis_ambient_word(self, k) -> list[int]:
        eid = self.nontree[k]
        u, lab, v = self.edges[eid]
        return kernel.reduce_word(
            self.path_word(u) + [lab] + kernel.invert_word(self.path_word(v))
        )

    def express_in_graph_basis(self, letters):
        """Word over signed basis indices (±1-based), or None if not a member."""
        v = self.base
        out = []
        for x in letters:
            nxt = self.trans[v].get(x)
            if nxt is None:
                return None
            w, eid, direction = nxt
            if eid in self.basis_index:
                out.append(direction * (self.basis_index[eid] + 1))
            v = w
        if v != self.base:
            return None
        return kernel.reduce_word(out)

    def express_in_given(self, letters):
        """Word over the given generators (signed 1-based indices), or None.

        Valid when the given generators are themselves a free basis of the
        subgroup (rank equals their number).
        """
        coords = self.express_in_graph_basis(letters)
        if coords is None:
            return None
        if not self.nontree:
            return []
        if self._given_exprs is None:
            gen_coords = [self.express_in_graph_basis(g) for g in self.given if g]
            if len(gen_coords) != self.rank or any(c is None for c in gen_coords):
                raise SystemMismatch("given generators are not a basis of the subgroup")
            # graph-basis symbols in terms of the given generators
            self._given_exprs = nielsen.express_generators(gen_coords)
        return kernel.substitute(coords, self._given_exprs)

    # -- conjugacy --------------------------------------------------------

    def _core(self):
        alive = set(range(self.num_vertices))
        degree = {v: len(self.trans[v]) for v in alive}
        changed = True
        while changed:
            changed = False
            for v in sorted(alive):
                if degree[v] <= 1 and len(alive) > 1:
                    alive.discard(v)
                    for lab, (w, _, _) in self.trans[v].items():
                        if w in alive:
                            degree[w] -= 1
                    changed = True
        return alive

    def conjugacy_witness(self, other: "SubgroupGraph"):
        """x with self = x * other * x^-1 (as subgroups), else None."""
        if self.component != other.component or self.ambient_rank != other.ambient_rank:
            return None
        core1, core2 = self._core(), other._core()
        if len(core1) != len(core2):
            return None

        def tail(graph, core):
            v = graph.base
            word = []
            visited = {v}
            while v not in core:
                # valence-1 chain towards the core is unique
                step = None
                for lab in sorted(graph.trans[v]):
                    w = graph.trans[v][lab][0]
                    if w not in visited or w in core:
                        step = (lab, w)
                        break
                if step is None:
                    return None, None
                word.append(step[0])
                v = step[1]
                visited.add(v)
            return word, v

        t1, entry1 = tail(self, core1)
        t2, entry2 = tail(other, core2)
        if entry1 is None or entry2 is None:
            return None
        for v0 in sorted(core2):
            m = {entry1: v0}
            queue = [entry1]
            ok = True
            while queue and ok:
                u = queue.pop()
                u2 = m[u]
                labs1 = {l for l in self.trans[u] if self.trans[u][l][0] in core1}
                labs2 = {l for l in other.trans[u2] if other.trans[u2][l][0] in core2}
                if labs1 != labs2:
                    ok = False
                    break
                for lab in sorted(labs1):
                    w1 = self.trans[u][lab][0]
                    w2 = other.trans[u2][lab][0]
                    if w1 in m:
                        if m[w1] != w2:
                            ok = False
                            break
                    else:
                        m[w1] = w2
                        queue.append(w1)
            if ok and len(m) == len(core1) and len(set(m.values())) == len(core2):
                # path word entry2 -> v0 inside core2
                rho = _path_in(other, core2, entry2, v0)
                if rho is None:
                    continue
                x = kernel.reduce_word(
                    t1 + kernel.invert_word(rho) + kernel.invert_word(t2)
                )
                return Word(self.component, x, _reduced=True)
        return None


def _path_in(graph, allowed, src, dst):
    prev = {src: None}
    queue = [src]
    while queue:
        v = queue.pop(0)
        if v == dst:
            out = []
            while prev[v] is not None:
                u, lab = prev[v]
                out.append(lab)
                v = u
            out.reverse()
            return out
        for lab in sorted(graph.trans[v]):
            w = graph.trans[v][lab][0]
            if w in allowed and w not in prev:
                prev[w] = (v, lab)
                queue.append(w)
    return None


@dataclass
class SubgroupMember:
    component: int
    gens: tuple[Word, ...]
    graph: SubgroupGraph = field(repr=False, default=None)


class SubgroupSystem:
    """A finite list of f.g. subgroups of an ambient free group system.

    The invariant checked at construction: each member's generating set is a
    free basis of the subgroup it generates (the folded graph has rank equal
    to the number of generators).
    """

    def __init__(self, system: FreeGroupSystem, members):
        self.system = system
        self.members = []
        for component, gens in members:
            gens = tuple(gens)
            graph = SubgroupGraph(component, system.rank(component), gens)
            if graph.rank != len(gens):
                raise SystemMismatch(
                    f"generators of member on component {component} are not a free basis"
                )
            self.members.append(SubgroupMember(component, gens, graph))

    def __len__(self):
        return len(self.members)

    @property
    def is_empty(self):
        return not self.members

    @property
    def ranks(self):
        return tuple(len(m.gens) for m in self.members)

    def abstract_system(self) -> FreeGroupSystem:
        if self.is_empty:
            raise SystemMismatch("empty subgroup system has no abstract free group system")
        return FreeGroupSystem(self.ranks)

    def embed(self, member_idx: int, abstract: Word) -> Word:
        """Abstract member coordinates -> ambient word."""
        m = self.members[member_idx]
        images = [list(g.letters) for g in m.gens]
        return Word(m.component, kernel.substitute(abstract.letters, images), _reduced=True)

    def rewrite(self, member_idx: int, ambient: Word):
        """Ambient word -> abstract member coordinates, or None if outside."""
        m = self.members[member_idx]
        if ambient.component != m.component:
            return None
        coords = m.graph.express_in_given(ambient.letters)
        if coords is None:
            return None
        return Word(member_idx, coords, _reduced=True)

    def member_containing(self, ambient: Word, conjugation_budget=0, system=None):
        """(member_idx, conjugator u) with u^-1 * w * u in the member, else None."""
        sys = system or self.system
        for idx, m in enumerate(self.members):
            if m.component != ambient.component:
                continue
            if m.graph.contains(ambient.letters):
                return idx, Word(ambient.component)
        if conjugation_budget > 0:
            for u in sys.enumerate_words(ambient.component, conjugation_budget):
                w = u.inverse() * ambient * u
                for idx, m in enumerate(self.members):
                    if m.component == ambient.component and m.graph.contains(w.letters):
                        return idx, u
        return None

    def carries(self, other: "SubgroupSystem", conjugation_budget=3) -> bool:
        """True if every member of ``other`` lies in a conjugate of a member."""
        for om in other.members:
            found = False
            for u in self.system.enumerate_words(om.component, conjugation_budget):
                for m in self.members:
                    if m.component != om.component:
                        continue
                    if all(
                        m.graph.contains((u.inverse() * g * u).letters) for g in om.gens
                    ):
                        found = True
                        break
                if found:
                    break
            if not found:
                return False
        return True

    def complexity(self) -> int:
        return sum(2 * len(m.gens) - 1 for m in self.members)
