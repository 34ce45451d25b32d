"""Exact graph matching of queries: answer sets, reasoning trees and provenance.

Semantics: existential variables range over all entities, a negated atom holds
iff its edge is absent, and a union is the union of its branches.  A variable
that occurs only in negated atoms (2nu1p) is bound inside the negation, so the
negated atoms sharing it form one negated conjunction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

from .kg import KnowledgeGraph, KnowledgeGraphSplit
from .queries import TARGET, Anchor, Atom, Node, QaPair, Query, Var, dnf_branches


class Provenance(enum.Enum):
    TRAIN = "train"
    MISSING = "missing"
    NONEXISTENT = "nonexistent"


def provenance(triple, split: KnowledgeGraphSplit) -> Provenance:
    if triple in split.train:
        return Provenance.TRAIN
    if triple in split.missing:
        return Provenance.MISSING
    return Provenance.NONEXISTENT


@dataclass(frozen=True)
class NegatedGroup:
    """Negated atoms joined by variables that occur only under negation."""

    atoms: tuple[int, ...]
    inner: tuple[Var, ...]
    sink: Node  # the boundary node the group constrains


class QueryStructure:
    """Per-query topology: in-atoms per node, out-atom per variable, a
    leaves-to-target evaluation order and the negated groups."""

    def __init__(self, query: Query):
        self.query = query
        atoms = query.atoms
        self.positive = tuple(i for i, a in enumerate(atoms) if not a.negated)
        pos_vars = set(query.positive_variables)
        self.groups = self._negated_groups(atoms, pos_vars)

    @staticmethod
    def _negated_groups(atoms: tuple[Atom, ...], pos_vars: set) -> tuple[NegatedGroup, ...]:
        neg = [i for i, a in enumerate(atoms) if a.negated]
        parent = {i: i for i in neg}

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        by_var: dict[Var, list[int]] = {}
        for i in neg:
            for n in (atoms[i].subject, atoms[i].object):
                if isinstance(n, Var) and n not in pos_vars:
                    by_var.setdefault(n, []).append(i)
        for members in by_var.values():
            for j in members[1:]:
                parent[find(j)] = find(members[0])
        comps: dict[int, list[int]] = {}
        for i in neg:
            comps.setdefault(find(i), []).append(i)
        groups = []
        for members in comps.values():
            members.sort()
            inner = sorted({n for i in members for n in (atoms[i].subject, atoms[i].object)
                            if isinstance(n, Var) and n not in pos_vars})
            sinks = {atoms[i].object for i in members} - set(inner)
            if len(sinks) != 1:
                raise ValueError("negated group must constrain exactly one node")
            groups.append(NegatedGroup(tuple(members), tuple(inner), sinks.pop()))
        return tuple(groups)

    def order(self, atom_ids: Iterable[int]) -> list[Node]:
        return eval_order(self.query, atom_ids)


def eval_order(query: Query, atom_ids: Iterable[int]) -> list[Node]:
    """Non-anchor nodes of ``atom_ids`` ordered leaves first, target last."""
    atoms = query.atoms
    ids = list(atom_ids)
    out_of = {atoms[i].subject: atoms[i].object for i in ids if not isinstance(atoms[i].subject, Anchor)}
    nodes = {n for i in ids for n in (atoms[i].subject, atoms[i].object) if not isinstance(n, Anchor)}

    def depth(n):
        d = 0
        while n in out_of:
            n = out_of[n]
            d += 1
        return d

    return sorted(nodes, key=lambda n: (-depth(n), _node_sort_key(n)))


def _node_sort_key(n: Node):
    if n is TARGET:
        return (2, 0)
    if isinstance(n, Var):
        return (1, n.index)
    return (0, n.index)


def _sweep(query: Query, atom_ids: Iterable[int], graph: KnowledgeGraph, groups=()) -> dict:
    """Forward candidate sets for every non-anchor node of the in-tree spanned
    by ``atom_ids``; ``groups`` subtract negated-group matches at their sink."""
    atoms = query.atoms
    ids = list(atom_ids)
    incoming: dict[Node, list[Atom]] = {}
    for i in ids:
        incoming.setdefault(atoms[i].object, []).append(atoms[i])
    sets: dict = {}
    for node in eval_order(query, ids):
        cur = None
        for atom in incoming.get(node, ()):
            src = atom.subject
            if isinstance(src, Anchor):
                img = graph.successors(src.entity, atom.relation)
            else:
                img = graph.image(sets[src], atom.relation)
            cur = set(img) if cur is None else cur.intersection(img)
            if not cur:
                break
        if cur is None:
            cur = set(range(graph.entity_count))
        for g in groups:
            if g.sink == node and cur:
                cur -= _group_matches(query, g, graph)
        sets[node] = cur
    return sets


def _group_matches(query: Query, group: NegatedGroup, graph: KnowledgeGraph) -> set:
    """Sink values for which the (positive reading of the) negated group holds.
    Valid when the group's sources are anchors, as in every template."""
    sets = _sweep(query, group.atoms, graph)
    return sets.get(group.sink, set())


def answers(query: Query, graph: KnowledgeGraph) -> set:
    """Exact answer set of ``query`` over ``graph``."""
    st = QueryStructure(query)
    out: set = set()
    for branch in dnf_branches(query):
        pos = [i for i in branch if not query.atoms[i].negated]
        groups = [g for g in st.groups if set(g.atoms) <= branch]
        sets = _sweep(query, pos, graph, groups)
        out |= sets.get(TARGET, set())
    return out


@dataclass(frozen=True)
class ReasoningTree:
    """One grounding of a QA pair with per-atom provenance.

    ``assignment`` lists ``(var index, entity)`` for the query's positive
    variables; ``provenance`` has ``None`` for negated atoms.  For union types
    the provenance covers every positive atom of the query, while
    ``missing_count`` only counts the realising ``branch``.
    """

    assignment: tuple[tuple[int, int], ...]
    target: int
    provenance: tuple[Provenance | None, ...]
    branch: int
    missing_count: int
    hops: int

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.assignment)

    @property
    def has_nonexistent(self) -> bool:
        return any(p is Provenance.NONEXISTENT for p in self.provenance)

    def entity_of(self, node: Node) -> int:
        if node is TARGET:
            return self.target
        if isinstance(node, Anchor):
            return node.entity
        return dict(self.assignment)[node.index]

    def sort_key(self) -> tuple:
        return (self.missing_count > 0 and self.has_nonexistent, self.missing_count, self.hops, self.values, self.branch)


class Matcher:
    """Caches per-branch candidate sets of one query against one split, so
    trees for many answers of the same query are cheap."""

    def __init__(self, query: Query, split: KnowledgeGraphSplit):
        self.query = query
        self.split = split
        self.structure = QueryStructure(query)
        self._group_cache: dict = {}

    @cached_property
    def _branches(self):
        q = self.query
        out = []
        for b, branch in enumerate(dnf_branches(q)):
            pos = sorted(i for i in branch if not q.atoms[i].negated)
            groups = [g for g in self.structure.groups if set(g.atoms) <= branch]
            sets = _sweep(q, pos, self.split.full, groups)
            order = [n for n in self.structure.order(pos) if n is not TARGET][::-1]
            out_atom = {q.atoms[i].subject: i for i in pos if isinstance(q.atoms[i].subject, Var)}
            out.append((b, branch, pos, groups, sets, order, out_atom))
        return out

    def answers(self) -> set:
        res: set = set()
        for _, _, _, _, sets, _, _ in self._branches:
            res |= sets.get(TARGET, set())
        return res

    def trees(self, answer: int) -> list[ReasoningTree]:
        q = self.query
        pos_vars = [v.index for v in q.positive_variables]
        trees = []
        for b, branch, pos, groups, sets, order, out_atom in self._branches:
            if answer not in sets.get(TARGET, ()):
                continue
            for binding in self._bind(order, out_atom, sets, {TARGET: answer}, 0):
                if not all(self._group_holds(g, binding) for g in groups):
                    continue
                prov = []
                for i, atom in enumerate(q.atoms):
                    if atom.negated:
                        prov.append(None)
                    else:
                        prov.append(provenance(self._triple(atom, binding), self.split))
                missing = sum(1 for i in pos if prov[i] is Provenance.MISSING)
                trees.append(ReasoningTree(
                    tuple((k, binding[Var(k)]) for k in pos_vars),
                    answer, tuple(prov), b, missing, len(pos)))
        return trees

    def _bind(self, order, out_atom, sets, binding, k):
        if k == len(order):
            yield dict(binding)
            return
        var = order[k]
        atom = self.query.atoms[out_atom[var]]
        dst = binding[atom.object]
        cands = self.split.full.predecessors(dst, atom.relation) & sets[var]
        for v in sorted(cands):
            binding[var] = v
            yield from self._bind(order, out_atom, sets, binding, k + 1)
        binding.pop(var, None)

    @staticmethod
    def _triple(atom: Atom, binding) -> tuple[int, int, int]:
        s = atom.subject.entity if isinstance(atom.subject, Anchor) else binding[atom.subject]
        o = atom.object.entity if isinstance(atom.object, Anchor) else binding[atom.object]
        return (s, atom.relation, o)

    def _group_holds(self, group: NegatedGroup, binding) -> bool:
        """True when the negated group is satisfied (its pattern is absent)."""
        q = self.query
        full = self.split.full
        if not group.inner:
            return not all(self._triple(q.atoms[i], binding) in full for i in group.atoms)
        matched = self._group_cache.get(group)
        if matched is None:
            matched = self._group_cache[group] = _group_matches(q, group, full)
        return binding[group.sink] not in matched


def enumerate_trees(qa: QaPair, split: KnowledgeGraphSplit) -> list[ReasoningTree]:
    """All groundings of ``qa`` over the full graph, one per (assignment, branch)."""
    return Matcher(qa.query, split).trees(qa.answer)


def minimal_tree(qa: QaPair, split: KnowledgeGraphSplit, matcher: Matcher | None = None) -> ReasoningTree | None:
    """Fewest missing links, then fewest hops, then lexicographic assignment.

    For unions, trees whose structure contains a non-existing link rank after
    complete ones (unless they are trivial), so a returned tree with
    ``has_nonexistent`` means the pair must be filtered out.
    """
    trees = (matcher or Matcher(qa.query, split)).trees(qa.answer)
    if not trees:
        return None
    return min(trees, key=ReasoningTree.sort_key)


def intermediate_cardinality(query: Query, train: KnowledgeGraph) -> int:
    """Number of entities each existential variable can bind through training
    edges on the anchor side, summed over variables."""
    vars_ = query.positive_variables
    if not vars_:
        return 0
    bound: dict[Var, set] = {v: set() for v in vars_}
    for branch in dnf_branches(query):
        pos = [i for i in branch if not query.atoms[i].negated]
        sets = _sweep(query, pos, train)
        for v in vars_:
            if v in sets:
                bound[v] |= sets[v]
    return sum(len(s) for s in bound.values())


def negative_tree_counts(query: Query, tree: ReasoningTree, split: KnowledgeGraphSplit) -> dict[str, int]:
    """Train/missing link counts of the negated sub-patterns.

    Each negated group is matched positively from its bound side with the sink
    left free; the existing links of those matches form the negative reasoning
    tree.
    """
    counts = {"train": 0, "missing": 0}
    st = QueryStructure(query)
    full = split.full
    seen: set = set()
    for g in st.groups:
        pending = [{}]
        for i in g.atoms:
            atom = query.atoms[i]
            nxt = []
            for b in pending:
                if isinstance(atom.subject, Anchor):
                    s = atom.subject.entity
                elif atom.subject in b:
                    s = b[atom.subject]
                elif isinstance(atom.subject, Var) and atom.subject not in g.inner:
                    s = tree.entity_of(atom.subject)
                else:
                    continue
                for o in full.successors(s, atom.relation):
                    seen.add((s, atom.relation, o))
                    if atom.object in g.inner:
                        nb = dict(b)
                        nb[atom.object] = o
                        nxt.append(nb)
                if atom.object not in g.inner:
                    nxt.append(b)
            pending = nxt
    for t in seen:
        p = provenance(t, split)
        if p is Provenance.TRAIN:
            counts["train"] += 1
        elif p is Provenance.MISSING:
            counts["missing"] += 1
    return counts
