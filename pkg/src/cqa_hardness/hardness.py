"""Trivial / partial-inference / full-inference labels for QA pairs.

A partial-inference pair is reduced by contracting its training links: the
endpoints of every ``Train`` atom of the minimal reasoning tree are merged, and
the ``Missing`` atoms left over form an in-tree rooted at the target whose
shape names the easier query type.  For unions a branch whose residual is a
strict superset of another branch's residual is dropped first, since the
cheaper disjunct already yields the answer.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from typing import Iterable, Sequence

from .kg import KnowledgeGraphSplit
from .matcher import Matcher, Provenance, ReasoningTree, negative_tree_counts
from .queries import (
    NEGATION_TYPES,
    POSITIVE_TYPES,
    TARGET,
    UNION_TYPES,
    QaPair,
    Query,
    QueryType,
    dnf_branches,
    instantiate,
    arity,
)

TRIVIAL = "trivial"
PARTIAL = "partial"
FULL = "full"
FILTERED = "filtered"

UNION_RULES = ("any_nonexistent", "require_missing")


class NotAnAnswerError(ValueError):
    pass


class UnreducibleShapeError(ValueError):
    pass


@dataclass(frozen=True)
class HardnessLabel:
    kind: str
    reduced: QueryType | None = None

    def __post_init__(self):
        if self.kind not in (TRIVIAL, PARTIAL, FULL, FILTERED):
            raise ValueError(f"unknown label kind {self.kind!r}")
        if (self.kind == PARTIAL) != (self.reduced is not None):
            raise ValueError("only partial labels carry a reduced type")

    def bucket(self, qtype: QueryType) -> str:
        """Reduction-matrix column: the reduced type, or ``qtype`` itself when
        full-inference."""
        if self.kind == PARTIAL:
            return self.reduced.value
        if self.kind == FULL:
            return QueryType(qtype).value
        return self.kind

    def __str__(self):
        return f"partial:{self.reduced.value}" if self.kind == PARTIAL else self.kind

    @classmethod
    def parse(cls, text: str) -> "HardnessLabel":
        if text.startswith("partial:"):
            return cls(PARTIAL, QueryType(text.split(":", 1)[1]))
        return cls(text)


TRIVIAL_LABEL = HardnessLabel(TRIVIAL)
FULL_LABEL = HardnessLabel(FULL)
FILTERED_LABEL = HardnessLabel(FILTERED)


def partial(qtype) -> HardnessLabel:
    return HardnessLabel(PARTIAL, QueryType(qtype))


# ------------------------------------------------------------------ reduction


class _Classes:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def _tree_signature(edges: list[tuple[object, object]], root) -> tuple:
    children: dict = {}
    for src, dst in edges:
        children.setdefault(dst, []).append(src)
    nodes = {n for e in edges for n in e}
    if root not in nodes or len(edges) != len(nodes) - 1:
        raise UnreducibleShapeError("residual is not an in-tree rooted at the target")
    seen = set()

    def sig(n):
        if n in seen:
            raise UnreducibleShapeError("cycle in residual")
        seen.add(n)
        kids = children.get(n, [])
        role = "t" if n == root else ("v" if kids else "a")
        return (role, tuple(sorted(sig(k) for k in kids)))

    out = sig(root)
    if seen != nodes:
        raise UnreducibleShapeError("residual is disconnected")
    return out


def residual_signature(query: Query, prov: Sequence[Provenance | None]) -> tuple:
    """Shape of the missing part after contracting training links."""
    atoms = query.atoms
    pos = [i for i, a in enumerate(atoms) if not a.negated]
    if any(prov[i] is Provenance.NONEXISTENT for i in pos):
        raise UnreducibleShapeError("non-existing link in reasoning tree")
    classes = _Classes()
    for i in pos:
        classes.find(atoms[i].subject)
        classes.find(atoms[i].object)
        if prov[i] is Provenance.TRAIN:
            classes.union(atoms[i].object, atoms[i].subject)
    root = classes.find(TARGET)
    residuals = []
    for branch in dnf_branches(query):
        res = frozenset(i for i in branch if i in pos and prov[i] is Provenance.MISSING)
        if not res:
            raise UnreducibleShapeError("a branch is fully in train (trivial pair)")
        residuals.append(res)
    kept = sorted({r for r in residuals if not any(o < r for o in residuals)}, key=sorted)
    sigs = []
    for res in kept:
        edges = [(classes.find(atoms[i].subject), classes.find(atoms[i].object)) for i in sorted(res)]
        sigs.append(_tree_signature(edges, root))
    if len(sigs) == 1:
        return sigs[0]
    return ("union", tuple(sorted(sigs)))


@lru_cache(maxsize=None)
def _signature_table() -> dict:
    table = {}
    for qtype in POSITIVE_TYPES:
        n_anchor, n_rel = arity(qtype)
        q = instantiate(qtype, list(range(n_anchor)), list(range(n_rel)))
        sig = residual_signature(q, [Provenance.MISSING] * len(q.atoms))
        assert sig not in table, (qtype, table.get(sig))
        table[sig] = qtype
    return table


def reduce_provenance(query: Query, prov: Sequence[Provenance | None]) -> QueryType:
    sig = residual_signature(query, prov)
    try:
        return _signature_table()[sig]
    except KeyError:
        raise UnreducibleShapeError(f"no query type has residual shape {sig}") from None


def reduce_type(query: Query, tree: ReasoningTree) -> QueryType:
    """Easier query type left after contracting the training links of ``tree``."""
    pos = [p for p, a in zip(tree.provenance, query.atoms) if not a.negated]
    if Provenance.TRAIN not in pos or Provenance.MISSING not in pos:
        raise ValueError("reduce_type needs at least one Train and one Missing positive atom")
    return reduce_provenance(query, tree.provenance)


@lru_cache(maxsize=None)
def possible_reductions(qtype) -> tuple[QueryType, ...]:
    """Buckets a non-trivial pair of ``qtype`` can land in: reduced types and,
    last, ``qtype`` itself for full inference."""
    qtype = QueryType(qtype)
    n_anchor, n_rel = arity(qtype)
    q = instantiate(qtype, list(range(n_anchor)), list(range(n_rel)))
    pos = q.positive_atoms()
    found = set()
    for pattern in itertools.product((Provenance.TRAIN, Provenance.MISSING), repeat=len(pos)):
        if Provenance.TRAIN not in pattern or Provenance.MISSING not in pattern:
            continue
        prov: list = [None] * len(q.atoms)
        for i, p in zip(pos, pattern):
            prov[i] = p
        if any(all(prov[i] is Provenance.TRAIN for i in b if i in pos) for b in dnf_branches(q)):
            continue
        found.add(reduce_provenance(q, prov))
    order = list(POSITIVE_TYPES)
    return tuple(sorted(found, key=order.index)) + (qtype,)


# ----------------------------------------------------------------- classify


def label_from_tree(query: Query, tree: ReasoningTree, union_rule: str = "any_nonexistent") -> HardnessLabel:
    if tree.missing_count == 0:
        return TRIVIAL_LABEL
    if query.type in UNION_TYPES:
        if union_rule not in UNION_RULES:
            raise ValueError(f"unknown union rule {union_rule!r}")
        if tree.has_nonexistent:
            return FILTERED_LABEL
        if union_rule == "require_missing":
            branches = dnf_branches(query)
            disjuncts = set().union(*branches) - set.intersection(*map(set, branches))
            if any(tree.provenance[i] is not Provenance.MISSING for i in disjuncts):
                return FILTERED_LABEL
    pos = [p for p, a in zip(tree.provenance, query.atoms) if not a.negated]
    if all(p is Provenance.MISSING for p in pos):
        return FULL_LABEL
    return partial(reduce_provenance(query, tree.provenance))


def classify(qa: QaPair, split: KnowledgeGraphSplit, union_rule: str = "any_nonexistent",
             matcher: Matcher | None = None) -> HardnessLabel:
    """Hardness of a QA pair from its minimal reasoning tree."""
    trees = (matcher or Matcher(qa.query, split)).trees(qa.answer)
    if not trees:
        raise NotAnAnswerError(f"entity {qa.answer} is not an answer of {qa.query.type.value} over the full graph")
    return label_from_tree(qa.query, min(trees, key=ReasoningTree.sort_key), union_rule)


def classify_answers(query: Query, answers: Iterable[int], split: KnowledgeGraphSplit,
                     union_rule: str = "any_nonexistent") -> dict[int, HardnessLabel]:
    m = Matcher(query, split)
    return {t: classify(QaPair(query, t), split, union_rule, matcher=m) for t in answers}


def classify_negation(qa: QaPair, split: KnowledgeGraphSplit) -> tuple[HardnessLabel, dict[str, int]]:
    """Label of the positive reasoning tree plus train/missing link counts of
    the negative one."""
    if qa.query.type not in NEGATION_TYPES:
        raise ValueError(f"{qa.query.type.value} has no negated atoms")
    m = Matcher(qa.query, split)
    trees = m.trees(qa.answer)
    if not trees:
        raise NotAnAnswerError(f"entity {qa.answer} is not an answer of {qa.query.type.value} over the full graph")
    tree = min(trees, key=ReasoningTree.sort_key)
    return label_from_tree(qa.query, tree), negative_tree_counts(qa.query, tree, split)


# --------------------------------------------------------- reduction matrix


def _pct(x: float) -> str:
    return str(Decimal(repr(x)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class ReductionMatrix:
    """Per original type, the share of non-trivial pairs per reduced type."""

    counts: dict[QueryType, Counter] = field(default_factory=dict)
    skipped: dict[QueryType, Counter] = field(default_factory=dict)

    def add(self, qtype, label: HardnessLabel) -> None:
        qtype = QueryType(qtype)
        if label.kind in (TRIVIAL, FILTERED):
            self.skipped.setdefault(qtype, Counter())[label.kind] += 1
            return
        self.counts.setdefault(qtype, Counter())[label.bucket(qtype)] += 1

    def merge(self, other: "ReductionMatrix") -> "ReductionMatrix":
        out = ReductionMatrix()
        for src in (self, other):
            for t, c in src.counts.items():
                out.counts.setdefault(t, Counter()).update(c)
            for t, c in src.skipped.items():
                out.skipped.setdefault(t, Counter()).update(c)
        return out

    def row(self, qtype) -> dict[str, float]:
        qtype = QueryType(qtype)
        c = self.counts.get(qtype, Counter())
        total = sum(c.values())
        if not total:
            return {}
        return {b.value: 100.0 * c.get(b.value, 0) / total for b in possible_reductions(qtype)}

    def possible(self, qtype, column) -> bool:
        return QueryType(column) in possible_reductions(qtype)

    def rows(self) -> list[QueryType]:
        return [t for t in QueryType if t in self.counts]

    def columns(self) -> list[QueryType]:
        used = {b for t in self.rows() for b in possible_reductions(t)}
        return [t for t in QueryType if t in used]

    def cell(self, qtype, column) -> str:
        if not self.possible(qtype, column):
            return "-"
        row = self.row(qtype)
        return _pct(row[QueryType(column).value]) if row else ""

    def to_csv(self) -> str:
        cols = self.columns()
        lines = ["type," + ",".join(c.value for c in cols) + ",n"]
        for t in self.rows():
            lines.append(",".join([t.value] + [self.cell(t, c) for c in cols] + [str(sum(self.counts[t].values()))]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cols = self.columns()
        header = ["", *[c.value for c in cols], "n"]
        body = [[t.value, *[self.cell(t, c) for c in cols], str(sum(self.counts[t].values()))] for t in self.rows()]
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        fmt = lambda r: "  ".join(x.rjust(w) for x, w in zip(r, widths))
        rule = "-" * len(fmt(header))
        return "\n".join([fmt(header), rule, *map(fmt, body)]) + "\n"


def reduction_matrix(pairs: Iterable[QaPair], split: KnowledgeGraphSplit,
                     union_rule: str = "any_nonexistent") -> ReductionMatrix:
    """Classify ``pairs`` and tabulate reduced types per original type.
    Trivial and filtered pairs are counted in ``skipped`` only."""
    matrix = ReductionMatrix()
    matchers: dict = {}
    for qa in pairs:
        m = matchers.get(qa.query)
        if m is None:
            m = matchers[qa.query] = Matcher(qa.query, split)
        matrix.add(qa.query.type, classify(qa, split, union_rule, matcher=m))
    return matrix
