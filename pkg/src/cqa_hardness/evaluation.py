"""Ranking metrics, stratified reports and significance tests.

MRR is normalised twice: over the hard answers of each query, then over
queries.  With filtering on, all other known answers of a query are removed
from the candidates before ranking one of them.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .hardness import HardnessLabel, possible_reductions
from .kg import KnowledgeGraph
from .matcher import intermediate_cardinality
from .queries import Query, QueryType
from .solver import Ranking

log = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)


@dataclass(frozen=True)
class AnswerSets:
    easy: frozenset
    hard: frozenset

    def __post_init__(self):
        if self.easy & self.hard:
            raise ValueError("easy and hard answers must be disjoint")

    @property
    def known(self) -> frozenset:
        return self.easy | self.hard


def reciprocal_ranks(ranking, hard: Iterable[int], known: Iterable[int] = (),
                     filtering: bool = True) -> list[float]:
    """1/rank for each hard answer; with ``filtering`` the other answers in
    ``known`` (and ``hard``) are removed from the candidates first."""
    hard = list(hard)
    others = set(known) | set(hard) if filtering else set()
    return [1.0 / ranking.rank(t, exclude=others) for t in hard]


class PrecomputedRanks:
    """Ranks stored per entity (e.g. read back from a rankings file); the
    filtering choice was made when they were computed."""

    def __init__(self, ranks: Mapping[int, float]):
        self.ranks = dict(ranks)

    def rank(self, entity: int, exclude=()) -> float:
        return self.ranks[entity]


def _per_query(items, fn) -> float:
    vals = []
    for ranking, answers in items:
        if not answers.hard:
            log.warning("query without hard answers excluded from the metric")
            continue
        vals.append(fn(ranking, answers))
    return float(np.mean(vals)) if vals else float("nan")


def mrr(items: Iterable[tuple[Ranking, AnswerSets]], filtering: bool = True) -> float:
    """Mean over queries of the mean reciprocal rank of their hard answers."""
    return _per_query(items, lambda r, a: float(np.mean(
        reciprocal_ranks(r, sorted(a.hard), a.known, filtering))))


def hits_at(items: Iterable[tuple[Ranking, AnswerSets]], k: int, filtering: bool = True) -> float:
    return _per_query(items, lambda r, a: float(np.mean(
        [1.0 / rr <= k for rr in reciprocal_ranks(r, sorted(a.hard), a.known, filtering)])))


# --------------------------------------------------------------- records


@dataclass(frozen=True)
class EvalRecord:
    """Hard answers of one query within one bucket, plus every answer known
    for that query (used for filtering)."""

    query: Query
    label: HardnessLabel
    hard: tuple[int, ...]
    known: frozenset
    key: object = None  # rankings lookup key; defaults to the query

    @property
    def ranking_key(self):
        return self.query if self.key is None else self.key

    @property
    def type(self) -> QueryType:
        return self.query.type

    @property
    def bucket(self) -> str:
        return self.label.bucket(self.query.type)


@dataclass
class CellStats:
    queries: int = 0
    pairs: int = 0
    rr: list[float] = field(default_factory=list)  # per pair
    query_rr: list[float] = field(default_factory=list)  # per query mean
    query_hits: dict[int, list[float]] = field(default_factory=lambda: {k: [] for k in HITS_AT})

    def add(self, rrs: Sequence[float]) -> None:
        if not rrs:
            return
        self.queries += 1
        self.pairs += len(rrs)
        self.rr.extend(rrs)
        self.query_rr.append(float(np.mean(rrs)))
        for k in HITS_AT:
            self.query_hits[k].append(float(np.mean([1.0 / x <= k for x in rrs])))

    @property
    def mrr(self) -> float:
        return float(np.mean(self.query_rr)) if self.query_rr else float("nan")

    def hits(self, k: int) -> float:
        return float(np.mean(self.query_hits[k])) if self.query_hits[k] else float("nan")

    def merge(self, other: "CellStats") -> "CellStats":
        out = CellStats(self.queries + other.queries, self.pairs + other.pairs,
                        self.rr + other.rr, self.query_rr + other.query_rr)
        out.query_hits = {k: self.query_hits[k] + other.query_hits[k] for k in HITS_AT}
        return out

    def to_dict(self) -> dict:
        d = {"mrr": self.mrr, "queries": self.queries, "pairs": self.pairs}
        d.update({f"hits@{k}": self.hits(k) for k in HITS_AT})
        return d


def _num(x: float) -> str:
    return "-" if x != x else f"{100 * x:.1f}"


@dataclass
class EvalReport:
    cells: dict[tuple[QueryType, str], CellStats] = field(default_factory=dict)
    filtering: bool = True

    def overall(self, qtype) -> CellStats:
        qtype = QueryType(qtype)
        out = CellStats()
        for (t, _), c in sorted(self.cells.items(), key=lambda kv: kv[0][1]):
            if t is qtype:
                out = out.merge(c)
        return out

    def types(self) -> list[QueryType]:
        present = {t for t, _ in self.cells}
        return [t for t in QueryType if t in present]

    def columns(self) -> list[str]:
        used = {b.value for t in self.types() for b in possible_reductions(t)}
        return [t.value for t in QueryType if t.value in used]

    def cell_text(self, qtype: QueryType, column: str) -> str:
        if QueryType(column) not in possible_reductions(qtype):
            return "-"
        c = self.cells.get((qtype, column))
        return _num(c.mrr) if c and c.queries else "-"

    def to_rows(self) -> tuple[list[str], list[list[str]]]:
        cols = self.columns()
        header = ["type", "ovr", *cols, "pairs"]
        rows = []
        for t in self.types():
            ovr = self.overall(t)
            rows.append([t.value, _num(ovr.mrr), *[self.cell_text(t, c) for c in cols], str(ovr.pairs)])
        return header, rows

    def to_csv(self) -> str:
        header, rows = self.to_rows()
        return "\n".join(",".join(r) for r in [header, *rows]) + "\n"

    def to_text(self) -> str:
        return _aligned(*self.to_rows(), note="MRR x100; columns are reduced types, the diagonal is full inference")

    def to_dict(self) -> dict:
        out: dict = {"filtering": self.filtering, "types": {}}
        for t in self.types():
            entry = {"overall": self.overall(t).to_dict(), "buckets": {}}
            for (tt, b), c in self.cells.items():
                if tt is t:
                    entry["buckets"][b] = c.to_dict()
            out["types"][t.value] = entry
        return out


def _aligned(header: list[str], rows: list[list[str]], note: str = "") -> str:
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    fmt = lambda r: "  ".join(x.rjust(w) for x, w in zip(r, widths))
    lines = [fmt(header), "-" * len(fmt(header)), *map(fmt, rows)]
    if note:
        lines.append(f"({note})")
    return "\n".join(lines) + "\n"


def stratified_report(records: Iterable[EvalRecord], rankings: Mapping[Query, Ranking],
                      filtering: bool = True) -> EvalReport:
    """Per (type, bucket) MRR and Hits@k; the per-type overall is the
    query-count-weighted combination of the bucket cells."""
    report = EvalReport(filtering=filtering)
    for rec in records:
        if rec.ranking_key not in rankings:
            raise KeyError(f"no ranking for a {rec.type.value} query in the benchmark")
        bucket = rec.bucket
        if QueryType(bucket) not in possible_reductions(rec.type):
            raise ValueError(f"label {rec.label} impossible for type {rec.type.value}")
        rrs = reciprocal_ranks(rankings[rec.ranking_key], rec.hard, rec.known, filtering)
        report.cells.setdefault((rec.type, bucket), CellStats()).add(rrs)
    return report


# ------------------------------------------------------ auxiliary strata


DEFAULT_BANDS = (0, 1, 2, 5, 10, 50)


def _band_name(edges: Sequence[int], i: int) -> str:
    lo = edges[i]
    if i + 1 == len(edges):
        return f">={lo}"
    hi = edges[i + 1] - 1
    return str(lo) if hi == lo else f"{lo}-{hi}"


def cardinality_strata(records: Iterable[EvalRecord], rankings: Mapping[Query, Ranking], train: KnowledgeGraph,
                       bands: Sequence[int] = DEFAULT_BANDS, filtering: bool = True) -> dict[str, dict[str, CellStats]]:
    """Per type, MRR by band of the number of training-graph candidates of the
    query's intermediate variables.  ``bands`` are ascending lower edges."""
    bands = sorted(bands)
    if not bands or bands[0] != 0:
        raise ValueError("bands must start at 0")
    out: dict[str, dict[str, CellStats]] = {}
    cache: dict[Query, int] = {}
    for rec in records:
        if not rec.query.positive_variables:
            continue
        card = cache.get(rec.query)
        if card is None:
            card = cache[rec.query] = intermediate_cardinality(rec.query, train)
        i = max(j for j, lo in enumerate(bands) if card >= lo)
        rrs = reciprocal_ranks(rankings[rec.ranking_key], rec.hard, rec.known, filtering)
        out.setdefault(rec.type.value, {}).setdefault(_band_name(bands, i), CellStats()).add(rrs)
    return out


def strata_text(strata: dict[str, dict[str, CellStats]]) -> str:
    header = ["type", "band", "pairs", "mrr"]
    rows = [[t, band, str(c.pairs), _num(c.mrr)] for t, d in strata.items() for band, c in d.items()]
    return _aligned(header, rows, note="MRR x100 by intermediate cardinality band")


@dataclass(frozen=True)
class ImbalanceRow:
    anchor: int
    anchor_pct: float
    relation: int
    relation_pct: float
    pairs: int


def imbalance_report(pairs: Iterable, relation_key: Callable[[int], int] = lambda r: r // 2) -> dict[QueryType, ImbalanceRow]:
    """Per type, the most frequent anchor entity and relation name with their
    share of QA pairs; each is counted once per pair.  ``relation_key`` maps a
    relation id to its name id (default: fold inverses onto the base relation)."""
    anchors: dict[QueryType, Counter] = {}
    rels: dict[QueryType, Counter] = {}
    totals: Counter = Counter()
    for qa in pairs:
        t = qa.query.type
        totals[t] += 1
        anchors.setdefault(t, Counter()).update(set(qa.query.anchors))
        rels.setdefault(t, Counter()).update({relation_key(r) for r in qa.query.relations})
    out = {}
    for t in QueryType:
        if not totals[t]:
            continue
        a, an = min(anchors[t].items(), key=lambda kv: (-kv[1], kv[0]))
        r, rn = min(rels[t].items(), key=lambda kv: (-kv[1], kv[0]))
        out[t] = ImbalanceRow(a, 100.0 * an / totals[t], r, 100.0 * rn / totals[t], totals[t])
    return out


def imbalance_text(rows: dict[QueryType, ImbalanceRow], entity_name=str, relation_name=str) -> str:
    header = ["type", "anchor", "anchor %", "relation", "relation %", "pairs"]
    body = [[t.value, entity_name(r.anchor), f"{r.anchor_pct:.1f}", relation_name(r.relation),
             f"{r.relation_pct:.1f}", str(r.pairs)] for t, r in rows.items()]
    return _aligned(header, body)


# ----------------------------------------------------- significance test


@dataclass(frozen=True)
class UTestResult:
    u: float  # min(U_a, U_b)
    u_a: float
    p_value: float
    method: str  # "exact" | "normal"
    degenerate: bool = False


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


EXACT_MAX_N = 8


def mann_whitney_u(a: Sequence[float], b: Sequence[float]) -> UTestResult:
    """Two-sided Mann-Whitney U test.  Exact permutation distribution of the
    midrank statistic when both samples have at most 8 values, otherwise the
    tie-corrected normal approximation with continuity correction."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    na, nb = len(a), len(b)
    n = na + nb
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u_a = float(ranks[:na].sum() - na * (na + 1) / 2.0)
    u_b = na * nb - u_a
    u = min(u_a, u_b)
    mu = na * nb / 2.0
    if np.all(pooled == pooled[0]):
        return UTestResult(u, u_a, 1.0, "degenerate", True)
    if na <= EXACT_MAX_N and nb <= EXACT_MAX_N:
        obs = abs(u_a - mu)
        total = hits = 0
        offset = na * (na + 1) / 2.0
        for idx in itertools.combinations(range(n), na):
            ua = ranks[list(idx)].sum() - offset
            total += 1
            if abs(ua - mu) >= obs - 1e-9:
                hits += 1
        return UTestResult(u, u_a, min(1.0, hits / total), "exact")
    _, counts = np.unique(pooled, return_counts=True)
    tie = float(((counts ** 3) - counts).sum())
    var = na * nb / 12.0 * ((n + 1) - tie / (n * (n - 1)))
    if var <= 0:
        return UTestResult(u, u_a, 1.0, "degenerate", True)
    z = max(abs(u_a - mu) - 0.5, 0.0) / math.sqrt(var)
    return UTestResult(u, u_a, min(1.0, math.erfc(z / math.sqrt(2.0))), "normal")


def pairwise_u_tests(groups: Mapping[str, Sequence[float]]) -> dict[tuple[str, str], UTestResult]:
    """All-vs-all tests between named reciprocal-rank samples."""
    names = list(groups)
    out = {}
    for x, y in itertools.combinations(names, 2):
        if len(groups[x]) and len(groups[y]):
            res = mann_whitney_u(groups[x], groups[y])
            out[(x, y)] = out[(y, x)] = res
    return out


def pvalue_text(tests: dict[tuple[str, str], UTestResult], names: Sequence[str]) -> str:
    header = ["", *names]
    rows = [[x, *["" if x == y else (f"{tests[(x, y)].p_value:.3g}" if (x, y) in tests else "-")
                  for y in names]] for x in names]
    return _aligned(header, rows, note="two-sided Mann-Whitney U p-values on reciprocal ranks")
