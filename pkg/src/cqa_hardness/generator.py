"""Balanced benchmark generation.

Queries are sampled by walking each template backwards from a random answer
over the full graph.  Every non-trivial answer is classified, and pairs are
poured into one bucket per hardness label until each bucket holds exactly
``quota_per_bucket`` pairs.  Anchor and relation caps keep any single entity
or relation name from dominating a bucket.
"""

from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from . import __version__
from .fileio import json_hash, sha256_file, write_json
from .hardness import FILTERED, TRIVIAL, HardnessLabel, classify, possible_reductions
from .kg import KnowledgeGraph, KnowledgeGraphSplit
from .matcher import Matcher, answers
from .queries import (
    TARGET,
    Anchor,
    NEGATION_TYPES,
    QaPair,
    Query,
    QueryType,
    arity,
    instantiate,
    read_queries,
    write_queries,
)

log = logging.getLogger(__name__)

TRAINING_TYPES = (QueryType.P1, QueryType.P2, QueryType.P3, QueryType.I2, QueryType.I3,
                  QueryType.IN2, QueryType.IN3, QueryType.PI2P1N, QueryType.IN2P1)


@dataclass(frozen=True)
class GenerationConfig:
    quota_per_bucket: int = 100
    anchor_cap_fraction: Fraction = Fraction(1, 5)
    relation_cap_fraction: Fraction = Fraction(1, 5)
    seed: int = 0
    types: tuple[QueryType, ...] = tuple(QueryType)
    max_attempts: int = 10_000_000
    union_rule: str = "any_nonexistent"

    def __post_init__(self):
        object.__setattr__(self, "anchor_cap_fraction", Fraction(self.anchor_cap_fraction).limit_denominator(10**6))
        object.__setattr__(self, "relation_cap_fraction", Fraction(self.relation_cap_fraction).limit_denominator(10**6))
        object.__setattr__(self, "types", tuple(QueryType(t) for t in self.types))
        if self.quota_per_bucket < 1:
            raise ValueError("quota_per_bucket must be >= 1")
        for name in ("anchor_cap_fraction", "relation_cap_fraction"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def cap(self, fraction: Fraction) -> int:
        """Pairs one anchor or relation may occupy in a bucket; at least one,
        so tiny quotas stay feasible."""
        return max(1, int(fraction * self.quota_per_bucket))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchor_cap_fraction"] = str(self.anchor_cap_fraction)
        d["relation_cap_fraction"] = str(self.relation_cap_fraction)
        d["types"] = [t.value for t in self.types]
        return d

    def digest(self) -> str:
        return json_hash(self.to_dict())


@dataclass(frozen=True)
class SampledQuery:
    query: Query
    full_answers: frozenset
    train_answers: frozenset


@dataclass
class Benchmark:
    """Pairs per (type, label) plus the answer sets needed for filtering."""

    pairs: dict[tuple[QueryType, HardnessLabel], list[QaPair]] = field(default_factory=dict)
    answer_sets: dict[Query, SampledQuery] = field(default_factory=dict)
    easy: dict[Query, frozenset] = field(default_factory=dict)
    config: GenerationConfig | None = None
    split_fingerprint: str = ""
    attempts: dict[QueryType, int] = field(default_factory=dict)
    shortfall: dict[str, int] = field(default_factory=dict)

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for (t, label), items in self.pairs.items():
            out.setdefault(t.value, {})[bucket_tag(label)] = len(items)
        return out

    def all_pairs(self) -> list[tuple[QaPair, HardnessLabel]]:
        return [(qa, label) for (_, label), items in self.pairs.items() for qa in items]


def bucket_tag(label: HardnessLabel) -> str:
    return label.reduced.value if label.reduced is not None else label.kind


def buckets_for(qtype) -> list[HardnessLabel]:
    """Labels a non-trivial, non-filtered pair of ``qtype`` can carry."""
    qtype = QueryType(qtype)
    out = [HardnessLabel("partial", r) for r in possible_reductions(qtype)[:-1]]
    return out + [HardnessLabel("full")]


# ------------------------------------------------------------------ sampling


def _walk(qtype: QueryType, graph: KnowledgeGraph, rng: random.Random) -> Query | None:
    """Ground the template of ``qtype`` by a backward walk from a random
    entity.  A negated atom on an already bound node is grounded from the
    in-edges of another random entity, so it excludes something without
    necessarily excluding the walk's own answer.  Returns None on a dead end."""
    n_anchor, n_rel = arity(qtype)
    proto = instantiate(qtype, [0] * n_anchor, [0] * n_rel)
    bound = {TARGET: rng.randrange(graph.entity_count)}
    anchors: list = [None] * n_anchor
    rels: list = [None] * n_rel
    pending = list(range(len(proto.atoms)))
    inside_negation: set = set()
    while pending:
        ready = [i for i in pending if proto.atoms[i].object in bound]
        if not ready:
            return None
        for i in ready:
            pending.remove(i)
            atom = proto.atoms[i]
            dst = bound[atom.object]
            if atom.negated and atom.object not in inside_negation:
                dst = rng.randrange(graph.entity_count)
            incoming = graph.in_edges(dst)
            if not incoming:
                return None
            s, r = incoming[rng.randrange(len(incoming))]
            rels[i] = r
            if isinstance(atom.subject, Anchor):
                anchors[atom.subject.index] = s
            else:
                bound[atom.subject] = s
                if atom.negated:
                    inside_negation.add(atom.subject)
    query = instantiate(qtype, anchors, rels)
    seen = set()
    for a in query.atoms:
        key = (_ground_key(a.subject), a.relation, _ground_key(a.object))
        if key in seen:
            return None
        seen.add(key)
    return query


def _ground_key(node):
    return ("anchor", node.entity) if isinstance(node, Anchor) else node


def sample_query(qtype, split: KnowledgeGraphSplit, rng: random.Random) -> SampledQuery | None:
    """One backward-sampled query with its full- and train-graph answers, or
    None when the walk fails or the query has no answer (retry signal)."""
    if not split.inverse_augmented:
        raise ValueError("sampling needs a split with inverse relations")
    query = _walk(QueryType(qtype), split.full, rng)
    if query is None:
        return None
    full = answers(query, split.full)
    if not full:
        return None
    return SampledQuery(query, frozenset(full), frozenset(answers(query, split.train)))


def _type_rng(seed: int, qtype: QueryType) -> random.Random:
    return random.Random(f"{seed}/{qtype.value}")


# --------------------------------------------------------------- generation


def _base_relation(rid: int, augmented: bool) -> int:
    return rid // 2 if augmented else rid


def _generate_type(qtype: QueryType, split: KnowledgeGraphSplit, config: GenerationConfig, bench: Benchmark) -> None:
    rng = _type_rng(config.seed, qtype)
    quota = config.quota_per_bucket
    labels = buckets_for(qtype)
    filled = {label: [] for label in labels}
    anchor_use = {label: Counter() for label in labels}
    rel_use = {label: Counter() for label in labels}
    anchor_cap = config.cap(config.anchor_cap_fraction)
    rel_cap = config.cap(config.relation_cap_fraction)
    seen: set = set()
    attempts = 0
    negation = qtype in NEGATION_TYPES
    while attempts < config.max_attempts and any(len(v) < quota for v in filled.values()):
        attempts += 1
        sampled = sample_query(qtype, split, rng)
        if sampled is None or sampled.query in seen:
            continue
        query = sampled.query
        seen.add(query)
        cands = sorted(sampled.full_answers if negation else sampled.full_answers - sampled.train_answers)
        rng.shuffle(cands)
        matcher = Matcher(query, split)
        anchor_set = set(query.anchors)
        rel_set = {_base_relation(r, split.inverse_augmented) for r in query.relations}
        easy = set() if negation else set(sampled.full_answers & sampled.train_answers)
        used = False
        for t in cands:
            label = classify(QaPair(query, t), split, config.union_rule, matcher=matcher)
            if label.kind == TRIVIAL:
                easy.add(t)
                continue
            if label.kind == FILTERED:
                continue
            bucket = filled[label]
            if len(bucket) >= quota:
                continue
            if any(anchor_use[label][a] >= anchor_cap for a in anchor_set):
                continue
            if any(rel_use[label][r] >= rel_cap for r in rel_set):
                continue
            bucket.append(QaPair(query, t))
            anchor_use[label].update(anchor_set)
            rel_use[label].update(rel_set)
            used = True
        if used:
            bench.answer_sets[query] = sampled
            bench.easy[query] = frozenset(easy)
    for label in labels:
        bench.pairs[(qtype, label)] = filled[label]
        if len(filled[label]) < quota:
            bench.shortfall[f"{qtype.value}/{bucket_tag(label)}"] = quota - len(filled[label])
    bench.attempts[qtype] = attempts
    log.info("%s: %d attempts, %s", qtype.value, attempts, {bucket_tag(k): len(v) for k, v in filled.items()})


def generate_balanced(split: KnowledgeGraphSplit, config: GenerationConfig) -> Benchmark:
    """Fill every (type, label) bucket to the quota, or report the shortfall.
    Each type uses its own RNG stream derived from the seed and type tag."""
    if not split.inverse_augmented:
        split = split.with_inverses()
    bench = Benchmark(config=config, split_fingerprint=split.fingerprint())
    for qtype in config.types:
        _generate_type(qtype, split, config, bench)
    if bench.shortfall:
        log.warning("quota not reached for %d bucket(s): %s", len(bench.shortfall), bench.shortfall)
    return bench


def generate_training_queries(split: KnowledgeGraphSplit, n: int, types: Sequence = TRAINING_TYPES,
                              seed: int = 0, max_attempts: int = 1_000_000) -> list[tuple[Query, dict]]:
    """One 1p query per training triple plus ``n`` distinct sampled queries per
    other type, all answered on the training graph only."""
    if not split.inverse_augmented:
        split = split.with_inverses()
    train = split.train
    train_split = KnowledgeGraphSplit(train, _empty_like(train), _empty_like(train), split.symbols)
    out: list[tuple[Query, dict]] = []
    for qtype in map(QueryType, types):
        if qtype is QueryType.P1:
            for s, p, o in train.triples.tolist():
                q = instantiate(QueryType.P1, [s], [p])
                out.append((q, {"train": sorted(train.successors(s, p))}))
            continue
        rng = _type_rng(seed, qtype)
        seen: set = set()
        attempts = 0
        while len(seen) < n and attempts < max_attempts:
            attempts += 1
            sampled = sample_query(qtype, train_split, rng)
            if sampled is None or sampled.query in seen:
                continue
            seen.add(sampled.query)
            out.append((sampled.query, {"train": sorted(sampled.full_answers)}))
        if len(seen) < n:
            log.warning("%s: only %d of %d training queries sampled", qtype.value, len(seen), n)
    return out


def _empty_like(kg: KnowledgeGraph) -> KnowledgeGraph:
    return KnowledgeGraph([], kg.entity_count, kg.relation_count, inverse_augmented=kg.inverse_augmented)


# ------------------------------------------------------------------- files


def bucket_filename(qtype: QueryType, label: HardnessLabel) -> str:
    return f"{qtype.value}.{bucket_tag(label)}.jsonl"


def benchmark_records(bench: Benchmark, qtype: QueryType, label: HardnessLabel) -> list[tuple[Query, dict]]:
    """One record per query: its selected hard answers in this bucket, its
    trivial answers and every full-graph answer (for filtering)."""
    grouped: dict[Query, list[int]] = {}
    for qa in bench.pairs.get((qtype, label), []):
        grouped.setdefault(qa.query, []).append(qa.answer)
    return [
        (q, {"hard": sorted(ts), "easy": sorted(bench.easy.get(q, ())),
             "full": sorted(bench.answer_sets[q].full_answers)})
        for q, ts in grouped.items()
    ]


def write_benchmark(bench: Benchmark, out_dir, inputs: dict | None = None) -> dict:
    """Write one JSON-lines file per bucket plus ``manifest.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for (qtype, label) in bench.pairs:
        name = bucket_filename(qtype, label)
        write_queries(out_dir / name, benchmark_records(bench, qtype, label))
        files[name] = sha256_file(out_dir / name)
    manifest = {
        "tool": "cqa-hardness",
        "version": __version__,
        "config": bench.config.to_dict() if bench.config else None,
        "config_hash": bench.config.digest() if bench.config else None,
        "seed": bench.config.seed if bench.config else None,
        "split_fingerprint": bench.split_fingerprint,
        "inputs": inputs or {},
        "counts": bench.counts(),
        "shortfall": bench.shortfall,
        "attempts": {t.value: n for t, n in bench.attempts.items()},
        "files": files,
    }
    write_json(out_dir / "manifest.json", manifest)
    return manifest


def read_benchmark(path) -> list[tuple[QaPair, HardnessLabel, dict]]:
    """``(pair, label, answer sets)`` for every hard answer in a benchmark
    directory written by :func:`write_benchmark`."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    out = []
    for name in sorted(manifest["files"]):
        qtype_tag, tag, _ = name.split(".")
        label = HardnessLabel("full") if tag == "full" else HardnessLabel("partial", QueryType(tag))
        for query, ans in read_queries(path / name):
            for t in ans.get("hard", []):
                out.append((QaPair(query, t), label, ans))
    return out
