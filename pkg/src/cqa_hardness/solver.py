"""Beam-search query answering with fuzzy logic over link-predictor scores.

Each atom turns a subject entity into a score vector over objects.  A node's
vector is the t-norm of its incoming atom vectors.  Leaving an existential
variable, only its ``beam_k`` best candidates are expanded, and the paths
reaching the same entity are merged with the t-conorm.  Union branches are
combined with the t-conorm as well.  In hybrid mode, training edges get score
1.0 and so always dominate predictor scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import NormalizationSpec, Scorer, normalize
from .kg import KnowledgeGraph
from .matcher import QueryStructure, answers, eval_order
from .queries import TARGET, Anchor, Atom, Query, dnf_branches

TNORMS = ("prod", "min")
TIE_POLICIES = ("average", "optimistic", "pessimistic")


@dataclass(frozen=True)
class SolverConfig:
    beam_k: int = 64
    tnorm: str = "prod"
    hybrid: bool = False
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    beam_upper_bound: int = 512
    merge: str = "conorm"
    tie_policy: str = "average"

    def __post_init__(self):
        if self.tnorm not in TNORMS:
            raise ValueError(f"tnorm must be one of {TNORMS}")
        if not 2 <= self.beam_k <= self.beam_upper_bound:
            raise ValueError(f"beam_k must lie in [2, {self.beam_upper_bound}]")
        if self.merge not in ("conorm", "max"):
            raise ValueError("merge must be 'conorm' or 'max'")
        if self.tie_policy not in TIE_POLICIES:
            raise ValueError(f"tie_policy must be one of {TIE_POLICIES}")


def tnorm(x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    return x * y if kind == "prod" else np.minimum(x, y)


def tconorm(x: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    return x + y - x * y if kind == "prod" else np.maximum(x, y)


def negate(x: np.ndarray) -> np.ndarray:
    return 1.0 - x


@dataclass(frozen=True)
class Ranking:
    """Final target scores; ranks follow ``tie_policy``."""

    scores: np.ndarray
    tie_policy: str = "average"

    def rank(self, entity: int, exclude=()) -> float:
        """1-based rank of ``entity`` after removing ``exclude`` (the other
        known answers) from the candidates."""
        s = self.scores
        mask = np.ones(len(s), dtype=bool)
        ex = [e for e in exclude if e != entity]
        if ex:
            mask[ex] = False
        target = s[entity]
        higher = int(np.count_nonzero(s[mask] > target))
        ties = int(np.count_nonzero(s[mask] == target)) - 1
        if self.tie_policy == "optimistic":
            return 1.0 + higher
        if self.tie_policy == "pessimistic":
            return 1.0 + higher + ties
        return 1.0 + higher + ties / 2.0

    def top_set(self) -> set:
        if len(self.scores) == 0:
            return set()
        return set(np.flatnonzero(self.scores == self.scores.max()).tolist())

    def top(self, n: int) -> list[tuple[int, float]]:
        order = np.lexsort((np.arange(len(self.scores)), -self.scores))[:n]
        return [(int(e), float(self.scores[e])) for e in order]


class _Context:
    def __init__(self, scorer: Scorer, config: SolverConfig, train: KnowledgeGraph | None):
        if config.hybrid and train is None:
            raise ValueError("hybrid mode needs the training graph")
        self.scorer = scorer
        self.config = config
        self.train = train
        self.n = scorer.entity_count
        self._cache: dict = {}

    def atom(self, s: int, p: int) -> np.ndarray:
        key = (s, p)
        v = self._cache.get(key)
        if v is None:
            v = self._cache[key] = atom_scores(self.scorer, s, p, self.config, self.train)
        return v

    def beam(self, vec: np.ndarray, exact: bool) -> np.ndarray:
        nz = np.flatnonzero(vec > 0)
        if exact:
            return nz
        k = self.config.beam_k
        if self.config.hybrid:
            k = min(k + int(np.count_nonzero(vec == 1.0)), self.config.beam_upper_bound)
        order = np.lexsort((nz, -vec[nz]))
        return nz[order[:k]]

    def expand(self, atom: Atom, vecs: dict, exact: bool) -> np.ndarray:
        if isinstance(atom.subject, Anchor):
            return self.atom(atom.subject.entity, atom.relation)
        src = vecs[atom.subject]
        out = np.zeros(self.n)
        kind = self.config.tnorm
        for c in self.beam(src, exact).tolist():
            cand = tnorm(np.full(self.n, src[c]), self.atom(c, atom.relation), kind)
            out = tconorm(out, cand, kind) if self.config.merge == "conorm" else np.maximum(out, cand)
        return out


def atom_scores(scorer: Scorer, s: int, p: int, config: SolverConfig, train: KnowledgeGraph | None = None,
                negated: bool = False) -> np.ndarray:
    """Normalised predictor scores of ``(s, p, ?)``; training objects score
    1.0 in hybrid mode; negation maps ``x`` to ``1 - x``."""
    v = normalize(scorer.score_all(s, p), config.normalization)
    if config.hybrid:
        if train is None:
            raise ValueError("hybrid mode needs the training graph")
        succ = train.successors(s, p)
        if succ:
            v[list(succ)] = 1.0
    return negate(v) if negated else v


def _evaluate(query: Query, atom_ids, groups, ctx: _Context, exact_vars=frozenset()) -> dict:
    """Score vector per non-anchor node of the in-tree ``atom_ids``, reading
    every atom positively.  ``groups`` contribute the negation of their own
    positive reading at their sink."""
    atoms = query.atoms
    incoming: dict = {}
    for i in atom_ids:
        incoming.setdefault(atoms[i].object, []).append(atoms[i])
    vecs: dict = {}
    kind = ctx.config.tnorm
    for node in eval_order(query, atom_ids):
        vec = None
        for atom in incoming.get(node, ()):
            v = ctx.expand(atom, vecs, exact=atom.subject in exact_vars)
            vec = v if vec is None else tnorm(vec, v, kind)
        for g in groups:
            if g.sink == node:
                inner = _evaluate(query, g.atoms, (), ctx, exact_vars=frozenset(g.inner))
                v = negate(inner[node])
                vec = v if vec is None else tnorm(vec, v, kind)
        vecs[node] = np.ones(ctx.n) if vec is None else vec
    return vecs


def solve(query: Query, scorer: Scorer, config: SolverConfig = SolverConfig(),
          train: KnowledgeGraph | None = None) -> Ranking:
    """Target scores for ``query``.  Variables bound only inside a negation are
    aggregated over every candidate so the implied universal quantifier is
    exact; positive existentials use the beam."""
    ctx = _Context(scorer, config, train)
    structure = QueryStructure(query)
    total = None
    for branch in dnf_branches(query):
        pos = [i for i in sorted(branch) if not query.atoms[i].negated]
        groups = [g for g in structure.groups if set(g.atoms) <= branch]
        vec = _evaluate(query, pos, groups, ctx)[TARGET]
        total = vec if total is None else tconorm(total, vec, config.tnorm)
    return Ranking(np.clip(total, 0.0, 1.0), config.tie_policy)


def exact_oracle_solver(query: Query, graph: KnowledgeGraph, tie_policy: str = "average") -> Ranking:
    """1.0 for exact answers over ``graph``, 0.0 elsewhere."""
    scores = np.zeros(graph.entity_count)
    ans = answers(query, graph)
    if ans:
        scores[sorted(ans)] = 1.0
    return Ranking(scores, tie_policy)
