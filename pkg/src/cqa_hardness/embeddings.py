"""Triple scorers: a ComplEx embedding model trained with full-softmax
cross-entropy and N3 regularisation, plus baseline and oracle scorers.

Complex parameters are stored as separate real and imaginary float64 arrays.
Gradients are derived by hand and checked against finite differences in the
tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .fileio import atomic_write
from .kg import KnowledgeGraph

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cqa-hardness/complex"
CHECKPOINT_VERSION = 1


class Scorer(Protocol):
    entity_count: int

    def score_all(self, s: int, p: int) -> np.ndarray: ...


@dataclass(frozen=True)
class NormalizationSpec:
    lo: float = 0.0
    hi: float = 0.9

    def __post_init__(self):
        if not self.lo < self.hi <= 1:
            raise ValueError("normalization needs lo < hi <= 1")


def normalize(scores: np.ndarray, spec: NormalizationSpec = NormalizationSpec()) -> np.ndarray:
    """Min-max map onto ``[spec.lo, spec.hi]``; a constant vector maps to ``lo``."""
    x = np.asarray(scores, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot normalize an empty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, spec.lo)
    with np.errstate(over="ignore"):
        span = hi - lo
    if np.isfinite(span):
        unit = (x - lo) / span
    else:  # halving keeps the differences finite
        unit = (x / 2 - lo / 2) / (hi / 2 - lo / 2)
    out = spec.lo + unit * (spec.hi - spec.lo)
    np.clip(out, spec.lo, spec.hi, out=out)  # rounding can overshoot near the ends
    out[x == hi] = spec.hi
    out[x == lo] = spec.lo
    return out


# ------------------------------------------------------------------ ComplEx


@dataclass(frozen=True)
class TrainConfig:
    rank: int = 64
    learning_rate: float = 0.1
    regularization: float = 0.1
    batch_size: int = 1000
    epochs: int = 100
    seed: int = 0
    init_scale: float = 1e-3

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.learning_rate <= 0 or self.regularization < 0:
            raise ValueError("learning_rate must be > 0 and regularization >= 0")


class TrainingDiverged(RuntimeError):
    pass


class ComplEx:
    """score(s, p, o) = Re(<e_s * w_p, conj(e_o)>)."""

    def __init__(self, ent_re: np.ndarray, ent_im: np.ndarray, rel_re: np.ndarray, rel_im: np.ndarray):
        self.ent_re, self.ent_im = np.asarray(ent_re, float), np.asarray(ent_im, float)
        self.rel_re, self.rel_im = np.asarray(rel_re, float), np.asarray(rel_im, float)
        if self.ent_re.shape != self.ent_im.shape or self.rel_re.shape != self.rel_im.shape:
            raise ValueError("real and imaginary parts must have equal shapes")
        if self.ent_re.shape[1] != self.rel_re.shape[1]:
            raise ValueError("entity and relation ranks differ")

    @classmethod
    def initialize(cls, entity_count: int, relation_count: int, rank: int, seed: int = 0,
                   init_scale: float = 1e-3) -> "ComplEx":
        rng = np.random.default_rng(seed)
        draw = lambda n: init_scale * rng.standard_normal((n, rank))
        return cls(draw(entity_count), draw(entity_count), draw(relation_count), draw(relation_count))

    @property
    def entity_count(self) -> int:
        return self.ent_re.shape[0]

    @property
    def relation_count(self) -> int:
        return self.rel_re.shape[0]

    @property
    def rank(self) -> int:
        return self.ent_re.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.ent_re, self.ent_im, self.rel_re, self.rel_im]

    def _query(self, s, p):
        sr, si = self.ent_re[s], self.ent_im[s]
        wr, wi = self.rel_re[p], self.rel_im[p]
        return sr * wr - si * wi, sr * wi + si * wr

    def score_batch(self, s: np.ndarray, p: np.ndarray) -> np.ndarray:
        qr, qi = self._query(np.asarray(s), np.asarray(p))
        return qr @ self.ent_re.T + qi @ self.ent_im.T

    def score_all(self, s: int, p: int) -> np.ndarray:
        return self.score_batch(np.array([s]), np.array([p]))[0]

    def score(self, s: int, p: int, o: int) -> float:
        return float(self.score_all(s, p)[o])

    def loss_and_grads(self, triples: np.ndarray, reg: float) -> tuple[float, list[np.ndarray]]:
        """Mean softmax cross-entropy over the object slot plus weighted N3
        penalty on the moduli of the embeddings touched by the batch."""
        s, p, o = triples[:, 0], triples[:, 1], triples[:, 2]
        b = len(triples)
        sr, si = self.ent_re[s], self.ent_im[s]
        wr, wi = self.rel_re[p], self.rel_im[p]
        qr, qi = sr * wr - si * wi, sr * wi + si * wr
        z = qr @ self.ent_re.T + qi @ self.ent_im.T
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        ce = -logp[np.arange(b), o].sum() / b
        probs = np.exp(logp)
        probs[np.arange(b), o] -= 1.0
        dz = probs / b

        g_ent_re = dz.T @ qr
        g_ent_im = dz.T @ qi
        gqr, gqi = dz @ self.ent_re, dz @ self.ent_im
        g_sr = gqr * wr + gqi * wi
        g_si = -gqr * wi + gqi * wr
        g_wr = gqr * sr + gqi * si
        g_wi = -gqr * si + gqi * sr

        penalty = 0.0
        if reg:
            c = reg / b
            pieces = [(sr, si, "s"), (wr, wi, "p"), (self.ent_re[o], self.ent_im[o], "o")]
            grads_n3 = {}
            for re_, im_, tag in pieces:
                mod = np.sqrt(re_ ** 2 + im_ ** 2)
                penalty += c * (mod ** 3).sum()
                grads_n3[tag] = (3 * c * mod * re_, 3 * c * mod * im_)
            g_sr = g_sr + grads_n3["s"][0]
            g_si = g_si + grads_n3["s"][1]
            g_wr = g_wr + grads_n3["p"][0]
            g_wi = g_wi + grads_n3["p"][1]
            np.add.at(g_ent_re, o, grads_n3["o"][0])
            np.add.at(g_ent_im, o, grads_n3["o"][1])

        np.add.at(g_ent_re, s, g_sr)
        np.add.at(g_ent_im, s, g_si)
        g_rel_re = np.zeros_like(self.rel_re)
        g_rel_im = np.zeros_like(self.rel_im)
        np.add.at(g_rel_re, p, g_wr)
        np.add.at(g_rel_im, p, g_wi)
        return float(ce + penalty), [g_ent_re, g_ent_im, g_rel_re, g_rel_im]

    def loss(self, triples: np.ndarray, reg: float) -> float:
        return self.loss_and_grads(triples, reg)[0]

    def copy(self) -> "ComplEx":
        return ComplEx(*(a.copy() for a in self.params()))


@dataclass
class TrainingHistory:
    epoch_losses: list[float] = field(default_factory=list)
    initial_loss: float = float("nan")


def train(graph: KnowledgeGraph, config: TrainConfig = TrainConfig(),
          model: ComplEx | None = None) -> tuple[ComplEx, TrainingHistory]:
    """Adagrad over shuffled mini-batches of ``graph``'s triples.  The graph
    should already contain inverse edges so both slots are learned."""
    if not graph.inverse_augmented:
        raise ValueError("train expects a graph with inverse relations")
    if len(graph) == 0:
        raise ValueError("cannot train on an empty graph")
    rng = np.random.default_rng(config.seed)
    if model is None:
        model = ComplEx.initialize(graph.entity_count, graph.relation_count, config.rank,
                                   seed=config.seed, init_scale=config.init_scale)
    triples = np.asarray(graph.triples, dtype=np.int64)
    history = TrainingHistory(initial_loss=model.loss(triples, config.regularization))
    accum = [np.zeros_like(a) for a in model.params()]
    eps = 1e-10
    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = triples[order[start:start + config.batch_size]]
            loss, grads = model.loss_and_grads(batch, config.regularization)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at epoch {epoch}, batch offset {start}")
            for param, grad, acc in zip(model.params(), grads, accum):
                acc += grad * grad
                param -= config.learning_rate * grad / (np.sqrt(acc) + eps)
            total += loss * len(batch)
        history.epoch_losses.append(total / len(triples))
        log.debug("epoch %d loss %.6f", epoch, history.epoch_losses[-1])
    return model, history


def gradient_check(model: ComplEx, triples: np.ndarray, reg: float, probes: int = 20, seed: int = 0,
                   h: float = 1e-6) -> list[tuple[float, float]]:
    """``(analytic, central difference)`` pairs at random parameter entries."""
    rng = np.random.default_rng(seed)
    _, grads = model.loss_and_grads(triples, reg)
    out = []
    for _ in range(probes):
        k = int(rng.integers(4))
        param = model.params()[k]
        idx = tuple(int(rng.integers(n)) for n in param.shape)
        old = param[idx]
        param[idx] = old + h
        up = model.loss(triples, reg)
        param[idx] = old - h
        down = model.loss(triples, reg)
        param[idx] = old
        out.append((float(grads[k][idx]), (up - down) / (2 * h)))
    return out


def filtered_link_mrr(scorer: Scorer, triples: np.ndarray, known: KnowledgeGraph) -> float:
    """Filtered MRR of object prediction, other known objects removed."""
    rr = []
    for s, p, o in np.asarray(triples).tolist():
        scores = np.asarray(scorer.score_all(s, p), dtype=float)
        others = [x for x in known.successors(s, p) if x != o]
        target = scores[o]
        mask = np.ones(len(scores), bool)
        mask[others] = False
        higher = np.count_nonzero(scores[mask] > target)
        ties = np.count_nonzero(scores[mask] == target) - 1
        rr.append(1.0 / (1 + higher + ties / 2))
    return float(np.mean(rr)) if rr else 0.0


def select_model(train_graph: KnowledgeGraph, valid_graph: KnowledgeGraph, known: KnowledgeGraph,
                 grid: list[TrainConfig]) -> tuple[ComplEx, TrainConfig, float]:
    """Train every config and keep the one with the best overall filtered
    validation MRR."""
    best = None
    for cfg in grid:
        model, _ = train(train_graph, cfg)
        score = filtered_link_mrr(model, valid_graph.triples, known)
        log.info("config %s: validation MRR %.4f", cfg, score)
        if best is None or score > best[2]:
            best = (model, cfg, score)
    if best is None:
        raise ValueError("empty hyperparameter grid")
    return best


# --------------------------------------------------------------- checkpoint


def save_checkpoint(model: ComplEx, path, hyperparameters: dict | None = None) -> str:
    """JSON header line followed by little-endian float64 arrays
    (entity re, entity im, relation re, relation im).  Returns the payload hash."""
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params())
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "entities": model.entity_count,
        "relations": model.relation_count,
        "rank": model.rank,
        "sha256": digest,
        "hyperparameters": hyperparameters or {},
    }
    def writer(fh):
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(payload)

    atomic_write(path, writer, binary=True)
    return digest


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ComplEx, dict]:
    with open(path, "rb") as fh:
        line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: bad header") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a ComplEx checkpoint")
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError(f"{path}: content hash mismatch")
    n, m, d = header["entities"], header["relations"], header["rank"]
    if len(payload) != 8 * d * (2 * n + 2 * m):
        raise CheckpointError(f"{path}: payload size does not match header dimensions")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    sizes = [n * d, n * d, m * d, m * d]
    arrays, off = [], 0
    for size, rows in zip(sizes, (n, n, m, m)):
        arrays.append(flat[off:off + size].reshape(rows, d).copy())
        off += size
    return ComplEx(*arrays), header


# -------------------------------------------------------- baseline scorers


class FrequencyScorer:
    """Ignores the subject: object ``o`` scores the fraction of ``p`` edges
    pointing at it."""

    def __init__(self, graph: KnowledgeGraph):
        self.entity_count = graph.entity_count
        counts = np.zeros((graph.relation_count, graph.entity_count))
        if len(graph):
            np.add.at(counts, (graph.triples[:, 1], graph.triples[:, 2]), 1.0)
        totals = counts.sum(axis=1, keepdims=True)
        self._table = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)

    def score_all(self, s: int, p: int) -> np.ndarray:
        return self._table[p].copy()


def frequency_baseline(graph: KnowledgeGraph) -> FrequencyScorer:
    return FrequencyScorer(graph)


class GraphScorer:
    """1.0 for objects linked to ``s`` by ``p`` in ``graph``, else 0.0."""

    def __init__(self, graph: KnowledgeGraph):
        self.graph = graph
        self.entity_count = graph.entity_count

    def score_all(self, s: int, p: int) -> np.ndarray:
        out = np.zeros(self.entity_count)
        succ = self.graph.successors(s, p)
        if succ:
            out[list(succ)] = 1.0
        return out


class TableScorer:
    """Explicit score vectors per ``(s, p)``; missing keys score ``default``."""

    def __init__(self, entity_count: int, table: dict[tuple[int, int], np.ndarray], default: float = 0.0):
        self.entity_count = entity_count
        self.table = {k: np.asarray(v, dtype=float) for k, v in table.items()}
        self.default = default

    def score_all(self, s: int, p: int) -> np.ndarray:
        v = self.table.get((s, p))
        return v.copy() if v is not None else np.full(self.entity_count, self.default)
