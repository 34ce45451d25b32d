"""In-memory multi-relational graphs with train/valid/test partitions.

Entities and relations are interned to dense integer ids.  After
:func:`add_inverse_relations`, relation ``2k`` is the forward direction of
base relation ``k`` and ``2k + 1`` is its inverse, so every query atom can be
answered with a forward lookup.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .fileio import atomic_write

FORWARD = "fwd"
BACKWARD = "bwd"


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SymbolTable:
    """Bijective name <-> id maps for entities and (base) relations."""

    def __init__(self, entities: Iterable[str] = (), relations: Iterable[str] = ()):
        self.entities: list[str] = []
        self.relations: list[str] = []
        self._ent: dict[str, int] = {}
        self._rel: dict[str, int] = {}
        for e in entities:
            self.entity_id(e)
        for r in relations:
            self.relation_id(r)

    def entity_id(self, name: str, create: bool = True) -> int:
        idx = self._ent.get(name)
        if idx is None:
            if not create:
                raise KeyError(name)
            idx = len(self.entities)
            self._ent[name] = idx
            self.entities.append(name)
        return idx

    def relation_id(self, name: str, create: bool = True) -> int:
        idx = self._rel.get(name)
        if idx is None:
            if not create:
                raise KeyError(name)
            idx = len(self.relations)
            self._rel[name] = idx
            self.relations.append(name)
        return idx

    @property
    def entity_count(self) -> int:
        return len(self.entities)

    @property
    def relation_count(self) -> int:
        return len(self.relations)

    def relation_label(self, rid: int, augmented: bool = True) -> str:
        if not augmented:
            return self.relations[rid]
        name = self.relations[rid // 2]
        return name if rid % 2 == 0 else name + "^-1"

    def copy(self) -> "SymbolTable":
        return SymbolTable(self.entities, self.relations)

    def __eq__(self, other):
        return (
            isinstance(other, SymbolTable)
            and self.entities == other.entities
            and self.relations == other.relations
        )


class TimedTriple(NamedTuple):
    s: int
    p: int
    o: int
    timestamp: object  # datetime.date, datetime.datetime or int; must be mutually comparable


def _as_triples(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) triple array, got shape {arr.shape}")
    return arr


class KnowledgeGraph:
    """Immutable edge set with forward ``(s, p) -> objects`` and backward
    ``(o, p) -> subjects`` indexes.  Duplicate triples are dropped."""

    def __init__(self, triples, entity_count: int, relation_count: int, inverse_augmented: bool = False):
        arr = _as_triples(triples)
        if len(arr):
            if arr.min() < 0:
                raise ValueError("negative id in triples")
            if arr[:, [0, 2]].max() >= entity_count:
                raise ValueError("entity id out of range")
            if arr[:, 1].max() >= relation_count:
                raise ValueError("relation id out of range")
            arr = np.unique(arr, axis=0)
        arr.setflags(write=False)
        self.triples = arr
        self.entity_count = int(entity_count)
        self.relation_count = int(relation_count)
        self.inverse_augmented = inverse_augmented
        self._edges = frozenset(map(tuple, arr.tolist()))
        fwd: dict[tuple[int, int], list[int]] = {}
        bwd: dict[tuple[int, int], list[int]] = {}
        for s, p, o in arr.tolist():
            fwd.setdefault((s, p), []).append(o)
            bwd.setdefault((o, p), []).append(s)
        self._fwd = {k: tuple(sorted(v)) for k, v in fwd.items()}
        self._bwd = {k: tuple(sorted(v)) for k, v in bwd.items()}
        self._fwd_sets: dict[tuple[int, int], frozenset] = {}
        self._bwd_sets: dict[tuple[int, int], frozenset] = {}
        self._in_edges: dict[int, list[tuple[int, int]]] | None = None

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._edges

    def __iter__(self):
        return iter(self._edges)

    @property
    def edges(self) -> frozenset:
        return self._edges

    def neighbors(self, entity: int, relation: int, direction: str = FORWARD) -> tuple[int, ...]:
        """Sorted objects of ``(entity, relation, ?)`` (``fwd``) or subjects of
        ``(?, relation, entity)`` (``bwd``)."""
        if direction == FORWARD:
            return self._fwd.get((entity, relation), ())
        if direction == BACKWARD:
            return self._bwd.get((entity, relation), ())
        raise ValueError(f"unknown direction {direction!r}")

    def successors(self, entity: int, relation: int) -> frozenset:
        key = (entity, relation)
        out = self._fwd_sets.get(key)
        if out is None:
            out = self._fwd_sets[key] = frozenset(self._fwd.get(key, ()))
        return out

    def predecessors(self, entity: int, relation: int) -> frozenset:
        key = (entity, relation)
        out = self._bwd_sets.get(key)
        if out is None:
            out = self._bwd_sets[key] = frozenset(self._bwd.get(key, ()))
        return out

    def image(self, entities: Iterable[int], relation: int) -> set:
        out: set = set()
        for e in entities:
            out.update(self._fwd.get((e, relation), ()))
        return out

    def preimage(self, entities: Iterable[int], relation: int) -> set:
        out: set = set()
        for e in entities:
            out.update(self._bwd.get((e, relation), ()))
        return out

    def in_edges(self, entity: int) -> list[tuple[int, int]]:
        """All ``(subject, relation)`` pairs with an edge into ``entity``."""
        if self._in_edges is None:
            idx: dict[int, list[tuple[int, int]]] = {}
            for s, p, o in self.triples.tolist():
                idx.setdefault(o, []).append((s, p))
            self._in_edges = idx
        return self._in_edges.get(entity, [])

    def out_keys(self):
        """``(s, p)`` keys of the forward index."""
        return self._fwd.keys()

    def in_keys(self):
        return self._bwd.keys()

    def union(self, *others: "KnowledgeGraph") -> "KnowledgeGraph":
        parts = [self.triples] + [g.triples for g in others]
        return KnowledgeGraph(np.concatenate(parts), self.entity_count, self.relation_count, self.inverse_augmented)

    def fingerprint(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.triples).tobytes()).hexdigest()

    def __repr__(self):
        return (
            f"KnowledgeGraph(entities={self.entity_count}, relations={self.relation_count}, "
            f"edges={len(self)}, inverse_augmented={self.inverse_augmented})"
        )


def add_inverse_relations(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Double the relation vocabulary: ``(s, p, o)`` becomes ``(s, 2p, o)``
    plus ``(o, 2p + 1, s)``."""
    if kg.inverse_augmented:
        raise ValueError("graph is already augmented with inverse relations")
    t = kg.triples
    fwd = np.stack([t[:, 0], 2 * t[:, 1], t[:, 2]], axis=1)
    inv = np.stack([t[:, 2], 2 * t[:, 1] + 1, t[:, 0]], axis=1)
    return KnowledgeGraph(np.concatenate([fwd, inv]), kg.entity_count, 2 * kg.relation_count, inverse_augmented=True)


def inverse_relation(rid: int) -> int:
    return rid ^ 1


@dataclass
class KnowledgeGraphSplit:
    """Pairwise-disjoint train/valid/test graphs sharing one symbol table."""

    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph
    symbols: SymbolTable = field(default_factory=SymbolTable)

    def __post_init__(self):
        graphs = (self.train, self.valid, self.test)
        if len({(g.entity_count, g.relation_count, g.inverse_augmented) for g in graphs}) != 1:
            raise ValueError("train/valid/test must share entity/relation counts")
        for (na, a), (nb, b) in [(("train", self.train), ("valid", self.valid)),
                                 (("train", self.train), ("test", self.test)),
                                 (("valid", self.valid), ("test", self.test))]:
            shared = a.edges & b.edges
            if shared:
                raise ValueError(f"{len(shared)} triple(s) shared between {na} and {nb}, e.g. {min(shared)}")
        self.full = self.train.union(self.valid, self.test)
        self.missing = self.valid.union(self.test)

    @property
    def entity_count(self) -> int:
        return self.train.entity_count

    @property
    def relation_count(self) -> int:
        return self.train.relation_count

    @property
    def inverse_augmented(self) -> bool:
        return self.train.inverse_augmented

    def with_inverses(self) -> "KnowledgeGraphSplit":
        return KnowledgeGraphSplit(
            add_inverse_relations(self.train),
            add_inverse_relations(self.valid),
            add_inverse_relations(self.test),
            self.symbols,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for g in (self.train, self.valid, self.test):
            h.update(g.fingerprint().encode())
        return h.hexdigest()


def neighbors(kg: KnowledgeGraph, entity: int, relation: int, direction: str = FORWARD) -> list[int]:
    return list(kg.neighbors(entity, relation, direction))


def parse_timestamp(text: str):
    """ISO-8601 date or datetime, or a non-negative integer tick."""
    text = text.strip()
    if text.isdigit():
        return int(text)
    try:
        if "T" in text or " " in text:
            return _dt.datetime.fromisoformat(text)
        return _dt.date.fromisoformat(text)
    except ValueError:
        raise ValueError(f"unknown timestamp format {text!r}") from None


def load_triples(path, symbols: SymbolTable | None = None, timestamped: bool = False):
    """Read a tab-separated triple file, interning names in first-seen order.

    Returns ``(triples, symbols)`` where ``triples`` is an ``(n, 3)`` int array,
    or a list of :class:`TimedTriple` when ``timestamped``.
    """
    symbols = symbols if symbols is not None else SymbolTable()
    width = 4 if timestamped else 3
    rows: list = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != width:
                raise ParseError(path, lineno, f"expected {width} tab-separated columns, got {len(cols)}")
            if any(not c for c in cols[:3]):
                raise ParseError(path, lineno, "empty field")
            s = symbols.entity_id(cols[0])
            p = symbols.relation_id(cols[1])
            o = symbols.entity_id(cols[2])
            if timestamped:
                try:
                    ts = parse_timestamp(cols[3])
                except ValueError as exc:
                    raise ParseError(path, lineno, str(exc)) from None
                rows.append(TimedTriple(s, p, o, ts))
            else:
                rows.append((s, p, o))
    if timestamped:
        return rows, symbols
    return _as_triples(rows), symbols


def save_triples(path, triples, symbols: SymbolTable) -> None:
    """Write base-relation triples by name (inverse edges must be stripped first)."""
    atomic_write(path, lambda fh: _dump(fh, triples, symbols))


def forward_triples(kg: KnowledgeGraph) -> np.ndarray:
    """Base-relation triples of ``kg`` (undoes inverse augmentation)."""
    if not kg.inverse_augmented:
        return kg.triples
    t = kg.triples[kg.triples[:, 1] % 2 == 0]
    return np.stack([t[:, 0], t[:, 1] // 2, t[:, 2]], axis=1)


def earliest_first(timed: Sequence[TimedTriple]) -> list[TimedTriple]:
    """Deduplicate facts keeping each one's earliest timestamp, then stable-sort
    by timestamp (ties keep input order)."""
    first: dict[tuple[int, int, int], int] = {}
    for i, t in enumerate(timed):
        key = (t.s, t.p, t.o)
        j = first.get(key)
        if j is None or t.timestamp < timed[j].timestamp:
            first[key] = i
    keep = sorted(first.values())
    return sorted((timed[i] for i in keep), key=lambda t: t.timestamp)


def split_sizes(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    fr = [Fraction(str(r)) if isinstance(r, float) else Fraction(r) for r in ratios]
    if len(fr) != 3 or any(r <= 0 for r in fr):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if sum(fr) != 1:
        raise ValueError(f"ratios must sum to 1, got {float(sum(fr))}")
    n_train = int(fr[0] * n)
    n_valid = int(fr[1] * n)
    return n_train, n_valid, n - n_train - n_valid


def temporal_split(
    timed: Sequence[TimedTriple],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    symbols: SymbolTable | None = None,
) -> KnowledgeGraphSplit:
    """Chronological split: earliest-timestamp dedup, then the first
    ``floor(r_train * N)`` facts train, the next ``floor(r_valid * N)`` valid,
    the rest test.  Timestamps are dropped."""
    if not timed:
        raise ValueError("temporal_split needs at least one triple")
    ordered = earliest_first(timed)
    n_train, n_valid, _ = split_sizes(len(ordered), ratios)
    arr = np.array([(t.s, t.p, t.o) for t in ordered], dtype=np.int64)
    if symbols is not None:
        n_ent, n_rel = symbols.entity_count, symbols.relation_count
    else:
        n_ent, n_rel = int(arr[:, [0, 2]].max()) + 1, int(arr[:, 1].max()) + 1
        symbols = SymbolTable(map(str, range(n_ent)), map(str, range(n_rel)))
    parts = (arr[:n_train], arr[n_train:n_train + n_valid], arr[n_train + n_valid:])
    graphs = [KnowledgeGraph(p, n_ent, n_rel) for p in parts]
    return KnowledgeGraphSplit(*graphs, symbols=symbols)


SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


def _read_dict(path) -> list[str]:
    names: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2 or not cols[0].isdigit():
                raise ParseError(path, lineno, "expected 'id<TAB>name'")
            names[int(cols[0])] = cols[1]
    if sorted(names) != list(range(len(names))):
        raise ValueError(f"{path}: ids must be contiguous from 0")
    return [names[i] for i in range(len(names))]


def load_split_dir(path, inverse: bool = True) -> KnowledgeGraphSplit:
    """Load ``train.txt``/``valid.txt``/``test.txt`` (plus optional
    ``entities.dict``/``relations.dict``) from ``path``."""
    path = Path(path)
    symbols = SymbolTable()
    if (path / "entities.dict").exists():
        symbols = SymbolTable(_read_dict(path / "entities.dict"), symbols.relations)
    if (path / "relations.dict").exists():
        symbols = SymbolTable(symbols.entities, _read_dict(path / "relations.dict"))
    arrays = [load_triples(path / name, symbols)[0] for name in SPLIT_FILES]
    n_ent, n_rel = symbols.entity_count, symbols.relation_count
    split = KnowledgeGraphSplit(*(KnowledgeGraph(a, n_ent, n_rel) for a in arrays), symbols=symbols)
    return split.with_inverses() if inverse else split


def write_split_dir(split: KnowledgeGraphSplit, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name, g in zip(SPLIT_FILES, (split.train, split.valid, split.test)):
        atomic_write(path / name, lambda fh, g=g: _dump(fh, forward_triples(g), split.symbols))
    atomic_write(path / "entities.dict", lambda fh: fh.writelines(f"{i}\t{n}\n" for i, n in enumerate(split.symbols.entities)))
    atomic_write(path / "relations.dict", lambda fh: fh.writelines(f"{i}\t{n}\n" for i, n in enumerate(split.symbols.relations)))


def _dump(fh, triples, symbols):
    for s, p, o in np.asarray(triples).tolist():
        fh.write(f"{symbols.entities[s]}\t{symbols.relations[p]}\t{symbols.entities[o]}\n")


def file_fingerprint(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        with open(p, "rb") as fh:
            h.update(fh.read())
    return h.hexdigest()


def random_split(triples, entity_count: int, relation_count: int, ratios=(0.8, 0.1, 0.1), seed: int = 0,
                 symbols: SymbolTable | None = None) -> KnowledgeGraphSplit:
    """Uniform random split of deduplicated base triples (for synthetic data)."""
    arr = np.unique(_as_triples(triples), axis=0)
    rng = np.random.default_rng(seed)
    arr = arr[rng.permutation(len(arr))]
    n_train, n_valid, _ = split_sizes(len(arr), ratios)
    parts = (arr[:n_train], arr[n_train:n_train + n_valid], arr[n_train + n_valid:])
    symbols = symbols or SymbolTable(map(str, range(entity_count)), map(str, range(relation_count)))
    return KnowledgeGraphSplit(*(KnowledgeGraph(p, entity_count, relation_count) for p in parts), symbols=symbols)
