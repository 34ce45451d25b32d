"""Seeded synthetic graphs for tests and demos."""

from __future__ import annotations

import numpy as np

from .kg import KnowledgeGraphSplit, SymbolTable, random_split


def synthetic_triples(n_entities: int, n_relations: int, n_edges: int, seed: int = 0,
                      skew: float = 0.8) -> np.ndarray:
    """Distinct random triples with a heavy-tailed entity popularity
    (weights ``rank ** -skew``), which gives hubs like real graphs."""
    rng = np.random.default_rng(seed)
    weights = np.arange(1, n_entities + 1, dtype=float) ** -skew
    weights /= weights.sum()
    limit = n_entities * n_entities * n_relations
    if n_edges > limit // 2:
        raise ValueError("too many edges requested for the entity/relation counts")
    seen: set = set()
    rows = []
    while len(rows) < n_edges:
        batch = n_edges - len(rows)
        s = rng.choice(n_entities, size=batch, p=weights)
        o = rng.choice(n_entities, size=batch, p=weights)
        p = rng.integers(n_relations, size=batch)
        for t in zip(s.tolist(), p.tolist(), o.tolist()):
            if t[0] != t[2] and t not in seen:
                seen.add(t)
                rows.append(t)
    return np.array(rows, dtype=np.int64)


def synthetic_split(n_entities: int = 300, n_relations: int = 30, n_edges: int = 3000, seed: int = 0,
                    ratios=(0.7, 0.15, 0.15), inverse: bool = True) -> KnowledgeGraphSplit:
    triples = synthetic_triples(n_entities, n_relations, n_edges, seed)
    symbols = SymbolTable([f"e{i}" for i in range(n_entities)], [f"r{i}" for i in range(n_relations)])
    split = random_split(triples, n_entities, n_relations, ratios, seed, symbols)
    return split.with_inverses() if inverse else split
