#!/usr/bin/env python3
"""Hardness of query-answer pairs on a hand-built graph, then at scale.

Part one grounds a 2p query over a tiny movie graph and shows why each
answer gets its label: the cheapest reasoning tree decides, and the
training edges in it are contracted away.

Part two samples pairs on a synthetic split the naive way (uniform random
walks, no balancing) and prints the reduction matrix.  Most multi-hop
pairs collapse to link prediction.

Usage:
  python demos/hardness_walkthrough.py
"""

from __future__ import annotations

import random
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from cqa_hardness.generator import sample_query
from cqa_hardness.hardness import classify, reduction_matrix
from cqa_hardness.kg import KnowledgeGraph, KnowledgeGraphSplit, SymbolTable
from cqa_hardness.matcher import Matcher, minimal_tree
from cqa_hardness.queries import QaPair, QueryType, instantiate
from cqa_hardness.synthetic import synthetic_split


def movie_split() -> KnowledgeGraphSplit:
    train = [("nolan", "directed", "inception"), ("nolan", "directed", "memento"),
             ("inception", "starring", "dicaprio")]
    missing = [("memento", "starring", "pearce"), ("nolan", "directed", "tenet"),
               ("tenet", "starring", "washington")]
    sym = SymbolTable()
    enc = lambda rows: np.array([(sym.entity_id(s), sym.relation_id(p), sym.entity_id(o)) for s, p, o in rows],
                                dtype=np.int64).reshape(-1, 3)
    train, missing = enc(train), enc(missing)
    n, m = sym.entity_count, sym.relation_count
    return KnowledgeGraphSplit(KnowledgeGraph(train, n, m), KnowledgeGraph(missing, n, m),
                               KnowledgeGraph(enc([]), n, m), symbols=sym).with_inverses()


def walkthrough() -> None:
    split = movie_split()
    sym = split.symbols
    fwd = lambda name: 2 * sym.relation_id(name)
    query = instantiate("2p", [sym.entity_id("nolan")], [fwd("directed"), fwd("starring")])
    print("query: who starred in a film directed by nolan?")
    m = Matcher(query, split)
    for t in sorted(m.answers()):
        tree = minimal_tree(QaPair(query, t), split, m)
        path = " -> ".join(sym.entities[v] for v in tree.values)
        prov = ", ".join(p.name.lower() for p in tree.provenance)
        label = classify(QaPair(query, t), split, matcher=m)
        print(f"  {sym.entities[t]:<11} via {path:<10} edges [{prov}]  => {label}")
    print()


def naive_matrix(per_type: int = 300) -> None:
    split = synthetic_split(seed=7)
    rng = random.Random(0)
    pairs = []
    for qtype in QueryType:
        got = 0
        while got < per_type:
            sampled = sample_query(qtype, split, rng)
            if sampled is None:
                continue
            t = rng.choice(sorted(sampled.full_answers))
            pairs.append(QaPair(sampled.query, t))
            got += 1
    matrix = reduction_matrix(pairs, split)
    print(f"reduction matrix of {len(pairs)} naively sampled pairs (percent of non-trivial pairs):")
    print(matrix.to_text())


if __name__ == "__main__":
    walkthrough()
    naive_matrix()
