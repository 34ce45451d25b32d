"""Brute-force reference implementations.

These enumerate every assignment of the query variables over all entities and
apply the hardness definitions literally.  They share no code with the
package beyond the data types, and are only practical on graphs with a few
dozen entities.
"""

from __future__ import annotations

import itertools
import random

import numpy as np

from cqa_hardness.kg import KnowledgeGraph, KnowledgeGraphSplit, SymbolTable
from cqa_hardness.queries import TARGET, Anchor, Query, QueryType, Var, arity, instantiate

PATHS = {QueryType.P1: 1, QueryType.P2: 2, QueryType.P3: 3, QueryType.P4: 4}
INTERSECTIONS = {QueryType.I2, QueryType.I3, QueryType.I4}

# Reduced type by Train/Missing pattern of the positive atoms, in template order.
HAND_REDUCTIONS = {
    QueryType.P1I2: {"TTM": "1p", "TMT": "1p", "MTT": "1p", "TMM": "2i", "MTM": "2i", "MMT": "2p"},
    QueryType.I2P1: {"TTM": "1p", "TMT": "1p", "MTT": "1p", "TMM": "2p", "MTM": "2p", "MMT": "2i"},
    QueryType.U2P1: {"TTM": "1p", "TMM": "1p", "MTM": "1p", "MMT": "2u"},
}


def _branches(qtype: QueryType, n_atoms: int) -> list[list[int]]:
    if qtype is QueryType.U2:
        return [[0], [1]]
    if qtype is QueryType.U2P1:
        return [[0, 2], [1, 2]]
    return [list(range(n_atoms))]


def _vars(atoms, negated: bool | None = None) -> list[int]:
    out = set()
    for a in atoms:
        if negated is None or a.negated == negated:
            for n in (a.subject, a.object):
                if isinstance(n, Var):
                    out.add(n.index)
    return sorted(out)


def _ground(node, env: dict) -> int:
    if node is TARGET:
        return env["t"]
    if isinstance(node, Anchor):
        return node.entity
    return env[node.index]


def _negation_ok(query: Query, env: dict, edges: set, n_ent: int) -> bool:
    neg = [a for a in query.atoms if a.negated]
    if not neg:
        return True
    inner = [v for v in _vars(neg) if v not in env]
    for values in itertools.product(range(n_ent), repeat=len(inner)):
        env2 = {**env, **dict(zip(inner, values))}
        if all((_ground(a.subject, env2), a.relation, _ground(a.object, env2)) in edges for a in neg):
            return False
    return True


def brute_groundings(query: Query, target: int, edges: set, n_ent: int):
    """Yield ``(env, branch)`` for every assignment realising ``target``."""
    pos_vars = _vars(query.atoms, negated=False)
    branches = _branches(query.type, len(query.atoms))
    for values in itertools.product(range(n_ent), repeat=len(pos_vars)):
        env = dict(zip(pos_vars, values))
        env["t"] = target
        for b, branch in enumerate(branches):
            atoms = [query.atoms[i] for i in branch if not query.atoms[i].negated]
            if all((_ground(a.subject, env), a.relation, _ground(a.object, env)) in edges for a in atoms):
                if _negation_ok(query, env, edges, n_ent):
                    yield env, b


def brute_answers(query: Query, kg: KnowledgeGraph) -> set:
    edges = set(kg.edges)
    n = kg.entity_count
    return {t for t in range(n) if next(brute_groundings(query, t, edges, n), None) is not None}


def brute_label(query: Query, target: int, split: KnowledgeGraphSplit) -> str | None:
    """Hardness label string, or None when ``target`` is not an answer."""
    train, full = set(split.train.edges), set(split.full.edges)
    n = split.full.entity_count
    atoms = query.atoms
    pos = [i for i, a in enumerate(atoms) if not a.negated]
    branches = _branches(query.type, len(atoms))
    pos_vars = _vars(atoms, negated=False)
    best = None
    for env, b in brute_groundings(query, target, full, n):
        prov = {}
        for i in pos:
            tr = (_ground(atoms[i].subject, env), atoms[i].relation, _ground(atoms[i].object, env))
            prov[i] = "T" if tr in train else ("M" if tr in full else "N")
        missing = sum(prov[i] == "M" for i in branches[b] if i in prov)
        hops = sum(1 for i in branches[b] if i in prov)
        key = (missing > 0 and "N" in prov.values(), missing, hops, tuple(env[v] for v in pos_vars), b)
        if best is None or key < best[0]:
            best = (key, prov)
    if best is None:
        return None
    (_, missing, _, _, _), prov = best
    if missing == 0:
        return "trivial"
    pattern = "".join(prov[i] for i in pos)
    if "N" in pattern:
        return "filtered"
    if "T" not in pattern:
        return "full"
    qtype = query.type
    if qtype in PATHS:
        return f"partial:{pattern.count('M')}p"
    if qtype in INTERSECTIONS:
        m = pattern.count("M")
        return "partial:1p" if m == 1 else f"partial:{m}i"
    if qtype in HAND_REDUCTIONS:
        return "partial:" + HAND_REDUCTIONS[qtype][pattern]
    # negation types: two positive atoms, one of them Train
    assert len(pos) == 2 and pattern.count("M") == 1, (qtype, pattern)
    return "partial:1p"


def random_split(rng: random.Random, n_ent: int = 20, n_rel: int = 3, n_edges: int = 100,
                 train_frac: float = 0.6) -> KnowledgeGraphSplit:
    """Random forward triples split into train/valid/test, with inverses."""
    edges = set()
    limit = n_ent * n_ent * n_rel
    while len(edges) < min(n_edges, limit):
        edges.add((rng.randrange(n_ent), rng.randrange(n_rel), rng.randrange(n_ent)))
    edges = sorted(edges)
    rng.shuffle(edges)
    n_train = int(len(edges) * train_frac)
    n_valid = (len(edges) - n_train) // 2
    parts = [edges[:n_train], edges[n_train:n_train + n_valid], edges[n_train + n_valid:]]
    sym = SymbolTable([f"e{i}" for i in range(n_ent)], [f"r{i}" for i in range(n_rel)])
    graphs = [KnowledgeGraph(np.array(p, dtype=np.int64).reshape(-1, 3), n_ent, n_rel) for p in parts]
    return KnowledgeGraphSplit(*graphs, symbols=sym).with_inverses()


def random_grounded_query(rng: random.Random, qtype: QueryType, kg: KnowledgeGraph, tries: int = 200):
    """Query built by walking backwards from a random entity; negated atoms get
    random anchors and relations.  Returns None if no walk succeeds."""
    qtype = QueryType(qtype)
    n_anchor, n_rel = arity(qtype)
    proto = instantiate(qtype, list(range(n_anchor)), [0] * n_rel)
    for _ in range(tries):
        env = {TARGET: rng.randrange(kg.entity_count)}
        anchors = [None] * n_anchor
        rels = [None] * n_rel
        ok = True
        pending = list(range(len(proto.atoms)))
        while pending and ok:
            progress = False
            for i in list(pending):
                atom = proto.atoms[i]
                if atom.object not in env and not isinstance(atom.object, Anchor):
                    continue
                pending.remove(i)
                progress = True
                if atom.negated:
                    rels[i] = rng.randrange(kg.relation_count)
                    if isinstance(atom.subject, Anchor):
                        anchors[atom.subject.index] = rng.randrange(kg.entity_count)
                    else:
                        env[atom.subject] = rng.randrange(kg.entity_count)
                    continue
                dst = env[atom.object] if atom.object in env else anchors[atom.object.index]
                incoming = kg.in_edges(dst)
                if not incoming:
                    ok = False
                    break
                s, r = rng.choice(sorted(incoming))
                rels[i] = r
                if isinstance(atom.subject, Anchor):
                    anchors[atom.subject.index] = s
                else:
                    env[atom.subject] = s
            if not progress:
                ok = False
        if ok:
            return instantiate(qtype, anchors, rels), env[TARGET]
    return None
