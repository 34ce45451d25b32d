"""Query types as atom templates over anchors, existential variables and one target.

Atoms are oriented anchor -> target (inverse relations make this possible), so
every template's positive part is an in-tree rooted at the target: each
variable has exactly one outgoing atom.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

from .fileio import atomic_write


class QueryType(str, enum.Enum):
    P1 = "1p"
    P2 = "2p"
    P3 = "3p"
    P4 = "4p"
    I2 = "2i"
    I3 = "3i"
    I4 = "4i"
    P1I2 = "1p2i"
    I2P1 = "2i1p"
    U2 = "2u"
    U2P1 = "2u1p"
    IN2 = "2in"
    IN3 = "3in"
    PI2P1N = "2pi1pn"
    NU2P1 = "2nu1p"
    IN2P1 = "2in1p"

    def __str__(self):
        return self.value


@dataclass(frozen=True, order=True)
class Anchor:
    index: int  # position in the query's anchor list
    entity: int


@dataclass(frozen=True, order=True)
class Var:
    index: int


class _Target:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self):
        return "TARGET"

    def __reduce__(self):
        return (_Target, ())


TARGET = _Target()
Node = Union[Anchor, Var, _Target]


@dataclass(frozen=True)
class Atom:
    subject: Node
    relation: int
    object: Node
    negated: bool = False

    def __post_init__(self):
        if self.subject is TARGET:
            raise ValueError("an atom's subject can never be the target")


# Template language: ("a0", "r0", "v0", negated).  Anchor/relation slots are
# filled positionally by ``instantiate``.
_TEMPLATES: dict[QueryType, tuple[tuple[str, str, str, bool], ...]] = {
    QueryType.P1: (("a0", "r0", "t", False),),
    QueryType.P2: (("a0", "r0", "v0", False), ("v0", "r1", "t", False)),
    QueryType.P3: (("a0", "r0", "v0", False), ("v0", "r1", "v1", False), ("v1", "r2", "t", False)),
    QueryType.P4: (("a0", "r0", "v0", False), ("v0", "r1", "v1", False), ("v1", "r2", "v2", False),
                   ("v2", "r3", "t", False)),
    QueryType.I2: (("a0", "r0", "t", False), ("a1", "r1", "t", False)),
    QueryType.I3: (("a0", "r0", "t", False), ("a1", "r1", "t", False), ("a2", "r2", "t", False)),
    QueryType.I4: (("a0", "r0", "t", False), ("a1", "r1", "t", False), ("a2", "r2", "t", False),
                   ("a3", "r3", "t", False)),
    QueryType.P1I2: (("a0", "r0", "v0", False), ("v0", "r1", "t", False), ("a1", "r2", "t", False)),
    QueryType.I2P1: (("a0", "r0", "v0", False), ("a1", "r1", "v0", False), ("v0", "r2", "t", False)),
    QueryType.U2: (("a0", "r0", "t", False), ("a1", "r1", "t", False)),
    QueryType.U2P1: (("a0", "r0", "v0", False), ("a1", "r1", "v0", False), ("v0", "r2", "t", False)),
    QueryType.IN2: (("a0", "r0", "t", False), ("a1", "r1", "t", True)),
    QueryType.IN3: (("a0", "r0", "t", False), ("a1", "r1", "t", False), ("a2", "r2", "t", True)),
    QueryType.PI2P1N: (("a0", "r0", "v0", False), ("v0", "r1", "t", False), ("a1", "r2", "t", True)),
    # not((a0, r0, V) and (V, r1, T)) and (a1, r2, T); V is bound inside the negation
    QueryType.NU2P1: (("a0", "r0", "v0", True), ("v0", "r1", "t", True), ("a1", "r2", "t", False)),
    QueryType.IN2P1: (("a0", "r0", "v0", False), ("a1", "r1", "v0", True), ("v0", "r2", "t", False)),
}

_UNION_BRANCHES: dict[QueryType, tuple[frozenset, ...]] = {
    QueryType.U2: (frozenset({0}), frozenset({1})),
    QueryType.U2P1: (frozenset({0, 2}), frozenset({1, 2})),
}

NEGATION_TYPES = frozenset({QueryType.IN2, QueryType.IN3, QueryType.PI2P1N, QueryType.NU2P1, QueryType.IN2P1})
UNION_TYPES = frozenset(_UNION_BRANCHES)
# Types a partial-inference pair can reduce to (the negation-free templates).
POSITIVE_TYPES = tuple(t for t in QueryType if t not in NEGATION_TYPES)


def arity(qtype: QueryType) -> tuple[int, int]:
    """(number of anchors, number of relations) of a template."""
    tpl = _TEMPLATES[QueryType(qtype)]
    anchors = {x for a in tpl for x in (a[0], a[2]) if x.startswith("a")}
    return len(anchors), len(tpl)


def template(qtype: QueryType) -> tuple[tuple[str, str, str, bool], ...]:
    return _TEMPLATES[QueryType(qtype)]


@dataclass(frozen=True)
class Query:
    type: QueryType
    atoms: tuple[Atom, ...]

    @property
    def anchors(self) -> tuple[int, ...]:
        found: dict[int, int] = {}
        for atom in self.atoms:
            for n in (atom.subject, atom.object):
                if isinstance(n, Anchor):
                    found[n.index] = n.entity
        return tuple(found[i] for i in sorted(found))

    @property
    def relations(self) -> tuple[int, ...]:
        return tuple(a.relation for a in self.atoms)

    @property
    def variables(self) -> tuple[Var, ...]:
        found = {n for a in self.atoms for n in (a.subject, a.object) if isinstance(n, Var)}
        return tuple(sorted(found))

    @property
    def positive_variables(self) -> tuple[Var, ...]:
        """Variables bound existentially at the top level (i.e. occurring in a
        positive atom).  Variables seen only under negation are bound inside it."""
        found = {n for a in self.atoms if not a.negated for n in (a.subject, a.object) if isinstance(n, Var)}
        return tuple(sorted(found))

    @property
    def dnf(self) -> tuple[frozenset, ...]:
        return dnf_branches(self)

    @property
    def is_union(self) -> bool:
        return self.type in UNION_TYPES

    @property
    def has_negation(self) -> bool:
        return any(a.negated for a in self.atoms)

    def positive_atoms(self) -> list[int]:
        return [i for i, a in enumerate(self.atoms) if not a.negated]

    def key(self) -> tuple:
        return (self.type.value, self.anchors, self.relations)


def instantiate(qtype, anchors: Sequence[int], relations: Sequence[int]) -> Query:
    """Build the canonical atom list of ``qtype`` for the given anchors/relations."""
    qtype = QueryType(qtype)
    n_anchor, n_rel = arity(qtype)
    if len(anchors) != n_anchor or len(relations) != n_rel:
        raise ValueError(
            f"{qtype.value} needs {n_anchor} anchor(s) and {n_rel} relation(s), "
            f"got {len(anchors)} and {len(relations)}"
        )

    def node(tok: str) -> Node:
        if tok == "t":
            return TARGET
        k = int(tok[1:])
        return Anchor(k, int(anchors[k])) if tok[0] == "a" else Var(k)

    atoms = tuple(Atom(node(s), int(relations[int(r[1:])]), node(o), neg) for s, r, o, neg in _TEMPLATES[qtype])
    return Query(qtype, atoms)


def dnf_branches(query: Query) -> tuple[frozenset, ...]:
    """Union-free conjunctive branches as sets of atom indexes.

    2nu1p stays a single branch: its disjunction of negated atoms sits under a
    universally quantified variable, i.e. it is the negation of a 2p pattern.
    """
    branches = _UNION_BRANCHES.get(query.type)
    if branches is None:
        return (frozenset(range(len(query.atoms))),)
    return branches


def de_morgan_form(query: Query) -> list[list[int]]:
    """Disjuncts of negated atoms for 2nu1p, each conjoined with the positive
    atoms: ``forall V. (not A0 or not A1) and A2``."""
    neg = [i for i, a in enumerate(query.atoms) if a.negated]
    pos = query.positive_atoms()
    if query.type is not QueryType.NU2P1:
        return [neg + pos]
    return [[i] + pos for i in neg]


def hop_count(query: Query, branch: Iterable[int]) -> int:
    return sum(1 for i in branch if not query.atoms[i].negated)


@dataclass(frozen=True)
class QaPair:
    query: Query
    answer: int


# ---------------------------------------------------------------- JSON lines


class QueryFormatError(ValueError):
    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


def _node_ref(n: Node):
    if n is TARGET:
        return "target"
    if isinstance(n, Anchor):
        return {"anchor": n.entity}
    return {"var": n.index}


def query_to_dict(query: Query, answers: dict | None = None) -> dict:
    out = {
        "type": query.type.value,
        "atoms": [
            {"s": _node_ref(a.subject), "r": a.relation, "o": _node_ref(a.object), "neg": a.negated}
            for a in query.atoms
        ],
    }
    if answers is not None:
        out["answers"] = {k: sorted(int(x) for x in v) for k, v in answers.items()}
    return out


def serialize_query(query: Query, answers: dict | None = None) -> str:
    return json.dumps(query_to_dict(query, answers), sort_keys=True, separators=(",", ":"))


def _parse_node(ref, path: str, anchor_slots: dict) -> Node:
    if ref == "target":
        return TARGET
    if isinstance(ref, dict) and len(ref) == 1:
        ((k, v),) = ref.items()
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise QueryFormatError(path + "." + k, "expected a non-negative integer")
        if k == "var":
            return Var(v)
        if k == "anchor":
            return ("anchor", v)
    raise QueryFormatError(path, f"bad node reference {ref!r}")


def query_from_dict(obj: dict) -> tuple[Query, dict]:
    """Inverse of :func:`query_to_dict`; returns ``(query, answers)``."""
    if not isinstance(obj, dict):
        raise QueryFormatError("$", "expected an object")
    tag = obj.get("type")
    try:
        qtype = QueryType(tag)
    except ValueError:
        raise QueryFormatError("$.type", f"unknown query type {tag!r}") from None
    raw_atoms = obj.get("atoms")
    if not isinstance(raw_atoms, list):
        raise QueryFormatError("$.atoms", "expected a list")
    tpl = _TEMPLATES[qtype]
    if len(raw_atoms) != len(tpl):
        raise QueryFormatError("$.atoms", f"{qtype.value} has {len(tpl)} atoms, got {len(raw_atoms)}")
    anchors: dict[int, int] = {}
    relations: list[int] = []
    for i, (raw, (ts, _, to, tneg)) in enumerate(zip(raw_atoms, tpl)):
        path = f"$.atoms[{i}]"
        if not isinstance(raw, dict):
            raise QueryFormatError(path, "expected an object")
        for fld in ("s", "r", "o"):
            if fld not in raw:
                raise QueryFormatError(f"{path}.{fld}", "missing field")
        rel = raw["r"]
        if not isinstance(rel, int) or isinstance(rel, bool) or rel < 0:
            raise QueryFormatError(f"{path}.r", "expected a non-negative integer")
        neg = raw.get("neg", False)
        if not isinstance(neg, bool):
            raise QueryFormatError(f"{path}.neg", "expected a boolean")
        if neg != tneg:
            raise QueryFormatError(f"{path}.neg", f"{qtype.value} template expects neg={tneg}")
        for fld, tok in (("s", ts), ("o", to)):
            node = _parse_node(raw[fld], f"{path}.{fld}", anchors)
            expected = "target" if tok == "t" else ("anchor" if tok[0] == "a" else "var")
            if tok == "t":
                ok = node is TARGET
            elif tok[0] == "a":
                ok = isinstance(node, tuple)
                if ok:
                    slot = int(tok[1:])
                    if anchors.setdefault(slot, node[1]) != node[1]:
                        raise QueryFormatError(f"{path}.{fld}", "inconsistent anchor")
            else:
                ok = isinstance(node, Var) and node.index == int(tok[1:])
            if not ok:
                raise QueryFormatError(f"{path}.{fld}", f"expected {expected} for {qtype.value} template")
        relations.append(rel)
    query = instantiate(qtype, [anchors[k] for k in sorted(anchors)], relations)
    answers = obj.get("answers", {})
    if not isinstance(answers, dict):
        raise QueryFormatError("$.answers", "expected an object")
    parsed = {}
    for k, v in answers.items():
        if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            raise QueryFormatError(f"$.answers.{k}", "expected a list of integers")
        parsed[k] = v
    return query, parsed


def parse_query(line: str) -> tuple[Query, dict]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise QueryFormatError("$", f"invalid JSON: {exc}") from None
    return query_from_dict(obj)


def read_queries(path) -> list[tuple[Query, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(parse_query(line))
            except QueryFormatError as exc:
                raise QueryFormatError(f"line {lineno} {exc.field_path}", str(exc).split(": ", 1)[-1]) from None
    return out


def write_queries(path, items: Iterable[tuple[Query, dict]]) -> None:
    items = list(items)
    atomic_write(path, lambda fh: fh.writelines(serialize_query(q, a) + "\n" for q, a in items))
