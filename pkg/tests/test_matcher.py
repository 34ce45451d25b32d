import random

from hypothesis import given, settings
from hypothesis import strategies as st

from cqa_hardness.matcher import (
    Matcher,
    Provenance,
    answers,
    enumerate_trees,
    intermediate_cardinality,
    minimal_tree,
    negative_tree_counts,
)
from cqa_hardness.queries import QaPair, QueryType, instantiate
from oracles import brute_answers, random_grounded_query, random_split
from toy import build_split, movie_query, movie_split


def _names(split, ids):
    return {split.symbols.entities[i] for i in ids}


class TestMovieExample:
    def setup_method(self):
        self.split = movie_split()
        self.query = movie_query(self.split)

    def test_answers(self):
        assert _names(self.split, answers(self.query, self.split.full)) == {"AS", "JB", "KC", "KD"}

    def test_train_answers(self):
        assert _names(self.split, answers(self.query, self.split.train)) == set()

    def test_one_tree_per_answer(self):
        for name in ("AS", "JB", "KC", "KD"):
            trees = enumerate_trees(QaPair(self.query, self.split.symbols.entity_id(name)), self.split)
            assert len(trees) == 1

    def test_kd_tree(self):
        kd = self.split.symbols.entity_id("KD")
        tree = minimal_tree(QaPair(self.query, kd), self.split)
        assert tree.provenance == (Provenance.TRAIN, Provenance.TRAIN, Provenance.MISSING)
        assert tree.missing_count == 1 and tree.hops == 3
        assert _names(self.split, tree.values) == {"Spiderman2"}

    def test_cardinality(self):
        # Spiderman2 and WhenInRome can be reached through training edges.
        assert intermediate_cardinality(self.query, self.split.train) == 2


class TestSmallCases:
    def test_path_answers(self):
        split = build_split([("a", "r", "b"), ("b", "r", "c")], [])
        a = split.symbols.entity_id("a")
        r = 2 * split.symbols.relation_id("r")
        assert _names(split, answers(instantiate("2p", [a], [r, r]), split.full)) == {"c"}
        assert answers(instantiate("3p", [a], [r, r, r]), split.full) == set()

    def test_negation(self):
        split = build_split([("a", "r", "x"), ("a", "r", "y"), ("b", "s", "y")], [])
        e = split.symbols.entity_id
        r, s = 2 * split.symbols.relation_id("r"), 2 * split.symbols.relation_id("s")
        assert _names(split, answers(instantiate("2in", [e("a"), e("b")], [r, s]), split.full)) == {"x"}

    def test_union(self):
        split = build_split([("a", "r", "x"), ("b", "s", "y")], [])
        e = split.symbols.entity_id
        r, s = 2 * split.symbols.relation_id("r"), 2 * split.symbols.relation_id("s")
        assert _names(split, answers(instantiate("2u", [e("a"), e("b")], [r, s]), split.full)) == {"x", "y"}

    def test_union_tree_per_branch(self):
        split = build_split([("a", "r", "x")], [("b", "s", "x")])
        e = split.symbols.entity_id
        r, s = 2 * split.symbols.relation_id("r"), 2 * split.symbols.relation_id("s")
        q = instantiate("2u", [e("a"), e("b")], [r, s])
        trees = enumerate_trees(QaPair(q, e("x")), split)
        assert sorted(t.branch for t in trees) == [0, 1]
        assert minimal_tree(QaPair(q, e("x")), split).missing_count == 0

    def test_negative_tree_counts(self):
        split = build_split([("a", "r", "x"), ("b", "s", "y")], [("a", "r", "y")])
        e = split.symbols.entity_id
        r, s = 2 * split.symbols.relation_id("r"), 2 * split.symbols.relation_id("s")
        q = instantiate("2in", [e("a"), e("b")], [r, s])
        tree = minimal_tree(QaPair(q, e("x")), split)
        assert negative_tree_counts(q, tree, split) == {"train": 1, "missing": 0}


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.sampled_from(list(QueryType)))
def test_answers_match_brute_force(seed, qtype):
    rng = random.Random(seed)
    split = random_split(rng, rng.randint(6, 14), rng.randint(1, 3), rng.randint(15, 60))
    made = random_grounded_query(rng, qtype, split.full)
    if made is None:
        return
    query, target = made
    expected = brute_answers(query, split.full)
    assert answers(query, split.full) == expected
    if qtype.value not in ("2in", "3in", "2pi1pn", "2nu1p", "2in1p"):
        assert target in expected


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.sampled_from([t for t in QueryType if "n" not in t.value]))
def test_monotone_in_graph(seed, qtype):
    rng = random.Random(seed)
    split = random_split(rng, 12, 2, 50)
    made = random_grounded_query(rng, qtype, split.full)
    if made is None:
        return
    query, _ = made
    assert answers(query, split.train) <= answers(query, split.full)


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_minimal_tree_deterministic(seed):
    rng = random.Random(seed)
    split = random_split(rng, 10, 2, 45)
    made = random_grounded_query(rng, QueryType.I2P1, split.full)
    if made is None:
        return
    query, _ = made
    for t in sorted(answers(query, split.full)):
        qa = QaPair(query, t)
        a = minimal_tree(qa, split)
        b = minimal_tree(qa, split, matcher=Matcher(query, split))
        assert a == b
        assert a.missing_count == min(x.missing_count for x in enumerate_trees(qa, split))
