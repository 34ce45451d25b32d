import itertools
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from cqa_hardness.evaluation import (
    AnswerSets,
    EvalRecord,
    PrecomputedRanks,
    cardinality_strata,
    hits_at,
    imbalance_report,
    imbalance_text,
    mann_whitney_u,
    mrr,
    pairwise_u_tests,
    reciprocal_ranks,
    stratified_report,
)
from cqa_hardness.hardness import FULL_LABEL, partial
from cqa_hardness.queries import QaPair, QueryType, instantiate
from cqa_hardness.solver import Ranking
from toy import build_split


def _ranking(order, n=None):
    """Ranking whose entities in ``order`` come first, best first."""
    n = n or max(order) + 1
    scores = np.zeros(n)
    for i, e in enumerate(order):
        scores[e] = 1.0 - i / (len(order) + 1)
    return Ranking(scores)


class TestMrr:
    def test_two_hard_answers(self):
        # filtering drops 0 and 1 when ranking 2, leaving only 3 above it
        r = _ranking([0, 1, 3, 2])
        sets = AnswerSets(easy=frozenset({1}), hard=frozenset({0, 2}))
        assert mrr([(r, sets)]) == 0.75

    def test_outer_mean(self):
        a = (_ranking([0, 1]), AnswerSets(frozenset(), frozenset({0})))
        b = (_ranking([1, 0]), AnswerSets(frozenset(), frozenset({0})))
        assert mrr([a, b]) == 0.75

    def test_unfiltered(self):
        r = _ranking([1, 0, 2])
        sets = AnswerSets(easy=frozenset({1}), hard=frozenset({0}))
        assert mrr([(r, sets)], filtering=False) == 0.5
        assert mrr([(r, sets)], filtering=True) == 1.0

    def test_empty_hard_excluded(self):
        good = (_ranking([0]), AnswerSets(frozenset(), frozenset({0})))
        empty = (_ranking([0]), AnswerSets(frozenset({0}), frozenset()))
        assert mrr([good, empty]) == 1.0

    def test_disjoint_sets(self):
        with pytest.raises(ValueError):
            AnswerSets(frozenset({1}), frozenset({1}))

    def test_hits(self):
        r = _ranking([5, 4, 3, 2, 1, 0])
        sets = AnswerSets(frozenset(), frozenset({0}))
        assert hits_at([(r, sets)], 3) == 0.0
        assert hits_at([(r, sets)], 10) == 1.0

    @given(st.lists(st.floats(0, 1), min_size=3, max_size=20), st.data())
    def test_filtering_monotone(self, scores, data):
        r = Ranking(np.array(scores))
        n = len(scores)
        hard = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n))
        easy = data.draw(st.sets(st.integers(0, n - 1), max_size=n)) - hard
        filt = reciprocal_ranks(r, sorted(hard), easy, filtering=True)
        raw = reciprocal_ranks(r, sorted(hard), easy, filtering=False)
        assert all(f >= u for f, u in zip(filt, raw))
        assert 0 < mrr([(r, AnswerSets(frozenset(easy), frozenset(hard)))]) <= 1

    def test_precomputed(self):
        assert reciprocal_ranks(PrecomputedRanks({3: 4.0}), [3], [1, 2]) == [0.25]


def _toy_records():
    q1 = instantiate("2p", [0], [0, 1])
    q2 = instantiate("2p", [1], [0, 1])
    q3 = instantiate("2p", [2], [0, 1])
    recs = [
        EvalRecord(q1, partial("1p"), (5,), frozenset({5, 6})),
        EvalRecord(q2, partial("1p"), (7, 8), frozenset({7, 8})),
        EvalRecord(q3, FULL_LABEL, (9,), frozenset({9})),
    ]
    n = 12
    rankings = {
        q1: _ranking([5, 6], n),                 # rr 1
        q2: _ranking([7, 0, 8], n),              # rr 1 and 1/2
        q3: _ranking([0, 1, 2, 9], n),           # rr 1/4
    }
    return recs, rankings


class TestStratified:
    def test_cells(self):
        recs, rankings = _toy_records()
        report = stratified_report(recs, rankings)
        assert report.cells[(QueryType.P2, "1p")].mrr == pytest.approx((1.0 + 0.75) / 2)
        assert report.cells[(QueryType.P2, "2p")].mrr == pytest.approx(0.25)
        assert report.overall("2p").pairs == 4

    def test_overall_is_weighted_bucket_mean(self):
        recs, rankings = _toy_records()
        report = stratified_report(recs, rankings)
        cells = [c for (t, _), c in report.cells.items() if t is QueryType.P2]
        weighted = sum(c.mrr * c.queries for c in cells) / sum(c.queries for c in cells)
        assert report.overall("2p").mrr == pytest.approx(weighted)

    def test_text_layout(self):
        recs, rankings = _toy_records()
        text = stratified_report(recs, rankings).to_text()
        header = text.splitlines()[0].split()
        assert header == ["type", "ovr", "1p", "2p", "pairs"]
        assert "87.5" in text and "25.0" in text

    def test_impossible_cell(self):
        recs, rankings = _toy_records()
        report = stratified_report(recs, rankings)
        assert report.cell_text(QueryType.P2, "3p") == "-"

    def test_missing_ranking(self):
        recs, rankings = _toy_records()
        rankings.pop(recs[0].query)
        with pytest.raises(KeyError):
            stratified_report(recs, rankings)

    def test_label_mismatch(self):
        q = instantiate("2p", [0], [0, 1])
        rec = EvalRecord(q, partial("2i"), (1,), frozenset({1}))
        with pytest.raises(ValueError):
            stratified_report([rec], {q: _ranking([1])})

    def test_oracle_and_random_buckets_separate(self):
        rng = np.random.default_rng(0)
        n = 200
        recs, rankings = [], {}
        for i in range(40):
            q = instantiate("2p", [i], [0, 1])
            t = int(rng.integers(n))
            label = partial("1p") if i % 2 else FULL_LABEL
            scores = np.zeros(n)
            if i % 2:
                scores[t] = 1.0
            else:
                scores = rng.random(n)
            recs.append(EvalRecord(q, label, (t,), frozenset({t})))
            rankings[q] = Ranking(scores)
        report = stratified_report(recs, rankings)
        assert report.cells[(QueryType.P2, "1p")].mrr == 1.0
        assert report.cells[(QueryType.P2, "2p")].mrr < 0.3


class TestStrata:
    def test_bands(self):
        split = build_split([("a", "r", "b"), ("a", "r", "c")], [("b", "r", "x"), ("z", "r", "y")])
        e = split.symbols.entity_id
        q_two = instantiate("2p", [e("a")], [0, 0])    # two train candidates
        q_none = instantiate("2p", [e("z")], [0, 0])   # no train candidate
        recs = [EvalRecord(q_two, partial("1p"), (e("x"),), frozenset({e("x")})),
                EvalRecord(q_none, FULL_LABEL, (e("y"),), frozenset({e("y")}))]
        n = split.train.entity_count
        rankings = {q_two: _ranking([e("x")], n), q_none: _ranking([e("y")], n)}
        strata = cardinality_strata(recs, rankings, split.train)
        assert set(strata["2p"]) == {"0", "2-4"}
        assert sum(c.pairs for c in strata["2p"].values()) == 2

    def test_bands_must_start_at_zero(self):
        with pytest.raises(ValueError):
            cardinality_strata([], {}, build_split([("a", "r", "b")], []).train, bands=(1, 5))


class TestImbalance:
    def test_hand_count(self):
        qs = [instantiate("2p", [0], [0, 2]), instantiate("2p", [0], [2, 4]),
              instantiate("2p", [1], [0, 0]), instantiate("2p", [3], [6, 6])]
        rows = imbalance_report([QaPair(q, 9) for q in qs])
        row = rows[QueryType.P2]
        assert (row.anchor, row.anchor_pct) == (0, 50.0)
        # relation names per pair: {0, 1}, {1, 2}, {0}, {3}; ties go to the lower id
        assert (row.relation, row.relation_pct) == (0, 50.0)
        assert row.pairs == 4

    def test_single_query(self):
        rows = imbalance_report([QaPair(instantiate("1p", [4], [2]), 1)])
        assert rows[QueryType.P1].anchor_pct == 100.0 == rows[QueryType.P1].relation_pct

    def test_text(self):
        rows = imbalance_report([QaPair(instantiate("1p", [4], [2]), 1)])
        text = imbalance_text(rows, entity_name=lambda e: f"E{e}", relation_name=lambda r: f"R{r}")
        assert "E4" in text and "R1" in text


def _pair_count_u(a, b):
    return sum(1.0 if x > y else 0.5 if x == y else 0.0 for x in a for y in b)


def _pair_count_p(a, b):
    """Two-sided permutation p-value with U computed by pair counting."""
    pooled = list(a) + list(b)
    mu = len(a) * len(b) / 2
    obs = abs(_pair_count_u(a, b) - mu)
    hits = total = 0
    for idx in itertools.combinations(range(len(pooled)), len(a)):
        rest = [pooled[i] for i in range(len(pooled)) if i not in idx]
        total += 1
        hits += abs(_pair_count_u([pooled[i] for i in idx], rest) - mu) >= obs - 1e-9
    return hits / total


class TestMannWhitney:
    def test_identical(self):
        res = mann_whitney_u([0.5, 0.25, 1.0], [0.5, 0.25, 1.0])
        assert res.p_value == 1.0

    def test_degenerate(self):
        res = mann_whitney_u([1.0, 1.0], [1.0, 1.0, 1.0])
        assert res.p_value == 1.0 and res.degenerate

    def test_separated(self):
        assert mann_whitney_u([1, 2, 3], [4, 5, 6]).u == 0

    def test_exact_small(self):
        res = mann_whitney_u([1, 1, 1, 1], [0.1, 0.1, 0.1, 0.1])
        assert res.method == "exact"
        assert res.p_value == pytest.approx(2 / 70)

    def test_empty(self):
        with pytest.raises(ValueError):
            mann_whitney_u([], [1.0])

    @given(st.lists(st.sampled_from([1.0, 0.5, 1 / 3, 0.25, 0.1]), min_size=1, max_size=7),
           st.lists(st.sampled_from([1.0, 0.5, 1 / 3, 0.25, 0.1]), min_size=1, max_size=7))
    def test_exact_matches_pair_counting_oracle(self, a, b):
        res = mann_whitney_u(a, b)
        if res.degenerate:
            return
        assert res.u_a == _pair_count_u(a, b)
        assert res.p_value == pytest.approx(_pair_count_p(a, b), abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=9, max_size=40), st.lists(st.floats(0, 1), min_size=9, max_size=40))
    def test_normal_matches_scipy(self, a, b):
        res = mann_whitney_u(a, b)
        if res.degenerate:
            return
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert res.u_a == pytest.approx(ref.statistic)
        assert res.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.lists(st.floats(0, 1), min_size=1, max_size=12))
    def test_symmetric(self, a, b):
        assert mann_whitney_u(a, b).p_value == mann_whitney_u(b, a).p_value

    def test_pairwise(self):
        rng = random.Random(0)
        groups = {"1p": [rng.random() for _ in range(20)], "full": [rng.random() / 4 for _ in range(20)]}
        tests = pairwise_u_tests(groups)
        assert tests[("1p", "full")] is tests[("full", "1p")]
        assert tests[("1p", "full")].p_value < 0.05
