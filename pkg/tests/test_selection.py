import numpy as np
import pytest

from spdgat import selection
from spdgat.errors import SingularSystem
from spdgat.graphs import from_matrix

from conftest import random_correlation

CFG = selection.SelectionConfig(k_per_class=2, folds=2)


def conn_from_corr(corr, subject_id, label):
    return from_matrix(corr, subject_id, label)


def two_node_conn(w, subject_id, label):
    return from_matrix(np.array([[1.0, w], [w, 1.0]]), subject_id, label)


def log_2x2_exchange(w):
    """Independent closed form for log([[1, w], [w, 1]]): eigenpairs are known."""
    a = 0.5 * (np.log(1 + w) + np.log(1 - w))
    b = 0.5 * (np.log(1 + w) - np.log(1 - w))
    return np.array([[a, b], [b, a]])


class TestBuildPairFeatures:
    def test_identical_pair_is_zero(self, rng):
        corr = random_correlation(rng, 4)
        pair, = selection.build_pair_features(
            [conn_from_corr(corr, "a", 1), conn_from_corr(corr, "b", 1)], CFG
        )
        assert np.allclose(pair.tangent_diff_vec, 0.0)
        assert pair.lerm_distance == pytest.approx(0.0, abs=1e-18)
        assert pair.target == 0.0

    def test_three_samples_three_pairs(self, rng):
        conns = [conn_from_corr(random_correlation(rng, 4), f"s{i}", 0) for i in range(3)]
        assert len(selection.build_pair_features(conns, CFG)) == 3

    def test_pair_count_formula(self, rng):
        conns = [conn_from_corr(random_correlation(rng, 4), f"s{i}", 0) for i in range(6)]
        assert len(selection.build_pair_features(conns, CFG)) == 15

    def test_label_difference_target(self, rng):
        corr = random_correlation(rng, 4)
        pair, = selection.build_pair_features(
            [conn_from_corr(corr, "a", 1), conn_from_corr(corr, "b", 3)], CFG
        )
        assert pair.target == 2.0

    def test_tangent_diff_matches_log_difference(self, rng):
        wa, wb = 0.4, 0.7
        pair, = selection.build_pair_features(
            [two_node_conn(wa, "a", 0), two_node_conn(wb, "b", 1)], CFG
        )
        diff = log_2x2_exchange(wa) - log_2x2_exchange(wb)
        expected_vec = np.array([diff[0, 0], np.sqrt(2) * diff[0, 1], diff[1, 1]])
        np.testing.assert_allclose(pair.tangent_diff_vec, expected_vec, atol=1e-12)
        assert pair.lerm_distance == pytest.approx(float(np.sum(diff * diff)), rel=1e-10)

    def test_centrality_ablation_shrinks_features(self, rng):
        conns = [conn_from_corr(random_correlation(rng, 5), f"s{i}", 0) for i in range(2)]
        all_cfg = selection.SelectionConfig(centrality="all")
        dc_cfg = selection.SelectionConfig(centrality="dc")
        pair_all, = selection.build_pair_features(conns, all_cfg)
        pair_dc, = selection.build_pair_features(conns, dc_cfg)
        assert pair_all.centrality_diff.size == 15
        assert pair_dc.centrality_diff.size == 5


class TestRegressor:
    def test_all_zero_targets_give_zero_predictions(self, rng):
        conns = [conn_from_corr(random_correlation(rng, 4), f"s{i}", 0) for i in range(4)]
        pairs = selection.build_pair_features(conns, CFG)
        reg = selection.fit_difference_regressor(pairs, ridge_lambda=1e-3)
        x = pairs[0].vector()
        assert reg.predict(x) == pytest.approx(0.0, abs=1e-9)

    def test_two_point_interpolation_slope_one(self):
        # single feature (the distance slot), two exact points
        pairs = [
            selection.PairFeature("a", "b", np.array([]), np.array([]), 0.0, 0.0),
            selection.PairFeature("c", "d", np.array([]), np.array([]), 1.0, 1.0),
        ]
        reg = selection.fit_difference_regressor(pairs, ridge_lambda=0.0)
        assert reg.coef[0] == pytest.approx(1.0, abs=1e-12)
        assert reg.intercept == pytest.approx(0.0, abs=1e-12)

    def test_planted_linear_law_recovered(self, rng):
        # oracle: generate y = beta . x exactly, then compare coefficients
        n, p = 80, 12
        x = rng.standard_normal((n, p))
        beta = rng.standard_normal(p)
        pairs = [
            selection.PairFeature(f"i{k}", f"j{k}", x[k, :-1], np.array([]), x[k, -1], float(x[k] @ beta))
            for k in range(n)
        ]
        reg = selection.fit_difference_regressor(pairs, ridge_lambda=1e-9)
        np.testing.assert_allclose(reg.coef, beta, atol=1e-6)

    def test_singular_system_without_ridge(self):
        # two features, always equal: rank-deficient design
        pairs = [
            selection.PairFeature("a", "b", np.array([1.0, 1.0]), np.array([]), 0.0, 0.5),
            selection.PairFeature("c", "d", np.array([2.0, 2.0]), np.array([]), 0.0, 1.0),
            selection.PairFeature("e", "f", np.array([3.0, 3.0]), np.array([]), 0.0, 1.5),
        ]
        with pytest.raises(SingularSystem):
            selection.fit_difference_regressor(pairs, ridge_lambda=0.0)
        selection.fit_difference_regressor(pairs, ridge_lambda=1e-6)  # regularized path works

    def test_dual_path_matches_primal(self, rng):
        lam = 0.5
        n, p = 12, 5
        x = rng.standard_normal((n, p))
        y = rng.standard_normal(n)

        def make_pairs(xm):
            return [
                selection.PairFeature("a", "b", xm[k, :-1], np.array([]), xm[k, -1], float(y[k]))
                for k in range(n)
            ]

        primal = selection.fit_difference_regressor(make_pairs(x), lam)
        # force the dual branch by padding features beyond the sample count
        pad = np.zeros((n, 20))
        wide = np.hstack([x, pad])
        dual = selection.fit_difference_regressor(make_pairs(wide), lam)
        np.testing.assert_allclose(dual.coef[:p], primal.coef, atol=1e-8)
        np.testing.assert_allclose(dual.coef[p:], 0.0, atol=1e-8)


class TestScoreSamples:
    def test_zero_regressor_scores_zero(self, rng):
        train = [conn_from_corr(random_correlation(rng, 4), f"t{i}", 0) for i in range(3)]
        hold = [conn_from_corr(random_correlation(rng, 4), f"h{i}", 0) for i in range(2)]
        reg = selection.Regressor(coef=np.zeros(4 + 6 + 12 + 1 - 13), intercept=0.0)
        # feature length: tangent d(d+1)/2=10 + centrality 3d=12 + 1 = 23
        reg = selection.Regressor(coef=np.zeros(23), intercept=0.0)
        scores = selection.score_samples(reg, train, hold, CFG)
        assert all(v == 0.0 for v in scores.values())

    def test_single_holdout_no_averaging(self, rng):
        train = [conn_from_corr(random_correlation(rng, 4), "t0", 0)]
        hold = [conn_from_corr(random_correlation(rng, 4), "h0", 0)]
        reg = selection.Regressor(coef=np.zeros(23), intercept=0.7)
        scores = selection.score_samples(reg, train, hold, CFG)
        assert scores["t0"] == pytest.approx(0.7)

    def test_hand_built_two_by_two(self):
        # regressor reads only the squared log-distance feature (last slot);
        # the expected predictions are assembled by hand from the closed-form
        # 2x2 logs
        train = [two_node_conn(0.2, "t0", 0), two_node_conn(0.5, "t1", 1)]
        hold = [two_node_conn(0.3, "h0", 0), two_node_conn(0.6, "h1", 1)]
        # feature length for d=2: tangent 3 + centrality 6 + lerm 1 = 10
        coef = np.zeros(10)
        coef[-1] = 2.0
        reg = selection.Regressor(coef=coef, intercept=0.1)

        def lerm(wa, wb):
            diff = log_2x2_exchange(wa) - log_2x2_exchange(wb)
            return float(np.sum(diff * diff))

        expected_t0 = np.mean([0.1 + 2.0 * lerm(0.2, 0.3), 0.1 + 2.0 * lerm(0.2, 0.6)])
        expected_t1 = np.mean([0.1 + 2.0 * lerm(0.5, 0.3), 0.1 + 2.0 * lerm(0.5, 0.6)])
        scores = selection.score_samples(reg, train, hold, CFG)
        assert scores["t0"] == pytest.approx(expected_t0, rel=1e-9)
        assert scores["t1"] == pytest.approx(expected_t1, rel=1e-9)

    def test_holdout_labels_never_matter(self, rng):
        # permuting holdout labels cannot change anything: the interface only
        # exposes holdout features
        train = [conn_from_corr(random_correlation(rng, 4), f"t{i}", i % 2) for i in range(4)]
        hold_a = [conn_from_corr(random_correlation(rng, 4), f"h{i}", 0) for i in range(3)]
        hold_b = [
            selection.Connectome if False else h.__class__(h.weights, h.node_features, 1 - h.label, h.subject_id)
            for h in hold_a
        ]
        pairs = selection.build_pair_features(train, CFG)
        reg = selection.fit_difference_regressor(pairs, 1e-3)
        s_a = selection.score_samples(reg, train, hold_a, CFG)
        s_b = selection.score_samples(reg, train, hold_b, CFG)
        assert s_a == s_b


class TestSelectTopK:
    def test_k_larger_than_class(self):
        scores = {"a": 0.1, "b": 0.2, "c": 0.3}
        labels = {"a": 0, "b": 0, "c": 1}
        assert selection.select_top_k_stratified(scores, labels, 5) == ["a", "b", "c"]

    def test_per_class_minimum(self):
        scores = {"a": 0.5, "b": 0.2, "c": 0.9, "d": 0.1}
        labels = {"a": 0, "b": 0, "c": 1, "d": 1}
        assert selection.select_top_k_stratified(scores, labels, 1) == ["b", "d"]

    def test_tie_broken_lexicographically(self):
        scores = {"zed": 0.5, "ann": 0.5, "mid": 0.5}
        labels = {"zed": 0, "ann": 0, "mid": 0}
        assert selection.select_top_k_stratified(scores, labels, 2) == ["ann", "mid"]

    def test_deterministic_subset(self, rng):
        scores = {f"s{i}": float(rng.random()) for i in range(10)}
        labels = {f"s{i}": i % 3 for i in range(10)}
        first = selection.select_top_k_stratified(scores, labels, 2)
        second = selection.select_top_k_stratified(dict(scores), dict(labels), 2)
        assert first == second
        assert set(first) <= set(scores)


class TestOversample:
    def make(self, label, sid):
        return conn_from_corr(np.eye(3), sid, label)

    def test_balanced_unchanged(self):
        samples = [self.make(0, "a"), self.make(0, "b"), self.make(1, "c"), self.make(1, "d")]
        assert selection.random_oversample(samples, seed=0) == samples

    def test_single_minority_duplicated(self):
        samples = [self.make(0, f"a{i}") for i in range(4)] + [self.make(1, "b0")]
        out = selection.random_oversample(samples, seed=0)
        labels = [s.label for s in out]
        assert labels.count(0) == 4 and labels.count(1) == 4
        assert [s.subject_id for s in out if s.label == 1] == ["b0"] * 4

    def test_pinned_seed_multiset(self):
        samples = (
            [self.make(0, f"a{i}") for i in range(5)]
            + [self.make(1, f"b{i}") for i in range(2)]
            + [self.make(2, "c0")]
        )
        out1 = selection.random_oversample(samples, seed=42)
        out2 = selection.random_oversample(samples, seed=42)
        ids1 = [s.subject_id for s in out1]
        assert ids1 == [s.subject_id for s in out2]
        counts = {c: sum(1 for s in out1 if s.label == c) for c in (0, 1, 2)}
        assert counts == {0: 5, 1: 5, 2: 5}
        # originals retained
        assert [s.subject_id for s in out1[: len(samples)]] == [s.subject_id for s in samples]

    def test_distinct_set_unchanged(self, rng):
        samples = [self.make(i % 3, f"s{i}") for i in range(7)]
        out = selection.random_oversample(samples, seed=9)
        assert {s.subject_id for s in out} == {s.subject_id for s in samples}


class TestClusterVersusDispersed:
    def test_tight_class_scores_below_diverse_class(self, rng):
        # one class of identical connectomes, one of mutually-distant ones;
        # under the planted-law regressor (prediction grows with the pair
        # distance) the identical class must look more predictable
        base = random_correlation(rng, 6)
        tight = [conn_from_corr(base, f"t{i}", 0) for i in range(4)]
        diverse = [
            conn_from_corr(random_correlation(np.random.default_rng(100 + i), 6), f"d{i}", 1)
            for i in range(4)
        ]
        train_in = tight[:3] + diverse[:3]
        holdout = [tight[3], diverse[3]]
        cfg = selection.SelectionConfig(k_per_class=2, folds=2)
        # feature layout for d=6: tangent 21 + centrality 18 + distance 1
        coef = np.zeros(40)
        coef[-1] = 1.0
        planted = selection.Regressor(coef=coef, intercept=0.0)
        scores = selection.score_samples(planted, train_in, holdout, cfg)
        tight_scores = [scores[f"t{i}"] for i in range(3)]
        diverse_scores = [scores[f"d{i}"] for i in range(3)]
        assert max(tight_scores) <= min(diverse_scores)
