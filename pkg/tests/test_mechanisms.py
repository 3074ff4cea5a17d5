import math

import numpy as np
import pytest
import scipy.sparse as sp

from distunlearn.data_io import LabeledDataset
from distunlearn.mechanisms import (
    FEATURE_RULES,
    RemovalPlan,
    ScoringParams,
    apply_plan,
    plan_from_scores,
    random_removal,
    score_features,
    selective_removal_gaussian,
)


def make_dataset(n1=4, n2=6, d=3, seed=0):
    gen = np.random.default_rng(seed)
    feats = gen.normal(size=(n1 + n2, d))
    labels = np.concatenate([np.ones(n1, dtype=int), np.zeros(n2, dtype=int)])
    group = np.array(["P1"] * n1 + ["P2"] * n2)
    ids = np.array([f"row{i}" for i in range(n1 + n2)], dtype=object)
    return LabeledDataset(features=feats, labels=labels, group=group, row_ids=ids)


class TestRemovalPlan:
    def test_rejects_duplicate_indices(self):
        with pytest.raises(ValueError, match="distinct"):
            RemovalPlan(rule="random", budget_f=2, removed_indices=(1, 1))

    def test_rejects_budget_mismatch(self):
        with pytest.raises(ValueError):
            RemovalPlan(rule="random", budget_f=3, removed_indices=(1, 2))


class TestRandomRemoval:
    def test_zero_budget(self):
        assert random_removal(5, 0, seed=7).removed_indices == ()

    def test_full_deletion(self):
        plan = random_removal(5, 5, seed=7)
        assert sorted(plan.removed_indices) == [0, 1, 2, 3, 4]

    def test_deterministic(self):
        a = random_removal(1000, 100, seed=1)
        b = random_removal(1000, 100, seed=1)
        assert a == b

    def test_seed_changes_selection(self):
        a = random_removal(1000, 100, seed=1)
        b = random_removal(1000, 100, seed=2)
        assert a.removed_indices != b.removed_indices

    def test_rejects_overdraw(self):
        with pytest.raises(ValueError):
            random_removal(5, 6, seed=0)

    def test_roughly_uniform(self):
        counts = np.zeros(20)
        for seed in range(300):
            for i in random_removal(20, 5, seed=seed).removed_indices:
                counts[i] += 1
        # each index expected 75 times
        assert counts.min() > 40 and counts.max() < 115


class TestSelectiveRemoval:
    def test_farthest_point_removed(self):
        plan = selective_removal_gaussian([0.1, 5.0, -0.2], [0.0, 0.0], 1)
        assert plan.removed_indices == (1,)

    def test_tie_breaks_to_lower_index(self):
        plan = selective_removal_gaussian([1.0, -1.0], [0.0], 1)
        assert plan.removed_indices == (0,)

    def test_against_full_sort_oracle(self):
        gen = np.random.default_rng(42)
        x1 = gen.normal(0, 1, 200)
        x2 = gen.normal(0.5, 1, 50)
        plan = selective_removal_gaussian(x1, x2, 50)
        scores = np.abs(x1 - x2.mean())
        oracle = set(sorted(range(200), key=lambda i: (-scores[i], i))[:50])
        assert set(plan.removed_indices) == oracle

    def test_nested_in_budget(self):
        gen = np.random.default_rng(1)
        x1 = gen.normal(0, 1, 60)
        x2 = gen.normal(1, 1, 30)
        previous = set()
        for f in range(0, 61, 5):
            current = set(selective_removal_gaussian(x1, x2, f).removed_indices)
            assert previous <= current
            previous = current

    def test_empty_p2_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            selective_removal_gaussian([1.0], [], 1)

    def test_selective_mean_closer_than_random(self):
        # expectation over seeds: surviving selective mean hugs the preserve
        # mean at least as closely as surviving random mean
        gaps_selective, gaps_random = [], []
        for seed in range(200):
            gen = np.random.default_rng(seed)
            x1 = gen.normal(0.0, 1.0, 100)
            x2 = gen.normal(0.5, 1.0, 100)
            mu2_hat = x2.mean()
            f = 40
            sel = selective_removal_gaussian(x1, x2, f)
            kept_sel = np.delete(x1, np.asarray(sel.removed_indices, dtype=int))
            rnd = random_removal(100, f, seed=seed)
            kept_rnd = np.delete(x1, np.asarray(rnd.removed_indices, dtype=int))
            gaps_selective.append(abs(kept_sel.mean() - mu2_hat))
            gaps_random.append(abs(kept_rnd.mean() - mu2_hat))
        assert np.mean(gaps_selective) <= np.mean(gaps_random)


class TestScoreFeatures:
    def test_norm_rule(self):
        rows = np.array([[3.0, 4.0], [0.0, 0.0], [1.0, 0.0]])
        scored = score_features(rows, np.zeros((1, 2)), "norm")
        assert [s.score for s in scored] == [5.0, 0.0, 1.0]

    def test_norm_aliases(self):
        rows = np.array([[3.0, 4.0]])
        for alias in ("tfidf-norm", "l2-norm"):
            assert score_features(rows, rows, alias)[0].score == 5.0

    def test_cosine_distance_endpoints(self):
        p1 = np.array([[1.0, 0.0], [-1.0, 0.0]])
        p2 = np.array([[2.0, 0.0], [0.0, 0.0]])
        scored = score_features(p1, p2, "cos-mu2")
        assert scored[0].score == pytest.approx(0.0, abs=1e-12)
        assert scored[1].score == pytest.approx(2.0, abs=1e-12)

    def test_zero_norm_row_flagged(self):
        p1 = np.array([[0.0, 0.0], [1.0, 0.0]])
        p2 = np.array([[1.0, 0.0]])
        with pytest.warns(UserWarning, match="zero-norm"):
            scored = score_features(p1, p2, "cos-mu2")
        assert scored[0].score == 0.0
        assert scored[0].flag == "zero_norm"
        assert scored[1].flag is None

    def test_lr_cos_prefers_far_from_preserve_close_to_forget(self):
        p1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        p2 = np.array([[0.0, 1.0]])
        scored = score_features(p1, p2, "lr-cos")
        assert scored[0].score > scored[1].score

    def test_knn_ratio_hand_computed(self):
        # query 0.0: own-pool neighbor (self excluded) at distance 1,
        # preserve neighbor at distance 3 -> exp(-1)/exp(-9) = e^8
        p1 = np.array([[0.0], [1.0]])
        p2 = np.array([[3.0]])
        scored = score_features(p1, p2, "knn-ratio", ScoringParams(k=1, sigma=1.0))
        assert scored[0].score == pytest.approx(math.exp(8.0), rel=1e-12)

    def test_knn_k_out_of_range(self):
        p1 = np.zeros((3, 2))
        p2 = np.zeros((2, 2))
        with pytest.raises(ValueError, match="out of range"):
            score_features(p1, p2, "knn-ratio", ScoringParams(k=3))

    def test_knn_default_bandwidth_deterministic(self):
        gen = np.random.default_rng(0)
        p1 = gen.normal(size=(20, 3))
        p2 = gen.normal(size=(30, 3))
        a = score_features(p1, p2, "knn-ratio", ScoringParams(k=5))
        b = score_features(p1, p2, "knn-ratio", ScoringParams(k=5))
        assert a == b

    def test_mahalanobis_matches_direct_computation(self):
        gen = np.random.default_rng(3)
        p1 = gen.normal(size=(5, 3))
        p2 = gen.normal(size=(50, 3))
        params = ScoringParams(ridge_scale=1e-6)
        scored = score_features(p1, p2, "maha-mu2", params)
        cov = np.cov(p2, rowvar=False)
        cov += 1e-6 * np.trace(cov) / 3 * np.eye(3)
        inv = np.linalg.inv(cov)
        mu2 = p2.mean(axis=0)
        for sample, row in zip(scored, p1):
            expected = math.sqrt((row - mu2) @ inv @ (row - mu2))
            assert sample.score == pytest.approx(expected, rel=1e-9)

    def test_mahalanobis_singular_repaired_by_ridge(self):
        # rank-deficient preserve covariance: ridge keeps it solvable
        p2 = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        p1 = np.array([[1.0, 0.0]])
        scored = score_features(p1, p2, "maha-mu2")
        assert np.isfinite(scored[0].score)

    def test_degenerate_identical_rows_rejected(self):
        p2 = np.ones((3, 2))
        p1 = np.array([[1.0, 0.0]])
        with pytest.raises(ValueError, match="singular|ridge"):
            score_features(p1, p2, "maha-mu2")

    def test_lr_maha_is_difference_of_distances(self):
        gen = np.random.default_rng(5)
        p1 = gen.normal(1.0, 1.0, size=(10, 2))
        p2 = gen.normal(0.0, 1.0, size=(40, 2))
        lr = score_features(p1, p2, "lr-maha")
        to_p2 = score_features(p1, p2, "maha-mu2")
        cov = np.cov(p2, rowvar=False)
        cov += 1e-6 * np.trace(cov) / 2 * np.eye(2)
        inv = np.linalg.inv(cov)
        mu1 = p1.mean(axis=0)
        for s_lr, s_d2, row in zip(lr, to_p2, p1):
            d1 = math.sqrt((row - mu1) @ inv @ (row - mu1))
            assert s_lr.score == pytest.approx(s_d2.score - d1, rel=1e-9, abs=1e-12)

    def test_random_rule_is_seeded(self):
        p1 = np.zeros((10, 2))
        a = score_features(p1, p1, "random", ScoringParams(seed=3))
        b = score_features(p1, p1, "random", ScoringParams(seed=3))
        c = score_features(p1, p1, "random", ScoringParams(seed=4))
        assert a == b
        assert [s.score for s in a] != [s.score for s in c]

    def test_score_length_matches_p1_rows_for_every_rule(self):
        gen = np.random.default_rng(8)
        p1 = gen.normal(size=(12, 4))
        p2 = gen.normal(size=(25, 4))
        for rule in FEATURE_RULES:
            scored = score_features(p1, p2, rule, ScoringParams(k=4))
            assert len(scored) == 12

    def test_sparse_input_matches_dense(self):
        gen = np.random.default_rng(2)
        p1 = gen.normal(size=(8, 5)) * (gen.random((8, 5)) > 0.5)
        p2 = gen.normal(size=(15, 5)) * (gen.random((15, 5)) > 0.5)
        for rule in ("norm", "cos-mu2", "lr-cos"):
            dense = [s.score for s in score_features(p1, p2, rule)]
            sparse = [s.score for s in
                      score_features(sp.csr_matrix(p1), sp.csr_matrix(p2), rule)]
            assert sparse == pytest.approx(dense, rel=1e-12, abs=1e-12)

    def test_unknown_rule_rejected(self):
        with pytest.raises(ValueError, match="unknown scoring rule"):
            score_features(np.zeros((1, 1)), np.zeros((1, 1)), "entropy")

    def test_empty_p2_rejected_when_needed(self):
        with pytest.raises(ValueError, match="non-empty"):
            score_features(np.ones((2, 2)), np.empty((0, 2)), "cos-mu2")


class TestPlanFromScores:
    def test_top_f_with_tie_break(self):
        scored = score_features(np.array([[2.0], [3.0], [2.0]]),
                                np.zeros((1, 1)), "norm")
        plan = plan_from_scores(scored, "norm", 2)
        assert plan.removed_indices == (1, 0)

    def test_nested_in_budget(self):
        gen = np.random.default_rng(5)
        scored = score_features(gen.normal(size=(30, 3)), gen.normal(size=(10, 3)), "norm")
        previous = set()
        for f in range(31):
            current = set(plan_from_scores(scored, "norm", f).removed_indices)
            assert previous <= current
            previous = current


class TestApplyPlan:
    def test_empty_plan_is_identity(self):
        ds = make_dataset()
        out = apply_plan(ds, RemovalPlan(rule="random", budget_f=0, removed_indices=()))
        assert out.n == ds.n
        assert list(out.row_ids) == list(ds.row_ids)
        np.testing.assert_array_equal(out.features, ds.features)

    def test_full_plan_clears_forget_partition(self):
        ds = make_dataset(n1=4, n2=6)
        plan = RemovalPlan(rule="random", budget_f=4, removed_indices=(0, 1, 2, 3))
        out = apply_plan(ds, plan)
        assert out.p1_positions().size == 0
        assert out.p2_positions().size == 6

    def test_survivor_count_and_order(self):
        ds = make_dataset(n1=10, n2=5, seed=3)
        plan = random_removal(10, 4, seed=9)
        out = apply_plan(ds, plan)
        assert out.p1_positions().size == 6
        removed_rows = {f"row{i}" for i in plan.removed_indices}
        expected_ids = [r for r in ds.row_ids if r not in removed_rows]
        assert list(out.row_ids) == expected_ids

    def test_out_of_range_index_rejected(self):
        ds = make_dataset(n1=3)
        plan = RemovalPlan(rule="random", budget_f=1, removed_indices=(3,))
        with pytest.raises(ValueError, match="out of range"):
            apply_plan(ds, plan)
