import numpy as np
import pytest
from numpy.testing import assert_allclose

from prototex.errors import ShapeError
from prototex.metrics import bootstrap_significance, f1_scores, macro_f1, subclass_f1


class TestF1Scores:
    def test_perfect_predictions(self):
        result = f1_scores([1, 0, 1, 0], [1, 0, 1, 0])
        assert result.f1_positive == 1.0
        assert result.f1_negative == 1.0
        assert result.f1_macro == 1.0

    def test_hand_worked_confusion(self):
        result = f1_scores([1, 1, 0, 0], [1, 0, 0, 0])
        assert_allclose(result.f1_positive, 2.0 / 3.0, atol=1e-12)
        assert_allclose(result.f1_negative, 0.8, atol=1e-12)
        assert_allclose(result.f1_macro, 0.73333, atol=1e-4)
        assert result.confusion == {"tp": 1, "fp": 1, "fn": 0, "tn": 2}

    def test_all_negative_predictions(self):
        gold = [1] * 35 + [0] * 65
        result = f1_scores([0] * 100, gold)
        assert result.f1_positive == 0.0

    def test_empty_class_zero_division(self):
        result = f1_scores([0, 0], [0, 0])
        assert result.f1_positive == 0.0
        assert result.f1_negative == 1.0

    def test_macro_is_exact_mean(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 2, 50)
        gold = rng.integers(0, 2, 50)
        result = f1_scores(preds, gold)
        assert result.f1_macro == (result.f1_positive + result.f1_negative) / 2.0

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 2, 40)
        gold = rng.integers(0, 2, 40)
        perm = rng.permutation(40)
        assert macro_f1(preds, gold) == macro_f1(preds[perm], gold[perm])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            f1_scores([1, 0], [1])


class TestSubclassF1:
    def test_single_subcategory_equals_overall(self):
        preds = np.array([1, 0, 1, 0, 0])
        gold = np.array([1, 1, 0, 0, 0])
        subs = ["s", "s", None, None, None]
        out = subclass_f1(preds, gold, subs)
        assert set(out) == {"s"}
        assert_allclose(out["s"], macro_f1(preds, gold), atol=1e-12)

    def test_misclassified_subcategory_scores_low(self):
        preds = np.array([0, 0, 1, 0, 0, 0])
        gold = np.array([1, 1, 1, 0, 0, 0])
        subs = ["bad", "bad", "good", None, None, None]
        out = subclass_f1(preds, gold, subs)
        assert out["good"] == 1.0
        assert out["bad"] < 0.5

    def test_four_cluster_report(self):
        from prototex.data import generate_synthetic

        ds, _ = generate_synthetic(400, 8, rng=0)
        gold = ds.labels()
        subs = [ex.subcategory for ex in ds.examples]
        out = subclass_f1(gold, gold, subs)  # perfect predictions
        assert len(out) == 4
        assert all(v == 1.0 for v in out.values())


class TestBootstrap:
    def test_identical_predictions_give_p_one(self):
        gold = np.array([1, 0, 1, 0, 1])
        preds = np.array([1, 0, 0, 0, 1])
        assert bootstrap_significance(preds, preds, gold, n_resamples=1000) == 1.0

    def test_perfect_vs_inverted(self):
        gold = np.array([1, 0] * 20)
        assert bootstrap_significance(gold, 1 - gold, gold, n_resamples=1000) == 0.0

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(2)
        gold = rng.integers(0, 2, 60)
        a = rng.integers(0, 2, 60)
        b = rng.integers(0, 2, 60)
        p1 = bootstrap_significance(a, b, gold, n_resamples=2000, seed=5)
        p2 = bootstrap_significance(a, b, gold, n_resamples=2000, seed=5)
        assert p1 == p2

    def test_matches_loop_reimplementation(self):
        rng = np.random.default_rng(3)
        gold = rng.integers(0, 2, 40)
        preds_a = np.where(rng.random(40) < 0.8, gold, 1 - gold)
        preds_b = np.where(rng.random(40) < 0.6, gold, 1 - gold)
        fast = bootstrap_significance(preds_a, preds_b, gold, n_resamples=3000, seed=11)

        idx_rng = np.random.default_rng(11)
        idx = idx_rng.integers(0, 40, size=(3000, 40))
        hits = 0
        for r in range(3000):
            sel = idx[r]
            diff = macro_f1(preds_a[sel], gold[sel]) - macro_f1(preds_b[sel], gold[sel])
            if diff <= 0:
                hits += 1
        slow = hits / 3000
        assert abs(fast - slow) <= 0.02
