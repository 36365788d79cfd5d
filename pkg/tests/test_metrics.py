import numpy as np
import pytest

from imuvid import reference
from imuvid.errors import InputError
from imuvid.metrics import (
    MetricsReport,
    balanced_accuracy,
    compute_all_metrics,
    confusion_counts,
    macro_f1,
    mrr,
    per_class_recalls,
    ranks_of_true,
    recall_at_k,
)


class TestBalancedAccuracy:
    def test_all_correct(self):
        assert balanced_accuracy([0, 1, 2], [0, 1, 2]) == 1.0

    def test_two_class_recalls(self):
        # class 0: 4/5 correct; class 1: 1/2 correct
        labels = [0] * 5 + [1] * 2
        preds = [0, 0, 0, 0, 1, 1, 0]
        assert balanced_accuracy(preds, labels) == pytest.approx((0.8 + 0.5) / 2)

    def test_constant_predictor_balanced_five_class(self):
        labels = np.repeat(np.arange(5), 10)
        preds = np.zeros(50, dtype=int)
        assert balanced_accuracy(preds, labels) == pytest.approx(0.2)

    def test_missing_class_excluded_with_warning(self):
        with pytest.warns(RuntimeWarning, match="no samples"):
            value = balanced_accuracy([0, 0], [0, 0], num_classes=3)
        assert value == 1.0

    def test_equals_mean_per_class_recall(self, rng):
        labels = rng.integers(0, 4, 60)
        preds = rng.integers(0, 4, 60)
        recalls = per_class_recalls(preds, labels)
        assert balanced_accuracy(preds, labels) == pytest.approx(np.mean(list(recalls.values())))


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 0], [0, 1, 0]) == 1.0

    def test_binary_hand_computed(self):
        # class A: TP=8, FP=5, FN=2; class B: TP=5, FP=2, FN=5
        labels = [0] * 10 + [1] * 10
        preds = [0] * 8 + [1] * 2 + [0] * 5 + [1] * 5
        f1_a = 2 * 8 / (2 * 8 + 5 + 2)
        f1_b = 2 * 5 / (2 * 5 + 2 + 5)
        assert macro_f1(preds, labels) == pytest.approx((f1_a + f1_b) / 2)
        assert macro_f1(preds, labels) == pytest.approx(0.6420, abs=2e-4)

    def test_class_never_true_excluded(self):
        # class 2 never appears in labels; predicting it hurts others' F1 only
        labels = [0, 0, 1, 1]
        preds = [0, 2, 1, 1]
        f1_0 = 2 * 1 / (2 * 1 + 0 + 1)
        f1_1 = 1.0
        assert macro_f1(preds, labels) == pytest.approx((f1_0 + f1_1) / 2)


class TestRankMetrics:
    def test_mrr_all_rank_one(self):
        rankings = np.tile([1, 0, 2], (4, 1))
        assert mrr(rankings, [1, 1, 1, 1]) == 1.0

    def test_mrr_hand_computed(self):
        rankings = np.array([[0, 1, 2, 3], [1, 0, 2, 3], [1, 2, 3, 0]])
        labels = np.array([0, 0, 0])  # ranks 1, 2, 4
        assert mrr(rankings, labels) == pytest.approx((1 + 0.5 + 0.25) / 3)

    def test_mrr_worst_case(self):
        rankings = np.tile([0, 1, 2, 3, 4], (3, 1))
        assert mrr(rankings, [4, 4, 4]) == pytest.approx(1 / 5)

    def test_recall_at_k_everything_at_k_equals_c(self):
        rankings = np.stack([np.random.default_rng(i).permutation(4) for i in range(8)])
        labels = rankings[:, -1]
        assert recall_at_k(rankings, labels, 4) == 1.0

    def test_recall_at_3_hand_case(self):
        # ranks 1, 2, 4, 5, 3 -> 3 of 5 within top-3
        rankings = np.array(
            [[0, 9, 8, 7, 6], [9, 0, 8, 7, 6], [9, 8, 7, 0, 6], [9, 8, 7, 6, 0], [9, 8, 0, 7, 6]]
        )
        labels = np.zeros(5, dtype=int)
        assert recall_at_k(rankings, labels, 3) == pytest.approx(0.6)

    def test_recall_at_1_equals_top1_accuracy(self, rng):
        for _ in range(20):
            c = int(rng.integers(2, 8))
            n = int(rng.integers(5, 40))
            rankings = np.stack([rng.permutation(c) for _ in range(n)])
            labels = rng.integers(0, c, n)
            top1 = float((rankings[:, 0] == labels).mean())
            assert recall_at_k(rankings, labels, 1) == top1

    def test_k_above_c_clamps_with_warning(self):
        rankings = np.array([[0, 1], [1, 0]])
        with pytest.warns(RuntimeWarning):
            assert recall_at_k(rankings, [0, 0], 5) == 1.0

    def test_ranking_missing_true_class_rejected(self):
        with pytest.raises(InputError):
            ranks_of_true(np.array([[0, 1]]), np.array([2]))


class TestAgainstBruteForce:
    def test_thousand_random_cases(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for _ in range(1000):
            c = int(rng.integers(2, 11))
            n = int(rng.integers(5, 201))
            labels = rng.integers(0, c, n)
            preds = rng.integers(0, c, n)
            rankings = np.stack([rng.permutation(c) for _ in range(n)])
            worst = max(
                worst,
                abs(balanced_accuracy(preds, labels)
                    - reference.balanced_accuracy_reference(preds, labels)),
                abs(macro_f1(preds, labels) - reference.macro_f1_reference(preds, labels)),
                abs(mrr(rankings, labels) - reference.mrr_reference(rankings, labels)),
                abs(recall_at_k(rankings, labels, 1)
                    - reference.recall_at_k_reference(rankings, labels, 1)),
                abs(recall_at_k(rankings, labels, 3)
                    - reference.recall_at_k_reference(rankings, labels, 3)),
            )
        assert worst <= 1e-12

    def test_duplication_consistency(self):
        # duplicating a sample k times scales confusion counts, not recalls
        labels = np.array([0, 0, 1, 1, 1])
        preds = np.array([0, 1, 1, 1, 0])
        dup_labels = np.repeat(labels, 3)
        dup_preds = np.repeat(preds, 3)
        assert balanced_accuracy(preds, labels) == pytest.approx(
            reference.balanced_accuracy_reference(dup_preds, dup_labels)
        )


class TestReportContainer:
    def test_summary_and_std(self):
        runs = [
            {"balanced_accuracy": 0.8, "macro_f1": 0.7},
            {"balanced_accuracy": 0.6, "macro_f1": 0.9},
        ]
        rep = MetricsReport.from_runs(runs)
        assert rep.mean("balanced_accuracy") == pytest.approx(0.7)
        assert rep.std("balanced_accuracy") == pytest.approx(0.1)

    def test_single_repeat_zero_std(self):
        rep = MetricsReport.from_runs([{"mrr": 0.5}])
        assert rep.std("mrr") == 0.0

    def test_mean_within_min_max(self, rng):
        runs = [{"m": float(v)} for v in rng.random(5)]
        rep = MetricsReport.from_runs(runs)
        values = rep.per_repeat["m"]
        assert min(values) <= rep.mean("m") <= max(values)

    def test_serialization_shapes(self):
        rep = MetricsReport.from_runs(
            [{"balanced_accuracy": 1.0, "macro_f1": 1.0, "mrr": 1.0,
              "recall_at_1": 1.0, "recall_at_3": 1.0}] * 2,
            confusion=np.eye(2, dtype=np.int64),
        )
        d = rep.to_dict()
        assert set(d["metrics"]) == {
            "balanced_accuracy", "macro_f1", "mrr", "recall_at_1", "recall_at_3"
        }
        for entry in d["metrics"].values():
            assert {"mean", "std", "per_repeat"} <= set(entry)
        table = rep.to_table()
        assert table.splitlines()[0].startswith("metric")

    def test_compute_all_metrics_in_unit_range(self, rng):
        c, n = 5, 50
        labels = rng.integers(0, c, n)
        preds = rng.integers(0, c, n)
        rankings = np.stack([rng.permutation(c) for _ in range(n)])
        out = compute_all_metrics(preds, labels, rankings)
        for v in out.values():
            assert 0.0 <= v <= 1.0

    def test_confusion_counts(self):
        m = confusion_counts([0, 1, 1], [0, 0, 1], num_classes=2)
        np.testing.assert_array_equal(m, [[1, 1], [0, 1]])
