"""Ranking metrics, open-set mIoU, resizing, and the report assembly."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowenedet import metrics

from _oracles import (
    auroc_pairwise,
    average_precision_sweep,
    f1_threshold_sweep,
    fpr_at_95tpr_sweep,
    open_miou_elementwise,
)


def random_case(rng, n=None, tie_prone=True):
    """Random scored pixels with both classes present; ties on purpose."""
    n = n or int(rng.integers(4, 200))
    if tie_prone:
        scores = rng.integers(0, 12, size=n) / 10.0
    else:
        scores = rng.standard_normal(n)
    truth = rng.integers(0, 2, size=n)
    truth[0], truth[1] = 0, 1  # guarantee both classes
    return scores, truth


class TestAuroc:
    def test_worked_example(self):
        got = metrics.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
        assert got == 0.75

    def test_perfect_separation(self):
        assert metrics.auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_give_half(self):
        assert metrics.auroc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scores, truth = random_case(rng)
            np.testing.assert_allclose(
                metrics.auroc(scores, truth), auroc_pairwise(scores, truth), rtol=0, atol=1e-12
            )

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_monotone_transform_invariance(self, seed):
        rng = np.random.default_rng(seed)
        scores, truth = random_case(rng, tie_prone=False)
        base = metrics.auroc(scores, truth)
        np.testing.assert_allclose(metrics.auroc(np.exp(scores), truth), base, atol=1e-12)
        np.testing.assert_allclose(
            metrics.auroc(3.0 * scores - 7.0, truth), base, atol=1e-12
        )

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_flip_identities(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(4, 100))
        scores = rng.permutation(np.arange(n)).astype(float)  # tie-free
        truth = rng.integers(0, 2, size=n)
        truth[0], truth[1] = 0, 1
        base = metrics.auroc(scores, truth)
        # flipping exactly one of (truth, scores) complements the statistic;
        # flipping both leaves it unchanged
        np.testing.assert_allclose(metrics.auroc(scores, 1 - truth), 1.0 - base, atol=1e-12)
        np.testing.assert_allclose(metrics.auroc(-scores, truth), 1.0 - base, atol=1e-12)
        np.testing.assert_allclose(metrics.auroc(-scores, 1 - truth), base, atol=1e-12)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            metrics.auroc([0.1, 0.2], [1, 1])


class TestAveragePrecision:
    def test_worked_example(self):
        got = metrics.average_precision([0.9, 0.8, 0.7], [1, 0, 1])
        np.testing.assert_allclose(got, 5.0 / 6.0, rtol=0, atol=1e-15)

    def test_all_positive_is_one(self):
        assert metrics.average_precision([0.3, 0.2, 0.9], [1, 1, 1]) == 1.0

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            scores, truth = random_case(rng)
            np.testing.assert_allclose(
                metrics.average_precision(scores, truth),
                average_precision_sweep(scores, truth),
                rtol=0,
                atol=1e-12,
            )

    def test_ties_processed_as_one_group(self):
        # one threshold group of three pixels: P = 2/3 at R = 1
        got = metrics.average_precision([0.5, 0.5, 0.5], [1, 1, 0])
        np.testing.assert_allclose(got, 2.0 / 3.0, atol=1e-15)

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError, match="positives"):
            metrics.average_precision([0.1, 0.2], [0, 0])


class TestFprAt95Tpr:
    def test_worked_example(self):
        got = metrics.fpr_at_95tpr([0.9, 0.3, 0.5, 0.1], [1, 1, 0, 0])
        assert got == 0.5

    def test_perfect_separation(self):
        assert metrics.fpr_at_95tpr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.0

    def test_few_positives_all_captured(self):
        """With under 20 positives, TPR >= 0.95 means TPR = 1."""
        rng = np.random.default_rng(2)
        scores = rng.standard_normal(50)
        truth = np.zeros(50, dtype=int)
        truth[:7] = 1
        t_min = scores[truth == 1].min()
        expected = np.sum((scores >= t_min) & (truth == 0)) / np.sum(truth == 0)
        np.testing.assert_allclose(metrics.fpr_at_95tpr(scores, truth), expected, atol=1e-15)

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            scores, truth = random_case(rng)
            np.testing.assert_allclose(
                metrics.fpr_at_95tpr(scores, truth),
                fpr_at_95tpr_sweep(scores, truth),
                rtol=0,
                atol=1e-12,
            )

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            metrics.fpr_at_95tpr([0.1, 0.2], [0, 0])


class TestF1Threshold:
    def test_worked_example(self):
        assert metrics.f1_threshold([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 0.8

    def test_all_negative_returns_flag_nothing(self):
        scores = np.array([0.3, 0.9, 0.1])
        t = metrics.f1_threshold(scores, [0, 0, 0])
        assert t > scores.max()
        assert np.sum(scores >= t) == 0

    def test_tie_breaks_toward_largest_threshold(self):
        # t = 4 and t = 1 both reach F1 = 2/3; the larger one wins
        assert metrics.f1_threshold([4.0, 1.0, 3.0, 2.0], [1, 1, 0, 0]) == 4.0

    def test_matches_sweep_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            scores, truth = random_case(rng)
            assert metrics.f1_threshold(scores, truth) == f1_threshold_sweep(scores, truth)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            metrics.f1_threshold([], [])


class TestDetectionTruth:
    def test_mismatch_and_void_are_positive(self):
        predictions = np.array([[0, 1], [2, 0]])
        labels = np.array([[0, 2], [2, 255]])
        truth, mask = metrics.detection_truth(predictions, labels)
        np.testing.assert_array_equal(truth, [[0, 1], [0, 1]])
        assert mask.all()

    def test_ignore_role_masks_void(self):
        predictions = np.array([[0, 1]])
        labels = np.array([[255, 1]])
        truth, mask = metrics.detection_truth(predictions, labels, void_role="ignore")
        np.testing.assert_array_equal(mask, [[False, True]])

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError, match="void_role"):
            metrics.detection_truth(np.zeros((1, 1)), np.zeros((1, 1)), void_role="both")


class TestScoredPixels:
    def test_mask_filters_and_flattens(self):
        scores = np.array([[0.1, 0.2], [0.3, 0.4]])
        truth = np.array([[1, 0], [1, 0]])
        mask = np.array([[True, False], [True, True]])
        s, t = metrics.scored_pixels(scores, truth, mask)
        np.testing.assert_array_equal(s, [0.1, 0.3, 0.4])
        np.testing.assert_array_equal(t, [1, 1, 0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="differ"):
            metrics.scored_pixels([0.1, 0.2], [1])


class TestOpenMiou:
    def test_perfect_case_is_one(self):
        labels = np.array([[0, 1], [2, 255]])
        predictions = np.array([[0, 1], [2, 0]])
        scores = np.array([[0.0, 0.0], [0.0, 1.0]])
        assert metrics.open_miou(predictions, scores, labels, 0.5, 3) == 1.0

    def test_hand_built_2x2_case(self):
        labels = np.array([[0, 0], [1, 255]])
        predictions = np.array([[0, 1], [1, 1]])
        scores = np.array([[0.0, 0.0], [0.0, 1.0]])
        got = metrics.open_miou(predictions, scores, labels, 0.5, 2)
        assert got == 0.5  # IoU_0 = 1/2, IoU_1 = 1/2

    def test_flag_nothing_reduces_to_closed_set(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, size=(8, 8))
        labels[0, :3] = 255
        predictions = rng.integers(0, 3, size=(8, 8))
        scores = rng.random((8, 8))
        got = metrics.open_miou(predictions, scores, labels, np.inf, 3)
        cm = metrics.confusion_matrix(predictions, scores, labels, np.inf, 3)
        np.testing.assert_allclose(got, metrics.miou_from_confusion(cm, 3), atol=0)
        # no pixel reaches an infinite threshold, so predictions are kept
        assert cm[:, 3].sum() == 0

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            n_classes = int(rng.integers(2, 5))
            labels = rng.integers(0, n_classes, size=(6, 7))
            labels[rng.random((6, 7)) < 0.1] = 255
            predictions = rng.integers(0, n_classes, size=(6, 7))
            scores = rng.integers(0, 5, size=(6, 7)) / 4.0
            threshold = float(rng.integers(0, 5)) / 4.0
            for role in ("ood_class", "ignore"):
                np.testing.assert_allclose(
                    metrics.open_miou(predictions, scores, labels, threshold, n_classes, role),
                    open_miou_elementwise(predictions, scores, labels, threshold, n_classes, role),
                    rtol=0,
                    atol=1e-12,
                )

    def test_pixel_permutation_invariance(self):
        rng = np.random.default_rng(7)
        labels = rng.integers(0, 3, size=36)
        predictions = rng.integers(0, 3, size=36)
        scores = rng.random(36)
        base = metrics.open_miou(
            predictions.reshape(6, 6), scores.reshape(6, 6), labels.reshape(6, 6), 0.5, 3
        )
        perm = rng.permutation(36)
        shuffled = metrics.open_miou(
            predictions[perm].reshape(6, 6),
            scores[perm].reshape(6, 6),
            labels[perm].reshape(6, 6),
            0.5,
            3,
        )
        assert base == shuffled

    def test_score_shift_with_shifted_threshold_invariance(self):
        rng = np.random.default_rng(8)
        labels = rng.integers(0, 3, size=(5, 5))
        predictions = rng.integers(0, 3, size=(5, 5))
        scores = rng.integers(0, 8, size=(5, 5)) / 4.0
        base = metrics.open_miou(predictions, scores, labels, 1.0, 3)
        shifted = metrics.open_miou(predictions, scores + 5.25, labels, 1.0 + 5.25, 3)
        assert base == shifted

    def test_absent_class_skipped_from_mean(self):
        labels = np.array([[0, 0], [1, 1]])
        predictions = np.array([[0, 0], [1, 0]])
        scores = np.zeros((2, 2))
        # class 2 never appears: mean over IoU_0 = 2/3 and IoU_1 = 1/2
        got = metrics.open_miou(predictions, scores, labels, 0.5, 3)
        np.testing.assert_allclose(got, (2.0 / 3.0 + 0.5) / 2.0, atol=1e-15)

    def test_empty_valid_region_rejected(self):
        labels = np.full((2, 2), 255)
        with pytest.raises(ValueError, match="empty"):
            metrics.open_miou(
                np.zeros((2, 2), dtype=int), np.zeros((2, 2)), labels, 0.5, 2, "ignore"
            )

    def test_out_of_range_class_rejected(self):
        labels = np.array([[9, 0]])
        with pytest.raises(ValueError, match="range"):
            metrics.open_miou(np.zeros((1, 2), dtype=int), np.zeros((1, 2)), labels, 0.5, 2)


class TestResizeBilinear:
    def test_identity_at_same_size(self):
        src = np.random.default_rng(9).random((5, 7))
        np.testing.assert_array_equal(metrics.resize_bilinear(src, (5, 7)), src)

    def test_constant_preserved(self):
        out = metrics.resize_bilinear(np.full((3, 3), 0.4), (7, 5))
        np.testing.assert_allclose(out, 0.4, atol=1e-15)

    def test_upsample_hand_case(self):
        out = metrics.resize_bilinear(np.array([[0.0, 1.0]]), (1, 4))
        np.testing.assert_allclose(out, [[0.0, 0.25, 0.75, 1.0]], atol=1e-15)

    def test_downsample_hand_case(self):
        out = metrics.resize_bilinear(np.array([[0.0, 1.0, 2.0, 3.0]]), (1, 2))
        np.testing.assert_allclose(out, [[0.5, 2.5]], atol=1e-15)

    def test_preserves_value_range(self):
        rng = np.random.default_rng(10)
        src = rng.random((6, 6))
        out = metrics.resize_bilinear(src, (13, 9))
        assert out.min() >= src.min() - 1e-12
        assert out.max() <= src.max() + 1e-12


class TestTtaAverage:
    def test_identical_maps_unchanged(self):
        m = np.random.default_rng(11).random((4, 4))
        np.testing.assert_allclose(metrics.tta_average([m, m, m], (4, 4)), m, atol=1e-15)

    def test_constant_maps_average(self):
        maps = [np.full((2, 3), 0.2), np.full((5, 7), 0.4)]
        np.testing.assert_allclose(metrics.tta_average(maps, (4, 4)), 0.3, atol=1e-15)

    def test_single_map_at_target_is_identity(self):
        m = np.random.default_rng(12).random((3, 3))
        np.testing.assert_array_equal(metrics.tta_average([m], (3, 3)), m)

    def test_mixed_scales_resized_to_target(self):
        rng = np.random.default_rng(13)
        maps = [rng.random((2, 2)), rng.random((4, 4)), rng.random((8, 8))]
        out = metrics.tta_average(maps, (8, 8))
        assert out.shape == (8, 8)
        assert np.all(np.isfinite(out))

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            metrics.tta_average([], (2, 2))


class TestMetricsReport:
    def test_rates_and_counts(self):
        rng = np.random.default_rng(14)
        scores = rng.random((6, 6))
        truth = rng.integers(0, 2, size=(6, 6))
        truth[0, 0], truth[0, 1] = 0, 1
        mask = np.ones((6, 6), dtype=bool)
        mask[5, :] = False
        report = metrics.metrics_report(scores, truth, mask=mask)
        for key in ("auroc", "ap", "fpr95"):
            assert 0.0 <= report[key] <= 1.0
        counts = report["counts"]
        assert counts["n_ignored"] == 6
        assert counts["n_pos"] + counts["n_neg"] == 30
        assert counts["n_pos"] == int(truth[mask].sum())
        assert report["open_miou"] is None

    def test_open_miou_fills_in_with_segmentation_inputs(self):
        rng = np.random.default_rng(15)
        labels = rng.integers(0, 3, size=(5, 5))
        labels[0, 0] = 255  # one void pixel the detector must flag
        predictions = np.where(labels == 255, 0, labels)
        scores = np.where(labels == 255, 0.9, 0.1)
        truth, mask = metrics.detection_truth(predictions, labels)
        report = metrics.metrics_report(
            scores, truth, predictions=predictions, labels=labels, n_classes=3, mask=mask
        )
        assert report["open_miou"] == 1.0  # the void pixel is caught exactly
        assert report["f1_threshold"] <= 0.9
