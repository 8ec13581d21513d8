"""Detection and open-world segmentation metrics.

Ranking metrics treat the deviating pixels (misclassified or OOD) as the
detection-positive class: truth 1 means "should be flagged" and higher
scores mean more suspicious. Ground-truth value 255 plays one of two roles
selected by `void_role`: "ood_class" makes it the thing to detect (and the
extra class in open-mIoU), "ignore" drops those pixels from evaluation.
"""

import numpy as np

from .validation import VOID_LABEL

VOID_ROLES = ("ood_class", "ignore")


def detection_truth(predictions, labels, void_role="ood_class"):
    """Binary detection targets and the evaluation mask.

    Returns (truth, mask): truth is 1 where the prediction deviates from
    ground truth (always including 255 pixels, which no prediction can
    match), mask selects the pixels that participate in evaluation.
    """
    if void_role not in VOID_ROLES:
        raise ValueError(f"void_role must be one of {VOID_ROLES}, got {void_role!r}")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    truth = (labels != predictions).astype(np.int64)
    if void_role == "ignore":
        mask = labels != VOID_LABEL
    else:
        mask = np.ones_like(labels, dtype=bool)
    return truth, mask


def scored_pixels(scores, truth, mask=None):
    """Flatten maps into aligned (scores, truth) vectors under a mask."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel()
    if scores.shape != truth.shape:
        raise ValueError(f"scores ({scores.shape}) and truth ({truth.shape}) differ in length")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).ravel()
        scores, truth = scores[keep], truth[keep]
    return scores, truth.astype(np.int64)


def _check_both_classes(truth, name):
    n1 = int(np.sum(truth == 1))
    n0 = int(np.sum(truth == 0))
    if n1 == 0 or n0 == 0:
        raise ValueError(f"{name}: needs both classes present, got {n1} positives / {n0} negatives")
    return n1, n0


def _average_ranks(x):
    """1-based ranks with ties assigned the group average, O(n log n)."""
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    n = x.size
    new_group = np.empty(n, dtype=bool)
    new_group[0] = True
    np.not_equal(sorted_x[1:], sorted_x[:-1], out=new_group[1:])
    group_id = np.cumsum(new_group) - 1
    counts = np.bincount(group_id)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    avg = (starts + ends) / 2.0
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = avg[group_id]
    return ranks


def auroc(scores, truth):
    """Probability a detection-positive outscores a negative, ties at 1/2.

    Computed via the rank-sum identity, equivalent to the pairwise
    Mann-Whitney statistic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    n1, n0 = _check_both_classes(truth, "auroc")
    ranks = _average_ranks(scores)
    rank_sum = ranks[truth == 1].sum()
    u = rank_sum - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


def _ranked_counts(scores, truth):
    """Cumulative positive/negative counts at descending unique thresholds.

    Returns (thresholds, tp, fp): tp[k] and fp[k] count pixels with
    score >= thresholds[k].
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_truth = truth[order]
    is_last_of_group = np.empty(scores.size, dtype=bool)
    is_last_of_group[-1] = True
    np.not_equal(sorted_scores[1:], sorted_scores[:-1], out=is_last_of_group[:-1])
    boundaries = np.flatnonzero(is_last_of_group)
    cum_tp = np.cumsum(sorted_truth == 1)[boundaries]
    cum_fp = np.cumsum(sorted_truth == 0)[boundaries]
    return sorted_scores[boundaries], cum_tp, cum_fp


def average_precision(scores, truth):
    """Step-interpolated area under the precision-recall curve.

    AP = sum over descending unique thresholds of (R_k - R_{k-1}) * P_k,
    with tied scores processed as one group.
    """
    truth = np.asarray(truth)
    n1 = int(np.sum(truth == 1))
    if n1 == 0:
        raise ValueError("average_precision: no detection-positives in truth")
    _, tp, fp = _ranked_counts(scores, truth)
    precision = tp / (tp + fp)
    recall = tp / n1
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def fpr_at_95tpr(scores, truth):
    """False positive rate at the loosest threshold reaching 95% TPR.

    Chooses the largest threshold t with TPR(t) >= 0.95 under the rule
    "flag when score >= t" and returns FPR(t).
    """
    truth = np.asarray(truth)
    n1, n0 = _check_both_classes(truth, "fpr_at_95tpr")
    _, tp, fp = _ranked_counts(scores, truth)
    tpr = tp / n1
    idx = int(np.argmax(tpr >= 0.95))
    return float(fp[idx] / n0)


def f1_threshold(scores, truth):
    """Threshold maximizing F1 of the detection-positive class.

    Candidates are the distinct score values plus a sentinel just above the
    maximum (the flag-nothing option); ties break toward the largest
    threshold. Degenerate all-negative inputs therefore return the
    sentinel.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.size == 0:
        raise ValueError("f1_threshold: empty input")
    thresholds, tp, fp = _ranked_counts(scores, truth)
    n1 = int(np.sum(truth == 1))
    best_t = float(np.nextafter(thresholds[0], np.inf))
    best_f1 = 0.0
    for t, tp_k, fp_k in zip(thresholds, tp, fp):
        fn_k = n1 - tp_k
        denom = 2 * tp_k + fp_k + fn_k
        f1 = 2.0 * tp_k / denom if denom > 0 else 0.0
        if f1 > best_f1:
            best_f1 = f1
            best_t = float(t)
    return best_t


def confusion_matrix(predictions, scores, labels, threshold, n_classes, void_role="ood_class"):
    """Open-set confusion matrix over C known classes plus the void class C.

    Prediction pixels scoring >= threshold are relabeled to class C.
    Ground-truth 255 becomes class C ("ood_class") or is dropped
    ("ignore"). Rows are ground truth, columns predictions.
    """
    if void_role not in VOID_ROLES:
        raise ValueError(f"void_role must be one of {VOID_ROLES}, got {void_role!r}")
    predictions = np.asarray(predictions).astype(np.int64).copy()
    labels = np.asarray(labels).astype(np.int64).copy()
    scores = np.asarray(scores, dtype=np.float64)
    predictions[scores >= threshold] = n_classes
    if void_role == "ood_class":
        labels = np.where(labels == VOID_LABEL, n_classes, labels)
        keep = np.ones(labels.shape, dtype=bool)
    else:
        keep = labels != VOID_LABEL
    rows = labels[keep].ravel()
    cols = predictions[keep].ravel()
    if rows.size == 0:
        raise ValueError("confusion_matrix: empty valid region")
    k = n_classes + 1
    if rows.min() < 0 or rows.max() >= k or cols.min() < 0 or cols.max() >= k:
        raise ValueError("confusion_matrix: class index out of range")
    return np.bincount(rows * k + cols, minlength=k * k).reshape(k, k)


def miou_from_confusion(cm, n_classes):
    """Mean IoU over the known classes (void confusions still penalize).

    Classes absent from both prediction and truth are skipped; the void
    class itself never enters the average.
    """
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)[:n_classes]
    fp = cm.sum(axis=0)[:n_classes] - tp
    fn = cm.sum(axis=1)[:n_classes] - tp
    union = tp + fp + fn
    present = union > 0
    if not present.any():
        raise ValueError("miou_from_confusion: no known class present")
    return float(np.mean(tp[present] / union[present]))


def open_miou(predictions, scores, labels, threshold, n_classes, void_role="ood_class"):
    """Open-set mean IoU after relabeling flagged pixels as void."""
    cm = confusion_matrix(predictions, scores, labels, threshold, n_classes, void_role)
    return miou_from_confusion(cm, n_classes)


def resize_bilinear(src, target_shape):
    """Bilinear resize with half-pixel centers and edge clamping.

    Source coordinate for output index i is (i + 0.5) * S / T - 0.5,
    clamped to the valid range (align-corners off).
    """
    src = np.asarray(src, dtype=np.float64)
    th, tw = target_shape
    sh, sw = src.shape

    def axis_coords(t, s):
        coords = (np.arange(t) + 0.5) * (s / t) - 0.5
        coords = np.clip(coords, 0.0, s - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, s - 1)
        frac = coords - lo
        return lo, hi, frac

    ylo, yhi, fy = axis_coords(th, sh)
    xlo, xhi, fx = axis_coords(tw, sw)
    fy = fy[:, None]
    fx = fx[None, :]
    top = src[np.ix_(ylo, xlo)] * (1.0 - fx) + src[np.ix_(ylo, xhi)] * fx
    bottom = src[np.ix_(yhi, xlo)] * (1.0 - fx) + src[np.ix_(yhi, xhi)] * fx
    return top * (1.0 - fy) + bottom * fy


def tta_average(score_maps, target_shape):
    """Resize each score map to the target shape and average elementwise."""
    if not score_maps:
        raise ValueError("tta_average: empty list of score maps")
    total = np.zeros(target_shape, dtype=np.float64)
    for m in score_maps:
        m = np.asarray(m, dtype=np.float64)
        total += m if m.shape == tuple(target_shape) else resize_bilinear(m, target_shape)
    return total / len(score_maps)


def metrics_report(scores, truth, predictions=None, labels=None, n_classes=None, void_role="ood_class", mask=None):
    """Full MetricsReport as a JSON-ready dict.

    Ranking metrics run on the masked flat scores; open-mIoU is included
    when predictions/labels/n_classes are supplied, thresholded at the
    F1-optimal value.
    """
    flat_scores, flat_truth = scored_pixels(scores, truth, mask)
    n_pos = int(np.sum(flat_truth == 1))
    n_neg = int(np.sum(flat_truth == 0))
    n_ignored = int(np.asarray(scores).size - flat_scores.size)
    threshold = f1_threshold(flat_scores, flat_truth)
    report = {
        "auroc": auroc(flat_scores, flat_truth),
        "ap": average_precision(flat_scores, flat_truth),
        "fpr95": fpr_at_95tpr(flat_scores, flat_truth),
        "f1_threshold": threshold,
        "open_miou": None,
        "counts": {"n_pos": n_pos, "n_neg": n_neg, "n_ignored": n_ignored},
    }
    if predictions is not None and labels is not None and n_classes is not None:
        report["open_miou"] = open_miou(predictions, scores, labels, threshold, n_classes, void_role)
    return report
