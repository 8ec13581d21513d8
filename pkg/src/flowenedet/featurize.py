"""Energy featurization of segmentation logits.

The detector never sees raw logits during flow training. Each pixel's C
logits collapse to a single free-energy score, which is then lifted to a
two-channel input so the flow acts on a 2D variable:

    -E(x)  = logsumexp(logits)
    z1     = min(-E, -eps)            # keep strictly negative
    z2     = log(1 - exp(z1))         # complementary log-mass

Both channels are deterministic functions of the energy, so the pair lives
on a one-dimensional curve in R^2. That is fine here: the flow is trained
discriminatively (cross-entropy over the two mixture components), not by
maximum likelihood over the input distribution.
"""

import numpy as np

from .validation import VOID_LABEL, as_logit_map, check_labels_in_range, check_same_spatial

# Clamp keeping z1 < 0 so log1mexp stays finite. Configurable in name only:
# exposed as `energy_clamp_eps` so stored configs document the value used.
ENERGY_CLAMP_EPS = 1e-6

_LN2 = float(np.log(2.0))


def free_energy(logits):
    """Negative free energy -E = logsumexp over the class axis.

    Accepts (C, H, W) or (N, C, H, W); reduces axis -3. Uses the shifted
    form max + log(sum(exp(x - max))) so large-magnitude logits do not
    overflow.
    """
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim < 3:
        raise ValueError(f"free_energy: expected >=3 dims (..., C, H, W), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        idx = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"free_energy: non-finite logit at index {tuple(int(k) for k in idx)}")
    m = np.max(arr, axis=-3)
    return m + np.log(np.sum(np.exp(arr - m[..., None, :, :]), axis=-3))


def log1mexp(x):
    """log(1 - exp(x)) for x < 0, numerically stable on both tails.

    Split at -ln 2: for x > -ln 2 use log(-expm1(x)) (1 - e^x is tiny, expm1
    keeps precision); otherwise use log1p(-exp(x)) (e^x is tiny).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 0):
        raise ValueError("log1mexp: requires x < 0")
    out = np.empty_like(x)
    hi = x > -_LN2
    out[hi] = np.log(-np.expm1(x[hi]))
    out[~hi] = np.log1p(-np.exp(x[~hi]))
    return out


def energy_pair(logits, clamp_eps=ENERGY_CLAMP_EPS):
    """Two-channel flow input from a logit map.

    Returns a (2, H, W) array (or (N, 2, H, W) for batched input):
    channel 0 is the clamped negative free energy, channel 1 its
    complementary log-mass.
    """
    neg_e = free_energy(logits)
    z1 = np.minimum(neg_e, -clamp_eps)
    z2 = log1mexp(z1)
    return np.stack([z1, z2], axis=-3)


def pool_condition(embeddings, width):
    """1D average pooling of a backbone embedding down to `width` values.

    The V-dimensional per-pixel embedding is split into `width` contiguous
    chunks along the channel axis and each chunk is averaged. V must be
    divisible by `width`. Input (V, H, W) or (N, V, H, W); the pooled axis
    replaces the channel axis.
    """
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim < 3:
        raise ValueError(f"pool_condition: expected >=3 dims, got {arr.shape}")
    v = arr.shape[-3]
    if width <= 0:
        raise ValueError("pool_condition: width must be positive")
    if v % width != 0:
        raise ValueError(f"pool_condition: V={v} not divisible by width={width}")
    shape = arr.shape[:-3] + (width, v // width) + arr.shape[-2:]
    return arr.reshape(shape).mean(axis=-3)


def predicted_classes(logits):
    """Argmax class map; ties resolve to the lowest class index."""
    arr = np.asarray(logits, dtype=np.float64)
    return np.argmax(arr, axis=-3).astype(np.int64)


def binary_labels(logits, labels):
    """Per-pixel mixture component for training: 1 = fit, 2 = deviating.

    A pixel belongs to component 2 (the "wrong" mode) when the ground truth
    disagrees with the model's argmax prediction. Void pixels (255) always
    count as deviating: the model cannot be right about content it was never
    taught. Returns (m, valid_mask) where valid_mask marks non-void pixels
    for use at evaluation time.
    """
    arr = as_logit_map(logits)
    labels = check_labels_in_range(labels, arr.shape[0])
    check_same_spatial(labels.shape, arr.shape, "labels", "logits")
    predictions = predicted_classes(arr)
    wrong = (labels != predictions) | (labels == VOID_LABEL)
    m = np.where(wrong, 2, 1).astype(np.int64)
    valid_mask = labels != VOID_LABEL
    return m, valid_mask


def baseline_scores(logits, kind):
    """Classical uncertainty scores from raw logits; higher = more uncertain.

    kind "msp": 1 - max softmax probability.
    kind "mlg": negative max logit.
    kind "ene": negative logsumexp (the free energy E).
    """
    arr = np.asarray(logits, dtype=np.float64)
    if kind == "msp":
        m = np.max(arr, axis=-3)
        log_p_max = m - free_energy(arr)
        return 1.0 - np.exp(log_p_max)
    if kind == "mlg":
        return -np.max(arr, axis=-3)
    if kind == "ene":
        return -free_energy(arr)
    raise ValueError(f"baseline_scores: unknown kind {kind!r}")
