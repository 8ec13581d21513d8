"""Input validation helpers shared across the pipeline.

All public entry points funnel their array inputs through these checks so
shape/dtype errors surface with the offending tensor named, before any
numerics run.
"""

import numpy as np

VOID_LABEL = 255


def as_logit_map(logits, name="logits"):
    """Validate a C x H x W logit map and return it as float64."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected a C x H x W array, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"{name}: need at least 2 classes, got C={arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        c, i, j = np.argwhere(~np.isfinite(arr))[0]
        raise ValueError(f"{name}: non-finite value at class {c}, pixel ({i}, {j})")
    return arr


def as_label_map(labels, name="labels"):
    """Validate an H x W integer label map (values in 0..C-1 or 255)."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected an H x W array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name}: expected integer dtype, got {arr.dtype}")
    if arr.min(initial=0) < 0:
        raise ValueError(f"{name}: negative label values are not allowed")
    return arr.astype(np.int64, copy=False)


def as_embedding_map(embeddings, name="embeddings"):
    """Validate a V x H x W embedding map and return it as float64."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{name}: expected a V x H x W array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values present")
    return arr


def as_score_map(scores, name="scores"):
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected an H x W array, got shape {arr.shape}")
    return arr


def check_same_spatial(shape_a, shape_b, name_a, name_b):
    """Require two maps to share their trailing H x W dimensions."""
    if tuple(shape_a[-2:]) != tuple(shape_b[-2:]):
        raise ValueError(
            f"{name_a} spatial shape {tuple(shape_a[-2:])} does not match "
            f"{name_b} spatial shape {tuple(shape_b[-2:])}"
        )


def check_labels_in_range(labels, n_classes, name="labels"):
    """Labels must be class indices or the void value (255)."""
    arr = as_label_map(labels, name)
    bad = (arr >= n_classes) & (arr != VOID_LABEL)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ValueError(
            f"{name}: value {int(arr[i, j])} at pixel ({i}, {j}) is outside "
            f"0..{n_classes - 1} and is not the void value {VOID_LABEL}"
        )
    return arr
