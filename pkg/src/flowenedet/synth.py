"""Deterministic synthetic segmentation outputs for desk-scale validation.

Each sample mimics a frozen segmentation model's view of a scene: a
spatially coherent class field (argmax of box-blurred noise), logits whose
argmax matches a planted prediction, embeddings from class-conditional
Gaussians, and ground-truth labels with planted deviations:

  - correct pixels: prediction equals ground truth, margin `margin_id`;
  - IDM pixels: the margin moves to a wrong class at half the gap;
  - OOD pixels: ground truth becomes 255, logits near-uniform.

Logits are shifted per pixel so their logsumexp hits a group-specific
target: correct pixels sit at -1, IDM at -1 - gap/2, OOD at -1 - gap
(free energy higher by the full gap). A small OOD subpopulation is planted
*above* the correct pixels in logsumexp, where a raw energy threshold must
misrank it but a density model need not; this keeps the energy baseline
strong (AuROC >= 0.9 between ID and OOD) without making it unbeatable.
Generation is byte-identical for a fixed config: per-sample streams are
seeded with (seed, sample index).
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor_store
from .featurize import free_energy
from .validation import VOID_LABEL

# Logsumexp anchor of correct pixels; group targets are offsets from it.
LSE_ID = -1.0
# Fraction of OOD pixels planted above LSE_ID (lower free energy than ID).
OVERCONFIDENT_FRACTION = 0.08
LSE_OVERCONFIDENT = -0.3
# Per-pixel jitter of the logsumexp targets.
LSE_JITTER = 0.05
# Box-blur radius of the noise fields behind class regions and masks.
BLUR_RADIUS = 5

TRUTH_REPORT = "truth.json"


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs; defaults give a 5-minute-scale training problem."""

    n_classes: int = 8
    embed_dim: int = 16
    height: int = 64
    width: int = 64
    n_samples: int = 64
    rho_idm: float = 0.1
    rho_ood: float = 0.1
    margin_id: float = 4.0
    energy_gap: float = 3.0
    noise_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if not (0 <= self.rho_idm < 1 and 0 <= self.rho_ood < 1):
            raise ValueError("rho_idm and rho_ood must lie in [0, 1)")
        if self.rho_idm + self.rho_ood >= 1:
            raise ValueError("rho_idm + rho_ood must be < 1")
        if self.margin_id <= 0 or self.energy_gap <= 0:
            raise ValueError("margin_id and energy_gap must be positive")


def _box_blur(field, radius):
    """Mean filter with reflect padding via an integral image."""
    k = 2 * radius + 1
    padded = np.pad(field, radius, mode="reflect")
    csum = np.cumsum(np.cumsum(padded, axis=0), axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0)))
    h, w = field.shape
    total = (
        csum[k : k + h, k : k + w]
        - csum[0:h, k : k + w]
        - csum[k : k + h, 0:w]
        + csum[0:h, 0:w]
    )
    return total / (k * k)


def _coherent_mask(rng, shape, count):
    """Boolean mask of exactly `count` pixels, clustered in space."""
    mask = np.zeros(shape, dtype=bool)
    if count > 0:
        field = _box_blur(rng.standard_normal(shape), BLUR_RADIUS)
        top = np.argsort(field.ravel(), kind="mergesort")[::-1][:count]
        mask.ravel()[top] = True
    return mask


def _generate_sample(cfg, index, class_means):
    rng = np.random.default_rng([cfg.seed, index])
    c, h, w = cfg.n_classes, cfg.height, cfg.width
    n_pixels = h * w

    fields = np.stack([_box_blur(rng.standard_normal((h, w)), BLUR_RADIUS) for _ in range(c)])
    true_class = np.argmax(fields, axis=0)

    n_ood = round(cfg.rho_ood * n_pixels)
    n_idm = round(cfg.rho_idm * n_pixels)
    ood_mask = _coherent_mask(rng, (h, w), n_ood)
    idm_field = _box_blur(rng.standard_normal((h, w)), BLUR_RADIUS)
    idm_field[ood_mask] = -np.inf
    idm_order = np.argsort(idm_field.ravel(), kind="mergesort")[::-1][:n_idm]
    idm_mask = np.zeros((h, w), dtype=bool)
    idm_mask.ravel()[idm_order] = True

    labels = true_class.astype(np.int64)
    labels[ood_mask] = VOID_LABEL

    # Planted prediction: truth where correct, a uniformly wrong class on
    # IDM pixels, unconstrained on OOD pixels (noise decides).
    planted = true_class.copy()
    wrong_shift = rng.integers(1, c, size=(h, w))
    planted[idm_mask] = (true_class[idm_mask] + wrong_shift[idm_mask]) % c

    raw = rng.normal(0.0, cfg.noise_std, size=(c, h, w))
    margin = np.zeros((h, w))
    margin[~ood_mask & ~idm_mask] = cfg.margin_id
    margin[idm_mask] = cfg.margin_id / 2.0
    np.put_along_axis(raw, planted[None], np.take_along_axis(raw, planted[None], 0) + margin[None], 0)

    lse_target = np.full((h, w), LSE_ID)
    lse_target[idm_mask] = LSE_ID - cfg.energy_gap / 2.0
    lse_target[ood_mask] = LSE_ID - cfg.energy_gap
    n_over = round(OVERCONFIDENT_FRACTION * n_ood)
    if n_over > 0:
        over_flat = np.flatnonzero(ood_mask.ravel())[:n_over]
        lse_target.ravel()[over_flat] = LSE_OVERCONFIDENT
    lse_target = lse_target + rng.normal(0.0, LSE_JITTER, size=(h, w))

    logits = raw + (lse_target - free_energy(raw))[None]

    emb_class = np.where(ood_mask, c, true_class)
    embeddings = class_means[emb_class].transpose(2, 0, 1) + rng.normal(
        0.0, 1.0, size=(cfg.embed_dim, h, w)
    )

    sample = tensor_store.DatasetSample(
        sample_id=f"sample_{index:04d}",
        logits=logits.astype("<f4"),
        labels=labels.astype("<i4"),
        embeddings=embeddings.astype("<f4") if cfg.embed_dim > 0 else None,
    )
    masks = {"ood": ood_mask, "idm": idm_mask, "id": ~ood_mask & ~idm_mask}
    return sample, masks


def generate(cfg, out_dir):
    """Write the dataset plus a JSON truth report; returns the report."""
    rng_means = np.random.default_rng([cfg.seed, 1 << 31])
    class_means = rng_means.normal(0.0, 2.0, size=(cfg.n_classes + 1, cfg.embed_dim))

    counts = {"id": 0, "idm": 0, "ood": 0}
    flips = 0
    energy_sums = {"id": 0.0, "idm": 0.0, "ood": 0.0}
    sample_ids = []
    for index in range(cfg.n_samples):
        sample, masks = _generate_sample(cfg, index, class_means)
        tensor_store.write_sample(out_dir, sample)
        sample_ids.append(sample.sample_id)

        stored_logits = sample.logits.astype(np.float64)
        energy = -free_energy(stored_logits)
        pred = np.argmax(stored_logits, axis=0)
        for group in counts:
            counts[group] += int(masks[group].sum())
            if masks[group].any():
                energy_sums[group] += float(energy[masks[group]].sum())
        flips += int((pred[masks["id"]] != sample.labels[masks["id"]]).sum())

    tensor_store.write_dataset_manifest(
        out_dir,
        cfg.n_classes,
        cfg.embed_dim,
        [f"class_{i}" for i in range(cfg.n_classes)],
        sample_ids,
    )

    total = cfg.n_samples * cfg.height * cfg.width
    report = {
        "config": asdict(cfg),
        "n_pixels_total": total,
        "counts": dict(counts),
        "fractions": {k: v / total for k, v in counts.items()},
        "noise_flips": {
            "count": flips,
            "fraction": flips / counts["id"] if counts["id"] else 0.0,
        },
        "mean_free_energy": {
            k: (energy_sums[k] / counts[k] if counts[k] else None) for k in counts
        },
    }
    payload = json.dumps(report, indent=2, sort_keys=True).encode("utf-8") + b"\n"
    tensor_store.atomic_write_bytes(f"{out_dir}/{TRUTH_REPORT}", payload)
    return report
