"""Maximum-likelihood training of the detector parameters.

The loss is the per-pixel cross-entropy of the class-conditional logits
against the binary labels (1 = prediction consistent with ground truth,
2 = deviating). Optimization is AdamW with a linear warmup followed by
step decay. Every random choice (parameter init, batch sampling, crops,
dropout) flows from a single seed through named substreams, so two runs
with the same seed produce bitwise-identical parameters and loss logs.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import density, flow


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters."""

    lr_init: float = 1e-3
    lr_warmup_start: float = 1e-6
    warmup_iters: int = 4000
    decay_every: int = 15000
    decay_factor: float = 0.1
    total_iters: int = 50000
    batch_size: int = 4
    weight_decay: float = 0.01
    crop: tuple | None = None
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.total_iters <= 0 or self.batch_size <= 0:
            raise ValueError("total_iters and batch_size must be positive")
        if self.lr_init <= 0 or self.lr_warmup_start <= 0:
            raise ValueError("learning rates must be positive")


def learning_rate(iteration, config):
    """Scheduled learning rate at an iteration index (pure function).

    Linear warmup from lr_warmup_start to lr_init over warmup_iters, then
    lr_init scaled by decay_factor every decay_every iterations (counted
    from iteration 0; both branches agree at the warmup boundary).
    """
    if iteration < config.warmup_iters:
        frac = iteration / config.warmup_iters
        return config.lr_warmup_start + (config.lr_init - config.lr_warmup_start) * frac
    return config.lr_init * config.decay_factor ** (iteration // config.decay_every)


def _one_hot_components(m):
    """(N, H, W) labels in {1, 2} -> (N, 2, H, W) one-hot floats."""
    m = np.asarray(m)
    if not np.isin(m, (1, 2)).all():
        raise ValueError("labels m must be in {1, 2}")
    return np.stack([m == 1, m == 2], axis=1).astype(np.float64)


def _loss_var(z, a, m, params, config, dropout_masks=None):
    if np.asarray(z).size == 0:
        raise ValueError("empty batch")
    out = flow.forward(z, a, params, config, dropout_masks=dropout_masks)
    s = density.class_logits(out, params, config.cov_mode)
    picked = ad.sum_(s * ad.as_var(_one_hot_components(m)), axis=1)
    nll = ad.logsumexp(s, axis=1) - picked
    return ad.mean(nll)


def loss(z, a, m, params, config, dropout_masks=None):
    """Mean per-pixel negative log posterior of the true component."""
    return float(_loss_var(z, a, m, params, config, dropout_masks).value)


def grad(z, a, m, params, config, dropout_masks=None):
    """Loss and its exact gradient for every parameter.

    Returns (loss_value, grads) where grads mirrors `params`; parameters
    with no influence on the loss get exact zero gradients.
    """
    pvars = {name: ad.Var(np.asarray(value, dtype=np.float64), requires_grad=True) for name, value in params.items()}
    loss_var = _loss_var(z, a, m, pvars, config, dropout_masks)
    if not np.isfinite(loss_var.value):
        raise FloatingPointError("non-finite training loss")
    loss_var.backward()
    grads = {}
    for name, var in pvars.items():
        g = var.grad if var.grad is not None else np.zeros_like(var.value)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    return float(loss_var.value), grads


# Parameter name suffixes subject to decoupled weight decay: subnet
# convolution weights and the mixing matrices only.
_DECAY_SUFFIXES = ("conv_in_weight", "conv_mid_weight", "conv_out_weight", "mix_weight")


def decayed_parameter(name):
    return name.endswith(_DECAY_SUFFIXES)


class AdamW:
    """AdamW with decoupled weight decay on a named subset of parameters."""

    def __init__(self, param_names, weight_decay, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: None for name in param_names}
        self.v = {name: None for name in param_names}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name in self.m:
            g = grads[name]
            if self.m[name] is None:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            update = (self.m[name] / bc1) / (np.sqrt(self.v[name] / bc2) + self.eps)
            new = params[name] - lr * update
            if self.weight_decay and decayed_parameter(name):
                new = new - lr * self.weight_decay * params[name]
            params[name] = new
        return params


def clip_gradients(grads, max_norm):
    """Scale all gradients jointly so their global L2 norm is <= max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm > 0:
        scale = max_norm / total
        return {name: g * scale for name, g in grads.items()}
    return grads


def _crop_offsets(rng, shape, crop):
    h, w = shape
    ch, cw = crop
    if ch > h or cw > w:
        raise ValueError(f"crop {crop} larger than map size {(h, w)}")
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return top, left


def _assemble_batch(samples, rng, batch_size, crop):
    """Sample-with-replacement batch of optionally cropped maps."""
    zs, as_, ms = [], [], []
    indices = rng.integers(0, len(samples), size=batch_size)
    has_condition = samples[0][1] is not None
    for idx in indices:
        z, a, m = samples[int(idx)]
        if crop is not None:
            top, left = _crop_offsets(rng, z.shape[-2:], crop)
            z = z[..., top : top + crop[0], left : left + crop[1]]
            m = m[top : top + crop[0], left : left + crop[1]]
            if a is not None:
                a = a[..., top : top + crop[0], left : left + crop[1]]
        zs.append(z)
        as_.append(a)
        ms.append(m)
    z = np.stack(zs, axis=0)
    a = np.stack(as_, axis=0) if has_condition else None
    m = np.stack(ms, axis=0)
    return z, a, m


def _dropout_masks(rng, flow_config, n, h, w):
    if flow_config.dropout_rate <= 0:
        return None
    keep = 1.0 - flow_config.dropout_rate
    masks = []
    for _ in range(flow_config.n_blocks):
        mask = (rng.random((n, flow_config.hidden_width, h, w)) < keep) / keep
        masks.append(mask)
    return masks


def fit(samples, flow_config, train_config, progress=None):
    """Train a fresh detector on featurized samples.

    `samples` is a non-empty list of (z, a, m) tuples at full map size
    (a = None when unconditional). Returns (params, log_rows) where
    log_rows is a list of (iteration, lr, loss) tuples, one per iteration.
    """
    if not samples:
        raise ValueError("fit: empty dataset")
    rng_init = np.random.default_rng([train_config.seed, 0])
    rng_data = np.random.default_rng([train_config.seed, 1])
    rng_drop = np.random.default_rng([train_config.seed, 2])

    params = flow.init_params(flow_config, rng_init)
    optimizer = AdamW(list(params), train_config.weight_decay)

    first = _assemble_batch(samples, rng_data, train_config.batch_size, train_config.crop)
    flow.init_actnorm(params, [(first[0], first[1])], flow_config)

    log_rows = []
    for iteration in range(train_config.total_iters):
        if iteration == 0:
            z, a, m = first
        else:
            z, a, m = _assemble_batch(samples, rng_data, train_config.batch_size, train_config.crop)
        masks = _dropout_masks(rng_drop, flow_config, z.shape[0], z.shape[-2], z.shape[-1])
        lr = learning_rate(iteration, train_config)
        try:
            loss_value, grads = grad(z, a, m, params, flow_config, dropout_masks=masks)
        except FloatingPointError as exc:
            raise RuntimeError(f"training diverged at iteration {iteration}: {exc}") from exc
        if train_config.grad_clip is not None:
            grads = clip_gradients(grads, train_config.grad_clip)
        params = optimizer.step(params, grads, lr)
        log_rows.append((iteration, lr, loss_value))
        if progress is not None:
            progress(iteration, lr, loss_value)
    return params, log_rows


def loss_log_csv(log_rows):
    """Render log rows as CSV text; repr floats round-trip bitwise."""
    lines = ["iteration,lr,loss"]
    lines.extend(f"{i},{lr!r},{value!r}" for i, lr, value in log_rows)
    return "\n".join(lines) + "\n"
