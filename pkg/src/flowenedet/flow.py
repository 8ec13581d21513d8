"""The L-block invertible network over the 2-channel energy input.

Each block applies, in order: ActNorm, an invertible 1x1 channel mix, a
conditional affine coupling, then a channel swap. The coupling leaves
channel 1 untouched and rescales channel 2 by sigmoid(-r) (strictly inside
(0, 1)) plus a shift, where (r, t) come from a small convolutional subnet
of the first channel concatenated with the condition map.

Log-determinant bookkeeping is split: ActNorm and coupling terms attach to
the channel they act on (and get swapped along with the channels), while
the channel-mix log|det W| is shared between both output dimensions.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class FlowConfig:
    """Architecture hyperparameters of the invertible network."""

    n_blocks: int = 8
    condition_width: int = 0
    kernel_size: int = 7
    hidden_width: int = 32
    dropout_rate: float = 0.2
    cov_mode: str = "full"

    def __post_init__(self):
        if self.n_blocks < 2 or self.n_blocks % 2 != 0:
            raise ValueError(f"n_blocks must be even and >= 2, got {self.n_blocks}")
        if self.kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.condition_width < 0:
            raise ValueError("condition_width must be >= 0")
        if self.cov_mode not in ("full", "diag"):
            raise ValueError(f"cov_mode must be 'full' or 'diag', got {self.cov_mode!r}")


@dataclass
class FlowOutput:
    """Latent map plus the decomposed log-determinant terms."""

    u: object  # (N, 2, H, W)
    ldj_channel: object  # (N, 2, H, W)
    ldj_shared: object  # (N, H, W)


_BLOCK_PARAMS = (
    "actnorm_logscale",
    "actnorm_bias",
    "mix_weight",
    "conv_in_weight",
    "conv_in_bias",
    "conv_mid_weight",
    "conv_mid_bias",
    "conv_out_weight",
    "conv_out_bias",
)

_DENSITY_PARAMS = ("raw_beta", "mu", "raw_diag_u", "offdiag_u")


def param_names(config):
    """Canonical parameter ordering for archives and optimizers."""
    names = []
    for l in range(config.n_blocks):
        names.extend(f"block{l}.{p}" for p in _BLOCK_PARAMS)
    names.extend(f"density.{p}" for p in _DENSITY_PARAMS)
    return names


def _uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config, rng):
    """Fresh parameter set.

    Mixing matrices start as random rotations (log|det| = 0); subnet input
    and middle convolutions use uniform fan-in init; the final subnet layer
    is zeroed so every coupling starts as the r = t = 0 half-scaling map.
    Distributional parameters start at zero and pass through softplus.
    """
    cin = 1 + config.condition_width
    hw = config.hidden_width
    k = config.kernel_size
    params = {}
    for l in range(config.n_blocks):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        params[f"block{l}.actnorm_logscale"] = np.zeros(2)
        params[f"block{l}.actnorm_bias"] = np.zeros(2)
        params[f"block{l}.mix_weight"] = rot
        params[f"block{l}.conv_in_weight"] = _uniform_fan_in(rng, (hw, cin, 1, 1), cin)
        params[f"block{l}.conv_in_bias"] = _uniform_fan_in(rng, (hw,), cin)
        params[f"block{l}.conv_mid_weight"] = _uniform_fan_in(rng, (hw, hw, k, k), hw * k * k)
        params[f"block{l}.conv_mid_bias"] = _uniform_fan_in(rng, (hw,), hw * k * k)
        params[f"block{l}.conv_out_weight"] = np.zeros((2, hw, 1, 1))
        params[f"block{l}.conv_out_bias"] = np.zeros(2)
    params["density.raw_beta"] = np.zeros(2)
    params["density.mu"] = np.zeros(2)
    params["density.raw_diag_u"] = np.zeros(2)
    params["density.offdiag_u"] = np.zeros(1)
    return params


def _subnet(x1, a, params, l, config, dropout_mask):
    """Coupling subnet: 1x1 conv, sigmoid, KxK conv, sigmoid, 1x1 conv."""
    h = x1 if a is None else ad.concat([x1, a], axis=1)
    h = ad.sigmoid(ad.conv2d(h, params[f"block{l}.conv_in_weight"], params[f"block{l}.conv_in_bias"], 0))
    h = ad.sigmoid(
        ad.conv2d(
            h,
            params[f"block{l}.conv_mid_weight"],
            params[f"block{l}.conv_mid_bias"],
            config.kernel_size // 2,
        )
    )
    if dropout_mask is not None:
        h = h * ad.as_var(dropout_mask)
    rt = ad.conv2d(h, params[f"block{l}.conv_out_weight"], params[f"block{l}.conv_out_bias"], 0)
    return rt[:, 0:1], rt[:, 1:2]


def forward(z, a, params, config, dropout_masks=None):
    """Run the flow; returns FlowOutput of Vars.

    `params` maps names to Vars or plain arrays (plain arrays build no
    tape). `dropout_masks` is a per-block list of pre-sampled inverted
    dropout masks, or None for inference.
    """
    params = {name: ad.as_var(value) for name, value in params.items()}
    x = ad.as_var(z)
    if x.value.ndim != 4 or x.value.shape[1] != 2:
        raise ValueError(f"flow input must be (N, 2, H, W), got {x.value.shape}")
    n, _, h, w = x.value.shape
    if config.condition_width > 0:
        if a is None:
            raise ValueError("condition_width > 0 requires a condition map")
        a = ad.as_var(a)
        if a.value.shape != (n, config.condition_width, h, w):
            raise ValueError(
                f"condition map shape {a.value.shape} does not match "
                f"(N, P, H, W) = {(n, config.condition_width, h, w)}"
            )
    else:
        a = None

    ldj_ch = ad.as_var(np.zeros((n, 2, h, w)))
    ldj_sh = ad.as_var(np.zeros((n, h, w)))
    zero_col = ad.as_var(np.zeros((n, 1, h, w)))

    for l in range(config.n_blocks):
        logscale = ad.reshape(params[f"block{l}.actnorm_logscale"], (1, 2, 1, 1))
        bias = ad.reshape(params[f"block{l}.actnorm_bias"], (1, 2, 1, 1))
        x = ad.exp(logscale) * (x + bias)
        ldj_ch = ldj_ch + logscale

        mix = params[f"block{l}.mix_weight"]
        x = ad.conv2d(x, ad.reshape(mix, (2, 2, 1, 1)), None, 0)
        det = mix[0, 0] * mix[1, 1] - mix[0, 1] * mix[1, 0]
        # log|det| as log(det^2)/2: same value and derivative, no abs op
        ldj_sh = ldj_sh + 0.5 * ad.log(ad.square(det))

        mask = None if dropout_masks is None else dropout_masks[l]
        x1, x2 = x[:, 0:1], x[:, 1:2]
        r, t = _subnet(x1, a, params, l, config, mask)
        x2 = x2 * ad.sigmoid(-r) + t
        ldj_ch = ldj_ch + ad.concat([zero_col, -ad.softplus(r)], axis=1)

        x = ad.concat([x1, x2], axis=1)[:, ::-1]
        ldj_ch = ldj_ch[:, ::-1]

        if not np.all(np.isfinite(x.value)):
            raise FloatingPointError(f"non-finite activation after flow block {l}")

    return FlowOutput(u=x, ldj_channel=ldj_ch, ldj_shared=ldj_sh)


def inverse(u, a, params, config):
    """Exact inverse of `forward` (dropout off); pure numpy."""
    params = {name: np.asarray(v.value if isinstance(v, ad.Var) else v) for name, v in params.items()}
    x = np.array(u, dtype=np.float64)
    n, _, h, w = x.shape
    if config.condition_width > 0 and a is None:
        raise ValueError("condition_width > 0 requires a condition map")

    for l in reversed(range(config.n_blocks)):
        x = x[:, ::-1]

        x1, y2 = x[:, 0:1], x[:, 1:2]
        r, t = _subnet(ad.as_var(x1), None if a is None else ad.as_var(a), params, l, config, None)
        x2 = (y2 - t.value) / np.exp(-np.logaddexp(0.0, r.value))

        mix = params[f"block{l}.mix_weight"]
        det = mix[0, 0] * mix[1, 1] - mix[0, 1] * mix[1, 0]
        if det == 0.0:
            raise np.linalg.LinAlgError(f"singular mixing matrix in flow block {l}")
        inv = np.array([[mix[1, 1], -mix[0, 1]], [-mix[1, 0], mix[0, 0]]]) / det
        x = np.concatenate([x1, x2], axis=1)
        x = np.einsum("oc,nchw->nohw", inv, x, optimize=True)

        logscale = params[f"block{l}.actnorm_logscale"].reshape(1, 2, 1, 1)
        bias = params[f"block{l}.actnorm_bias"].reshape(1, 2, 1, 1)
        x = x * np.exp(-logscale) - bias
    return x


def init_actnorm(params, batch, config):
    """Data-dependent ActNorm init, sequential over blocks.

    For each block in order, runs the partially initialized flow up to that
    block's ActNorm input over the whole batch and sets bias = -mean,
    logscale = -log(std + 1e-6) per channel, so post-ActNorm activations
    start near zero mean and unit variance. Mutates and returns `params`.
    """
    if not batch:
        raise ValueError("init_actnorm: empty batch")
    normalized = []
    for z, a in batch:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 3:
            z = z[None]
        if a is not None:
            a = np.asarray(a, dtype=np.float64)
            if a.ndim == 3:
                a = a[None]
        normalized.append((z, a))
    batch = normalized
    for l in range(config.n_blocks):
        acts = []
        for z, a in batch:
            x = z
            av = None if a is None else ad.as_var(a)
            for j in range(l):
                logscale = params[f"block{j}.actnorm_logscale"].reshape(1, 2, 1, 1)
                bias = params[f"block{j}.actnorm_bias"].reshape(1, 2, 1, 1)
                x = np.exp(logscale) * (x + bias)
                x = np.einsum("oc,nchw->nohw", params[f"block{j}.mix_weight"], x, optimize=True)
                x1, x2 = x[:, 0:1], x[:, 1:2]
                r, t = _subnet(ad.as_var(x1), av, params, j, config, None)
                x2 = x2 * np.exp(-np.logaddexp(0.0, r.value)) + t.value
                x = np.concatenate([x1, x2], axis=1)[:, ::-1]
            acts.append(x)
        stacked = np.concatenate(acts, axis=0)
        mean = stacked.mean(axis=(0, 2, 3))
        std = stacked.std(axis=(0, 2, 3))
        params[f"block{l}.actnorm_bias"] = -mean
        params[f"block{l}.actnorm_logscale"] = -np.log(std + 1e-6)
    return params
