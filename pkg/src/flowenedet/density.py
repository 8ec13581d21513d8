"""Class-conditional density head over the flow's latent output.

The base distribution is a full-covariance bivariate Gaussian expressed
through the upper-triangular Cholesky factor U of the precision matrix
(inverse covariance = U^T U), which decomposes the joint log-density into
one term per latent dimension:

    l_m(u) = log diag(U)_m - 1/2 [(U (u - mu))_m]^2 - 1/2 log 2pi

Dimension m doubles as mixture component m: adding a learned class weight
log beta_m and that dimension's share of the flow log-determinant gives the
class-conditional logit s_m whose softmax is the posterior over
{1: consistent, 2: deviating}. beta and diag(U) stay positive through a
softplus of unconstrained raw parameters, all initialized at zero.
"""

import numpy as np

from . import autodiff as ad

LOG_2PI = float(np.log(2.0 * np.pi))


def _head_terms(flow_out, params, cov_mode):
    """Per-dimension Gaussian terms l_m(u) as (N, 2, H, W) Vars."""
    u = ad.as_var(flow_out.u)
    mu = ad.reshape(ad.as_var(params["density.mu"]), (1, 2, 1, 1))
    diag_u = ad.softplus(ad.as_var(params["density.raw_diag_u"]))
    v = u - mu
    uv1 = ad.reshape(diag_u[0], (1, 1, 1, 1)) * v[:, 0:1]
    if cov_mode == "full":
        off = ad.reshape(ad.as_var(params["density.offdiag_u"]), (1, 1, 1, 1))
        uv1 = uv1 + off * v[:, 1:2]
    uv2 = ad.reshape(diag_u[1], (1, 1, 1, 1)) * v[:, 1:2]
    uv = ad.concat([uv1, uv2], axis=1)
    log_diag = ad.reshape(ad.log(diag_u), (1, 2, 1, 1))
    return log_diag - 0.5 * ad.square(uv) - 0.5 * LOG_2PI


def class_logits(flow_out, params, cov_mode="full"):
    """Class-conditional logits s as an (N, 2, H, W) Var.

    s_m = log beta_m + l_m(u) + ldj_channel_m + ldj_shared / 2; the shared
    channel-mix log-determinant is split equally between the two
    dimensions. The split cancels in the posterior softmax.
    """
    terms = _head_terms(flow_out, params, cov_mode)
    log_beta = ad.reshape(ad.log(ad.softplus(ad.as_var(params["density.raw_beta"]))), (1, 2, 1, 1))
    ldj_ch = ad.as_var(flow_out.ldj_channel)
    ldj_sh = ad.as_var(flow_out.ldj_shared)
    n, h, w = ldj_sh.value.shape
    half_shared = ad.reshape(ldj_sh, (n, 1, h, w)) * 0.5
    return log_beta + terms + ldj_ch + half_shared


def posterior(s):
    """P(m = 2 | z, a): the deviating-component softmax, (N, H, W) or (H, W).

    Computed as sigmoid(s_2 - s_1); shift-invariant and overflow-safe.
    """
    s = np.asarray(s.value if isinstance(s, ad.Var) else s, dtype=np.float64)
    diff = s[..., 0, :, :] - s[..., 1, :, :]
    return np.exp(-np.logaddexp(0.0, diff))


def total_log_density(flow_out, params, cov_mode="full"):
    """log p(z | a) of the full flow: base log-density plus all ldj terms.

    The class weights beta reweight the per-class logits, not the density,
    so they are excluded here. Returns a plain (N, H, W) array.
    """
    terms = _head_terms(flow_out, params, cov_mode)
    total = terms.value.sum(axis=1)
    ldj_ch = flow_out.ldj_channel
    ldj_ch = ldj_ch.value if isinstance(ldj_ch, ad.Var) else np.asarray(ldj_ch)
    ldj_sh = flow_out.ldj_shared
    ldj_sh = ldj_sh.value if isinstance(ldj_sh, ad.Var) else np.asarray(ldj_sh)
    return total + ldj_ch.sum(axis=1) + ldj_sh
