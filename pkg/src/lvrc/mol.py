"""Mixture-of-logistics predictive distribution.

Parameterization, stable log-likelihood, sampling, closed-form mixture
variance, the two predictive-variance regularizers (linear and log), the
broad-baseline mixture variant, and exact analytic gradients of the
combined objective with respect to the unconstrained parameters.

All functions are vectorized: parameter arrays carry the mixture axis
last, and an arbitrary batch shape in front.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

S_MIN = 1e-4
S_MAX = 10.0
UNIFORM_EPS = 1e-7

_PI2_3 = np.pi**2 / 3.0


@dataclass
class MoLParams:
    """Constrained mixture parameters: weights on the simplex, positive scales."""

    gammas: np.ndarray
    mus: np.ndarray
    scales: np.ndarray

    @property
    def n_components(self) -> int:
        return self.gammas.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.gammas.shape[:-1]


@dataclass
class RawMoLParams:
    """Unconstrained parameters: weight logits, locations, log scales."""

    logits: np.ndarray
    locs: np.ndarray
    log_scales: np.ndarray

    @classmethod
    def from_flat(cls, flat: np.ndarray, n_mix: int) -> "RawMoLParams":
        """Split a (..., 3K) projection output into (logits, locs, log_scales)."""
        if flat.shape[-1] != 3 * n_mix:
            raise ValueError(f"expected trailing dim {3 * n_mix}, got {flat.shape[-1]}")
        return cls(
            logits=flat[..., :n_mix],
            locs=flat[..., n_mix : 2 * n_mix],
            log_scales=flat[..., 2 * n_mix :],
        )


@dataclass
class BaselineSpec:
    """Designer-set broad component mixed in during training only."""

    gamma0: float
    mu0: float = 0.0
    s0: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.gamma0 < 1.0:
            raise ConfigError("gamma0 must be in [0, 1)")


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def constrain(raw: RawMoLParams) -> MoLParams:
    """Map unconstrained parameters to valid mixture parameters.

    Weights via softmax, scales via exp clamped to [S_MIN, S_MAX],
    locations passed through.
    """
    for arr in (raw.logits, raw.locs, raw.log_scales):
        if not np.all(np.isfinite(arr)):
            raise NumericError("raw mixture parameters must be finite")
    return MoLParams(
        gammas=softmax(raw.logits),
        mus=np.asarray(raw.locs, dtype=np.float64).copy(),
        scales=np.clip(np.exp(raw.log_scales), S_MIN, S_MAX),
    )


def logistic_log_pdf(x, mus, scales):
    """Elementwise log density of the logistic distribution, stable in the tails."""
    z = (np.asarray(x, dtype=np.float64)[..., None] - mus) / scales
    return -z - 2.0 * softplus(-z) - np.log(scales)


def _log_weighted_pdfs(x, p: MoLParams):
    return np.log(p.gammas) + logistic_log_pdf(x, p.mus, p.scales)


def log_prob(x, p: MoLParams):
    """log sum_k gamma_k * logistic(x; mu_k, s_k), via log-sum-exp."""
    w = _log_weighted_pdfs(x, p)
    m = np.max(w, axis=-1)
    return m + np.log(np.sum(np.exp(w - m[..., None]), axis=-1))


def sample(p: MoLParams, rng: np.random.Generator):
    """One draw per batch element.

    Selects the component from the weights, then transforms a uniform:
    x = mu_k + s_k * ln(u / (1 - u)), with u clipped to
    [UNIFORM_EPS, 1 - UNIFORM_EPS]. Component uniforms are drawn before
    logistic uniforms, one each per batch element.
    """
    batch = p.batch_shape
    cum = np.cumsum(p.gammas, axis=-1)
    u_comp = rng.random(batch)
    k = np.minimum(
        np.sum(u_comp[..., None] >= cum, axis=-1), p.n_components - 1
    )
    u = np.clip(rng.random(batch), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    mu_k = np.take_along_axis(p.mus, k[..., None], axis=-1)[..., 0]
    s_k = np.take_along_axis(p.scales, k[..., None], axis=-1)[..., 0]
    return mu_k + s_k * (np.log(u) - np.log1p(-u))


def sample_n(p: MoLParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """n iid draws from a single (unbatched) mixture."""
    if p.batch_shape != ():
        raise ValueError("sample_n expects unbatched parameters")
    tiled = MoLParams(
        gammas=np.broadcast_to(p.gammas, (n, p.n_components)),
        mus=np.broadcast_to(p.mus, (n, p.n_components)),
        scales=np.broadcast_to(p.scales, (n, p.n_components)),
    )
    return sample(tiled, rng)


def mixture_mean(p: MoLParams):
    return np.sum(p.gammas * p.mus, axis=-1)


def mixture_variance(p: MoLParams):
    """sigma_q^2 = sum_k gamma_k (s_k^2 pi^2/3 + mu_k^2) - (sum_k gamma_k mu_k)^2."""
    second = np.sum(p.gammas * (p.scales**2 * _PI2_3 + p.mus**2), axis=-1)
    return second - mixture_mean(p) ** 2


def jvar_linear(p: MoLParams) -> float:
    """Mean predictive variance over the batch."""
    var = np.asarray(mixture_variance(p))
    if var.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(var))


def jvar_log(p: MoLParams, a: float) -> float:
    """Mean of ln(sigma_q + a) over the batch; a provides the floor."""
    if a <= 0:
        raise ConfigError("floor a must be positive")
    var = np.asarray(mixture_variance(p))
    if var.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(np.log(np.sqrt(np.maximum(var, 0.0)) + a)))


def baseline_log_prob(x, raw: RawMoLParams, spec: BaselineSpec, mode: str):
    """Log density of the mixture augmented with a fixed broad component.

    Train mode evaluates gamma0 * q0 + (1 - gamma0) * sum_k gamma_k q_k,
    where the K learned weights sum to 1 - gamma0. Infer mode drops the
    broad component and renormalizes by 1/(1 - gamma0), which is exactly
    the plain K-component mixture. gamma0 = 0 reproduces log_prob
    bit-for-bit in both modes.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    main = log_prob(x, constrain(raw))
    if mode == "infer":
        return main
    log_g0 = np.log(spec.gamma0) if spec.gamma0 > 0.0 else -np.inf
    z0 = (np.asarray(x, dtype=np.float64) - spec.mu0) / spec.s0
    base_log_pdf = -z0 - 2.0 * softplus(-z0) - np.log(spec.s0)
    return np.logaddexp(log_g0 + base_log_pdf, np.log1p(-spec.gamma0) + main)


def nll_grad(x, raw: RawMoLParams):
    """Negative log-likelihood and its exact gradient w.r.t. raw parameters.

    Returns (nll, d_logits, d_locs, d_log_scales), each with the batch
    shape of x (gradients carry the trailing mixture axis).
    """
    p = constrain(raw)
    w = _log_weighted_pdfs(x, p)
    m = np.max(w, axis=-1, keepdims=True)
    e = np.exp(w - m)
    denom = np.sum(e, axis=-1, keepdims=True)
    nll = -(m[..., 0] + np.log(denom[..., 0]))
    resp = e / denom

    z = (np.asarray(x, dtype=np.float64)[..., None] - p.mus) / p.scales
    th = np.tanh(0.5 * z)
    active = _scale_active(raw.log_scales)

    d_logits = p.gammas - resp
    d_locs = -resp * th / p.scales
    d_log_scales = -resp * (z * th - 1.0) * active
    return nll, d_logits, d_locs, d_log_scales


def _scale_active(log_scales) -> np.ndarray:
    """1 where the exp link is inside the clamp, 0 where clamped."""
    s_raw = np.exp(np.asarray(log_scales, dtype=np.float64))
    return ((s_raw > S_MIN) & (s_raw < S_MAX)).astype(np.float64)


def variance_grad(raw: RawMoLParams):
    """Mixture variance and its gradient w.r.t. raw parameters."""
    p = constrain(raw)
    mean = mixture_mean(p)
    var = mixture_variance(p)
    centered = p.mus - mean[..., None]
    active = _scale_active(raw.log_scales)

    d_logits = p.gammas * (p.scales**2 * _PI2_3 + centered**2 - var[..., None])
    d_locs = 2.0 * p.gammas * centered
    d_log_scales = 2.0 * _PI2_3 * p.gammas * p.scales**2 * active
    return var, d_logits, d_locs, d_log_scales


def reg_grad(raw: RawMoLParams, a: float, regularizer: str):
    """Per-element regularization term and gradient w.r.t. raw parameters.

    'linear' is sigma_q^2; 'log' is ln(sigma_q + a).
    """
    var, dl, dm, ds = variance_grad(raw)
    if regularizer == "linear":
        return var, dl, dm, ds
    if regularizer == "log":
        sigma = np.sqrt(np.maximum(var, 0.0))
        term = np.log(sigma + a)
        scale = (1.0 / (2.0 * sigma * (sigma + a)))[..., None]
        return term, scale * dl, scale * dm, scale * ds
    raise ConfigError(f"unknown regularizer {regularizer!r}")


def grad_all(x, raw: RawMoLParams, nu: float, a: float = 1e-4, regularizer: str = "log"):
    """Objective -log q(x) + nu * reg and its exact gradient w.r.t. raw params.

    Returns (value, RawMoLParams gradient holder).
    """
    nll, dl, dm, ds = nll_grad(x, raw)
    value = nll
    if nu != 0.0:
        term, rl, rm, rs = reg_grad(raw, a, regularizer)
        value = nll + nu * term
        dl = dl + nu * rl
        dm = dm + nu * rm
        ds = ds + nu * rs
    return value, RawMoLParams(logits=dl, locs=dm, log_scales=ds)
