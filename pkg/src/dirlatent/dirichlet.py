"""Dirichlet distribution: density, closed-form KL, moments and sampling.

Concentrations and simplex points are numpy arrays whose last axis indexes the
N categories; leading axes are treated as independent locations. The
``*_tensor`` variants and :func:`sample` participate in the gradient tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DomainError
from .special import digamma, gamma_log_pdf, log_gamma, log_sample_gamma, reg_inc_gamma_pq, trigamma
from .tensor import Tensor, as_tensor, record

__all__ = [
    "ALPHA_FLOOR",
    "as_concentration",
    "check_simplex",
    "log_pdf",
    "kl_divergence",
    "kl_divergence_tensor",
    "mean",
    "mean_tensor",
    "sample",
    "from_log_gammas",
    "log_gamma_grad",
]

ALPHA_FLOOR = 1e-6
SIMPLEX_TOL = 1e-9
# step for the central difference of P(a, x) in a
_CDF_STEP = 1e-5
# below this draw the small-x limit of the implicit derivative is used
_SMALL_DRAW = 1e-8


def as_concentration(alpha) -> np.ndarray:
    """Validate a concentration array, flooring entries at ``ALPHA_FLOOR``."""
    arr = np.asarray(alpha, dtype=np.float64)
    if arr.ndim == 0 or arr.shape[-1] < 1:
        raise ContractError("concentration needs a category axis")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("concentration entries must be finite and positive")
    return np.maximum(arr, ALPHA_FLOOR)


def check_simplex(w, tol: float = SIMPLEX_TOL) -> np.ndarray:
    arr = np.asarray(w, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.abs(arr.sum(-1) - 1.0) > tol):
        raise ContractError("point is not on the probability simplex")
    return arr


def log_pdf(w, alpha):
    """Log Dirichlet density of simplex point(s) ``w``.

    Points on the boundary (some w_k = 0) are outside the open support: they
    return -inf when alpha_k != 1 for a zero coordinate, never NaN.
    """
    w = check_simplex(w)
    alpha = as_concentration(alpha)
    if w.shape[-1] != alpha.shape[-1]:
        raise ContractError(f"dimension mismatch: {w.shape[-1]} vs {alpha.shape[-1]}")
    w, alpha = np.broadcast_arrays(w, alpha)
    zero = w == 0
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    terms = np.where(zero & (alpha == 1.0), 0.0, (alpha - 1.0) * np.where(zero, 1.0, logw))
    terms = np.where(zero & (alpha != 1.0), -np.inf, terms)
    out = log_gamma(alpha.sum(-1)) - log_gamma(alpha).sum(-1) + terms.sum(-1)
    return float(out) if np.ndim(out) == 0 else out


def _kl_parts(q: np.ndarray, p: np.ndarray):
    sq = q.sum(-1, keepdims=True)
    dig = digamma(q) - digamma(sq)
    val = (log_gamma(sq[..., 0]) - log_gamma(q).sum(-1)
           - log_gamma(p.sum(-1)) + log_gamma(p).sum(-1)
           + ((q - p) * dig).sum(-1))
    return val, sq


def kl_divergence(q, p):
    """KL(Dir(q) || Dir(p)), summed over the category axis.

    Closed form: ln G(sum q) - sum ln G(q_k) - ln G(sum p) + sum ln G(p_k)
    + sum (q_k - p_k)(psi(q_k) - psi(sum q)).
    """
    q = as_concentration(q)
    p = as_concentration(p)
    if q.shape[-1] != p.shape[-1]:
        raise ContractError(f"dimension mismatch: {q.shape[-1]} vs {p.shape[-1]}")
    q, p = np.broadcast_arrays(q, p)
    val, _ = _kl_parts(q, p)
    val = np.maximum(val, 0.0)
    return float(val) if np.ndim(val) == 0 else val


def kl_divergence_tensor(q: Tensor, p) -> Tensor:
    """Differentiable per-location KL; output drops the category axis.

    Gradient in q_k: (q_k - p_k) psi'(q_k) - psi'(sum q) sum_j (q_j - p_j).
    """
    q = as_tensor(q)
    qd = as_concentration(q.data)
    pd = np.broadcast_to(as_concentration(p), qd.shape)
    val, sq = _kl_parts(qd, pd)
    diff = qd - pd

    def bw(g):
        gq = diff * trigamma(qd) - trigamma(sq) * diff.sum(-1, keepdims=True)
        return (g[..., None] * gq,)

    return record("dirichlet_kl", val, (q,), bw)


def mean(alpha) -> np.ndarray:
    alpha = as_concentration(alpha)
    return alpha / alpha.sum(-1, keepdims=True)


def mean_tensor(alpha: Tensor) -> Tensor:
    alpha = as_tensor(alpha)
    s = alpha.data.sum(-1, keepdims=True)
    out = alpha.data / s
    return record("dirichlet_mean", out, (alpha,),
                  lambda g: ((g - (g * out).sum(-1, keepdims=True)) / s,))


def log_gamma_grad(alpha: np.ndarray, log_g: np.ndarray) -> np.ndarray:
    """d(ln g)/d(alpha) for g ~ Gamma(alpha, 1) held at fixed CDF level.

    Implicit reparameterization: dg/da = -(dP(a, g)/da) / pdf(a, g), with the
    a-derivative of the regularized incomplete gamma taken by central
    difference. For draws below 1e-8 the leading small-x behaviour
    P ~ g**a / G(a + 1) gives -(ln g - psi(a + 1)) / a in closed form.
    """
    a = np.asarray(alpha, dtype=np.float64)
    lg = np.asarray(log_g, dtype=np.float64)
    a, lg = np.broadcast_arrays(a, lg)
    out = np.empty(a.shape)
    small = lg < np.log(_SMALL_DRAW)
    if np.any(small):
        a_s = a[small]
        out[small] = -(lg[small] - digamma(a_s + 1.0)) / a_s
    big = ~small
    if np.any(big):
        a_b, x_b = a[big], np.exp(lg[big])
        h = np.minimum(_CDF_STEP, 0.5 * a_b)
        p_hi, q_hi = reg_inc_gamma_pq(a_b + h, x_b)
        p_lo, q_lo = reg_inc_gamma_pq(a_b - h, x_b)
        lower_side = p_hi + p_lo < 1.0
        dp = np.where(lower_side, p_hi - p_lo, q_lo - q_hi) / (2.0 * h)
        # pdf(x) * x, so the result is the derivative of ln g
        dens = np.exp(gamma_log_pdf(x_b, a_b) + lg[big])
        out[big] = -dp / dens
    return out


def from_log_gammas(alpha: Tensor, log_g) -> Tensor:
    """Normalize Gamma(alpha_k, 1) draws (given as logs) onto the simplex.

    The backward pass carries d(w)/d(alpha) through :func:`log_gamma_grad`
    and the softmax-style normalization w = g / sum(g).
    """
    alpha = as_tensor(alpha)
    lg = np.asarray(log_g, dtype=np.float64)
    if lg.shape != alpha.shape:
        raise ContractError(f"draw shape {lg.shape} != concentration shape {alpha.shape}")
    z = np.exp(lg - lg.max(-1, keepdims=True))
    w = z / z.sum(-1, keepdims=True)
    a = alpha.data

    def bw(g):
        g_log = w * (g - (g * w).sum(-1, keepdims=True))
        return (g_log * log_gamma_grad(np.maximum(a, ALPHA_FLOOR), lg),)

    return record("dirichlet_sample", w, (alpha,), bw)


def sample(alpha, rng: np.random.Generator) -> Tensor:
    """Draw w ~ Dir(alpha) per location as g / sum(g), g_k ~ Gamma(alpha_k, 1).

    Returns a tensor; when ``alpha`` is a tensor that requires a gradient the
    draw is differentiable in alpha (implicit reparameterization).
    """
    alpha = as_tensor(alpha)
    a = as_concentration(alpha.data)
    lg = log_sample_gamma(a, rng)
    return from_log_gammas(alpha, np.asarray(lg).reshape(a.shape))
