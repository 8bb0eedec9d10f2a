"""Special functions for the Dirichlet machinery.

All functions accept scalars or arrays and return the same kind. Documented
absolute accuracy on x in [1e-3, 1e3] (a in [1e-3, 1e3] for the incomplete
gamma): ``ACCURACY`` below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = [
    "Accuracy",
    "ACCURACY",
    "log_gamma",
    "digamma",
    "trigamma",
    "reg_inc_gamma_p",
    "reg_inc_gamma_pq",
    "gamma_log_pdf",
    "sample_gamma",
    "log_sample_gamma",
]


@dataclass(frozen=True)
class Accuracy:
    abs_tol: float
    domain: tuple[float, float]


ACCURACY = {
    "log_gamma": Accuracy(1e-11, (1e-3, 1e3)),
    "digamma": Accuracy(1e-11, (1e-3, 1e3)),
    "trigamma": Accuracy(1e-10, (1e-2, 1e3)),
    "reg_inc_gamma_p": Accuracy(1e-11, (1e-3, 1e3)),
}

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LANCZOS_G = 7.0
_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
# shift digamma/trigamma arguments up to this value before the asymptotic
# series; at x >= 6 the first omitted term is below 2e-13.
_SHIFT = 6.0
_EPS = 1e-15
_FPMIN = 1e-300
_MAX_ITER = 100_000


def _prep(x, name: str, allow_zero: bool = False):
    arr = np.asarray(x, dtype=np.float64)
    bad = (arr < 0) if allow_zero else (arr <= 0)
    if np.any(bad) or np.any(np.isnan(arr)):
        raise DomainError(f"{name}: argument out of domain")
    return arr


def _out(arr: np.ndarray, like):
    return float(arr) if np.ndim(like) == 0 else arr


def _lanczos(x: np.ndarray) -> np.ndarray:
    # valid for x >= 0.5
    z = x - 1.0
    acc = np.full_like(z, _LANCZOS[0])
    for i, coef in enumerate(_LANCZOS[1:], start=1):
        acc += coef / (z + i)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(acc)


def _stirling(x: np.ndarray) -> np.ndarray:
    # valid for x >= 10 with error < 1e-13
    r = 1.0 / x
    r2 = r * r
    series = r * (1 / 12 - r2 * (1 / 360 - r2 * (1 / 1260 - r2 * (1 / 1680 - r2 / 1188))))
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + series


def log_gamma(x):
    """Natural log of the Gamma function for x > 0.

    Lanczos (g=7, 9 terms) below 10, Stirling series with five correction
    terms above; x < 0.5 goes through ln G(x) = ln G(x+1) - ln x.
    """
    arr = _prep(x, "log_gamma")
    out = np.empty_like(arr)
    big = arr >= 10.0
    out[big] = _stirling(arr[big])
    small = ~big
    xs = arr[small]
    tiny = xs < 0.5
    vals = _lanczos(np.where(tiny, xs + 1.0, xs))
    vals[tiny] -= np.log(xs[tiny])
    out[small] = vals
    return _out(out, x)


def _shifted(arr: np.ndarray, power: int):
    x = arr.copy()
    acc = np.zeros_like(x)
    mask = x < _SHIFT
    while np.any(mask):
        acc[mask] += 1.0 / x[mask] ** power
        x[mask] += 1.0
        mask = x < _SHIFT
    return x, acc


def digamma(x):
    """Logarithmic derivative of the Gamma function for x > 0."""
    arr = _prep(x, "digamma")
    z, acc = _shifted(arr, 1)
    r2 = 1.0 / (z * z)
    tail = r2 * (1 / 12 - r2 * (1 / 120 - r2 * (1 / 252 - r2 * (1 / 240 - r2 * (
        1 / 132 - r2 * (691 / 32760 - r2 / 12))))))
    return _out(np.log(z) - 0.5 / z - tail - acc, x)


def trigamma(x):
    """Derivative of :func:`digamma` for x > 0."""
    arr = _prep(x, "trigamma")
    z, acc = _shifted(arr, 2)
    r = 1.0 / z
    r2 = r * r
    tail = r * r2 * (1 / 6 - r2 * (1 / 30 - r2 * (1 / 42 - r2 * (1 / 30 - r2 * (
        5 / 66 - r2 * (691 / 2730 - r2 * 7 / 6))))))
    return _out(r + 0.5 * r2 + tail + acc, x)


def _gamma_series(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    # lower regularized P(a, x)
    total = 1.0 / a
    term = total.copy()
    ap = a.copy()
    active = np.arange(a.size)
    for _ in range(_MAX_ITER):
        if active.size == 0:
            break
        ap[active] += 1.0
        term[active] *= x[active] / ap[active]
        total[active] += term[active]
        active = active[np.abs(term[active]) >= np.abs(total[active]) * _EPS]
    return total * np.exp(-x + a * np.log(x) - log_gamma(a))


def _gamma_cf(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = np.full_like(a, 1.0 / _FPMIN)
    d = 1.0 / b
    h = d.copy()
    active = np.arange(a.size)
    for i in range(1, _MAX_ITER):
        if active.size == 0:
            break
        ai = a[active]
        an = -i * (i - ai)
        b[active] += 2.0
        dd = an * d[active] + b[active]
        dd = np.where(np.abs(dd) < _FPMIN, _FPMIN, dd)
        cc = b[active] + an / c[active]
        cc = np.where(np.abs(cc) < _FPMIN, _FPMIN, cc)
        dd = 1.0 / dd
        delta = dd * cc
        d[active] = dd
        c[active] = cc
        h[active] *= delta
        active = active[np.abs(delta - 1.0) >= _EPS]
    return np.exp(-x + a * np.log(x) - log_gamma(a)) * h


def reg_inc_gamma_pq(a, x) -> tuple[np.ndarray, np.ndarray]:
    """Both regularized incomplete gammas, P(a, x) and Q(a, x) = 1 - P(a, x).

    Whichever of the two is evaluated directly keeps full relative accuracy;
    series expansion for x < a + 1, continued fraction otherwise.
    """
    a_arr = _prep(a, "reg_inc_gamma_p(a)")
    x_arr = _prep(x, "reg_inc_gamma_p(x)", allow_zero=True)
    a_b, x_b = np.broadcast_arrays(a_arr, x_arr)
    a_f = a_b.ravel().copy()
    x_f = x_b.ravel().copy()
    lower = np.zeros_like(a_f)
    upper = np.ones_like(a_f)
    inf = np.isinf(x_f)
    lower[inf], upper[inf] = 1.0, 0.0
    ser = (x_f > 0) & (x_f < a_f + 1.0) & ~inf
    cf = (x_f >= a_f + 1.0) & ~inf
    if np.any(ser):
        lower[ser] = np.clip(_gamma_series(a_f[ser], x_f[ser]), 0.0, 1.0)
        upper[ser] = 1.0 - lower[ser]
    if np.any(cf):
        upper[cf] = np.clip(_gamma_cf(a_f[cf], x_f[cf]), 0.0, 1.0)
        lower[cf] = 1.0 - upper[cf]
    return lower.reshape(a_b.shape), upper.reshape(a_b.shape)


def reg_inc_gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x) for a > 0, x >= 0."""
    lower, _ = reg_inc_gamma_pq(a, x)
    return _out(lower, np.broadcast(np.asarray(a), np.asarray(x)))


def gamma_log_pdf(x, shape):
    """Log density of Gamma(shape, 1) at x > 0."""
    x = np.asarray(x, dtype=np.float64)
    shape = np.asarray(shape, dtype=np.float64)
    return (shape - 1.0) * np.log(x) - x - log_gamma(shape)


def _marsaglia_tsang(shape: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # squeeze/accept sampler, valid for shape >= 1
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(shape)
    pending = np.arange(shape.size)
    while pending.size:
        n = pending.size
        z = rng.standard_normal(n)
        u = rng.random(n)
        dp, cp = d[pending], c[pending]
        v = 1.0 + cp * z
        v = v * v * v
        pos = v > 0
        logv = np.log(np.where(pos, v, 1.0))
        squeeze = u < 1.0 - 0.0331 * z ** 4
        full = np.log(np.maximum(u, _FPMIN)) < 0.5 * z * z + dp * (1.0 - v + logv)
        ok = pos & (squeeze | full)
        out[pending[ok]] = dp[ok] * v[ok]
        pending = pending[~ok]
    return out


def log_sample_gamma(shape, rng: np.random.Generator, size=None):
    """Log of Gamma(shape, 1) draws; stays finite for very small shapes.

    Shapes below one are boosted to shape + 1 and corrected by a factor
    U**(1/shape), applied in log space.
    """
    arr = _prep(shape, "sample_gamma")
    if size is not None:
        arr = np.broadcast_to(arr, size)
    flat = np.array(arr, dtype=np.float64).ravel()
    boost = flat < 1.0
    draws = _marsaglia_tsang(np.where(boost, flat + 1.0, flat), rng)
    logs = np.log(draws)
    nb = int(boost.sum())
    if nb:
        u = rng.random(nb)
        logs[boost] += np.log(np.maximum(u, _FPMIN)) / flat[boost]
    logs = logs.reshape(np.shape(arr))
    return _out(logs, arr)


def sample_gamma(shape, rng: np.random.Generator, size=None):
    """Draw from Gamma(shape, 1) using the caller-owned generator ``rng``."""
    return np.exp(log_sample_gamma(shape, rng, size))
