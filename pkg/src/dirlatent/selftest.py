"""Quick oracle suites run by ``dirlatent selftest``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as sps

from . import dirichlet
from .codebook import Codebook, decode_convex
from .gradcheck import check_gradients
from .special import digamma, log_gamma, reg_inc_gamma_p
from .tensor import (Tensor, conv2d, conv2d_transpose, layer_norm, leaky_relu, softmax,
                     softplus)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "detail": self.detail}


def kl_vs_monte_carlo(seed: int = 0, pairs: int = 5, n: int = 200_000) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        q, p = rng.uniform(0.3, 5.0, 3), rng.uniform(0.3, 5.0, 3)
        w = rng.dirichlet(q, size=n)
        lr = dirichlet.log_pdf(w, q) - dirichlet.log_pdf(w, p)
        se = lr.std(ddof=1) / np.sqrt(n)
        worst = max(worst, abs(lr.mean() - dirichlet.kl_divergence(q, p)) / se)
    return SuiteResult("kl_vs_monte_carlo", bool(worst < 4.0), f"worst deviation {worst:.2f} standard errors")


def special_identities() -> SuiteResult:
    x = np.array([0.01, 0.3, 1.7, 6.5, 42.0])
    errs = [
        np.max(np.abs(log_gamma(x + 1) - log_gamma(x) - np.log(x))),
        np.max(np.abs(digamma(x + 1) - digamma(x) - 1 / x)),
        np.max(np.abs(reg_inc_gamma_p(x, x) - sps.gammainc(x, x))),
    ]
    worst = float(max(errs))
    return SuiteResult("special_identities", worst < 1e-9, f"max error {worst:.2e}")


def gradient_checks(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)

    def t(*shape, lo=-1.0, hi=1.0):
        return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    x, y = t(3, 4), t(3, 4)
    img, ker = t(1, 2, 6, 6), t(3, 2, 3, 3)
    tin, tker = t(1, 2, 3, 3), t(2, 3, 4, 4)
    g, b = t(4), t(4)
    alpha = t(2, 3, lo=0.5, hi=3.0)
    weights = Tensor(rng.dirichlet(np.ones(3), size=2), requires_grad=True)
    items = t(3, 4)
    cases = {
        "mul_div": (lambda: ((x * y) / (y * y + 2.0)).sum(), [x, y]),
        "softmax": (lambda: (softmax(x) * y).sum(), [x]),
        "softplus_leaky": (lambda: (softplus(x) * leaky_relu(y)).sum(), [x, y]),
        "layer_norm": (lambda: (layer_norm(x, g, b) * y).sum(), [x, g, b]),
        "conv2d": (lambda: (conv2d(img, ker, stride=2, pad=1).exp()).mean(), [img, ker]),
        "conv2d_transpose": (lambda: (conv2d_transpose(tin, tker, stride=2, pad=1).exp()).mean(),
                             [tin, tker]),
        "dirichlet_kl": (lambda: dirichlet.kl_divergence_tensor(alpha, np.ones(3)).sum(), [alpha]),
        "decode_convex": (lambda: decode_convex(weights, Codebook(items)).exp().sum(),
                          [weights, items]),
    }
    failures, worst = [], 0.0
    for name, (fn, inputs) in cases.items():
        err = check_gradients(fn, inputs)
        worst = max(worst, err)
        if err >= 1e-4:
            failures.append(f"{name} ({err:.1e})")
    detail = f"worst relative error {worst:.1e}" + (f"; failed: {', '.join(failures)}" if failures else "")
    return SuiteResult("gradient_checks", not failures, detail)


def simplex_invariants(seed: int = 0) -> SuiteResult:
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.05, 5.0, (500, 8))
    w = dirichlet.sample(alpha, rng).data
    ok = bool(np.all(w >= 0) and np.allclose(w.sum(-1), 1.0, atol=1e-9))
    items = rng.normal(size=(8, 4))
    z = decode_convex(w, Codebook(items)).data
    inside = bool(np.all(z <= items.max(0) + 1e-12) and np.all(z >= items.min(0) - 1e-12))
    return SuiteResult("simplex_invariants", ok and inside,
                       "samples on the simplex; decoded points inside the codebook box")


SUITES = (kl_vs_monte_carlo, special_identities, gradient_checks, simplex_invariants)


def run_selftest() -> list[SuiteResult]:
    return [suite() for suite in SUITES]
