"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numeric_grad(f: Callable[[], float], x: Tensor, eps: float = 1e-6,
                 indices: Sequence[tuple] | None = None) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to entries of ``x``.

    ``x.data`` is swapped for perturbed copies, so ``f`` must read ``x``
    afresh on each call. With ``indices`` only those entries are probed and
    the rest of the result is left at zero.
    """
    base = x.data
    grad = np.zeros(base.shape)
    probe = indices if indices is not None else list(np.ndindex(base.shape))
    try:
        for idx in probe:
            for sign in (1.0, -1.0):
                arr = base.copy()
                arr[idx] += sign * eps
                x.data = arr
                grad[idx] += sign * f()
            grad[idx] /= 2 * eps
    finally:
        x.data = base
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - n| / max(|a|, |n|, floor) over entries."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def check_gradients(build: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                    max_entries: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-8) -> float:
    """Worst relative error between tape and finite-difference gradients.

    ``build`` computes a scalar tensor from ``inputs`` (all requiring
    gradients). ``max_entries`` caps the probed entries per input, chosen
    with ``rng``.
    """
    with Tape() as tape:
        loss = build()
    grads = tape.backward(loss)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for x in inputs:
        analytic = grads.get(x, np.zeros(x.shape))
        idx = list(np.ndindex(x.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = rng.choice(len(idx), size=max_entries, replace=False)
            idx = [idx[i] for i in pick]
        numeric = numeric_grad(lambda: build().item(), x, eps, idx)
        sel = tuple(np.array(idx).T)
        worst = max(worst, relative_error(analytic[sel], numeric[sel], floor))
    return worst
