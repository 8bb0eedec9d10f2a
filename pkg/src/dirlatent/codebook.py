"""Learnable codebook and latent construction from per-location code weights.

A weight field is an array (or tensor) whose last axis runs over the N code
items and whose leading axes are spatial/temporal locations.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor, as_tensor, matmul

SUPPORTED_SIZES = (256, 512, 1024)


class Codebook:
    """N x d matrix of code items stored as a tensor named ``codebook.items``."""

    def __init__(self, items):
        items = items if isinstance(items, Tensor) else Tensor(items, requires_grad=True)
        if items.ndim != 2:
            raise ContractError(f"codebook must be N x d, got {items.shape}")
        if np.isnan(items.data).any():
            raise ContractError("codebook contains NaN")
        items.name = "codebook.items"
        self.items = items

    @classmethod
    def init_uniform(cls, n: int, d: int, rng: np.random.Generator, gain: float = 1.0) -> "Codebook":
        """Uniform entries on [-gain/sqrt(d), gain/sqrt(d)]."""
        bound = gain / np.sqrt(d)
        return cls(Tensor(rng.uniform(-bound, bound, size=(n, d)), requires_grad=True))

    @property
    def n(self) -> int:
        return self.items.shape[0]

    @property
    def d(self) -> int:
        return self.items.shape[1]


def decode_convex(weights, cb: Codebook) -> Tensor:
    """Latent v = w^T c at every location: a convex mix of code items.

    Differentiable in both the weights and the codebook.
    """
    w = as_tensor(weights)
    if w.shape[-1] != cb.n:
        raise ContractError(f"weights cover {w.shape[-1]} codes, codebook has {cb.n}")
    lead = w.shape[:-1]
    flat = w.reshape(-1, cb.n) if w.ndim != 2 else w
    out = matmul(flat, cb.items)
    return out.reshape(*lead, cb.d) if w.ndim != 2 else out


def quantize_nearest(weights) -> np.ndarray:
    """One-hot field at the largest weight per location (lowest index on ties)."""
    w = np.asarray(weights, dtype=np.float64)
    idx = np.argmax(w, axis=-1)
    out = np.zeros_like(w)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def aggregate_topk(weights, k: int) -> np.ndarray:
    """Keep the k largest weights per location and renormalize them to sum 1.

    Ordering among equal weights follows the lowest-index rule of
    :func:`quantize_nearest`, so ``k=1`` reproduces it exactly.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.shape[-1]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    if k == n:
        return w.copy()
    # stable sort on -w keeps lower indices first among ties
    order = np.argsort(-w, axis=-1, kind="stable")[..., :k]
    out = np.zeros_like(w)
    np.put_along_axis(out, order, np.take_along_axis(w, order, axis=-1), axis=-1)
    total = out.sum(-1, keepdims=True)
    if np.any(total <= 0):
        # all kept weights zero: fall back to uniform over the kept entries
        uniform = np.zeros_like(w)
        np.put_along_axis(uniform, order, 1.0 / k, axis=-1)
        out = np.where(total > 0, out, uniform)
        total = out.sum(-1, keepdims=True)
    return out / total
