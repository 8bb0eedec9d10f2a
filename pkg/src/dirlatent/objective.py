"""ELBO objective with a Laplacian reconstruction term and a feature-loss slot.

Sign convention: :func:`elbo_loss` returns the ELBO (a quantity to maximize);
:func:`assemble_total` returns ``lambda1 * elbo + lambda2 * feature`` which,
with lambda1 = -1, is the minimized training loss.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import dirichlet
from .config import LossConfig
from .errors import ContractError, NumericError
from .tensor import Tensor, as_tensor, conv2d, leaky_relu


@dataclass
class LossReport:
    total: float
    kl_term: float
    recon_term: float
    feature_term: float

    def as_log(self, step: int) -> dict:
        return {"step": step, "total": self.total, "kl": self.kl_term,
                "recon": self.recon_term, "feature": self.feature_term}

    def to_dict(self) -> dict:
        return asdict(self)


def laplacian_nll(y, y_pred) -> Tensor:
    """Mean absolute error: the unit-scale Laplace negative log-likelihood per
    element, additive constant dropped."""
    y, y_pred = as_tensor(y), as_tensor(y_pred)
    if y.shape != y_pred.shape:
        raise ContractError(f"shape mismatch {y.shape} vs {y_pred.shape}")
    return (y - y_pred).abs().mean()


def kl_sum(alpha_hat, prior_alpha: float) -> Tensor:
    """Sum over locations of KL(Dir(alpha_hat) || Dir(prior_alpha * 1))."""
    alpha_hat = as_tensor(alpha_hat)
    prior = np.full(alpha_hat.shape[-1], float(prior_alpha))
    return dirichlet.kl_divergence_tensor(alpha_hat, prior).sum()


def elbo_loss(y, sampled_preds, alpha_hat, cfg: LossConfig) -> tuple[Tensor, LossReport]:
    """Monte-Carlo ELBO: -kl_weight * sum KL - mean_l laplacian_nll(y, pred_l).

    ``kl_weight`` defaults to 1 / y.size, so both terms are per-element and
    keep the balance of the unnormalized sums. With ``kl_enabled`` false the
    KL term is zero.
    """
    preds = list(sampled_preds)
    if not preds:
        raise ContractError("elbo_loss needs at least one sampled prediction")
    y = as_tensor(y)
    recon = laplacian_nll(y, preds[0])
    for p in preds[1:]:
        recon = recon + laplacian_nll(y, p)
    recon = recon * (1.0 / len(preds))
    if cfg.kl_enabled:
        kl = kl_sum(alpha_hat, cfg.prior_alpha)
        weight = cfg.kl_weight if cfg.kl_weight is not None else 1.0 / y.size
        elbo = -(kl * weight) - recon
        kl_value = kl.item()
    else:
        elbo = -recon
        kl_value = 0.0
    report = LossReport(total=cfg.lambda1 * elbo.item(), kl_term=kl_value,
                        recon_term=recon.item(), feature_term=0.0)
    return elbo, report


def assemble_total(elbo, feature_loss, cfg: LossConfig):
    """lambda1 * ELBO + lambda2 * feature loss (tensor in, tensor out)."""
    for v in (elbo, feature_loss):
        val = v.item() if isinstance(v, Tensor) else float(v)
        if not math.isfinite(val):
            raise NumericError("non-finite loss component")
    if cfg.lambda2 == 0.0:
        return elbo * cfg.lambda1
    return elbo * cfg.lambda1 + feature_loss * cfg.lambda2


class ZeroFeatureLoss:
    """Disabled perceptual slot: always zero."""

    def __call__(self, y, y_pred) -> Tensor:
        return Tensor(0.0)


class RandomConvFeatureLoss:
    """Squared distance between fixed random two-layer conv features.

    A stand-in for learned perceptual distances; not a trained network.
    """

    def __init__(self, channels: int = 3, width: int = 16, seed: int = 1234):
        rng = np.random.default_rng(seed)
        self.w1 = Tensor(rng.normal(0, np.sqrt(2 / (channels * 9)), (width, channels, 3, 3)))
        self.w2 = Tensor(rng.normal(0, np.sqrt(2 / (width * 9)), (width, width, 3, 3)))

    def features(self, frames) -> Tensor:
        x = as_tensor(frames)
        h, w, c = x.shape[-3:]
        x = x.reshape(-1, h, w, c).transpose(0, 3, 1, 2)
        x = leaky_relu(conv2d(x, self.w1, pad=1))
        return leaky_relu(conv2d(x, self.w2, stride=2, pad=1))

    def __call__(self, y, y_pred) -> Tensor:
        diff = self.features(y_pred) - self.features(y)
        return (diff * diff).mean()


def make_feature_loss(name: str):
    if name == "none":
        return ZeroFeatureLoss()
    if name == "random_conv":
        return RandomConvFeatureLoss()
    raise ContractError(f"unknown feature loss {name!r}")
