"""Training loop with staged parameter groups."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .codebook import decode_convex
from .config import TrainConfig
from .data import degrade_for_task, generate_toy_sequence
from .errors import NumericError
from .io import ModelCheckpoint, append_jsonl
from .network import Restorer
from .objective import assemble_total, elbo_loss, make_feature_loss
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


class Adam:
    """Adam with per-parameter step counts (groups may join late)."""

    def __init__(self, lr: float = 1e-4, betas=(0.9, 0.99), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.state: dict[str, tuple[int, np.ndarray, np.ndarray]] = {}

    def step(self, params: dict[str, Tensor], grads: dict[Tensor, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads.get(p)
            if g is None:
                continue
            t, m, v = self.state.get(name, (0, np.zeros_like(g), np.zeros_like(g)))
            t += 1
            m = self.b1 * m + (1 - self.b1) * g
            v = self.b2 * v + (1 - self.b2) * g * g
            self.state[name] = (t, m, v)
            mhat = m / (1 - self.b1 ** t)
            vhat = v / (1 - self.b2 ** t)
            new = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            new.setflags(write=False)
            p.data = new


@dataclass
class Dataset:
    clean: list[np.ndarray]
    inputs: list[np.ndarray] = field(default_factory=list)


def make_dataset(cfg: TrainConfig, n_clips: int, length: int, seed: int) -> Dataset:
    """Clean toy clips and one fixed degraded input per clip."""
    ss = np.random.SeedSequence(seed)
    gen_rng, deg_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    clean = [generate_toy_sequence(gen_rng, length, tuple(cfg.net.input_hw)).frames
             for _ in range(n_clips)]
    inputs = [degrade_for_task(c, cfg.task, cfg.degrade, deg_rng) for c in clean]
    return Dataset(clean, inputs)


def train_and_val_sets(cfg: TrainConfig, val_len: int | None = None) -> tuple[Dataset, Dataset]:
    train = make_dataset(cfg, cfg.n_train_clips, cfg.clip_len, cfg.seed * 7919 + 11)
    val = make_dataset(cfg, cfg.n_val_clips, val_len or cfg.clip_len, cfg.seed * 7919 + 12)
    return train, val


@dataclass
class TrainResult:
    model: Restorer
    checkpoint: ModelCheckpoint
    log: list[dict]


def training_loss(model: Restorer, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                  rng: np.random.Generator, feature=None):
    """Forward pass on a clip batch; returns (total loss tensor, LossReport)."""
    alpha = model.predict_dirichlet_params(model.transform(model.encode(x)))
    preds = []
    for _ in range(cfg.loss.mc_samples):
        w = model.weights(alpha, cfg.train_mode, rng)
        preds.append(model.decode(decode_convex(w, model.codebook)))
    elbo, report = elbo_loss(y, preds, alpha, cfg.loss)
    feature = feature or make_feature_loss(cfg.loss.feature_loss)
    feat = feature(y, preds[0]) if cfg.loss.lambda2 != 0.0 else Tensor(0.0)
    total = assemble_total(elbo, feat, cfg.loss)
    report.feature_term = feat.item()
    report.total = total.item()
    return total, report


def train(cfg: TrainConfig, log_path=None, callback=None) -> TrainResult:
    """Optimize a fresh model on synthetic clips for ``cfg.steps`` steps.

    Each step draws ``batch_clips`` windows of ``net.window`` frames from the
    training clips, degrades them for the task, and updates only the
    parameter groups enabled by the schedule at that step.
    """
    cfg.validate()
    init_ss, batch_ss, deg_ss, sample_ss = np.random.SeedSequence(cfg.seed).spawn(4)
    model = Restorer(cfg.net, np.random.default_rng(init_ss))
    batch_rng = np.random.default_rng(batch_ss)
    deg_rng = np.random.default_rng(deg_ss)
    sample_rng = np.random.default_rng(sample_ss)
    train_set, _ = train_and_val_sets(cfg)
    feature = make_feature_loss(cfg.loss.feature_loss)
    opt = Adam(cfg.lr, cfg.betas)
    window = cfg.net.window
    log: list[dict] = []

    for step in range(cfg.steps):
        groups = cfg.groups_at(step)
        trainable = {}
        for name, p in model.params.items():
            p.requires_grad = name.split(".", 1)[0] in groups
            if p.requires_grad:
                trainable[name] = p
        idx = batch_rng.integers(cfg.n_train_clips, size=cfg.batch_clips)
        starts = batch_rng.integers(0, cfg.clip_len - window + 1, size=cfg.batch_clips)
        y = np.stack([train_set.clean[i][s:s + window] for i, s in zip(idx, starts)])
        x = np.stack([degrade_for_task(clip, cfg.task, cfg.degrade, deg_rng) for clip in y])
        with Tape() as tape:
            total, report = training_loss(model, x, y, cfg, sample_rng, feature)
        if not math.isfinite(report.total):
            err = NumericError(f"non-finite loss at step {step}")
            err.step = step
            raise err
        grads = tape.backward(total)
        opt.step(trainable, grads)
        for p in trainable.values():
            p.grad = None
        rec = report.as_log(step)
        log.append(rec)
        if log_path is not None:
            append_jsonl(log_path, [rec])
        if callback is not None:
            callback(step, rec, model)
        if step % 50 == 0:
            logger.info("step %d total %.5f recon %.5f kl %.3f", step, rec["total"], rec["recon"], rec["kl"])

    for p in model.params.values():
        p.requires_grad = True
    ckpt = ModelCheckpoint(tensors=model.state_dict(), config=cfg.to_dict())
    return TrainResult(model, ckpt, log)


def model_from_checkpoint(ckpt: ModelCheckpoint) -> Restorer:
    cfg = TrainConfig.from_dict(ckpt.config)
    model = Restorer(cfg.net, 0)
    model.load_state_dict(ckpt.tensors)
    return model


def moving_average(values, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size < window:
        return np.array([v.mean()]) if v.size else v
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
