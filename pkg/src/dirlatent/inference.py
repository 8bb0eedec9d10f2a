"""Sliding-window video restoration."""

from __future__ import annotations

import numpy as np

from .codebook import decode_convex
from .data import VideoSequence, frames_of
from .errors import ContractError
from .io import ModelCheckpoint
from .network import Restorer, parse_mode
from .tensor import Tensor

_CHUNK = 8


def window_indices(t: int, length: int, window: int = 5) -> np.ndarray:
    """Frame indices of the window centred on ``t``, edges replicated."""
    half = window // 2
    return np.clip(np.arange(t - half, t - half + window), 0, length - 1)


def infer_video(video, model, mode: str = "mean", rng: np.random.Generator | None = None) -> VideoSequence:
    """Restore every frame from the window of neighbours centred on it.

    Each window of ``window`` frames (stride one, replication padding at the
    sequence ends) goes through the model and only its centre prediction is
    kept, so the output has the input's length.
    """
    if isinstance(model, ModelCheckpoint):
        from .training import model_from_checkpoint

        model = model_from_checkpoint(model)
    if not isinstance(model, Restorer):
        raise ContractError("model must be a Restorer or ModelCheckpoint")
    kind, _ = parse_mode(mode)
    if kind == "sample" and rng is None:
        rng = np.random.default_rng(0)
    frames = frames_of(video)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ContractError("infer_video needs a non-empty (T, H, W, C) sequence")
    length = frames.shape[0]
    window = model.cfg.window
    half = window // 2

    latents = np.concatenate([
        model.encode(frames[None, s:s + _CHUNK]).data for s in range(0, length, _CHUNK)
    ], axis=1)[0]

    out = []
    for s in range(0, length, _CHUNK):
        ts = range(s, min(s + _CHUNK, length))
        batch = np.stack([latents[window_indices(t, length, window)] for t in ts])
        alpha = model.predict_dirichlet_params(model.transform(Tensor(batch)))
        centre = Tensor(alpha.data[:, half:half + 1])
        w = model.weights(centre, mode, rng)
        out.append(model.decode(decode_convex(w, model.codebook)).data[:, 0])
    return VideoSequence(np.clip(np.concatenate(out, axis=0), 0.0, 1.0))
