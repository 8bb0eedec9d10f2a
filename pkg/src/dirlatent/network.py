"""Encoder, alternating spatio-temporal Transformer, Dirichlet head and decoder.

Frames travel as arrays shaped (B, R, H, W, C): B clips of R frames each.
Latents are (B, R, m, n, d) with m = H / 2**stages.
"""

from __future__ import annotations

import re

import numpy as np

from . import dirichlet
from .codebook import Codebook, aggregate_topk, decode_convex, quantize_nearest
from .config import PARAM_GROUPS, NetConfig
from .errors import ContractError
from .tensor import (
    Tensor,
    as_tensor,
    conv2d,
    conv2d_transpose,
    layer_norm,
    leaky_relu,
    matmul,
    sigmoid,
    softmax,
    softplus,
)

ALPHA_FLOOR = dirichlet.ALPHA_FLOOR
_TOPK = re.compile(r"^top-?k[-(:]?(\d+)\)?$")


def sinusoidal_embedding(positions, dim: int) -> np.ndarray:
    """Interleaved sin/cos features, frequencies 1 / 10000**(2i/dim)."""
    if dim % 2:
        raise ContractError(f"embedding dim must be even, got {dim}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    freq = 1.0 / 10000.0 ** (np.arange(0, dim, 2) / dim)
    out = np.empty((pos.shape[0], dim))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)
    return out


def parse_mode(mode: str) -> tuple[str, int | None]:
    """Normalize a weight-construction mode: sample, mean, argmax or topk(k)."""
    mode = mode.strip().lower()
    if mode in ("sample", "mean", "argmax"):
        return mode, None
    if mode == "average":
        return "mean", None
    m = _TOPK.match(mode)
    if m:
        return "topk", int(m.group(1))
    raise ContractError(f"unknown weight mode {mode!r}")


def residual_layout(blocks: int, stages: int) -> list[int]:
    """Residual blocks per resolution stage, remainder given to the deepest."""
    counts = [blocks // stages] * stages
    for i in range(blocks % stages):
        counts[stages - 1 - i] += 1
    return counts


class Restorer:
    """All learnable parameters plus the forward computations.

    Parameters live in ``self.params`` under dotted names whose first
    component is the parameter group (encoder, transformer, head, decoder,
    codebook).
    """

    def __init__(self, cfg: NetConfig, rng: np.random.Generator | int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self.params: dict[str, Tensor] = {}
        self._init_encoder(rng)
        self._init_transformer(rng)
        self._init_head(rng)
        self._init_decoder(rng)
        self.codebook = Codebook.init_uniform(cfg.n_codes, cfg.d, rng, cfg.codebook_gain)
        self.params["codebook.items"] = self.codebook.items
        for name, t in self.params.items():
            t.name = name

    # -- initialization -------------------------------------------------
    def _add(self, name: str, arr: np.ndarray) -> None:
        self.params[name] = Tensor(arr, requires_grad=True)

    def _conv(self, name, c_out, c_in, k, rng, gain=1.0, transpose=False, stride=1):
        # He init; a strided transposed conv feeds each output pixel from only
        # (k / stride)^2 taps per input channel, so that is its fan-in
        taps = (k // stride) ** 2 if transpose else k * k
        std = gain * np.sqrt(2.0 / (c_in * taps))
        shape = (c_in, c_out, k, k) if transpose else (c_out, c_in, k, k)
        self._add(name + ".w", rng.normal(0.0, std, size=shape))
        self._add(name + ".b", np.zeros(c_out))

    def _res(self, name, c, rng):
        self._conv(name + ".conv1", c, c, 3, rng)
        self._conv(name + ".conv2", c, c, 3, rng, gain=0.1)

    @property
    def widths(self) -> list[int]:
        return [self.cfg.base_channels * 2 ** s for s in range(self.cfg.downsample_stages)]

    def _init_encoder(self, rng):
        cfg = self.cfg
        self._conv("encoder.stem", cfg.base_channels, cfg.in_channels, 3, rng)
        # centre the [0, 1] input range: mid-gray maps to zero pre-activation
        stem = self.params["encoder.stem.w"].data
        self.params["encoder.stem.b"] = Tensor(-0.5 * stem.sum(axis=(1, 2, 3)), requires_grad=True)
        prev = cfg.base_channels
        layout = residual_layout(cfg.residual_blocks, cfg.downsample_stages)
        for s, c in enumerate(self.widths):
            self._conv(f"encoder.down{s}", c, prev, 4, rng)
            for r in range(layout[s]):
                self._res(f"encoder.stage{s}.res{r}", c, rng)
            prev = c
        self._conv("encoder.out", cfg.d, prev, 1, rng, gain=0.5)

    def _init_transformer(self, rng):
        d = self.cfg.d
        for blk in range(self.cfg.transformer_blocks):
            p = f"transformer.block{blk}"
            self._add(p + ".ln.g", np.ones(d))
            self._add(p + ".ln.b", np.zeros(d))
            for proj in ("q", "k", "v"):
                self._add(f"{p}.{proj}", rng.normal(0.0, 0.02, size=(d, d)))

    def _init_head(self, rng):
        cfg = self.cfg
        self._add("head.w", rng.normal(0.0, cfg.head_gain / np.sqrt(cfg.d), size=(cfg.d, cfg.n_codes)))
        self._add("head.b", np.zeros(cfg.n_codes))

    def _init_decoder(self, rng):
        cfg = self.cfg
        widths = self.widths
        layout = residual_layout(cfg.residual_blocks, cfg.downsample_stages)
        self._conv("decoder.in", widths[-1], cfg.d, 1, rng)
        for s in reversed(range(cfg.downsample_stages)):
            for r in range(layout[s]):
                self._res(f"decoder.stage{s}.res{r}", widths[s], rng)
            c_out = widths[s - 1] if s > 0 else cfg.base_channels
            self._conv(f"decoder.up{s}", c_out, widths[s], 4, rng, transpose=True, stride=2)
        self._conv("decoder.out", cfg.out_channels, cfg.base_channels, 3, rng, gain=0.5)

    # -- parameter bookkeeping -------------------------------------------
    def group(self, name: str) -> dict[str, Tensor]:
        if name not in PARAM_GROUPS:
            raise ContractError(f"unknown parameter group {name!r}")
        return {k: v for k, v in self.params.items() if k.split(".", 1)[0] == name}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for k, v in state.items():
            if np.shape(v) != self.params[k].shape:
                raise ContractError(f"{k}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)
            self.params[k].data.setflags(write=False)

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    # -- building blocks ----------------------------------------------------
    def _apply_conv(self, x, name, stride=1, pad=0, transpose=False):
        fn = conv2d_transpose if transpose else conv2d
        return fn(x, self.params[name + ".w"], self.params[name + ".b"], stride=stride, pad=pad)

    def _residual(self, x, name):
        slope = self.cfg.leaky_slope
        h = leaky_relu(self._apply_conv(x, name + ".conv1", pad=1), slope)
        return x + self._apply_conv(h, name + ".conv2", pad=1)

    # -- forward pieces -----------------------------------------------------
    def encode(self, frames) -> Tensor:
        """(B, R, H, W, C) frames in [0, 1] -> (B, R, m, n, d) latents."""
        cfg = self.cfg
        x = as_tensor(frames)
        if x.ndim == 4:
            x = x.reshape(1, *x.shape)
        b, r, h, w, c = x.shape
        if (h, w) != tuple(cfg.input_hw) or c != cfg.in_channels:
            raise ContractError(f"frames {x.shape[2:]} do not match {cfg.input_hw}x{cfg.in_channels}")
        slope = cfg.leaky_slope
        z = x.reshape(b * r, h, w, c).transpose(0, 3, 1, 2)
        z = leaky_relu(self._apply_conv(z, "encoder.stem", pad=1), slope)
        layout = residual_layout(cfg.residual_blocks, cfg.downsample_stages)
        for s in range(cfg.downsample_stages):
            z = leaky_relu(self._apply_conv(z, f"encoder.down{s}", stride=2, pad=1), slope)
            for i in range(layout[s]):
                z = self._residual(z, f"encoder.stage{s}.res{i}")
        z = self._apply_conv(z, "encoder.out")
        m, n = cfg.latent_hw
        return z.transpose(0, 2, 3, 1).reshape(b, r, m, n, cfg.d)

    def _attention(self, tokens: Tensor, blk: int, pos: np.ndarray) -> Tensor:
        # tokens: (batch, T, d); pos: (T, d) added to queries and keys
        p = f"transformer.block{blk}"
        heads, d = self.cfg.heads, self.cfg.d
        dh = d // heads
        bt, t, _ = tokens.shape
        hn = layer_norm(tokens, self.params[p + ".ln.g"], self.params[p + ".ln.b"])
        q = matmul(hn, self.params[p + ".q"]) + pos
        k = matmul(hn, self.params[p + ".k"]) + pos
        v = matmul(hn, self.params[p + ".v"])

        def split(u):
            return u.reshape(bt, t, heads, dh).transpose(0, 2, 1, 3)

        q, k, v = split(q), split(k), split(v)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        out = matmul(softmax(scores, axis=-1), v)
        out = out.transpose(0, 2, 1, 3).reshape(bt, t, d)
        return tokens + out

    def spatial_block(self, latents: Tensor, blk: int) -> Tensor:
        b, r, m, n, d = latents.shape
        pos = sinusoidal_embedding(np.arange(m * n), d)
        out = self._attention(latents.reshape(b * r, m * n, d), blk, pos)
        return out.reshape(b, r, m, n, d)

    def temporal_block(self, latents: Tensor, blk: int) -> Tensor:
        b, r, m, n, d = latents.shape
        pos = sinusoidal_embedding(np.arange(r), d)
        tokens = latents.transpose(0, 2, 3, 1, 4).reshape(b * m * n, r, d)
        out = self._attention(tokens, blk, pos)
        return out.reshape(b, m, n, r, d).transpose(0, 3, 1, 2, 4)

    def transform(self, latents) -> Tensor:
        """Alternate spatial (even index) and temporal (odd index) attention blocks."""
        z = as_tensor(latents)
        for blk in range(self.cfg.transformer_blocks):
            z = self.spatial_block(z, blk) if blk % 2 == 0 else self.temporal_block(z, blk)
        return z

    def predict_dirichlet_params(self, features) -> Tensor:
        """softplus(features @ W + b) + 1e-6 over the N codes."""
        f = as_tensor(features)
        logits = matmul(f.reshape(-1, self.cfg.d), self.params["head.w"]) + self.params["head.b"]
        alpha = softplus(logits) + ALPHA_FLOOR
        return alpha.reshape(*f.shape[:-1], self.cfg.n_codes)

    def decode(self, latents) -> Tensor:
        """(B, R, m, n, d) latents -> (B, R, H, W, C_out) frames in [0, 1]."""
        cfg = self.cfg
        z = as_tensor(latents)
        if z.ndim == 4:
            z = z.reshape(1, *z.shape)
        b, r, m, n, d = z.shape
        if (m, n) != cfg.latent_hw or d != cfg.d:
            raise ContractError(f"latents {z.shape[2:]} do not match {cfg.latent_hw}x{cfg.d}")
        slope = cfg.leaky_slope
        x = z.reshape(b * r, m, n, d).transpose(0, 3, 1, 2)
        x = leaky_relu(self._apply_conv(x, "decoder.in"), slope)
        layout = residual_layout(cfg.residual_blocks, cfg.downsample_stages)
        for s in reversed(range(cfg.downsample_stages)):
            for i in range(layout[s]):
                x = self._residual(x, f"decoder.stage{s}.res{i}")
            x = leaky_relu(self._apply_conv(x, f"decoder.up{s}", stride=2, pad=1, transpose=True), slope)
        x = sigmoid(self._apply_conv(x, "decoder.out", pad=1))
        h, w = cfg.input_hw
        return x.transpose(0, 2, 3, 1).reshape(b, r, h, w, cfg.out_channels)

    def weights(self, alpha: Tensor, mode: str = "mean", rng: np.random.Generator | None = None) -> Tensor:
        """Per-location code weights from concentrations according to ``mode``."""
        kind, k = parse_mode(mode)
        if kind == "sample":
            if rng is None:
                raise ContractError("sample mode needs an rng")
            return dirichlet.sample(alpha, rng)
        if kind == "mean":
            return dirichlet.mean_tensor(alpha)
        w = dirichlet.mean(alpha.data)
        return Tensor(quantize_nearest(w) if kind == "argmax" else aggregate_topk(w, k))

    def forward(self, frames, mode: str = "mean", rng=None):
        """Full pass; returns (restored frames, concentrations)."""
        alpha = self.predict_dirichlet_params(self.transform(self.encode(frames)))
        latents = decode_convex(self.weights(alpha, mode, rng), self.codebook)
        return self.decode(latents), alpha
