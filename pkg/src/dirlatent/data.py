"""Synthetic clips and task degradations (BFR, colorization, inpainting)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import DegradeConfig
from .errors import ContractError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class VideoSequence:
    """Frames as a (T, H, W, C) float array with values in [0, 1]."""

    frames: np.ndarray
    fps: float = 25.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim == 3:
            f = f[..., None]
        if f.ndim != 4:
            raise ContractError(f"frames must be (T, H, W, C), got {f.shape}")
        if f.size and (f.min() < 0.0 or f.max() > 1.0):
            raise ContractError("frame values must lie in [0, 1]")
        self.frames = f

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.frames if dtype is None else self.frames.astype(dtype)

    @property
    def hw(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]


def frames_of(v) -> np.ndarray:
    return v.frames if isinstance(v, VideoSequence) else np.asarray(v, dtype=np.float64)


# ---------------------------------------------------------------------------
# toy clips


def _smoothstep(signed_dist: np.ndarray, width: float = 0.75) -> np.ndarray:
    # ~1 inside (negative distance), ~0 outside, antialiased edge
    return 1.0 / (1.0 + np.exp(signed_dist / width * 2.0))


def generate_toy_sequence(rng: np.random.Generator, length: int = 5,
                          hw: tuple[int, int] = (64, 64)) -> VideoSequence:
    """A moving cartoon face over a drifting sinusoidal texture.

    The face is an ellipse with two disc eyes and an arc mouth; its centre
    translates and the whole face rotates slowly, so consecutive frames
    differ smoothly.
    """
    h, w = hw
    scale = min(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5

    bg_a, bg_b = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    kx, ky = rng.uniform(-0.25, 0.25, 2)
    phase0, phase_speed = rng.uniform(0, 2 * np.pi), rng.uniform(-0.15, 0.15)
    skin = rng.uniform(0.45, 0.95, 3)
    feature = rng.uniform(0.0, 0.3, 3)
    axes = np.array([rng.uniform(0.20, 0.26), rng.uniform(0.26, 0.32)]) * scale
    center = np.array([rng.uniform(0.4, 0.6) * w, rng.uniform(0.4, 0.6) * h])
    velocity = rng.uniform(-1.0, 1.0, 2) * scale / 64.0
    theta0, omega = rng.uniform(-0.3, 0.3), rng.uniform(-0.04, 0.04)
    eye_r = rng.uniform(0.035, 0.05) * scale
    mouth_r = rng.uniform(0.10, 0.14) * scale

    frames = np.empty((length, h, w, 3))
    for t in range(length):
        tex = 0.5 + 0.5 * np.sin(kx * xx + ky * yy + phase0 + phase_speed * t)
        img = bg_a * tex[..., None] + bg_b * (1 - tex[..., None])
        cx, cy = center + velocity * t
        theta = theta0 + omega * t
        c, s = np.cos(theta), np.sin(theta)
        # face-aligned coordinates
        u = c * (xx - cx) + s * (yy - cy)
        v = -s * (xx - cx) + c * (yy - cy)
        rho = np.sqrt((u / axes[0]) ** 2 + (v / axes[1]) ** 2)
        face = _smoothstep((rho - 1.0) * axes.min())
        img = img * (1 - face[..., None]) + skin * face[..., None]
        for side in (-1.0, 1.0):
            ex, ey = side * 0.4 * axes[0], -0.3 * axes[1]
            eye = _smoothstep(np.hypot(u - ex, v - ey) - eye_r)
            img = img * (1 - eye[..., None]) + feature * eye[..., None]
        my = 0.1 * axes[1]
        ring = np.abs(np.hypot(u, v - my) - mouth_r) - 0.02 * scale
        lower = _smoothstep(-(v - my - 0.3 * mouth_r))
        mouth = _smoothstep(ring) * lower
        img = img * (1 - mouth[..., None]) + feature * mouth[..., None]
        frames[t] = img
    return VideoSequence(np.clip(frames, 0.0, 1.0))


# ---------------------------------------------------------------------------
# degradations


def resize_bilinear(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of (..., H, W, C) with half-pixel centres."""
    h, w = img.shape[-3], img.shape[-2]
    oh, ow = out_hw
    if (oh, ow) == (h, w):
        return img.copy()

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(oh, h)
    x0, x1, fx = coords(ow, w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = img[..., y0, :, :][..., :, x0, :] * (1 - fx) + img[..., y0, :, :][..., :, x1, :] * fx
    bot = img[..., y1, :, :][..., :, x0, :] * (1 - fx) + img[..., y1, :, :][..., :, x1, :] * fx
    return top * (1 - fy) + bot * fy


@dataclass(frozen=True)
class BfrParams:
    blur_sigma: float
    factor: int
    noise_sigma: float
    levels: int


def sample_bfr_params(dc: DegradeConfig, rng: np.random.Generator) -> BfrParams:
    return BfrParams(
        blur_sigma=float(rng.uniform(*dc.blur_sigma)),
        factor=int(rng.choice(dc.downsample_factors)),
        noise_sigma=float(rng.uniform(*dc.noise_sigma)),
        levels=int(rng.choice(dc.quant_levels)),
    )


def apply_bfr(frames: np.ndarray, p: BfrParams, rng: np.random.Generator) -> np.ndarray:
    t, h, w, c = frames.shape
    out = np.empty_like(frames)
    for i in range(t):
        img = frames[i]
        if p.blur_sigma > 0:
            img = gaussian_filter(img, sigma=(p.blur_sigma, p.blur_sigma, 0), mode="reflect")
        small = resize_bilinear(img, (h // p.factor, w // p.factor))
        if p.noise_sigma > 0:
            small = small + rng.normal(0.0, p.noise_sigma, size=small.shape)
        small = np.round(np.clip(small, 0.0, 1.0) * (p.levels - 1)) / (p.levels - 1)
        out[i] = resize_bilinear(small, (h, w))
    return np.clip(out, 0.0, 1.0)


def degrade_bfr(clean, dc: DegradeConfig, rng: np.random.Generator) -> VideoSequence:
    """Blur -> bilinear downsample -> Gaussian noise -> quantize -> upsample.

    Degradation strengths are drawn once per clip, so every frame gets the
    same blur, factor, noise level and quantization.
    """
    frames = frames_of(clean)
    return VideoSequence(apply_bfr(frames, sample_bfr_params(dc, rng), rng))


def to_grayscale(v) -> VideoSequence:
    frames = frames_of(v)
    if frames.shape[-1] != 3:
        raise ContractError(f"grayscale conversion needs 3 channels, got {frames.shape[-1]}")
    luma = frames @ LUMA
    return VideoSequence(np.clip(np.repeat(luma[..., None], 3, axis=-1), 0.0, 1.0))


def _segment_distance(yy, xx, p0, p1):
    d = p1 - p0
    denom = float(d @ d)
    if denom == 0.0:
        return np.hypot(yy - p0[0], xx - p0[1])
    tt = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom, 0.0, 1.0)
    return np.hypot(yy - (p0[0] + tt * d[0]), xx - (p0[1] + tt * d[1]))


def make_mask_brush(hw: tuple[int, int], rng: np.random.Generator,
                    coverage: tuple[float, float] = (0.05, 0.40)) -> np.ndarray:
    """Random brush-stroke polyline mask (1 = missing pixel).

    4-8 vertices, stroke thickness 3-9 px; redrawn until the covered fraction
    falls inside ``coverage``.
    """
    h, w = hw
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    while True:
        n_vert = int(rng.integers(4, 9))
        thickness = float(rng.integers(3, 10))
        pts = [rng.uniform([0, 0], [h, w])]
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(n_vert - 1):
            angle += rng.normal(0.0, 0.9)
            length = rng.uniform(0.1, 0.3) * min(h, w)
            nxt = pts[-1] + length * np.array([np.sin(angle), np.cos(angle)])
            pts.append(np.clip(nxt, [0, 0], [h - 1, w - 1]))
        mask = np.zeros((h, w), dtype=bool)
        for p0, p1 in zip(pts[:-1], pts[1:]):
            mask |= _segment_distance(yy, xx, p0, p1) <= thickness / 2.0
        frac = mask.mean()
        if coverage[0] <= frac <= coverage[1]:
            return mask.astype(np.float64)


def apply_mask(frames: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero masked pixels and append the mask as an extra channel."""
    keep = (1.0 - mask)[None, :, :, None]
    m = np.broadcast_to(mask[None, :, :, None], frames.shape[:3] + (1,))
    return np.concatenate([frames * keep, m], axis=-1)


def degrade_for_task(frames: np.ndarray, task: str, dc: DegradeConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Network input for ``task`` from clean (T, H, W, 3) frames."""
    if task == "bfr":
        return apply_bfr(frames, sample_bfr_params(dc, rng), rng)
    if task == "colorization":
        return to_grayscale(frames).frames
    if task == "inpainting":
        return apply_mask(frames, make_mask_brush(frames.shape[1:3], rng))
    raise ContractError(f"unknown task {task!r}")
