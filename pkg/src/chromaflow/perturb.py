"""Dual-branch data perturbation.

Two pure, seed-deterministic augmentation families with opposite targets:

* structure-destroying (gaussian blur / elastic warp), applied to reference
  images, which must leave color statistics alone;
* color/light-destroying (photometric jitter), applied to source videos,
  which must leave edge structure alone.

Images are (3, H, W) float arrays in [0, 1]; videos are (T, 3, H, W).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_seed, make_rng

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def luma(img: np.ndarray) -> np.ndarray:
    """Rec.601 luma of a (..., 3, H, W) array -> (..., H, W)."""
    return np.tensordot(LUMA_WEIGHTS, img, axes=([0], [img.ndim - 3])).astype(img.dtype)


@dataclass
class JitterParams:
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0       # turns, in [-0.5, 0.5]
    gamma: float = 1.0


@dataclass
class PerturbConfig:
    p_blur: float = 0.3
    p_elastic: float = 0.7
    blur_sigma: tuple = (1.0, 3.0)
    elastic_alpha: tuple = (4.0, 10.0)
    elastic_sigma: tuple = (4.0, 8.0)
    brightness: tuple = (0.6, 1.4)
    contrast: tuple = (0.6, 1.4)
    saturation: tuple = (0.5, 1.5)
    hue: tuple = (-0.1, 0.1)
    gamma: tuple = (0.7, 1.4)
    seed: int = 0

    def __post_init__(self):
        if abs(self.p_blur + self.p_elastic - 1.0) > 1e-9:
            raise ValueError("p_blur + p_elastic must equal 1.0")
        if not 0.0 <= self.p_blur <= 1.0:
            raise ValueError("p_blur must lie in [0, 1]")
        for name in ("blur_sigma", "elastic_alpha", "elastic_sigma",
                     "brightness", "contrast", "saturation", "hue", "gamma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is empty: ({lo}, {hi})")
        for name in ("brightness", "contrast", "saturation", "gamma"):
            if getattr(self, name)[0] <= 0.0:
                raise ValueError(f"{name} factors must be positive")


# ---- gaussian blur -------------------------------------------------------------


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable gaussian blur with reflect padding; sigma=0 is the identity."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    k = _gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    out = img.astype(np.float64)
    for axis in (img.ndim - 2, img.ndim - 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="reflect")
        acc = np.zeros_like(out)
        sl = [slice(None)] * img.ndim
        size = img.shape[axis]
        for i, kv in enumerate(k):
            sl[axis] = slice(i, i + size)
            acc += kv * padded[tuple(sl)]
        out = acc
    return out.astype(img.dtype)


# ---- elastic warp ----------------------------------------------------------------


def _reflect_coords(c: np.ndarray, size: int) -> np.ndarray:
    if size == 1:
        return np.zeros_like(c)
    period = 2.0 * (size - 1)
    c = np.mod(c, period)
    return np.minimum(c, period - c)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample (3, H, W) image at fractional (ys, xs) with reflect boundary."""
    _, h, w = img.shape
    ys = _reflect_coords(ys, h)
    xs = _reflect_coords(xs, w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0).astype(img.dtype)
    wx = (xs - x0).astype(img.dtype)
    top = img[:, y0, x0] * (1 - wx) + img[:, y0, x1] * wx
    bot = img[:, y1, x0] * (1 - wx) + img[:, y1, x1] * wx
    return top * (1 - wy) + bot * wy


def elastic_transform(img: np.ndarray, alpha: float, sigma: float, seed: int) -> np.ndarray:
    """Warp by a smoothed random displacement field of max norm alpha pixels."""
    if alpha <= 0 or sigma <= 0:
        raise ValueError("alpha and sigma must be positive")
    _, h, w = img.shape
    rng = make_rng(seed)
    disp = rng.uniform(-1.0, 1.0, size=(2, h, w))
    disp = gaussian_blur(disp, sigma)
    mag = np.sqrt(disp[0] ** 2 + disp[1] ** 2)
    peak = float(mag.max())
    if peak > 0:
        disp *= alpha / peak
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    return _bilinear_sample(img, yy + disp[0], xx + disp[1]).astype(img.dtype)


# ---- color space -------------------------------------------------------------------


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """(3, ...) RGB in [0,1] -> (3, ...) HSV with hue in turns [0, 1)."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    maxc = np.max(rgb, axis=0)
    minc = np.min(rgb, axis=0)
    delta = maxc - minc
    safe = np.where(delta > 0, delta, 1.0)
    h = np.select(
        [maxc == r, maxc == g],
        [(g - b) / safe, 2.0 + (b - r) / safe],
        default=4.0 + (r - g) / safe,
    )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)
    return np.stack([h, s, maxc])


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[0], hsv[1], hsv[2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


# ---- photometric jitter ---------------------------------------------------------------

# Rec.601 YIQ. Hue is rotated in the IQ chroma plane, which leaves luminance
# untouched: the color branch must not disturb luminance structure, and an
# HSV hue rotation provably does (it can render edges isoluminant).
_YIQ = np.array([
    [0.299, 0.587, 0.114],
    [0.595716, -0.274453, -0.321263],
    [0.211456, -0.522591, 0.311135],
])
_YIQ_INV = np.linalg.inv(_YIQ)


def _hue_rotate(rgb: np.ndarray, turns: float) -> np.ndarray:
    """Rotate chroma around the luma axis; out-of-gamut pixels have their
    chroma compressed toward gray (never clipped, so luma is exact)."""
    shape = rgb.shape
    flat = rgb.reshape(3, -1)
    yiq = _YIQ @ flat
    th = 2.0 * math.pi * turns
    c, s = math.cos(th), math.sin(th)
    i, q = yiq[1].copy(), yiq[2].copy()
    yiq[1] = c * i - s * q
    yiq[2] = s * i + c * q
    out = _YIQ_INV @ yiq
    y = yiq[0]
    d = out - y
    with np.errstate(divide="ignore", invalid="ignore"):
        f_hi = np.where(d > 0, (1.0 - y) / d, np.inf)
        f_lo = np.where(d < 0, -y / d, np.inf)
    factor = np.clip(np.minimum(f_hi, f_lo).min(axis=0), 0.0, 1.0)
    return (y + d * factor).reshape(shape)


def apply_jitter(x: np.ndarray, params: JitterParams) -> np.ndarray:
    """Apply jitter stages in fixed order brightness, contrast, saturation,
    hue, gamma. Works on an image or a video; one parameter set for all
    frames. Identity parameters leave the input bit-identical."""
    out = x.astype(np.float64)
    if params.brightness != 1.0:
        out = np.clip(out * params.brightness, 0.0, 1.0)
    if params.contrast != 1.0:
        mean_l = luma(out).mean()  # one anchor for the whole clip: no flicker
        out = np.clip((out - mean_l) * params.contrast + mean_l, 0.0, 1.0)
    if params.saturation != 1.0:
        axis = out.ndim - 3
        gray = np.expand_dims(luma(out), axis)
        out = np.clip(gray + (out - gray) * params.saturation, 0.0, 1.0)
    if params.hue != 0.0:
        moved = np.moveaxis(out, out.ndim - 3, 0)
        out = np.clip(np.moveaxis(_hue_rotate(moved, params.hue), 0, out.ndim - 3), 0.0, 1.0)
    if params.gamma != 1.0:
        out = np.clip(out, 0.0, 1.0) ** params.gamma
    return out.astype(x.dtype)


def draw_jitter(cfg: PerturbConfig, rng: np.random.Generator) -> JitterParams:
    return JitterParams(
        brightness=rng.uniform(*cfg.brightness),
        contrast=rng.uniform(*cfg.contrast),
        saturation=rng.uniform(*cfg.saturation),
        hue=rng.uniform(*cfg.hue),
        gamma=rng.uniform(*cfg.gamma),
    )


def color_jitter(x: np.ndarray, cfg: PerturbConfig, seed: int) -> np.ndarray:
    """Seeded jitter with a single parameter draw for the whole input."""
    return apply_jitter(x, draw_jitter(cfg, make_rng(seed)))


# ---- the two branches --------------------------------------------------------------------


def perturb_high(img: np.ndarray, cfg: PerturbConfig, seed: int) -> np.ndarray:
    """Structure-destroying branch for reference images.

    Draw order is fixed: branch selector first, then that branch's
    parameters, so a given seed always reproduces the same transform.
    """
    rng = make_rng(seed)
    if rng.uniform() < cfg.p_blur:
        return gaussian_blur(img, rng.uniform(*cfg.blur_sigma))
    alpha = rng.uniform(*cfg.elastic_alpha)
    sigma = rng.uniform(*cfg.elastic_sigma)
    return elastic_transform(img, alpha, sigma, derive_seed(seed, 1))


def perturb_low(video: np.ndarray, cfg: PerturbConfig, seed: int) -> np.ndarray:
    """Color/light-destroying branch for source videos (per-video draw)."""
    return color_jitter(video, cfg, seed)


# ---- structure / color statistics (used by the disentanglement contract) -------------


def mean_hue(img: np.ndarray) -> float:
    """Saturation-weighted circular mean hue, in turns [0, 1)."""
    hsv = rgb_to_hsv(img.astype(np.float64))
    weights = hsv[1] * hsv[2]
    total = weights.sum()
    if total <= 1e-12:
        return 0.0
    ang = hsv[0] * (2.0 * math.pi)
    z = (weights * np.exp(1j * ang)).sum() / total
    return float((np.angle(z) / (2.0 * math.pi)) % 1.0)


def hue_distance(a: float, b: float) -> float:
    """Circular distance in turns, in [0, 0.5]."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def orientation_histogram(img: np.ndarray, bins: int = 16) -> np.ndarray:
    """Magnitude-weighted Sobel edge-orientation histogram of the luma,
    normalized to sum 1 (or all zeros for a constant image).

    Orientation is taken modulo pi: a photometric change may flip an edge's
    light/dark polarity without moving the edge, and only the geometry is
    being measured here.
    """
    g = luma(img.astype(np.float64))
    gp = np.pad(g, 1, mode="reflect")
    gx = (gp[1:-1, 2:] - gp[1:-1, :-2]) * 2 + (gp[:-2, 2:] - gp[:-2, :-2]) + (gp[2:, 2:] - gp[2:, :-2])
    gy = (gp[2:, 1:-1] - gp[:-2, 1:-1]) * 2 + (gp[2:, :-2] - gp[:-2, :-2]) + (gp[2:, 2:] - gp[:-2, 2:])
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx) % math.pi
    idx = np.minimum((ang / math.pi * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins)
    total = hist.sum()
    return hist / total if total > 0 else hist
