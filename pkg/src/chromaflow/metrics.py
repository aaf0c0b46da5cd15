"""Quantitative video evaluation.

Structural fidelity (edge-map SSIM) and motion consistency (flow-map SSIM)
follow their definitions directly, with Canny and Horn-Schunck implemented
here. Subject consistency and temporal coherency are *proxies*: pretrained
feature banks are out of scope, so sc_proxy uses a frozen seeded random conv
extractor and tc_proxy a hand-built frame descriptor. They are reported under
these proxy names only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import checkpoint
from .perturb import gaussian_blur, luma, orientation_histogram
from .rng import make_rng

SC_EXTRACTOR_SEED = 1187021  # published seed for the frozen feature extractor
_SC_WEIGHTS_FILE = "sc_extractor.vflw"


# ---- SSIM -------------------------------------------------------------------


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kern: np.ndarray) -> np.ndarray:
    from numpy.lib.stride_tricks import sliding_window_view
    wins = sliding_window_view(img, kern.shape)
    return np.tensordot(wins, kern, axes=([2, 3], [0, 1]))


def _ssim_core(a: np.ndarray, b: np.ndarray, win_size: int, sigma: float,
               k1: float, k2: float, level: float) -> float:
    kern = _gaussian_window(win_size, sigma)
    c1 = (k1 * level) ** 2
    c2 = (k2 * level) ** 2
    mu_a = _windowed_mean(a, kern)
    mu_b = _windowed_mean(b, kern)
    e_aa = _windowed_mean(a * a, kern)
    e_bb = _windowed_mean(b * b, kern)
    e_ab = _windowed_mean(a * b, kern)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, level: float = 1.0) -> float:
    """Mean SSIM over valid (fully interior) windows of two gray images in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim expects equal 2-D shapes, got {a.shape} vs {b.shape}")
    if min(a.shape) < win_size:
        raise ValueError(f"image {a.shape} smaller than the {win_size}x{win_size} window")
    if a.min() < -1e-6 or a.max() > 1 + 1e-6 or b.min() < -1e-6 or b.max() > 1 + 1e-6:
        raise ValueError("ssim inputs must lie in [0, 1]")
    return _ssim_core(a, b, win_size, sigma, k1, k2, level)


# ---- Canny --------------------------------------------------------------------


def _sobel(img: np.ndarray):
    gp = np.pad(img, 1, mode="reflect")
    gx = (gp[1:-1, 2:] - gp[1:-1, :-2]) * 2 + (gp[:-2, 2:] - gp[:-2, :-2]) + (gp[2:, 2:] - gp[2:, :-2])
    gy = (gp[2:, 1:-1] - gp[:-2, 1:-1]) * 2 + (gp[2:, :-2] - gp[:-2, :-2]) + (gp[2:, 2:] - gp[:-2, 2:])
    return gx, gy


_NMS_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1))  # E, SE, S, SW in (dy, dx)


def canny(img: np.ndarray, low: float = 0.1, high: float = 0.25,
          smooth_sigma: float = 1.0) -> np.ndarray:
    """Binary edge map: gaussian smooth, Sobel, direction-quantized non-max
    suppression, double threshold relative to the max gradient, hysteresis.

    The suppression tie-break (strictly greater on the backward neighbor,
    greater-or-equal forward) keeps exactly one pixel on two-wide plateaus,
    so a clean step edge yields a single-pixel line.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"canny expects a 2-D image, got {img.shape}")
    sm = gaussian_blur(img, smooth_sigma) if smooth_sigma > 0 else img
    gx, gy = _sobel(sm)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak <= 0:
        return np.zeros_like(img, dtype=bool)

    ang = np.arctan2(gy, gx) % math.pi
    dirq = np.round(ang / (math.pi / 4)).astype(np.int64) % 4
    h, w = img.shape
    padded = np.pad(mag, 1, mode="constant")
    keep = np.zeros((h, w), dtype=bool)
    for d, (dy, dx) in enumerate(_NMS_OFFSETS):
        fwd = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        bwd = padded[1 - dy:1 - dy + h, 1 - dx:1 - dx + w]
        keep |= (dirq == d) & (mag >= fwd) & (mag > bwd)

    strong = keep & (mag >= high * peak)
    weak = keep & (mag >= low * peak)

    # hysteresis: grow strong edges through 8-connected weak pixels
    edges = strong.copy()
    frontier = strong
    while frontier.any():
        grown = np.zeros_like(edges)
        fp = np.pad(frontier, 1)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy or dx:
                    grown |= fp[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
        frontier = grown & weak & ~edges
        edges |= frontier
    return edges


# ---- Horn-Schunck optical flow ----------------------------------------------------


_HS_AVG = np.array([[1 / 12, 1 / 6, 1 / 12],
                    [1 / 6, 0.0, 1 / 6],
                    [1 / 12, 1 / 6, 1 / 12]])


def _corr3(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    gp = np.pad(img, 1, mode="edge")
    out = np.zeros_like(img)
    for i in range(3):
        for j in range(3):
            if k[i, j]:
                out += k[i, j] * gp[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def _corr2(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    # forward-looking 2x2 stencil, edge padding on the far side
    gp = np.pad(img, ((0, 1), (0, 1)), mode="edge")
    out = np.zeros_like(img)
    for i in range(2):
        for j in range(2):
            out += k[i, j] * gp[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def horn_schunck_flow(f1: np.ndarray, f2: np.ndarray, alpha_hs: float = 1.0,
                      iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Classical global-smoothness optical flow from gray frame f1 to f2.

    Returns (u, v): horizontal and vertical displacement per pixel, positive
    u pointing right and positive v pointing down. Identical frames are an
    exact fixed point at zero flow.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape or f1.ndim != 2:
        raise ValueError(f"flow expects equal 2-D shapes, got {f1.shape} vs {f2.shape}")
    kx = np.array([[-1.0, 1.0], [-1.0, 1.0]]) * 0.25
    ky = np.array([[-1.0, -1.0], [1.0, 1.0]]) * 0.25
    kt = np.full((2, 2), 0.25)
    fx = _corr2(f1, kx) + _corr2(f2, kx)
    fy = _corr2(f1, ky) + _corr2(f2, ky)
    ft = _corr2(f2, kt) - _corr2(f1, kt)
    u = np.zeros_like(f1)
    v = np.zeros_like(f1)
    denom = alpha_hs ** 2 + fx * fx + fy * fy
    for _ in range(iters):
        ua = _corr3(u, _HS_AVG)
        va = _corr3(v, _HS_AVG)
        der = (fx * ua + fy * va + ft) / denom
        u = ua - fx * der
        v = va - fy * der
    return u, v


# ---- frozen feature extractor (subject-consistency proxy) ---------------------------


def _sc_extractor_arrays(seed: int = SC_EXTRACTOR_SEED) -> dict[str, np.ndarray]:
    rng = make_rng(seed)
    shapes = {
        "conv1.w": (3, 3, 3, 8), "conv1.b": (8,),
        "conv2.w": (3, 3, 8, 16), "conv2.b": (16,),
        "conv3.w": (3, 3, 16, 16), "conv3.b": (16,),
    }
    out = {}
    for name, shape in shapes.items():
        if name.endswith(".w"):
            fan_in = shape[0] * shape[1] * shape[2]
            bound = math.sqrt(6.0 / fan_in)
            out[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        else:
            out[name] = np.zeros(shape, dtype=np.float32)
    return out


def load_sc_extractor() -> dict[str, np.ndarray]:
    """Packaged frozen weights; regenerable from SC_EXTRACTOR_SEED."""
    ref = resources.files("chromaflow").joinpath("data", _SC_WEIGHTS_FILE)
    with resources.as_file(ref) as path:
        return checkpoint.read_tensors(path)


def _conv_nhwc_plain(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    k = w.shape[0]
    pad = k // 2
    n, h, wd, cin = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((n, ho, wo, w.shape[3]), dtype=np.float64)
    of = out.reshape(-1, w.shape[3])
    for i in range(k):
        for j in range(k):
            sl = np.ascontiguousarray(
                xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :])
            of += sl.reshape(-1, cin) @ w[i, j]
    return out + b


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def _sc_features(clip: np.ndarray, weights: dict[str, np.ndarray]) -> np.ndarray:
    x = np.asarray(clip, dtype=np.float64).transpose(0, 2, 3, 1)  # NHWC
    x = _silu(_conv_nhwc_plain(x, weights["conv1.w"], weights["conv1.b"], stride=2))
    x = _silu(_conv_nhwc_plain(x, weights["conv2.w"], weights["conv2.b"], stride=2))
    return _conv_nhwc_plain(x, weights["conv3.w"], weights["conv3.b"], stride=1)


# ---- metric operations ----------------------------------------------------------------


def metric_sf(src: np.ndarray, out: np.ndarray, low: float = 0.1, high: float = 0.25) -> float:
    """Structural fidelity: per-frame SSIM between Canny edge maps."""
    if src.shape[0] != out.shape[0]:
        raise ValueError(f"frame count mismatch: {src.shape[0]} vs {out.shape[0]}")
    vals = [ssim(canny(luma(s), low, high).astype(np.float64),
                 canny(luma(o), low, high).astype(np.float64))
            for s, o in zip(src, out)]
    return float(np.mean(vals))


def metric_mc(src: np.ndarray, out: np.ndarray, alpha_hs: float = 1.0,
              iters: int = 100) -> float:
    """Motion consistency: SSIM between source and output optical-flow maps,
    averaged over consecutive-frame pairs and both flow components.

    Flow values are not confined to [0, 1]; SSIM is applied to the raw
    components with its usual constants, which keeps the value in [-1, 1].
    """
    if src.shape[0] != out.shape[0]:
        raise ValueError(f"frame count mismatch: {src.shape[0]} vs {out.shape[0]}")
    if src.shape[0] < 2:
        raise ValueError("motion consistency needs at least 2 frames")
    vals = []
    for i in range(src.shape[0] - 1):
        us, vs = horn_schunck_flow(luma(src[i]), luma(src[i + 1]), alpha_hs, iters)
        uo, vo = horn_schunck_flow(luma(out[i]), luma(out[i + 1]), alpha_hs, iters)
        vals.append(_ssim_core(us, uo, 11, 1.5, 0.01, 0.03, 1.0))
        vals.append(_ssim_core(vs, vo, 11, 1.5, 0.01, 0.03, 1.0))
    return float(np.mean(vals))


def metric_sc_proxy(out: np.ndarray, weights: dict[str, np.ndarray] | None = None) -> float:
    """Mean MSE between consecutive frames' frozen-extractor features
    (lower is more subject-consistent)."""
    if out.shape[0] < 2:
        raise ValueError("subject consistency needs at least 2 frames")
    feats = _sc_features(out, weights or load_sc_extractor())
    diffs = [float(np.mean((feats[i + 1] - feats[i]) ** 2))
             for i in range(feats.shape[0] - 1)]
    return float(np.mean(diffs))


def _block_mean(g: np.ndarray, out_h: int = 8, out_w: int = 8) -> np.ndarray:
    h, w = g.shape
    ys = (np.arange(h) * out_h) // h
    xs = (np.arange(w) * out_w) // w
    acc = np.zeros((out_h, out_w))
    cnt = np.zeros((out_h, out_w))
    np.add.at(acc, (ys[:, None].repeat(w, 1), xs[None].repeat(h, 0)), g)
    np.add.at(cnt, (ys[:, None].repeat(w, 1), xs[None].repeat(h, 0)), 1.0)
    return acc / cnt


def _frame_descriptor(frame: np.ndarray) -> np.ndarray:
    g = luma(np.asarray(frame, dtype=np.float64))
    return np.concatenate([_block_mean(g).ravel(), orientation_histogram(frame)])


def metric_tc_proxy(out: np.ndarray) -> float:
    """Mean cosine similarity of consecutive frame descriptors
    (downsampled luma + edge-orientation histogram)."""
    if out.shape[0] < 2:
        raise ValueError("temporal coherency needs at least 2 frames")
    descs = [_frame_descriptor(f) for f in out]
    sims = []
    for a, b in zip(descs, descs[1:]):
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        cos = float(a @ b / (na * nb)) if na > 0 and nb > 0 else 1.0
        sims.append(min(max(cos, -1.0), 1.0))
    return float(np.mean(sims))


PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio with peak 1.0, capped at 99 dB."""
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    err = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if err == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / err), PSNR_CAP)


# ---- report -------------------------------------------------------------------------


@dataclass
class MetricsReport:
    sf: float
    mc: float
    sc_proxy: float
    tc_proxy: float
    psnr_gt: float | None = None

    CSV_COLUMNS = ("sample", "sf", "mc", "sc_proxy", "tc_proxy", "psnr_gt")

    def row(self, sample: str) -> list:
        pg = "" if self.psnr_gt is None else f"{self.psnr_gt:.4f}"
        return [sample, f"{self.sf:.4f}", f"{self.mc:.4f}",
                f"{self.sc_proxy:.6f}", f"{self.tc_proxy:.4f}", pg]


def evaluate(src: np.ndarray, out: np.ndarray, gt: np.ndarray | None = None,
             weights: dict[str, np.ndarray] | None = None) -> MetricsReport:
    return MetricsReport(
        sf=metric_sf(src, out),
        mc=metric_mc(src, out),
        sc_proxy=metric_sc_proxy(out, weights),
        tc_proxy=metric_tc_proxy(out),
        psnr_gt=None if gt is None else psnr(out, gt),
    )


def write_csv(path, rows: list[tuple[str, MetricsReport]], append: bool = False) -> None:
    """One line per (sample, report) plus a mean aggregate row."""
    mode = "a" if append and Path(path).exists() else "w"
    with open(path, mode, newline="") as f:
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(MetricsReport.CSV_COLUMNS)
        for sample, rep in rows:
            writer.writerow(rep.row(sample))
        if len(rows) > 1:
            agg = MetricsReport(
                sf=float(np.mean([r.sf for _, r in rows])),
                mc=float(np.mean([r.mc for _, r in rows])),
                sc_proxy=float(np.mean([r.sc_proxy for _, r in rows])),
                tc_proxy=float(np.mean([r.tc_proxy for _, r in rows])),
                psnr_gt=(float(np.mean([r.psnr_gt for _, r in rows]))
                         if all(r.psnr_gt is not None for _, r in rows) else None),
            )
            writer.writerow(agg.row("mean"))
