"""Procedural video scenes with ground-truth photometric pairs.

Scenes are a handful of moving shapes over a two-color gradient background,
rasterized with 2x2 supersampling. Photometry is a global multiplicative
(illumination * per-channel tint) model, which makes "same geometry,
different color and light" exactly true: a paired sample shares shape
coverage pixel-for-pixel between source and target while only photometry
differs, giving this artifact an evaluation ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import derive_seed, make_rng
from . import video_io

SHAPE_KINDS = ("circle", "rect", "triangle")


@dataclass
class ShapeSpec:
    kind: str
    color: tuple          # RGB in [0, 1]
    position: tuple       # (y, x) center at frame 0, pixels
    velocity: tuple       # (vy, vx) pixels per frame
    size: float           # characteristic diameter, pixels


@dataclass
class Photometry:
    illumination: float = 1.0
    tint: tuple = (1.0, 1.0, 1.0)


@dataclass
class SceneSpec:
    seed: int
    shapes: list
    background: tuple     # (color_a, color_b, angle_radians)
    photometry: Photometry = field(default_factory=Photometry)
    frames: int = 8
    height: int = 32
    width: int = 32

    def validate(self) -> None:
        if not 1 <= len(self.shapes) <= 4:
            raise ValueError(f"scene must have 1..4 shapes, got {len(self.shapes)}")
        for s in self.shapes:
            if s.kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {s.kind!r}")
            if not all(0.0 <= c <= 1.0 for c in s.color):
                raise ValueError(f"shape color out of range: {s.color}")
            r = s.size / 2.0
            for t in range(self.frames):
                cy = s.position[0] + s.velocity[0] * t
                cx = s.position[1] + s.velocity[1] * t
                if cy + r < 0 or cy - r >= self.height or cx + r < 0 or cx - r >= self.width:
                    raise ValueError(f"shape leaves the frame entirely at t={t}")
        if not 0.0 < self.photometry.illumination <= 1.0:
            raise ValueError("illumination must lie in (0, 1]")
        if not all(0.0 <= c <= 1.0 for c in self.photometry.tint):
            raise ValueError("tint channels must lie in [0, 1]")


@dataclass
class PairedSample:
    source: np.ndarray      # (T, 3, H, W), photometry A
    reference: np.ndarray   # (3, H, W), first frame under photometry B
    target_gt: np.ndarray   # (T, 3, H, W), photometry B
    spec: SceneSpec
    photometry_a: Photometry
    photometry_b: Photometry


def random_scene(seed: int, frames: int = 8, height: int = 32, width: int = 32,
                 max_speed: float = 2.0) -> SceneSpec:
    """Deterministic scene draw; shapes are kept at least partly in-frame."""
    rng = make_rng(seed)
    num = int(rng.integers(1, 5))
    lo_y, hi_y = 0.2 * height, 0.8 * height
    lo_x, hi_x = 0.2 * width, 0.8 * width
    shapes = []
    for _ in range(num):
        kind = SHAPE_KINDS[rng.integers(0, len(SHAPE_KINDS))]
        color = rng.uniform(0.25, 1.0, 3)
        color[rng.integers(0, 3)] = rng.uniform(0.7, 1.0)  # keep shapes saturated
        start = np.array([rng.uniform(lo_y, hi_y), rng.uniform(lo_x, hi_x)])
        end = start + rng.uniform(-max_speed, max_speed, 2) * (frames - 1)
        end[0] = np.clip(end[0], lo_y, hi_y)
        end[1] = np.clip(end[1], lo_x, hi_x)
        vel = (end - start) / max(frames - 1, 1)
        size = rng.uniform(height / 5.0, height / 2.5)
        shapes.append(ShapeSpec(kind=kind, color=tuple(color.tolist()),
                                position=tuple(start.tolist()),
                                velocity=tuple(vel.tolist()), size=float(size)))
    bg_a = tuple(rng.uniform(0.05, 0.75, 3).tolist())
    bg_b = tuple(rng.uniform(0.05, 0.75, 3).tolist())
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    phot = Photometry(illumination=float(rng.uniform(0.3, 1.0)),
                      tint=tuple(rng.uniform(0.5, 1.0, 3).tolist()))
    return SceneSpec(seed=seed, shapes=shapes, background=(bg_a, bg_b, angle),
                     photometry=phot, frames=frames, height=height, width=width)


def random_photometry(rng: np.random.Generator) -> Photometry:
    return Photometry(illumination=float(rng.uniform(0.3, 1.0)),
                      tint=tuple(rng.uniform(0.5, 1.0, 3).tolist()))


# ---- rasterization ---------------------------------------------------------------


def _ss_grid(height: int, width: int):
    ys = (np.arange(2 * height) + 0.5) * 0.5
    xs = (np.arange(2 * width) + 0.5) * 0.5
    return np.meshgrid(ys, xs, indexing="ij")


def _background(spec: SceneSpec, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    a = np.asarray(spec.background[0], dtype=np.float64)
    b = np.asarray(spec.background[1], dtype=np.float64)
    angle = spec.background[2]
    proj = xx * math.cos(angle) + yy * math.sin(angle)
    lo, hi = proj.min(), proj.max()
    p = (proj - lo) / (hi - lo) if hi > lo else np.zeros_like(proj)
    return a[:, None, None] + (b - a)[:, None, None] * p[None]


def _shape_mask(shape: ShapeSpec, t: int, yy: np.ndarray, xx: np.ndarray) -> np.ndarray:
    cy = shape.position[0] + shape.velocity[0] * t
    cx = shape.position[1] + shape.velocity[1] * t
    if shape.kind == "circle":
        r = shape.size / 2.0
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if shape.kind == "rect":
        return (np.abs(xx - cx) <= shape.size / 2.0) & (np.abs(yy - cy) <= 0.35 * shape.size)
    # triangle: equilateral, apex up, circumradius size/2
    r = shape.size / 2.0
    verts = [(cy + r * math.cos(a), cx + r * math.sin(a))
             for a in (-math.pi / 2, math.pi / 6, 5 * math.pi / 6)]
    mask = np.ones_like(yy, dtype=bool)
    for (y1, x1), (y2, x2) in zip(verts, verts[1:] + verts[:1]):
        cross = (x2 - x1) * (yy - y1) - (y2 - y1) * (xx - x1)
        mask &= cross <= 0
    return mask


def _render_ss(spec: SceneSpec, t: int, yy, xx, with_shapes: bool = True) -> np.ndarray:
    img = _background(spec, yy, xx)
    if with_shapes:
        for shape in spec.shapes:
            mask = _shape_mask(shape, t, yy, xx)
            img[:, mask] = np.asarray(shape.color, dtype=np.float64)[:, None]
    return img


def _downsample(img_ss: np.ndarray) -> np.ndarray:
    c, h2, w2 = img_ss.shape
    return img_ss.reshape(c, h2 // 2, 2, w2 // 2, 2).mean(axis=(2, 4))


def render(spec: SceneSpec, photometry: Photometry | None = None) -> np.ndarray:
    """Rasterize to a (T, 3, H, W) float32 clip in [0, 1]."""
    spec.validate()
    phot = photometry or spec.photometry
    yy, xx = _ss_grid(spec.height, spec.width)
    gain = phot.illumination * np.asarray(phot.tint, dtype=np.float64)
    frames = []
    for t in range(spec.frames):
        frame = _downsample(_render_ss(spec, t, yy, xx)) * gain[:, None, None]
        frames.append(frame)
    return np.clip(np.stack(frames), 0.0, 1.0).astype(np.float32)


def coverage_masks(spec: SceneSpec) -> np.ndarray:
    """(T, H, W) bool: pixels touched by any shape (photometry-independent)."""
    yy, xx = _ss_grid(spec.height, spec.width)
    masks = []
    for t in range(spec.frames):
        union = np.zeros_like(yy, dtype=bool)
        for shape in spec.shapes:
            union |= _shape_mask(shape, t, yy, xx)
        ss = union.reshape(spec.height, 2, spec.width, 2).any(axis=(1, 3))
        masks.append(ss)
    return np.stack(masks)


def rendered_shape_masks(spec: SceneSpec, photometry: Photometry) -> np.ndarray:
    """Coverage recovered from rendered pixels (shapes vs background-only
    render). Used as an independent check that photometry does not move
    geometry."""
    yy, xx = _ss_grid(spec.height, spec.width)
    gain = photometry.illumination * np.asarray(photometry.tint, dtype=np.float64)
    masks = []
    for t in range(spec.frames):
        full = _downsample(_render_ss(spec, t, yy, xx, with_shapes=True)) * gain[:, None, None]
        bg = _downsample(_render_ss(spec, t, yy, xx, with_shapes=False)) * gain[:, None, None]
        masks.append(np.any(np.abs(full - bg) > 1e-9, axis=0))
    return np.stack(masks)


def make_paired(spec: SceneSpec, photometry_a: Photometry,
                photometry_b: Photometry) -> PairedSample:
    """Same geometry under two photometries; reference is target frame 0."""
    source = render(spec, photometry_a)
    target = render(spec, photometry_b)
    return PairedSample(source=source, reference=target[0].copy(), target_gt=target,
                        spec=spec, photometry_a=photometry_a, photometry_b=photometry_b)


# ---- dataset generation -----------------------------------------------------------


def generate_dataset(out_dir, count: int, seed: int, frames: int = 8,
                     height: int = 32, width: int = 32) -> list[tuple]:
    """Write `count` clips plus a manifest; per-sample seeds are derived from
    (seed, index) so generation is order-independent."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        s = derive_seed(seed, i)
        clip = render(random_scene(s, frames=frames, height=height, width=width))
        name = f"clip_{i:05d}.vclp"
        video_io.write_clip(out_dir / name, clip)
        rows.append((name, s))
    video_io.write_manifest(out_dir / "manifest.txt", rows)
    return rows


def generate_paired_dataset(out_dir, count: int, seed: int, frames: int = 8,
                            height: int = 32, width: int = 32) -> list[tuple]:
    """Write (source, reference, target) triples plus a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        s = derive_seed(seed, i)
        spec = random_scene(s, frames=frames, height=height, width=width)
        rng = make_rng(s, 1)
        pair = make_paired(spec, random_photometry(rng), random_photometry(rng))
        names = (f"src_{i:05d}.vclp", f"ref_{i:05d}.vclp", f"tgt_{i:05d}.vclp")
        video_io.write_clip(out_dir / names[0], pair.source)
        video_io.write_image(out_dir / names[1], pair.reference)
        video_io.write_clip(out_dir / names[2], pair.target_gt)
        rows.append((*names, s))
    video_io.write_manifest(out_dir / "manifest.txt", rows)
    return rows


def load_dataset(data_dir) -> list[np.ndarray]:
    """Clips listed in a dataset manifest, in manifest order."""
    data_dir = Path(data_dir)
    rows = video_io.read_manifest(data_dir / "manifest.txt")
    return [video_io.read_clip(data_dir / row[0]) for row in rows]


def load_paired_dataset(data_dir) -> list[dict]:
    data_dir = Path(data_dir)
    rows = video_io.read_manifest(data_dir / "manifest.txt")
    out = []
    for src, ref, tgt, seed in rows:
        out.append({
            "source": video_io.read_clip(data_dir / src),
            "reference": video_io.read_image(data_dir / ref),
            "target_gt": video_io.read_clip(data_dir / tgt),
            "seed": int(seed),
        })
    return out
