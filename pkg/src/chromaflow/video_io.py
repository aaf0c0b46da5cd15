"""Clip container and frame export.

VCLP is the canonical interchange format: magic ``VCLP``, version u32,
then T, C, H, W as little-endian u32, then T*C*H*W float32 values
little-endian. PPM (P6) export exists for eyeballing frames.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"VCLP"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class ClipFormatError(ValueError):
    """Malformed, truncated, or wrong-version clip file."""


def write_clip(path, clip: np.ndarray) -> None:
    clip = np.asarray(clip, dtype=np.float32)
    if clip.ndim != 4:
        raise ClipFormatError(f"expected (T, C, H, W) clip, got shape {clip.shape}")
    t, c, h, w = clip.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, t, c, h, w))
        f.write(clip.astype("<f4").tobytes())


def read_clip(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ClipFormatError(f"{path}: truncated header")
    magic, version, t, c, h, w = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ClipFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ClipFormatError(f"{path}: unsupported version {version}")
    count = t * c * h * w
    body = raw[_HEADER.size:]
    if len(body) != count * 4:
        raise ClipFormatError(
            f"{path}: expected {count * 4} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(t, c, h, w).astype(np.float32)


def write_image(path, img: np.ndarray) -> None:
    """Store a (3, H, W) image as a single-frame clip."""
    if img.ndim != 3:
        raise ClipFormatError(f"expected (C, H, W) image, got shape {img.shape}")
    write_clip(path, img[None])


def read_image(path) -> np.ndarray:
    """First frame of a clip file."""
    return read_clip(path)[0]


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Linear [0,1] -> 8-bit with round-half-up (0.5 maps to 128)."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_frames(clip: np.ndarray, out_dir, prefix: str = "frame") -> list[Path]:
    """Write every frame of a (T, 3, H, W) clip as a P6 PPM file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(np.asarray(clip)):
        h, w = frame.shape[1:]
        path = out_dir / f"{prefix}_{i:03d}.ppm"
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            f.write(to_uint8(frame.transpose(1, 2, 0)).tobytes())
        paths.append(path)
    return paths


def write_manifest(path, rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(" ".join(str(x) for x in row) + "\n")


def read_manifest(path) -> list[list[str]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.split() for line in lines if line.strip()]
