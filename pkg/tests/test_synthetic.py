"""Scene renderer, paired samples, and clip container tests."""

import numpy as np
import pytest

from chromaflow import video_io
from chromaflow.synthetic import (
    Photometry,
    SceneSpec,
    ShapeSpec,
    coverage_masks,
    generate_dataset,
    generate_paired_dataset,
    load_paired_dataset,
    make_paired,
    random_scene,
    render,
    rendered_shape_masks,
)
from chromaflow.video_io import ClipFormatError


def test_render_deterministic():
    spec = random_scene(42)
    assert np.array_equal(render(spec), render(spec))


def test_photometry_is_multiplicative():
    spec = random_scene(7)
    full = render(spec, Photometry(illumination=1.0))
    half = render(spec, Photometry(illumination=0.5))
    assert np.allclose(half, 0.5 * full, atol=1e-7)


def test_static_scene_has_identical_frames():
    spec = random_scene(5)
    for s in spec.shapes:
        s.velocity = (0.0, 0.0)
    clip = render(spec)
    for i in range(1, spec.frames):
        assert np.array_equal(clip[i], clip[0])


def test_rendered_values_in_unit_range():
    for seed in range(5):
        clip = render(random_scene(seed))
        assert clip.min() >= 0.0 and clip.max() <= 1.0


def test_shape_leaving_frame_rejected():
    spec = random_scene(3)
    spec.shapes[0].position = (-50.0, -50.0)
    spec.shapes[0].velocity = (0.0, 0.0)
    with pytest.raises(ValueError):
        render(spec)


def test_coverage_mask_ignores_photometry():
    spec = random_scene(11)
    masks1 = rendered_shape_masks(spec, Photometry(illumination=1.0, tint=(1, 1, 1)))
    masks2 = rendered_shape_masks(spec, Photometry(illumination=0.4, tint=(0.9, 0.5, 0.7)))
    assert np.array_equal(masks1, masks2)
    assert np.array_equal(masks1, coverage_masks(spec))


def test_paired_same_photometry_is_identity():
    spec = random_scene(13)
    p = Photometry(illumination=0.8, tint=(0.9, 1.0, 0.7))
    pair = make_paired(spec, p, Photometry(0.8, (0.9, 1.0, 0.7)))
    assert np.array_equal(pair.source, pair.target_gt)


def test_paired_reference_is_target_first_frame():
    spec = random_scene(17)
    pair = make_paired(spec, Photometry(1.0), Photometry(0.5, (1.0, 0.8, 0.6)))
    assert np.array_equal(pair.reference, pair.target_gt[0])


def test_paired_edge_geometry_preserved():
    # Edge maps of source and target frames must essentially coincide:
    # multiplicative photometry cannot move geometry.
    from chromaflow.metrics import canny
    from chromaflow.perturb import luma

    spec = random_scene(19)
    pair = make_paired(spec, Photometry(1.0, (1.0, 1.0, 1.0)),
                       Photometry(0.6, (0.9, 0.6, 1.0)))
    for i in range(spec.frames):
        e_src = canny(luma(pair.source[i]))
        e_tgt = canny(luma(pair.target_gt[i]))
        inter = np.logical_and(e_src, e_tgt).sum()
        union = np.logical_or(e_src, e_tgt).sum()
        assert union > 0
        assert inter / union >= 0.9


# ---- container ---------------------------------------------------------------


def test_clip_round_trip_bit_identical(tmp_path):
    clip = render(random_scene(23))
    p = tmp_path / "clip.vclp"
    video_io.write_clip(p, clip)
    back = video_io.read_clip(p)
    assert np.array_equal(back, clip)
    # and the file itself round-trips byte-for-byte
    p2 = tmp_path / "clip2.vclp"
    video_io.write_clip(p2, back)
    assert p.read_bytes() == p2.read_bytes()


def test_truncated_clip_rejected(tmp_path):
    clip = render(random_scene(29))
    p = tmp_path / "clip.vclp"
    video_io.write_clip(p, clip)
    data = p.read_bytes()
    p.write_bytes(data[:len(data) - 7])
    with pytest.raises(ClipFormatError):
        video_io.read_clip(p)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "clip.vclp"
    p.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(ClipFormatError):
        video_io.read_clip(p)


def test_version_mismatch_rejected(tmp_path):
    clip = np.zeros((1, 3, 2, 2), dtype=np.float32)
    p = tmp_path / "clip.vclp"
    video_io.write_clip(p, clip)
    raw = bytearray(p.read_bytes())
    raw[4] = 9  # bump version field
    p.write_bytes(bytes(raw))
    with pytest.raises(ClipFormatError):
        video_io.read_clip(p)


def test_ppm_export_half_gray(tmp_path):
    clip = np.full((1, 3, 4, 4), 0.5, dtype=np.float32)
    paths = video_io.export_frames(clip, tmp_path)
    raw = paths[0].read_bytes()
    header_end = raw.index(b"255\n") + 4
    assert raw[:2] == b"P6"
    assert set(raw[header_end:]) == {128}


# ---- dataset generation ------------------------------------------------------------


def test_generate_dataset_deterministic(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    generate_dataset(d1, 3, seed=99)
    generate_dataset(d2, 3, seed=99)
    for name in sorted(p.name for p in d1.iterdir()):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_generate_dataset_empty(tmp_path):
    rows = generate_dataset(tmp_path, 0, seed=1)
    assert rows == []
    assert (tmp_path / "manifest.txt").read_text() == ""


def test_paired_dataset_round_trip(tmp_path):
    generate_paired_dataset(tmp_path, 2, seed=5)
    pairs = load_paired_dataset(tmp_path)
    assert len(pairs) == 2
    for pair in pairs:
        assert pair["source"].shape == pair["target_gt"].shape
        assert np.array_equal(pair["reference"], pair["target_gt"][0])
