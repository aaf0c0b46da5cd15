"""Metric axioms and oracles."""

import math

import numpy as np
import pytest

from chromaflow import checkpoint
from chromaflow.metrics import (
    MetricsReport,
    PSNR_CAP,
    _gaussian_window,
    _sc_extractor_arrays,
    canny,
    evaluate,
    horn_schunck_flow,
    load_sc_extractor,
    metric_mc,
    metric_sc_proxy,
    metric_sf,
    metric_tc_proxy,
    psnr,
    ssim,
    write_csv,
)
from chromaflow.perturb import PerturbConfig, color_jitter, elastic_transform, luma
from chromaflow.synthetic import Photometry, random_scene, render


# ---- ssim -----------------------------------------------------------------------


def test_ssim_self_is_one():
    img = np.random.default_rng(0).random((20, 20))
    assert ssim(img, img) == 1.0


def test_ssim_symmetric():
    rng = np.random.default_rng(1)
    a, b = rng.random((16, 16)), rng.random((16, 16))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-7


def test_ssim_bounded():
    rng = np.random.default_rng(2)
    for _ in range(5):
        a, b = rng.random((14, 14)), rng.random((14, 14))
        assert -1.0 <= ssim(a, b) <= 1.0


def test_ssim_checkerboard_matches_direct_formula():
    yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
    a = ((yy + xx) % 2).astype(np.float64)
    b = 1.0 - a
    got = ssim(a, b)

    # Oracle: per-window evaluation with explicit loops, no convolution paths.
    kern = _gaussian_window(11, 1.5)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for y in range(16 - 10):
        for x in range(16 - 10):
            wa = a[y:y + 11, x:x + 11]
            wb = b[y:y + 11, x:x + 11]
            mu_a = (kern * wa).sum()
            mu_b = (kern * wb).sum()
            var_a = (kern * wa * wa).sum() - mu_a ** 2
            var_b = (kern * wb * wb).sum() - mu_b ** 2
            cov = (kern * wa * wb).sum() - mu_a * mu_b
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    assert abs(got - float(np.mean(vals))) < 1e-6


def test_ssim_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


# ---- canny -----------------------------------------------------------------------


def test_canny_constant_image_is_empty():
    assert not canny(np.full((16, 16), 0.37)).any()


def test_canny_step_edge_single_column():
    img = np.zeros((8, 8))
    img[:, 4:] = 1.0
    edges = canny(img)
    cols = np.flatnonzero(edges.any(axis=0))
    assert len(cols) == 1
    assert cols[0] in (3, 4)
    assert edges[:, cols[0]].all()


def test_canny_brightness_offset_invariant():
    rng = np.random.default_rng(3)
    img = np.clip(rng.random((24, 24)) * 0.6 + 0.1, 0, 1)
    base = canny(img)
    assert np.array_equal(canny(img + 0.1), base)


def test_canny_multiplicative_scaling_invariant():
    spec = random_scene(31)
    frame = luma(render(spec)[0]).astype(np.float64)
    base = canny(frame)
    for factor in (0.8, 1.2):
        assert np.array_equal(canny(frame * factor), base)


# ---- horn-schunck -------------------------------------------------------------------


def test_flow_zero_for_identical_frames():
    img = np.random.default_rng(4).random((16, 16))
    u, v = horn_schunck_flow(img, img)
    assert np.all(u == 0.0) and np.all(v == 0.0)


def test_flow_recovers_horizontal_translation():
    yy, xx = np.meshgrid(np.linspace(0, 3 * math.pi, 32),
                         np.linspace(0, 3 * math.pi, 32), indexing="ij")
    f = 0.5 + 0.25 * np.sin(xx) * np.cos(yy)
    f2 = np.roll(f, 1, axis=1)  # content moves one pixel to the right
    u, v = horn_schunck_flow(f, f2)
    interior = (slice(4, -4), slice(4, -4))
    assert 0.7 <= float(u[interior].mean()) <= 1.3
    assert abs(float(v[interior].mean())) < 0.3


def test_flow_deterministic():
    rng = np.random.default_rng(5)
    f1, f2 = rng.random((16, 16)), rng.random((16, 16))
    u1, v1 = horn_schunck_flow(f1, f2)
    u2, v2 = horn_schunck_flow(f1, f2)
    assert np.array_equal(u1, u2) and np.array_equal(v1, v2)


# ---- video metrics --------------------------------------------------------------------


def test_sf_identity_is_one():
    clip = render(random_scene(37))
    assert metric_sf(clip, clip) == 1.0


def test_sf_jitter_beats_elastic():
    clip = render(random_scene(41))
    cfg = PerturbConfig()
    jittered = color_jitter(clip, cfg, 3)
    warped = np.stack([elastic_transform(f, alpha=8.0, sigma=5.0, seed=9) for f in clip])
    sf_jitter = metric_sf(clip, jittered)
    sf_warp = metric_sf(clip, warped)
    assert sf_jitter >= 0.85
    assert sf_warp < sf_jitter


def test_static_identical_video_degenerate_values():
    frame = render(random_scene(43))[0]
    clip = np.stack([frame] * 4)
    assert metric_mc(clip, clip) == 1.0
    assert metric_tc_proxy(clip) == 1.0
    assert metric_sc_proxy(clip) == 0.0


def test_psnr_cap_on_identical():
    clip = render(random_scene(47))
    assert psnr(clip, clip) == PSNR_CAP


def test_psnr_known_value():
    a = np.zeros((4, 4))
    b = np.full((4, 4), 0.1)
    assert abs(psnr(a, b) - 20.0) < 1e-9  # mse = 0.01


def test_temporal_metrics_need_two_frames():
    clip = render(random_scene(53))[:1]
    with pytest.raises(ValueError):
        metric_mc(clip, clip)
    with pytest.raises(ValueError):
        metric_sc_proxy(clip)


def test_sc_extractor_weights_match_published_seed(tmp_path):
    packaged = load_sc_extractor()
    generated = _sc_extractor_arrays()
    assert set(packaged) == set(generated)
    for k in packaged:
        assert np.array_equal(packaged[k], generated[k])


def test_checkpoint_round_trip_byte_identical(tmp_path):
    rng = np.random.default_rng(6)
    arrays = {"a.w": rng.random((3, 4)).astype(np.float32),
              "b": rng.random(5).astype(np.float32),
              "scalar": np.float32(2.5).reshape(())}
    p1, p2 = tmp_path / "c1.vflw", tmp_path / "c2.vflw"
    checkpoint.write_tensors(p1, arrays)
    back = checkpoint.read_tensors(p1)
    checkpoint.write_tensors(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_truncation_rejected(tmp_path):
    p = tmp_path / "c.vflw"
    checkpoint.write_tensors(p, {"x": np.ones(4, dtype=np.float32)})
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(checkpoint.CheckpointFormatError):
        checkpoint.read_tensors(p)


def test_evaluate_and_csv(tmp_path):
    # static clip: the degenerate case where every metric hits its ideal
    frame = render(random_scene(59))[0]
    clip = np.stack([frame] * 4)
    rep = evaluate(clip, clip, gt=clip)
    assert rep.sf == 1.0 and rep.mc == 1.0 and rep.sc_proxy == 0.0
    assert rep.psnr_gt == PSNR_CAP
    out = tmp_path / "eval.csv"
    write_csv(out, [("s0", rep), ("s1", rep)])
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "sample,sf,mc,sc_proxy,tc_proxy,psnr_gt"
    assert len(lines) == 4  # header + 2 rows + mean
    assert lines[-1].startswith("mean,")
