"""Acceptance gate: one PASS/FAIL line per criterion, shown in the terminal summary.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import time

import numpy as np
import pytest

from gaussbev.bev_rasterizer import RenderConfig, render, render_backward, render_naive
from gaussbev.camera_geometry import decode_depth, encode_depth
from gaussbev.fit_harness import PRESETS, fit, make_problem
from gaussbev.gradcheck import check_end_to_end, geometry_suites
from gaussbev.preview import preview_pca

from conftest import make_calib, random_scene, record

# final IoU of the first successful `fit --preset single-box --seed 0`
FIT_IOU_PIN = 1.0
WORKERS = (1, 2, 8)


@pytest.fixture(scope="module")
def single_box_fit():
    t0 = time.perf_counter()
    report, _, _ = fit(make_problem("single-box", 0))
    return report, time.perf_counter() - t0


def test_1_geometry_gradients():
    t0 = time.perf_counter()
    results = geometry_suites(seed=0, n=100)
    seconds = time.perf_counter() - t0
    worst = max(results, key=lambda r: r.error / r.tol)
    ok = all(r.passed and r.configs >= 100 and r.tol <= 1e-5 for r in results) and seconds < 10.0
    record(1, "geometry gradient suite", ok,
           f"{len(results)} suites x 100 configs, worst {worst.name} err={worst.error:.2e}, {seconds:.2f}s")
    assert ok, [r.line() for r in results]


def test_2_oracle_equivalence():
    rng = np.random.default_rng(2)
    cfg = RenderConfig(x_range=(-20.0, 20.0), y_range=(-20.0, 20.0), resolution=0.5).without_thresholds()
    worst = 0.0
    t0 = time.perf_counter()
    for k in range(50):
        C = (1, 3, 8)[k % 3]
        scene = random_scene(rng, int(rng.integers(1, 201)), C, extent=18.0)
        a = render(scene, cfg).data
        b = render_naive(scene, cfg).data
        worst = max(worst, float(np.max(np.abs(a - b))))
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-12 and seconds < 30.0
    record(2, "rasterizer oracle equivalence", ok, f"50 scenes, max|diff|={worst:.1e}, {seconds:.2f}s")
    assert ok


def test_3_end_to_end_gradient():
    res = check_end_to_end(seed=0)
    ok = res.passed and res.tol <= 1e-4 and res.seconds < 10.0
    record(3, "end-to-end gradient check", ok, f"err={res.error:.2e}, {res.seconds:.2f}s")
    assert ok


def test_4_depth_decode_conformance():
    f = make_calib(fx=100.0, f_ref=100.0)
    f2 = make_calib(fx=200.0, f_ref=100.0)
    hand = (decode_depth(0.5, f)[0] == 1.0 and decode_depth(1.0, f)[0] == 0.0
            and decode_depth(0.2, f2)[0] == 8.0)
    z = np.geomspace(0.1, 100.0, 10001)
    worst = 0.0
    for calib in (f, f2):
        back = decode_depth(encode_depth(z, calib), calib)[0]
        worst = max(worst, float(np.max(np.abs(back - z) / z)))
    ok = bool(hand) and worst <= 1e-9
    record(4, "depth decode hand values and round trip", ok, f"hand={bool(hand)}, rel err={worst:.1e}")
    assert ok


def test_5_determinism():
    rng = np.random.default_rng(5)
    cfg = RenderConfig(x_range=(-20.0, 20.0), y_range=(-20.0, 20.0))
    scene = random_scene(rng, 3000, 8, extent=20.0)
    G = rng.normal(size=(*cfg.shape, 8))
    runs = {}
    for w in WORKERS + WORKERS:
        grid = render(scene, cfg, workers=w)
        gb = render_backward(scene, cfg, G, workers=w)
        report, fitted, theta = fit(make_problem("two-boxes", 1, steps=60, workers=w))
        digest = (grid.data.tobytes(),
                  b"".join(np.ascontiguousarray(x).tobytes() for x in
                           (gb.center, gb.scale, gb.quat, gb.opacity, gb.embedding)),
                  theta.tobytes() + np.array(report.losses).tobytes(),
                  preview_pca(grid))
        runs.setdefault(w, []).append(digest)
    ref = runs[WORKERS[0]][0]
    names = ("render", "render_backward", "fit", "preview_pca")
    bad = [names[i] for i in range(4) if any(r[i] != ref[i] for rs in runs.values() for r in rs)]
    ok = not bad
    record(5, "determinism across workers and runs", ok,
           f"workers {WORKERS} x 2 runs" + (f", differs: {bad}" if bad else ", bit-identical"))
    assert ok


def test_6_fit_regression(single_box_fit):
    report, seconds = single_box_fit
    early = {}
    for preset in PRESETS:
        r, _, _ = fit(make_problem(preset, 0, steps=50))
        early[preset] = (r.losses[0], r.losses[50])
    decreasing = all(l50 < l0 for l0, l50 in early.values())
    pinned = abs(report.final_iou - FIT_IOU_PIN) <= 1e-6
    ok = report.final_iou > 0.9 and report.steps <= 400 and seconds < 60.0 and decreasing and pinned
    record(6, "fit regression", ok,
           f"single-box IoU={report.final_iou:.6f} (pin {FIT_IOU_PIN}), {seconds:.2f}s, "
           f"loss50<loss0 on {sum(l50 < l0 for l0, l50 in early.values())}/{len(PRESETS)} presets")
    assert ok


def test_7_depth_supervision_echo(single_box_fit):
    with_depth, _ = single_box_fit
    without, _, _ = fit(make_problem("single-box", 0, lambda_depth=0.0))
    ok = (with_depth.depth_error < without.depth_error
          and with_depth.final_iou > 0.8 and without.final_iou > 0.8)
    record(7, "depth supervision echo", ok,
           f"log-depth err {with_depth.depth_error:.4f} (0.05) vs {without.depth_error:.4f} (0), "
           f"IoU {with_depth.final_iou:.3f}/{without.final_iou:.3f}")
    assert ok


def test_8_default_grid():
    cfg = RenderConfig()
    grid = render(random_scene(np.random.default_rng(8), 5, 2), cfg)
    ok = cfg.shape == (200, 200) and grid.data.shape == (200, 200, 2)
    record(8, "default grid size", ok, f"{cfg.height}x{cfg.width} at {cfg.resolution} m/px")
    assert ok


def test_9_tiled_speedup():
    rng = np.random.default_rng(9)
    cfg = RenderConfig()
    warm = random_scene(rng, 10, 32)
    render(warm, cfg)
    render_naive(warm, cfg)
    scene = random_scene(rng, 50_000, 32, extent=50.0)
    t0 = time.perf_counter()
    tiled = render(scene, cfg)
    t_tiled = time.perf_counter() - t0
    t0 = time.perf_counter()
    naive = render_naive(scene, cfg)
    t_naive = time.perf_counter() - t0
    speedup = t_naive / t_tiled
    ok = tiled.data.shape == (200, 200, 32) and speedup >= 5.0
    record(9, "tiled render speedup", ok,
           f"50k gaussians, C=32: tiled {t_tiled:.2f}s, naive {t_naive:.2f}s, {speedup:.1f}x")
    # thresholds differ between the two, so only sanity-check agreement here
    assert np.isfinite(naive.data).all()
    assert ok
