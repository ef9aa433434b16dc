import json

import numpy as np
import pytest

from gaussbev.cli import main
from gaussbev.formats import load_calibs, load_grid_pfm, load_scene, read_pnm, save_scene

from conftest import random_scene


def run(argv, capsys):
    code = main([str(a) for a in argv])
    cap = capsys.readouterr()
    return code, cap.out, cap.err


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    code = main(["fit", "--preset", "single-box", "--seed", "0", "--out", str(d / "scene.gsb"),
                 "--report", str(d / "report.json")])
    assert code == 0
    return d


def test_gradcheck_seed_42(capsys):
    code, out, _ = run(["gradcheck", "--seed", "42"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) >= 9 and all(l.startswith("PASS\t") for l in lines)


def test_gradcheck_impossible_tolerance_fails(capsys):
    code, out, _ = run(["gradcheck", "--tol", "1e-30"], capsys)
    assert code == 1 and "FAIL\t" in out


def test_render_missing_scene(tmp_path, capsys):
    missing = tmp_path / "nope.gsb"
    code, _, err = run(["render", "--scene", missing, "--out", tmp_path / "b.pfm"], capsys)
    assert code == 1
    assert str(missing) in err


def test_usage_errors(tmp_path, capsys):
    code, _, err = run(["render", "--scene", "x", "--out", "y", "--bogus"], capsys)
    assert code == 2 and "usage:" in err
    code, _, err = run(["fit", "--preset", "single-box"], capsys)
    assert code == 2 and "usage:" in err
    code, _, _ = run([], capsys)
    assert code == 2


def test_unknown_preset_is_domain_error(tmp_path, capsys):
    code, _, err = run(["synth", "--preset", "nope", "--out-mask", tmp_path / "m.pgm",
                        "--out-calib", tmp_path / "c.json"], capsys)
    assert code == 1 and "nope" in err


def test_fit_outputs(fitted):
    report = json.loads((fitted / "report.json").read_text())
    assert report["final_iou"] > 0.9
    assert len(report["losses"]) == report["steps"] + 1 == 401
    assert "wall_time" not in report
    csv_lines = (fitted / "report_losses.csv").read_text().splitlines()
    assert csv_lines[0] == "step,total,depth,sem_early" and len(csv_lines) == 402
    assert (fitted / "report.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(load_scene(fitted / "scene.gsb")) > 0


def test_fit_then_render_nonzero(fitted, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"x_range": [-12, 12], "y_range": [-12, 12]}))
    code, out, _ = run(["render", "--scene", fitted / "scene.gsb", "--cfg", cfg,
                        "--out", tmp_path / "b.pfm", "--preview", tmp_path / "b.ppm",
                        "--figure", tmp_path / "b.png"], capsys)
    assert code == 0 and out.startswith("grid\t48x48x4")
    grid = load_grid_pfm(tmp_path / "b.pfm")
    assert grid.shape == (48, 48, 4) and np.any(grid != 0)
    assert read_pnm((tmp_path / "b.ppm").read_bytes()).shape == (48, 48, 3)


def test_render_default_grid(tmp_path, capsys, rng):
    save_scene(tmp_path / "s.gsb", random_scene(rng, 10, 2))
    code, out, _ = run(["render", "--scene", tmp_path / "s.gsb", "--out", tmp_path / "b.pfm"], capsys)
    assert code == 0
    assert load_grid_pfm(tmp_path / "b.pfm").shape == (200, 200, 2)


def test_render_naive_matches(tmp_path, capsys, rng):
    save_scene(tmp_path / "s.gsb", random_scene(rng, 30, 3))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha_min": 0.0, "alpha_max": 1.0, "T_stop": 0.0, "cutoff": None}))
    for name, extra in (("t", []), ("n", ["--naive"])):
        assert run(["render", "--scene", tmp_path / "s.gsb", "--cfg", cfg,
                    "--out", tmp_path / f"{name}.pfm"] + extra, capsys)[0] == 0
    np.testing.assert_allclose(load_grid_pfm(tmp_path / "t.pfm"), load_grid_pfm(tmp_path / "n.pfm"),
                               atol=1e-6)


def test_bad_cfg_field(tmp_path, capsys, rng):
    save_scene(tmp_path / "s.gsb", random_scene(rng, 3, 1))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pixel_size": 1.0}))
    code, _, err = run(["render", "--scene", tmp_path / "s.gsb", "--cfg", cfg,
                        "--out", tmp_path / "b.pfm"], capsys)
    assert code == 1 and "pixel_size" in err


def test_synth(tmp_path, capsys):
    code, out, _ = run(["synth", "--preset", "two-boxes", "--seed", "0",
                        "--out-mask", tmp_path / "m.pgm", "--out-calib", tmp_path / "c.json"], capsys)
    assert code == 0 and "cameras\t2" in out
    assert read_pnm((tmp_path / "m.pgm").read_bytes()).shape == (48, 48)
    assert len(load_calibs(tmp_path / "c.json")) == 2


def test_validate(tmp_path, capsys, rng):
    scene = random_scene(rng, 4, 2)
    save_scene(tmp_path / "ok.gsb", scene)
    code, out, _ = run(["validate", "--scene", tmp_path / "ok.gsb"], capsys)
    assert code == 0 and out.strip() == "gaussians\t4\tviolations\t0"
    op = scene.opacities.copy()
    op[2] = -0.5
    from gaussbev.formats import atomic_write, scene_to_bytes
    atomic_write(tmp_path / "bad.gsb", scene_to_bytes(scene.replace(opacities=op)))
    code, out, _ = run(["validate", "--scene", tmp_path / "bad.gsb"], capsys)
    assert code == 1 and "violation\t2\topacity" in out


def test_cli_bit_reproducible(tmp_path, capsys):
    outputs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        assert run(["fit", "--preset", "lane-stripe", "--seed", "3", "--steps", "25",
                    "--out", d / "s.gsb", "--report", d / "r.json"], capsys)[0] == 0
        assert run(["render", "--scene", d / "s.gsb", "--out", d / "b.pfm",
                    "--preview", d / "b.ppm", "--figure", d / "b.png"], capsys)[0] == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outputs[0].keys() == outputs[1].keys()
    assert len(outputs[0]) == 7
    for name in outputs[0]:
        assert outputs[0][name] == outputs[1][name], name
