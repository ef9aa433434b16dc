"""Command-line entry point: ``gaussbev <subcommand> ...``.

Exit status is 0 on success, 1 on a domain error (bad file, failed check),
2 on a usage error.
"""
import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import formats
from .bev_rasterizer import RenderConfig, render, render_naive
from .errors import GaussBevError
from .gaussian_scene import validate

log = logging.getLogger("gaussbev")


def _parser():
    p = argparse.ArgumentParser(prog="gaussbev", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="splat a scene file into a BeV grid (PFM)")
    r.add_argument("--scene", required=True)
    r.add_argument("--cfg", help="RenderConfig JSON; omitted fields take the defaults")
    r.add_argument("--out", required=True)
    r.add_argument("--preview", help="PCA preview (PPM)")
    r.add_argument("--figure", help="PCA preview on metric axes (PNG)")
    r.add_argument("--naive", action="store_true", help="use the reference per-pixel renderer")
    r.add_argument("--workers", type=int, default=None)

    f = sub.add_parser("fit", help="fit a synthetic preset by gradient descent")
    f.add_argument("--preset", required=True)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--steps", type=int, default=400)
    f.add_argument("--lr", type=float, default=0.05)
    f.add_argument("--momentum", type=float, default=0.9)
    f.add_argument("--lambda-depth", type=float, default=0.05)
    f.add_argument("--out", required=True, help="fitted scene (GSBV)")
    f.add_argument("--report", required=True, help="report JSON; losses CSV and figure go alongside")
    f.add_argument("--no-figures", action="store_true")
    f.add_argument("--workers", type=int, default=None)

    g = sub.add_parser("gradcheck", help="run every finite-difference suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=None, help="override every suite's tolerance")

    s = sub.add_parser("synth", help="write a synthetic preset's target mask and cameras")
    s.add_argument("--preset", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-mask", required=True)
    s.add_argument("--out-calib", required=True)

    v = sub.add_parser("validate", help="check a scene file's invariants")
    v.add_argument("--scene", required=True)
    return p


def _sidecar(path, suffix):
    stem, _ = os.path.splitext(path)
    return stem + suffix


def cmd_render(args, out):
    scene = formats.load_scene(args.scene)
    cfg = formats.load_render_config(args.cfg) if args.cfg else RenderConfig()
    fn = render_naive if args.naive else render
    grid = fn(scene, cfg, workers=args.workers)
    formats.save_grid_pfm(args.out, grid)
    if args.preview:
        from .preview import preview_pca
        formats.atomic_write(args.preview, preview_pca(grid))
    if args.figure:
        from .plotting import plot_grid
        plot_grid(grid, args.figure, scene)
    nz = int(np.count_nonzero(np.any(grid.data != 0.0, axis=2)))
    print(f"grid\t{cfg.height}x{cfg.width}x{grid.feature_dim}\tnonzero_pixels\t{nz}", file=out)
    return 0


def cmd_fit(args, out):
    from .fit_harness import evaluate, fit, make_problem

    problem = make_problem(args.preset, args.seed, lr=args.lr, steps=args.steps,
                           momentum=args.momentum, lambda_depth=args.lambda_depth,
                           workers=args.workers)
    report, scene, theta = fit(problem)
    formats.save_scene(args.out, scene)
    doc = {"preset": args.preset, "seed": args.seed, "lr": args.lr, "momentum": args.momentum,
           "lambda_depth": args.lambda_depth, "render_config": problem.cfg.to_dict()}
    doc.update(report.to_dict())
    # timing stays out of the file so identical runs give identical bytes
    log.info("fit wall time %.3f s", doc.pop("wall_time"))
    formats.atomic_write(args.report, (json.dumps(doc, indent=2) + "\n").encode())

    names = sorted({k for p in report.parts for k in p})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "total"] + names)
    for i, (loss, parts) in enumerate(zip(report.losses, report.parts)):
        w.writerow([i, repr(loss)] + [repr(parts.get(k, float("nan"))) for k in names])
    formats.atomic_write(_sidecar(args.report, "_losses.csv"), buf.getvalue().encode())

    if not args.no_figures:
        from .plotting import plot_fit
        final = evaluate(problem, theta, need_grad=False)
        plot_fit(report, problem.target_mask, final.logits, problem.cfg, _sidecar(args.report, ".png"))
    print(f"preset\t{args.preset}\tsteps\t{report.steps}\tloss0\t{report.losses[0]:.6g}"
          f"\tloss\t{report.losses[-1]:.6g}\tiou\t{report.final_iou:.6f}", file=out)
    return 0


def cmd_gradcheck(args, out):
    from .gradcheck import run_all

    results = run_all(args.seed, args.tol)
    for r in results:
        print(r.line(), file=out)
    return 0 if all(r.passed for r in results) else 1


def cmd_synth(args, out):
    from .fit_harness import synth_scene

    mask, calibs, _ = synth_scene(args.preset, args.seed)
    formats.atomic_write(args.out_mask, formats.pgm_bytes(mask))
    formats.save_calibs(args.out_calib, calibs)
    print(f"mask\t{mask.shape[0]}x{mask.shape[1]}\tarea\t{int(mask.sum())}\tcameras\t{len(calibs)}", file=out)
    return 0


def cmd_validate(args, out):
    scene = formats.load_scene(args.scene, check=False)
    problems = validate(scene, quat_tol=formats.LOAD_QUAT_TOL)
    for v in problems:
        print(f"violation\t{v.index}\t{v.field}\t{v.message}", file=out)
    print(f"gaussians\t{len(scene)}\tviolations\t{len(problems)}", file=out)
    return 0 if not problems else 1


COMMANDS = {"render": cmd_render, "fit": cmd_fit, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth, "validate": cmd_validate}


def main(argv=None, out=None):
    out = out or sys.stdout
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except FileNotFoundError as exc:
        print(f"gaussbev: error: no such file: {exc.filename}", file=sys.stderr)
    except (GaussBevError, OSError, ValueError) as exc:
        print(f"gaussbev: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
