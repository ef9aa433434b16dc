"""Finite-difference verification of every analytic Jacobian in the toolkit.

Errors are normwise: ``max|fd - analytic| / max(max|fd|, 1e-8)`` per Jacobian,
with central differences of step ``h``. Each suite returns one
:class:`CheckResult` holding the worst error over its random configurations.
"""
import time
from dataclasses import dataclass

import numpy as np

from . import quaternion as quat
from .bev_rasterizer import RenderConfig, render, render_backward
from .camera_geometry import (CameraCalib, RawHeadGrid, backproject, cam_to_world_point,
                              compose_rotation, decode_camera, decode_depth, ray_quaternion)
from .gaussian_scene import GaussianScene, covariance_3d
from .losses import LossWeights, bce_loss, depth_loss, total_loss

H = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float
    configs: int
    seconds: float = 0.0

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}\t{self.name}\terr={self.error:.3e}\ttol={self.tol:.0e}\tn={self.configs}\t{self.seconds:.2f}s"


def rel_error(fd, analytic):
    fd = np.asarray(fd, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64)
    return float(np.max(np.abs(fd - analytic)) / max(float(np.max(np.abs(fd))), 1e-8))


def numeric_jacobian(f, x, h=H):
    """Central-difference Jacobian of ``f`` (array -> array) at ``x``; shape ``out.shape + x.shape``."""
    x = np.asarray(x, dtype=np.float64)
    y0 = np.asarray(f(x))
    jac = np.zeros(y0.shape + x.shape)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        jac[(Ellipsis,) + idx] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return jac


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat.to_matrix(q / np.linalg.norm(q))


def random_calib(rng, width=4, height=3):
    f = rng.uniform(50.0, 500.0)
    return CameraCalib(
        fx=f * rng.uniform(0.8, 1.2), fy=f * rng.uniform(0.8, 1.2),
        cx=rng.uniform(0, width), cy=rng.uniform(0, height),
        R=random_rotation(rng), t=rng.normal(0.0, 5.0, 3),
        width=width, height=height, f_ref=rng.uniform(50.0, 500.0),
    )


def random_quat(rng):
    q = rng.normal(size=4)
    return q / np.linalg.norm(q)


def _timed(name, tol, n, fn):
    t0 = time.perf_counter()
    err = fn()
    return CheckResult(name, err, tol, n, time.perf_counter() - t0)


# ---------------------------------------------------------------- geometry

def check_decode_depth(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            calib = random_calib(rng)
            d = np.array(rng.uniform(0.1, 0.95))
            _, dz = decode_depth(d, calib)
            fd = numeric_jacobian(lambda x: decode_depth(x, calib)[0], d)
            worst = max(worst, rel_error(fd, dz))
        return worst
    return _timed("camera_geometry.decode_depth", tol, n, run)


def check_backproject(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            calib = random_calib(rng)
            x = np.array([rng.uniform(0, 4), rng.uniform(0, 3), rng.uniform(0.1, 50.0)])
            _, jac = backproject(x[0], x[1], x[2], calib)
            fd = numeric_jacobian(lambda y: backproject(y[0], y[1], y[2], calib)[0], x)
            worst = max(worst, rel_error(fd, jac))
        return worst
    return _timed("camera_geometry.backproject", tol, n, run)


def check_cam_to_world(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            calib = random_calib(rng)
            p = rng.normal(0.0, 10.0, 3)
            _, jac = cam_to_world_point(p, calib)
            fd = numeric_jacobian(lambda y: cam_to_world_point(y, calib)[0], p)
            worst = max(worst, rel_error(fd, jac))
        return worst
    return _timed("camera_geometry.cam_to_world_point", tol, n, run)


def _safe_raw_quat(rng, q_left):
    # keep the canonical sign flip (w = 0) well outside the finite-difference stencil
    while True:
        q = rng.normal(size=4) * rng.uniform(0.5, 2.0)
        w = (quat.multiply(q_left, q / np.linalg.norm(q)))[0]
        if abs(w) > 1e-2:
            return q


def check_compose_rotation(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            calib = random_calib(rng)
            q_ray = ray_quaternion(rng.uniform(0, 4), rng.uniform(0, 3), calib)
            q_raw = _safe_raw_quat(rng, quat.multiply(calib.quaternion, q_ray))
            _, jac = compose_rotation(q_ray, q_raw, calib)
            fd = numeric_jacobian(lambda q: compose_rotation(q_ray, q, calib)[0], q_raw)
            worst = max(worst, rel_error(fd, jac))
        return worst
    return _timed("camera_geometry.compose_rotation", tol, n, run)


def random_raw(rng, calib, C=3):
    P = calib.n_pixels
    qs = []
    u, v = calib.pixel_coords()
    rays = ray_quaternion(u, v, calib)
    for i in range(P):
        qs.append(_safe_raw_quat(rng, quat.multiply(calib.quaternion, rays[i])))
    scale = rng.uniform(0.1, 2.0, (P, 3)) * rng.choice([-1.0, 1.0], (P, 3))
    return RawHeadGrid(rng.uniform(0.1, 0.95, P), rng.normal(0.0, 0.5, (P, 3)), np.array(qs),
                       scale, rng.normal(0.0, 2.0, P), rng.normal(size=(P, C)))


def check_decode_camera(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            calib = random_calib(rng, width=2, height=2)
            raw = random_raw(rng, calib)
            _, jac = decode_camera(raw, calib)
            P = raw.n_pixels

            def decoded(**over):
                fields = dict(disparity=raw.disparity, offset=raw.offset, quat=raw.quat,
                              scale=raw.scale, opacity_logit=raw.opacity_logit,
                              embedding=raw.embedding)
                fields.update(over)
                return decode_camera(RawHeadGrid(**fields), calib)[0]

            fd = numeric_jacobian(lambda d: decoded(disparity=d).centers, raw.disparity)
            an = np.zeros((P, 3, P))
            an[np.arange(P), :, np.arange(P)] = jac.dcenter_ddisp
            worst = max(worst, rel_error(fd, an))

            fd = numeric_jacobian(lambda o: decoded(offset=o).centers, raw.offset)
            an = np.zeros((P, 3, P, 3))
            an[np.arange(P), :, np.arange(P), :] = jac.dcenter_doffset
            worst = max(worst, rel_error(fd, an))

            fd = numeric_jacobian(lambda q: decoded(quat=q).quats, raw.quat)
            an = np.zeros((P, 4, P, 4))
            an[np.arange(P), :, np.arange(P), :] = jac.dquat_draw
            worst = max(worst, rel_error(fd, an))

            fd = numeric_jacobian(lambda s: decoded(scale=s).scales, raw.scale)
            an = np.zeros((P, 3, P, 3))
            for k in range(3):
                an[np.arange(P), k, np.arange(P), k] = jac.dscale_draw[:, k]
            worst = max(worst, rel_error(fd, an))

            fd = numeric_jacobian(lambda o: decoded(opacity_logit=o).opacities, raw.opacity_logit)
            worst = max(worst, rel_error(fd, np.diag(jac.dopacity_dlogit)))
        return worst
    return _timed("camera_geometry.decode_camera", tol, n, run)


def check_covariance(seed=0, n=100, tol=1e-5):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            s = rng.uniform(0.1, 3.0, 3)
            q = random_quat(rng) * rng.uniform(0.5, 2.0)
            _, ds, dq = covariance_3d(s, q)
            worst = max(worst, rel_error(numeric_jacobian(lambda x: covariance_3d(x, q)[0], s), ds))
            worst = max(worst, rel_error(numeric_jacobian(lambda x: covariance_3d(s, x)[0], q), dq))
        return worst
    return _timed("gaussian_scene.covariance_3d", tol, n, run)


# ---------------------------------------------------------------- losses

def check_losses(seed=0, n=100, tol=1e-6):
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            shape = (3, 4)
            x = rng.uniform(-6.0, 6.0, shape)
            y = (rng.random(shape) < 0.5).astype(float)
            mask = rng.random(shape) < 0.8
            mask[0, 0] = True
            _, g = bce_loss(x, y, mask)
            worst = max(worst, rel_error(numeric_jacobian(lambda v: bce_loss(v, y, mask)[0], x), g))

            zg = rng.uniform(0.5, 50.0, 6)
            zp = zg * np.exp(rng.choice([-1.0, 1.0], 6) * rng.uniform(0.05, 1.0, 6))
            _, g = depth_loss(zp, zg)
            worst = max(worst, rel_error(numeric_jacobian(lambda v: depth_loss(v, zg)[0], zp), g))

            names = ["sem", "sem_early", "depth"]
            parts = dict(zip(names, rng.uniform(0.0, 3.0, 3)))
            s = dict(zip(names, rng.normal(0.0, 1.0, 3)))
            for mode in ("fixed", "uncertainty"):
                w = LossWeights(rng.uniform(0, 2), rng.uniform(0, 2), mode, s)
                _, dp, ds = total_loss(parts, w)
                vec = np.array([parts[k] for k in names])
                fd = numeric_jacobian(lambda v: total_loss(dict(zip(names, v)), w)[0], vec)
                worst = max(worst, rel_error(fd, [dp[k] for k in names]))
                if mode == "uncertainty":
                    svec = np.array([s[k] for k in names])
                    fd = numeric_jacobian(
                        lambda v: total_loss(parts, LossWeights(w.lambda_bce, w.lambda_depth, mode,
                                                                dict(zip(names, v))))[0], svec)
                    worst = max(worst, rel_error(fd, [ds[k] for k in names]))
        return worst
    return _timed("losses", tol, n, run)


# ---------------------------------------------------------------- rasterizer

SMALL_CONFIG = RenderConfig(x_range=(-6.0, 6.0), y_range=(-6.0, 6.0), resolution=0.5).without_thresholds()


def random_scene(rng, n, C, extent=5.0, scale=(0.4, 2.0)):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    centers = np.c_[rng.uniform(-extent, extent, (n, 2)), rng.uniform(-2.0, 2.0, n)]
    return GaussianScene(centers, rng.uniform(*scale, (n, 3)), q, rng.uniform(0.05, 0.95, n),
                         rng.normal(size=(n, C)))


def check_rasterizer(seed=0, n=5, tol=1e-5, cfg=SMALL_CONFIG, max_gaussians=20, workers=None):
    """Full Jacobian of ``<render, G>`` wrt all scene parameters (z excluded)."""
    def run():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n):
            C = int(rng.choice([1, 3, 8]))
            scene = random_scene(rng, int(rng.integers(1, max_gaussians + 1)), C)
            G = rng.normal(size=(cfg.height, cfg.width, C))
            gb = render_backward(scene, cfg, G, workers=workers)
            for field, an in (("centers", gb.center), ("scales", gb.scale), ("quats", gb.quat),
                              ("opacities", gb.opacity), ("embeddings", gb.embedding)):
                base = np.array(getattr(scene, field))

                def loss(x, field=field):
                    return float(np.sum(render(scene.replace(**{field: x}), cfg, workers=workers).data * G))
                fd = numeric_jacobian(loss, base, h=1e-5)
                if field == "centers":
                    fd = fd.copy()
                    fd[:, 2] = 0.0  # ordering is not differentiated
                worst = max(worst, rel_error(fd, an))
        return worst
    return _timed("bev_rasterizer.render_backward", tol, n, run)


def check_end_to_end(seed=0, tol=1e-4, workers=None):
    """Scalar training loss wrt every raw parameter of a 2-camera, 4-pixel problem."""
    from .fit_harness import FitProblem, HeadParams, evaluate, ground_depth, look_calib, synth_scene

    def run():
        rng = np.random.default_rng(seed)
        mask, calibs, _ = synth_scene("two-boxes", seed)
        cams = [look_calib(c.t, yaw, width=2, height=2, name=c.name)
                for c, yaw in zip(calibs, (0.0, 180.0))]
        raw = []
        for c in cams:
            P = c.n_pixels
            depth = 5.0 * np.exp(rng.normal(0.0, 0.1, P))
            d = 1.0 / (depth * c.f_ref / c.fx + 1.0)
            raw.append(HeadParams(np.log(d) - np.log1p(-d), rng.normal(0.0, 0.3, (P, 3)),
                                  rng.normal(size=(P, 4)), rng.uniform(0.5, 2.0, (P, 3)),
                                  rng.normal(size=P), rng.normal(size=(P, 4))))
        from .fit_harness import DESK_CONFIG
        problem = FitProblem(cams, raw, mask, rng.normal(size=4), 0.3,
                             cfg=DESK_CONFIG.without_thresholds(),
                             weights=LossWeights(1.0, 0.05),
                             depth_gt=[ground_depth(c) * np.exp(rng.normal(0.0, 0.2, c.n_pixels)) for c in cams],
                             workers=workers)
        theta = problem.pack()
        an = evaluate(problem, theta).grad
        fd = numeric_jacobian(lambda t: evaluate(problem, t, need_grad=False).loss, theta, h=1e-5)
        return rel_error(fd, an)
    return _timed("fit_harness.end_to_end", tol, 1, run)


def geometry_suites(seed=0, n=100):
    return [
        check_decode_depth(seed, n), check_backproject(seed, n), check_cam_to_world(seed, n),
        check_compose_rotation(seed, n), check_decode_camera(seed, n), check_covariance(seed, n),
        check_losses(seed, n),
    ]


def run_all(seed=0, tol=None):
    """Every suite; ``tol`` overrides the per-suite tolerance when given."""
    results = geometry_suites(seed) + [check_rasterizer(seed), check_end_to_end(seed)]
    if tol is not None:
        for r in results:
            r.tol = tol
    return results
