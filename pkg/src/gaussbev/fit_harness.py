"""Desk-scale inverse rendering: fit free per-pixel head outputs to a BeV mask.

Free parameters stand in for the prediction heads. One step runs
decode -> concat -> render -> linear logit head -> losses, then pulls the
gradient back through the rasterizer and the decode Jacobians.
"""
import time
from dataclasses import dataclass, field

import numpy as np

from .bev_rasterizer import RenderConfig, render, render_backward
from .camera_geometry import CameraCalib, RawHeadGrid, _sigmoid, decode_camera, encode_depth
from .errors import DivergenceDetected, NonPositiveDepth, UnknownPreset
from .gaussian_scene import concat_scenes
from .losses import LossWeights, bce_loss, depth_loss, total_loss

PRESETS = ("single-box", "two-boxes", "lane-stripe")

DESK_CONFIG = RenderConfig(x_range=(-12.0, 12.0), y_range=(-12.0, 12.0), resolution=0.5)
FEATURE_W, FEATURE_H = 16, 10
FOCAL = 12.0
F_REF = 12.0
CAM_HEIGHT = 3.0
CAM_PITCH_DEG = 35.0


# ---------------------------------------------------------------- synthetic data

def look_calib(position, yaw_deg, pitch_deg=CAM_PITCH_DEG, name="cam", width=FEATURE_W,
               height=FEATURE_H, focal=FOCAL, f_ref=F_REF):
    """Pinhole camera at ``position`` looking along heading ``yaw`` (world z up), pitched down."""
    yaw, pitch = np.radians(yaw_deg), np.radians(pitch_deg)
    fwd = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    up = np.array([0.0, 0.0, 1.0])
    z_c = np.cos(pitch) * fwd - np.sin(pitch) * up
    x_c = np.cross(fwd, up)
    x_c /= np.linalg.norm(x_c)
    y_c = np.cross(z_c, x_c)
    R = np.stack([x_c, y_c, z_c], axis=1)
    return CameraCalib(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, R,
                       np.asarray(position, dtype=np.float64), width, height, f_ref, name)


def ground_depth(calib):
    """Camera-frame depth at which every pixel ray meets the ground plane ``z = 0``."""
    u, v = calib.pixel_coords()
    rays = np.stack([(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, np.ones_like(u)], axis=1)
    dz = rays @ calib.R[2]
    if np.any(dz >= 0):
        raise ValueError(f"camera {calib.name!r} sees above the horizon")
    return -calib.t[2] / dz


def _rect_mask(cfg, center, size, angle_deg=0.0):
    rows, cols = np.mgrid[0:cfg.height, 0:cfg.width]
    x, y = cfg.pixel_center(rows, cols)
    a = np.radians(angle_deg)
    dx, dy = x - center[0], y - center[1]
    lx = np.cos(a) * dx + np.sin(a) * dy
    ly = -np.sin(a) * dx + np.cos(a) * dy
    return (np.abs(lx) <= size[0] / 2.0) & (np.abs(ly) <= size[1] / 2.0)


def synth_scene(preset, seed=0, cfg=DESK_CONFIG):
    """Target mask, cameras and ground-truth depth for a named preset.

    Geometry is jittered by whole pixels from ``seed`` so that rectangle edges
    stay on pixel boundaries. Returns ``(target_mask, calibs, depth_gt)`` where
    ``depth_gt`` is a list with one ``(P,)`` array per camera.
    """
    if preset not in PRESETS:
        raise UnknownPreset(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    rng = np.random.default_rng(seed)
    res = cfg.resolution
    jit = lambda: res * float(rng.integers(-2, 3))  # noqa: E731
    if preset == "single-box":
        calibs = [look_calib((-10.0, 0.0, CAM_HEIGHT), 0.0, name="front")]
        mask = _rect_mask(cfg, (-3.0 + jit(), 0.0 + jit()), (5.0, 3.0))
    elif preset == "two-boxes":
        calibs = [look_calib((-10.0, 0.0, CAM_HEIGHT), 0.0, name="front"),
                  look_calib((10.0, 0.0, CAM_HEIGHT), 180.0, name="back")]
        mask = (_rect_mask(cfg, (-4.0 + jit(), 1.5 + jit()), (4.0, 2.0))
                | _rect_mask(cfg, (4.0 + jit(), -1.5 + jit()), (4.0, 2.0), angle_deg=30.0))
    else:
        calibs = [look_calib((-10.0, 0.0, CAM_HEIGHT), 0.0, name="front")]
        mask = _rect_mask(cfg, (-2.0 + jit(), 0.0), (10.0, 1.0))
    return mask, calibs, [ground_depth(c) for c in calibs]


# ---------------------------------------------------------------- problem setup

@dataclass
class HeadParams:
    """Pre-activation per-pixel parameters of one camera (the optimization variables)."""

    disparity_logit: np.ndarray
    offset: np.ndarray
    quat: np.ndarray
    scale: np.ndarray
    opacity_logit: np.ndarray
    embedding: np.ndarray

    FIELDS = ("disparity_logit", "offset", "quat", "scale", "opacity_logit", "embedding")

    def to_grid(self):
        return RawHeadGrid(_sigmoid(self.disparity_logit), self.offset, self.quat, self.scale,
                           self.opacity_logit, self.embedding)

    def arrays(self):
        return [getattr(self, f) for f in self.FIELDS]


@dataclass
class Optimizer:
    """Heavy-ball gradient descent.

    ``pixel_lr_scale`` multiplies the step of the per-pixel head parameters
    (not the logit head). The BCE is a mean over every BeV pixel, so each free
    per-pixel variable only sees a ~1/(H_B W_B) share of the signal that a
    shared convolutional head would aggregate.
    """

    lr: float = 0.05
    steps: int = 400
    momentum: float = 0.9
    seed: int = 0
    pixel_lr_scale: float = 30.0


@dataclass
class FitProblem:
    calibs: list
    raw: list  # HeadParams per camera
    target_mask: np.ndarray
    head_w: np.ndarray
    head_b: float
    cfg: RenderConfig = DESK_CONFIG
    weights: LossWeights = field(default_factory=lambda: LossWeights(lambda_bce=1.0, lambda_depth=0.05))
    optimizer: Optimizer = field(default_factory=Optimizer)
    depth_gt: list = None
    workers: int = None

    def __post_init__(self):
        self.target_mask = np.asarray(self.target_mask, dtype=bool)
        if self.target_mask.shape != self.cfg.shape:
            raise ValueError(f"target mask {self.target_mask.shape} != grid {self.cfg.shape}")
        if len(self.raw) != len(self.calibs):
            raise ValueError("need one HeadParams per camera")

    # flat parameter vector: per camera fields, then head weights, head bias, s_params
    def pack(self):
        parts = [a.ravel() for hp in self.raw for a in hp.arrays()]
        parts += [np.asarray(self.head_w, dtype=np.float64).ravel(), np.array([self.head_b], dtype=np.float64)]
        parts += [np.array([self.weights.s_params.get(k, 0.0) for k in self._s_names()])]
        return np.concatenate(parts)

    def unpack(self, theta):
        """Rebuild ``(raw, head_w, head_b, s_params)`` from a flat vector."""
        theta = np.asarray(theta, dtype=np.float64)
        pos = 0
        raw = []
        for hp in self.raw:
            arrays = []
            for a in hp.arrays():
                arrays.append(theta[pos:pos + a.size].reshape(a.shape))
                pos += a.size
            raw.append(HeadParams(*arrays))
        C = np.size(self.head_w)
        w = theta[pos:pos + C]
        b = float(theta[pos + C])
        pos += C + 1
        s = {k: float(theta[pos + i]) for i, k in enumerate(self._s_names())}
        return raw, w, b, s

    def step_scales(self):
        """Per-entry step multipliers aligned with :meth:`pack`."""
        n_pixel = sum(a.size for hp in self.raw for a in hp.arrays())
        scales = np.ones(self.pack().size)
        scales[:n_pixel] = self.optimizer.pixel_lr_scale
        return scales

    def _s_names(self):
        if self.weights.mode != "uncertainty":
            return []
        names = ["sem_early"]
        if self.depth_gt is not None:
            names.append("depth")
        return names


def make_problem(preset, seed=0, lr=0.05, steps=400, momentum=0.9, lambda_depth=0.05,
                 feature_dim=4, weights=None, init_depth=6.0, workers=None, pixel_lr_scale=30.0):
    """Synthetic problem with deterministic, seed-driven initialization."""
    mask, calibs, depth_gt = synth_scene(preset, seed)
    rng = np.random.default_rng(seed)
    raw = []
    for calib in calibs:
        P = calib.n_pixels
        depth0 = init_depth * np.exp(rng.normal(0.0, 0.1, P))
        d0 = encode_depth(depth0, calib)
        raw.append(HeadParams(
            disparity_logit=np.log(d0) - np.log1p(-d0),
            offset=np.zeros((P, 3)),
            quat=np.array([1.0, 0.0, 0.0, 0.0]) + rng.normal(0.0, 0.1, (P, 4)),
            scale=np.full((P, 3), 0.6) + rng.normal(0.0, 0.05, (P, 3)),
            opacity_logit=np.zeros(P),
            embedding=rng.normal(0.0, 0.5, (P, feature_dim)),
        ))
    if weights is None:
        weights = LossWeights(lambda_bce=1.0, lambda_depth=lambda_depth)
    return FitProblem(
        calibs=calibs, raw=raw, target_mask=mask,
        head_w=rng.normal(0.0, 0.5, feature_dim), head_b=0.0,
        weights=weights, optimizer=Optimizer(lr, steps, momentum, seed, pixel_lr_scale),
        depth_gt=depth_gt, workers=workers,
    )


# ---------------------------------------------------------------- evaluation

@dataclass
class Evaluation:
    loss: float
    grad: np.ndarray
    parts: dict
    scene: object
    grid: object
    logits: np.ndarray
    depth: list


def evaluate(problem, theta, need_grad=True):
    """Total loss (and gradient wrt the flat parameter vector) at ``theta``."""
    raw, w, b, s = problem.unpack(theta)
    weights = problem.weights
    if weights.mode == "uncertainty":
        weights = LossWeights(weights.lambda_bce, weights.lambda_depth, "uncertainty", s)
    decoded = [decode_camera(hp.to_grid(), calib) for hp, calib in zip(raw, problem.calibs)]
    scene = concat_scenes([sc for sc, _ in decoded])
    cfg = problem.cfg
    grid = render(scene, cfg, workers=problem.workers)
    logits = grid.data @ w + b
    parts = {}
    bce, g_logits = bce_loss(logits, problem.target_mask)
    parts["sem_early"] = bce
    depths = [j.depth for _, j in decoded]
    if problem.depth_gt is not None:
        z_pred = np.concatenate(depths)
        z_gt = np.concatenate(problem.depth_gt)
        dl, g_z = depth_loss(z_pred, z_gt)
        parts["depth"] = dl
    value, dparts, ds = total_loss(parts, weights)
    if not need_grad:
        return Evaluation(value, None, parts, scene, grid, logits, depths)

    g_logits = g_logits * dparts["sem_early"]
    grad_grid = g_logits[..., None] * w
    g_w = np.einsum("hw,hwc->c", g_logits, grid.data)
    g_b = g_logits.sum()
    gb = render_backward(scene, cfg, grad_grid, workers=problem.workers)

    out = []
    start = 0
    z_start = 0
    for (hp, (sc, jac)), calib in zip(zip(raw, decoded), problem.calibs):
        n = len(sc)
        sl = slice(start, start + n)
        g_center = gb.center[sl]
        g_disp = np.einsum("ni,ni->n", g_center, jac.dcenter_ddisp)
        if "depth" in parts:
            g_disp = g_disp + dparts["depth"] * g_z[z_start:z_start + n] * jac.ddepth_ddisp
        d = _sigmoid(hp.disparity_logit)
        out.append(g_disp * d * (1.0 - d))
        out.append(g_center @ jac.dcenter_doffset)
        out.append(np.einsum("ni,nij->nj", gb.quat[sl], jac.dquat_draw))
        out.append(gb.scale[sl] * jac.dscale_draw)
        out.append(gb.opacity[sl] * jac.dopacity_dlogit)
        out.append(gb.embedding[sl])
        start += n
        z_start += n
    out += [g_w, np.array([g_b])]
    out += [np.array([ds[k] for k in problem._s_names()])]
    grad = np.concatenate([a.ravel() for a in out])
    return Evaluation(value, grad, parts, scene, grid, logits, depths)


def iou(pred_mask, target_mask):
    """Intersection over union of two binary masks (1.0 when both are empty)."""
    p = np.asarray(pred_mask, dtype=bool)
    t = np.asarray(target_mask, dtype=bool)
    if p.shape != t.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {t.shape}")
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def mean_log_depth_error(depths, depth_gt):
    z = np.concatenate(depths)
    g = np.concatenate(depth_gt)
    return float(np.mean(np.abs(np.log(z) - np.log(g))))


@dataclass
class FitReport:
    losses: list
    parts: list
    final_iou: float
    wall_time: float
    depth_error: float = None
    steps: int = 0

    def to_dict(self):
        return {
            "steps": self.steps,
            "final_iou": self.final_iou,
            "depth_error": self.depth_error,
            "wall_time": self.wall_time,
            "losses": list(self.losses),
            "parts": list(self.parts),
        }


def _evaluate_or_diverge(problem, theta, step, need_grad=True):
    # saturated disparity decodes to z = 0, which only happens on a runaway step
    if not np.all(np.isfinite(theta)):
        raise DivergenceDetected(step)
    try:
        return evaluate(problem, theta, need_grad=need_grad)
    except NonPositiveDepth as exc:
        raise DivergenceDetected(step) from exc


def fit(problem, callback=None):
    """Momentum gradient descent on every raw parameter and the logit head.

    Returns ``(FitReport, final GaussianScene, final theta)``. ``losses[k]``
    is the loss evaluated before update ``k``; the last entry is the loss
    after the final update.
    """
    opt = problem.optimizer
    theta = problem.pack()
    step_scale = problem.step_scales()
    velocity = np.zeros_like(theta)
    losses, parts = [], []
    t0 = time.perf_counter()
    for step in range(opt.steps):
        ev = _evaluate_or_diverge(problem, theta, step)
        if not np.isfinite(ev.loss) or not np.all(np.isfinite(ev.grad)):
            raise DivergenceDetected(step)
        losses.append(ev.loss)
        parts.append(dict(ev.parts))
        if callback is not None:
            callback(step, ev)
        velocity = opt.momentum * velocity + ev.grad
        theta = theta - opt.lr * step_scale * velocity
    ev = _evaluate_or_diverge(problem, theta, opt.steps, need_grad=False)
    if not np.isfinite(ev.loss):
        raise DivergenceDetected(opt.steps)
    losses.append(ev.loss)
    parts.append(dict(ev.parts))
    wall = time.perf_counter() - t0
    depth_err = None
    if problem.depth_gt is not None:
        depth_err = mean_log_depth_error(ev.depth, problem.depth_gt)
    report = FitReport(losses, parts, float(iou(ev.logits > 0.0, problem.target_mask)), wall,
                       depth_err, opt.steps)
    return report, ev.scene, theta
