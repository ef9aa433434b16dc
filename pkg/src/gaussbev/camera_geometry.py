"""Decode per-pixel head outputs of one pinhole camera into world-frame gaussians.

Every stage returns its analytic Jacobian next to its value so that gradients
on the rendered grid can be pulled back onto the raw per-pixel parameters.
Pixel ``i`` of a feature grid sits at ``(u, v) = (i % width, i // width)``;
intrinsics are expected at feature-map resolution.
"""
from dataclasses import dataclass, field

import numpy as np

from . import quaternion as quat
from .errors import ZeroQuaternion
from .gaussian_scene import SCALE_MIN, GaussianScene

DISPARITY_MIN = 1e-3
QUAT_NORM_MIN = 1e-12


@dataclass(frozen=True)
class CameraCalib:
    """Pinhole intrinsics plus camera-to-world extrinsics (``p_w = R p_c + t``)."""

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int
    f_ref: float
    name: str = "cam"

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    def check(self, tol=1e-9):
        """Return a list of human-readable problems (empty if the calibration is valid)."""
        problems = []
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=tol, rtol=0.0):
            problems.append("R is not orthonormal")
        if abs(np.linalg.det(self.R) - 1.0) > tol:
            problems.append("det(R) != 1")
        for name in ("fx", "fy", "f_ref"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.width <= 0 or self.height <= 0:
            problems.append("width/height must be positive")
        return problems

    @property
    def n_pixels(self):
        return self.width * self.height

    def pixel_coords(self):
        """``(u, v)`` arrays for all pixels in row-major order."""
        idx = np.arange(self.n_pixels)
        return (idx % self.width).astype(np.float64), (idx // self.width).astype(np.float64)

    @property
    def quaternion(self):
        return quat.from_matrix(self.R)


@dataclass
class RawHeadGrid:
    """Undecoded head outputs for every pixel of one camera's feature grid.

    ``disparity`` is post-sigmoid (in ``[0, 1]``); quaternions are raw and
    unnormalized; scales are pre-``abs``; opacities are logits.
    """

    disparity: np.ndarray  # (P,)
    offset: np.ndarray  # (P, 3)
    quat: np.ndarray  # (P, 4)
    scale: np.ndarray  # (P, 3)
    opacity_logit: np.ndarray  # (P,)
    embedding: np.ndarray  # (P, C)

    def __post_init__(self):
        self.disparity = np.asarray(self.disparity, dtype=np.float64).reshape(-1)
        n = self.disparity.shape[0]
        self.offset = np.asarray(self.offset, dtype=np.float64).reshape(n, 3)
        self.quat = np.asarray(self.quat, dtype=np.float64).reshape(n, 4)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(n, 3)
        self.opacity_logit = np.asarray(self.opacity_logit, dtype=np.float64).reshape(n)
        self.embedding = np.asarray(self.embedding, dtype=np.float64).reshape(n, -1)

    @property
    def n_pixels(self):
        return self.disparity.shape[0]

    @property
    def feature_dim(self):
        return self.embedding.shape[1]


@dataclass
class DecodeJacobians:
    """Per-pixel derivatives of decoded gaussian parameters wrt raw head outputs.

    Shapes (``P`` pixels): ``depth`` and ``ddepth_ddisp`` ``(P,)``;
    ``dcenter_ddisp`` ``(P, 3)``; ``dcenter_doffset`` ``(3, 3)`` (shared, equal
    to ``R``); ``dquat_draw`` ``(P, 4, 4)``; ``dscale_draw`` ``(P, 3)`` (diagonal);
    ``dopacity_dlogit`` ``(P,)``. Embeddings pass through with identity Jacobian.
    """

    depth: np.ndarray
    ddepth_ddisp: np.ndarray
    dcenter_ddisp: np.ndarray
    dcenter_doffset: np.ndarray
    dquat_draw: np.ndarray
    dscale_draw: np.ndarray
    dopacity_dlogit: np.ndarray
    extra: dict = field(default_factory=dict)


def decode_depth(d, calib):
    """Metric depth from post-sigmoid disparity.

    ``z = fx / f_ref * (1/d - 1)`` with ``d`` clamped to ``[1e-3, 1]``. Returns
    ``(z, dz/dd)``; the derivative is zero wherever the clamp is active.
    """
    d = np.asarray(d, dtype=np.float64)
    dc = np.clip(d, DISPARITY_MIN, 1.0)
    k = calib.fx / calib.f_ref
    z = k * (1.0 / dc - 1.0)
    active = (d >= DISPARITY_MIN) & (d <= 1.0)
    dz = np.where(active, -k / (dc * dc), 0.0)
    return z, dz


def encode_depth(z, calib):
    """Inverse of :func:`decode_depth` for ``z >= 0``."""
    z = np.asarray(z, dtype=np.float64)
    return 1.0 / (z * calib.f_ref / calib.fx + 1.0)


def backproject(u, v, z, calib):
    """Camera-frame point ``K^-1 (z u, z v, z)`` and its Jacobian wrt ``(u, v, z)``."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    u, v, z = np.broadcast_arrays(u, v, z)
    xn = (u - calib.cx) / calib.fx
    yn = (v - calib.cy) / calib.fy
    p = np.stack([xn * z, yn * z, z], axis=-1)
    jac = np.zeros(u.shape + (3, 3))
    jac[..., 0, 0] = z / calib.fx
    jac[..., 0, 2] = xn
    jac[..., 1, 1] = z / calib.fy
    jac[..., 1, 2] = yn
    jac[..., 2, 2] = 1.0
    return p, jac


def apply_offset(p_c, delta):
    """Refined camera-frame point ``p_c + delta``; Jacobian wrt either input is ``I``."""
    return np.asarray(p_c, dtype=np.float64) + np.asarray(delta, dtype=np.float64), np.eye(3)


def cam_to_world_point(p_c, calib):
    """World point ``R p_c + t`` and its Jacobian ``R``."""
    p_c = np.asarray(p_c, dtype=np.float64)
    return p_c @ calib.R.T + calib.t, calib.R


def ray_direction(u, v, calib):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u, v = np.broadcast_arrays(u, v)
    r = np.stack([(u - calib.cx) / calib.fx, (v - calib.cy) / calib.fy, np.ones(u.shape)], axis=-1)
    return r / np.linalg.norm(r, axis=-1, keepdims=True)


def ray_quaternion(u, v, calib):
    """Minimal rotation taking the optical axis ``(0, 0, 1)`` onto the pixel ray.

    Uses the half-vector form ``q ∝ (1 + r_z, -r_y, r_x, 0)``, which equals the
    axis-angle construction with axis ``e_z × r`` and angle ``acos(r_z)``.
    """
    r = ray_direction(u, v, calib)
    q = np.stack([1.0 + r[..., 2], -r[..., 1], r[..., 0], np.zeros(r.shape[:-1])], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def compose_rotation(q_ray, q_raw, calib, pixel=None):
    """World rotation ``q_R ⊗ q_ray ⊗ normalize(q_raw)`` in canonical form.

    Returns ``(q_w, dq_w/dq_raw)``; the Jacobian includes the normalization
    and the sign flip applied by canonicalization.
    """
    q_ray = np.asarray(q_ray, dtype=np.float64)
    q_raw = np.asarray(q_raw, dtype=np.float64)
    norm = np.linalg.norm(q_raw, axis=-1)
    if np.any(norm < QUAT_NORM_MIN):
        bad = np.flatnonzero(np.atleast_1d(norm) < QUAT_NORM_MIN)
        where = pixel if pixel is not None else (int(bad[0]) if q_raw.ndim > 1 else None)
        raise ZeroQuaternion(where)
    q_allo = q_raw / norm[..., None]
    L = quat.left_matrix(quat.multiply(calib.quaternion, q_ray))
    q_w, sign = quat.canonical(np.einsum("...ij,...j->...i", L, q_allo))
    proj = (np.eye(4) - q_allo[..., :, None] * q_allo[..., None, :]) / norm[..., None, None]
    jac = sign[..., None, None] * (L @ proj)
    return q_w, jac


def decode_camera(raw, calib):
    """Decode all pixels of one camera; returns ``(GaussianScene, DecodeJacobians)``."""
    if raw.n_pixels != calib.n_pixels:
        raise ValueError(
            f"raw grid has {raw.n_pixels} pixels but calibration {calib.name!r} "
            f"expects {calib.width}x{calib.height}"
        )
    u, v = calib.pixel_coords()
    z, dz_dd = decode_depth(raw.disparity, calib)
    p_c, jac_bp = backproject(u, v, z, calib)
    p_bar, _ = apply_offset(p_c, raw.offset)
    p_w, R = cam_to_world_point(p_bar, calib)
    dcenter_ddisp = (jac_bp[..., :, 2] * dz_dd[:, None]) @ R.T

    q_ray = ray_quaternion(u, v, calib)
    norms = np.linalg.norm(raw.quat, axis=-1)
    bad = np.flatnonzero(norms < QUAT_NORM_MIN)
    if bad.size:
        raise ZeroQuaternion(int(bad[0]))
    q_w, dq = compose_rotation(q_ray, raw.quat, calib)

    absval = np.abs(raw.scale)
    scale = np.maximum(absval, SCALE_MIN)
    dscale = np.where(absval > SCALE_MIN, np.sign(raw.scale), 0.0)

    opacity = _sigmoid(raw.opacity_logit)
    dopacity = opacity * (1.0 - opacity)

    scene = GaussianScene(p_w, scale, q_w, opacity, raw.embedding.copy())
    jacs = DecodeJacobians(
        depth=z,
        ddepth_ddisp=dz_dd,
        dcenter_ddisp=dcenter_ddisp,
        dcenter_doffset=R.copy(),
        dquat_draw=dq,
        dscale_draw=dscale,
        dopacity_dlogit=dopacity,
    )
    return scene, jacs


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
