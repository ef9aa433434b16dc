"""Hamilton quaternions, scalar-first ``(w, x, y, z)``.

All helpers accept a single quaternion of shape ``(4,)`` or a batch ``(..., 4)``.
"""
import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def multiply(q, p):
    """Hamilton product ``q ⊗ p``."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(q, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(p, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def left_matrix(q):
    """Matrix ``L(q)`` with ``q ⊗ p == L(q) @ p``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def canonical(q):
    """Flip sign so that ``w >= 0``. Returns ``(q_canon, sign)``."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., 0] < 0.0, -1.0, 1.0)
    return q * sign[..., None], sign


def to_matrix(q):
    """Rotation matrix of a unit quaternion (no normalization performed)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    rows = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def to_matrix_jacobian(q):
    """``d to_matrix(q) / dq`` with shape ``(..., 3, 3, 4)``."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    zero = np.zeros_like(w)
    # entry (r, c) -> (d/dw, d/dx, d/dy, d/dz)
    d = [
        [(zero, zero, -4 * y, -4 * z), (-2 * z, 2 * y, 2 * x, -2 * w), (2 * y, 2 * z, 2 * w, 2 * x)],
        [(2 * z, 2 * y, 2 * x, 2 * w), (zero, -4 * x, zero, -4 * z), (-2 * x, -2 * w, 2 * z, 2 * y)],
        [(-2 * y, 2 * z, -2 * w, 2 * x), (2 * x, 2 * w, 2 * z, 2 * y), (zero, -4 * x, -4 * y, zero)],
    ]
    return np.stack(
        [np.stack([np.stack(e, axis=-1) for e in row], axis=-2) for row in d], axis=-3
    )


def from_matrix(R):
    """Unit quaternion (canonical ``w >= 0``) of a single 3x3 rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return canonical(q)[0]


def rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``."""
    v = np.asarray(v, dtype=np.float64)
    qv = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return multiply(multiply(q, qv), conjugate(q))[..., 1:]


def from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])
