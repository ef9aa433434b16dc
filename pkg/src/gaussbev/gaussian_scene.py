"""World-frame gaussian sets and their 3D covariance."""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import quaternion as quat
from .errors import FeatureDimMismatch

SCALE_MIN = 1e-6
UNIT_TOL = 1e-9


class Gaussian(NamedTuple):
    center: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    opacity: float
    embedding: np.ndarray


class Violation(NamedTuple):
    index: int
    field: str
    message: str

    def __str__(self):
        return f"gaussian {self.index}: {self.field}: {self.message}"


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """Structure-of-arrays gaussian set; arrays are read-only after construction.

    Order is meaningful: it breaks depth ties during compositing, and decoded
    scenes are camera-major then pixel row-major.
    """

    centers: np.ndarray  # (N, 3) meters
    scales: np.ndarray  # (N, 3) meters
    quats: np.ndarray  # (N, 4) w, x, y, z
    opacities: np.ndarray  # (N,)
    embeddings: np.ndarray  # (N, C)

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        n = np.asarray(self.opacities).reshape(-1).shape[0]
        if emb.ndim != 2:
            emb = emb.reshape(n, -1)
        fields = {
            "centers": np.asarray(self.centers, dtype=np.float64).reshape(n, 3),
            "scales": np.asarray(self.scales, dtype=np.float64).reshape(n, 3),
            "quats": np.asarray(self.quats, dtype=np.float64).reshape(n, 4),
            "opacities": np.asarray(self.opacities, dtype=np.float64).reshape(n),
            "embeddings": emb,
        }
        for name, arr in fields.items():
            arr = np.array(arr, copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def empty(cls, feature_dim=1):
        return cls(np.zeros((0, 3)), np.ones((0, 3)), np.zeros((0, 4)), np.zeros(0), np.zeros((0, feature_dim)))

    def __len__(self):
        return self.opacities.shape[0]

    @property
    def feature_dim(self):
        return self.embeddings.shape[1]

    def __getitem__(self, i):
        return Gaussian(self.centers[i], self.scales[i], self.quats[i], float(self.opacities[i]), self.embeddings[i])

    def replace(self, **changes):
        kw = {k: getattr(self, k) for k in ("centers", "scales", "quats", "opacities", "embeddings")}
        kw.update(changes)
        return GaussianScene(**kw)

    def as_matrix(self):
        """The ``N x (C + 11)`` packed layout: center, scale, quat, opacity, embedding."""
        return np.concatenate(
            [self.centers, self.scales, self.quats, self.opacities[:, None], self.embeddings], axis=1
        )


def concat_scenes(scenes):
    """Concatenate scenes preserving order; all inputs must share ``C``."""
    scenes = list(scenes)
    if not scenes:
        return GaussianScene.empty()
    dims = {s.feature_dim for s in scenes}
    if len(dims) > 1:
        raise FeatureDimMismatch(f"cannot concatenate scenes with feature dims {sorted(dims)}")
    if len(scenes) == 1:
        return scenes[0]
    return GaussianScene(
        *(np.concatenate([getattr(s, f) for s in scenes]) for f in
          ("centers", "scales", "quats", "opacities", "embeddings"))
    )


def covariance_3d(scale, q):
    """``Σ = R(q̂) diag(s²) R(q̂)^T`` with its Jacobians.

    Works on one gaussian or a batch. Returns ``(Σ, dΣ/ds, dΣ/dq)`` with shapes
    ``(..., 3, 3)``, ``(..., 3, 3, 3)``, ``(..., 3, 3, 4)``. ``q`` is normalized
    internally, so ``q`` and ``-q`` (or any positive rescaling) give the same Σ.
    """
    s = np.asarray(scale, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    R = quat.to_matrix(qn)
    s2 = s * s
    # M M^T with M = R diag(s) is symmetric bit for bit
    M = R * s[..., None, :]
    sigma = np.einsum("...ik,...jk->...ij", M, M)
    dsigma_ds = 2.0 * np.einsum("...ik,...jk,...k->...ijk", R, R, s)
    dR = quat.to_matrix_jacobian(qn)  # (..., 3, 3, 4)
    dsigma_dqn = np.einsum("...ikq,...k,...jk->...ijq", dR, s2, R)
    dsigma_dqn = dsigma_dqn + np.swapaxes(dsigma_dqn, -2, -3)
    proj = (np.eye(4) - qn[..., :, None] * qn[..., None, :]) / norm[..., None]
    dsigma_dq = dsigma_dqn @ proj[..., None, :, :]
    return sigma, dsigma_ds, dsigma_dq


def validate(scene, quat_tol=UNIT_TOL):
    """List every invariant violation; empty iff the scene is well formed."""
    out = []
    finite = {
        "center": scene.centers, "scale": scene.scales, "quat": scene.quats,
        "opacity": scene.opacities[:, None], "embedding": scene.embeddings,
    }
    for name, arr in finite.items():
        for i in np.flatnonzero(~np.all(np.isfinite(arr), axis=1)):
            out.append(Violation(int(i), name, "non-finite value"))
    for i in np.flatnonzero(np.any(scene.scales < SCALE_MIN, axis=1)):
        out.append(Violation(int(i), "scale", f"component below {SCALE_MIN}"))
    op = scene.opacities
    for i in np.flatnonzero(~((op > 0.0) & (op < 1.0))):
        out.append(Violation(int(i), "opacity", f"{op[i]!r} not in (0, 1)"))
    norms = np.linalg.norm(scene.quats, axis=1)
    for i in np.flatnonzero(~(np.abs(norms - 1.0) <= quat_tol)):
        out.append(Violation(int(i), "quat", f"norm {norms[i]!r} is not 1"))
    out.sort(key=lambda v: (v.index, v.field))
    return out
