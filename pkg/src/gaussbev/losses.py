"""Segmentation, depth and aggregate training objectives.

Every loss returns ``(value, gradient)``. Part names understood by
:func:`total_loss` are ``"sem"``, ``"sem_early"`` (both BCE terms, weighted by
``lambda_bce``) and ``"depth"`` (weighted by ``lambda_depth``).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, NonPositiveDepth

SEM_PARTS = ("sem", "sem_early")


@dataclass
class LossWeights:
    lambda_bce: float = 1.0
    lambda_depth: float = 0.0
    mode: str = "fixed"  # "fixed" or "uncertainty"
    s_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("fixed", "uncertainty"):
            raise ValueError(f"unknown weighting mode {self.mode!r}")
        if self.mode == "fixed" and (self.lambda_bce < 0 or self.lambda_depth < 0):
            raise ValueError("fixed weights must be non-negative")

    def weight(self, name):
        if name in SEM_PARTS:
            return self.lambda_bce
        if name == "depth":
            return self.lambda_depth
        raise KeyError(f"unknown loss part {name!r}")


def _mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} != {shape}")
    return mask


def bce_loss(logits, target, mask=None):
    """Mean binary cross-entropy on logits over unmasked pixels.

    Uses ``max(x, 0) - x y + log1p(exp(-|x|))`` so that any finite logit is safe.
    """
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"logits {x.shape} and target {y.shape} differ in shape")
    m = _mask(mask, x.shape)
    count = int(m.sum())
    if count == 0:
        raise EmptyMask("no unmasked pixels")
    e = np.exp(-np.abs(x))
    per = np.maximum(x, 0.0) - x * y + np.log1p(e)
    value = float(per[m].sum() / count)
    sig = np.where(x >= 0, 1.0, e) / (1.0 + e)
    grad = np.where(m, (sig - y) / count, 0.0)
    return value, grad


def depth_loss(z_pred, z_gt, mask=None):
    """Mean absolute log-depth error and its subgradient wrt ``z_pred``."""
    zp = np.asarray(z_pred, dtype=np.float64)
    zg = np.asarray(z_gt, dtype=np.float64)
    if zp.shape != zg.shape:
        raise ValueError(f"z_pred {zp.shape} and z_gt {zg.shape} differ in shape")
    m = _mask(mask, zp.shape)
    count = int(m.sum())
    if count == 0:
        raise EmptyMask("no unmasked depth entries")
    if np.any(~(zp[m] > 0)) or np.any(~(zg[m] > 0)):
        raise NonPositiveDepth("depth values must be > 0 on unmasked entries")
    safe_p = np.where(m, zp, 1.0)
    safe_g = np.where(m, zg, 1.0)
    diff = np.log(safe_p) - np.log(safe_g)
    value = float(np.abs(diff)[m].sum() / count)
    grad = np.where(m, np.sign(diff) / (safe_p * count), 0.0)
    return value, grad


def total_loss(parts, weights):
    """Combine named loss parts.

    Fixed mode: ``sum_i w_i L_i``. Uncertainty mode: ``sum_i exp(-s_i) L_i + s_i``
    with ``s_i`` taken from ``weights.s_params`` (missing entries count as 0).
    Returns ``(value, dvalue/dparts, dvalue/ds_params)``; the last dict is
    empty in fixed mode.
    """
    value = 0.0
    dparts = {}
    ds = {}
    for name, L in parts.items():
        L = float(L)
        if weights.mode == "fixed":
            w = weights.weight(name)
            value += w * L
            dparts[name] = w
        else:
            weights.weight(name)  # rejects unknown part names
            s = float(weights.s_params.get(name, 0.0))
            value += np.exp(-s) * L + s
            dparts[name] = float(np.exp(-s))
            ds[name] = float(-np.exp(-s) * L + 1.0)
    return float(value), dparts, ds
