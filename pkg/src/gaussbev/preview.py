"""False-color previews of feature grids from their top principal components."""
import numpy as np

from .formats import ppm_bytes

POWER_ITERS = 100
PREVIEW_SEED = 0


def principal_components(features, k=3, iters=POWER_ITERS, seed=PREVIEW_SEED):
    """Top-``k`` eigenpairs of the feature covariance by power iteration with deflation.

    ``features`` is ``(n, C)``. Each eigenvector is signed so that its largest
    magnitude entry is positive. Returns ``(values (k,), vectors (C, k))``.
    """
    X = np.asarray(features, dtype=np.float64)
    X = X - X.mean(axis=0)
    cov = X.T @ X / max(1, X.shape[0])
    C = cov.shape[0]
    k = min(k, C)
    rng = np.random.default_rng(seed)
    values = np.zeros(k)
    vectors = np.zeros((C, k))
    work = cov.copy()
    for j in range(k):
        v = rng.normal(size=C)
        v /= np.linalg.norm(v)
        for _ in range(iters):
            w = work @ v
            n = np.linalg.norm(w)
            if n == 0.0:
                break
            v = w / n
        lam = float(v @ work @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        values[j] = lam
        vectors[:, j] = v
        work = work - lam * np.outer(v, v)
    return values, vectors


def _to_byte(channel):
    lo, hi = channel.min(), channel.max()
    if not hi > lo:
        return np.full(channel.shape, 128, dtype=np.uint8)
    return np.round((channel - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def preview_rgb(data):
    """``(H, W, 3)`` uint8 preview of an ``(H, W, C)`` grid."""
    data = np.asarray(data, dtype=np.float64)
    H, W, C = data.shape
    X = data.reshape(H * W, C)
    X = X - X.mean(axis=0)
    if C < 3:
        _, vec = principal_components(X, k=1)
        gray = _to_byte((X @ vec[:, 0]).reshape(H, W))
        return np.repeat(gray[:, :, None], 3, axis=2)
    _, vec = principal_components(X, k=3)
    scores = (X @ vec).reshape(H, W, 3)
    return np.stack([_to_byte(scores[:, :, i]) for i in range(3)], axis=2)


def preview_pca(grid):
    """PPM (P6) bytes previewing a :class:`BevGrid` or raw ``(H, W, C)`` array."""
    data = getattr(grid, "data", grid)
    return ppm_bytes(preview_rgb(data))
