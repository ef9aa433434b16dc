"""Orthographic top-down splatting of gaussian scenes into a BeV feature grid.

Grid convention: row 0 is the northern edge (max y), column 0 the western edge
(min x). Continuous pixel coordinates are ``((x - x_min)/res, (y_max - y)/res)``
so pixel ``(r, c)`` has its center at ``(c + 0.5, r + 0.5)``.

Gaussians are composited front to back in descending world z; equal z falls
back to scene order. Feature sums are not normalized by accumulated alpha.
"""
import math
import os
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace

import numba
import numpy as np

from . import _kernels
from .errors import ConfigMismatch
from .gaussian_scene import covariance_3d


@dataclass(frozen=True)
class RenderConfig:
    x_range: tuple = (-50.0, 50.0)
    y_range: tuple = (-50.0, 50.0)
    resolution: float = 0.5
    alpha_min: float = 1.0 / 255.0
    alpha_max: float = 0.99
    T_stop: float = 1e-4
    tile: int = 16
    dilation: float = 0.3
    cutoff: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "x_range", tuple(float(v) for v in self.x_range))
        object.__setattr__(self, "y_range", tuple(float(v) for v in self.y_range))
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValueError("ranges must be increasing")
        if self.resolution <= 0 or self.tile <= 0:
            raise ValueError("resolution and tile must be positive")

    @property
    def height(self):
        return _cells(self.y_range[1] - self.y_range[0], self.resolution)

    @property
    def width(self):
        return _cells(self.x_range[1] - self.x_range[0], self.resolution)

    @property
    def shape(self):
        return self.height, self.width

    @property
    def tiles_x(self):
        return -(-self.width // self.tile)

    @property
    def tiles_y(self):
        return -(-self.height // self.tile)

    def without_thresholds(self):
        """Same geometry, with every skip/clamp/cutoff made inactive."""
        return replace(self, alpha_min=0.0, alpha_max=1.0, T_stop=0.0, cutoff=math.inf)

    def pixel_center(self, row, col):
        """World ``(x, y)`` of a pixel center."""
        return (self.x_range[0] + (col + 0.5) * self.resolution,
                self.y_range[1] - (row + 0.5) * self.resolution)

    def to_dict(self):
        d = asdict(self)
        d["x_range"] = list(self.x_range)
        d["y_range"] = list(self.y_range)
        if math.isinf(d["cutoff"]):
            d["cutoff"] = None
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown RenderConfig field(s): {sorted(unknown)}")
        if "cutoff" in d and d["cutoff"] is None:
            d["cutoff"] = math.inf
        return cls(**d)


def _cells(extent, res):
    n = extent / res
    # tolerate representation error such as 100 / 0.1
    return max(1, int(math.ceil(n - 1e-9 * max(1.0, n))))


@dataclass
class BevGrid:
    data: np.ndarray  # (H, W, C)
    config: RenderConfig = field(default_factory=RenderConfig)

    @property
    def feature_dim(self):
        return self.data.shape[2]


@dataclass
class GradientBundle:
    """Gradients of a scalar loss wrt each gaussian parameter.

    ``center[:, 2]`` is identically zero: compositing order is not
    differentiable, and ``z_is_zero`` records that convention.
    """

    center: np.ndarray
    scale: np.ndarray
    quat: np.ndarray
    opacity: np.ndarray
    embedding: np.ndarray
    mean2d: np.ndarray = None
    conic: np.ndarray = None
    z_is_zero: bool = True


@dataclass
class Projection:
    mean2d: np.ndarray  # (N, 2) pixels
    cov2d: np.ndarray  # (N, 2, 2) px²
    depth: np.ndarray  # (N,) world z
    conic: np.ndarray  # (N, 3)
    dmean_dxy: np.ndarray  # (2, 2)
    select: np.ndarray  # (2, 3), cov2d = select Σ select^T + dilation I
    dcov_ds: np.ndarray
    dcov_dq: np.ndarray


def project_ortho(scene, cfg):
    """Project every gaussian into BeV pixel space."""
    inv = 1.0 / cfg.resolution
    c = scene.centers
    mean2d = np.stack([(c[:, 0] - cfg.x_range[0]) * inv, (cfg.y_range[1] - c[:, 1]) * inv], axis=1)
    sel = np.array([[inv, 0.0, 0.0], [0.0, -inv, 0.0]])
    sigma, ds, dq = covariance_3d(scene.scales, scene.quats)
    cov2d = sel @ sigma @ sel.T + cfg.dilation * np.eye(2)
    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    d = cov2d[:, 1, 1]
    det = a * d - b * b
    conic = np.stack([d / det, -b / det, a / det], axis=1)
    return Projection(mean2d, cov2d, c[:, 2].copy(), conic, sel[:, :2].copy(), sel, ds, dq)


@dataclass
class _Binning:
    tile_start: np.ndarray
    tile_end: np.ndarray
    entry_gauss: np.ndarray


def _bin(proj, opac, cfg):
    n = proj.mean2d.shape[0]
    H, W, tile = cfg.height, cfg.width, cfg.tile
    tx_n, ty_n = cfg.tiles_x, cfg.tiles_y
    n_tiles = tx_n * ty_n
    if n == 0:
        z = np.zeros(n_tiles, dtype=np.int64)
        return _Binning(z, z.copy(), np.zeros(0, dtype=np.int64))
    if math.isinf(cfg.cutoff):
        c0 = np.zeros(n, dtype=np.int64)
        c1 = np.full(n, W - 1, dtype=np.int64)
        r0 = np.zeros(n, dtype=np.int64)
        r1 = np.full(n, H - 1, dtype=np.int64)
    else:
        rx = cfg.cutoff * np.sqrt(proj.cov2d[:, 0, 0])
        ry = cfg.cutoff * np.sqrt(proj.cov2d[:, 1, 1])
        mx, my = proj.mean2d[:, 0], proj.mean2d[:, 1]
        # pixel centers c + 0.5 inside [m - r, m + r]
        c0 = np.clip(np.ceil(mx - rx - 0.5), 0, W).astype(np.int64)
        c1 = np.clip(np.floor(mx + rx - 0.5), -1, W - 1).astype(np.int64)
        r0 = np.clip(np.ceil(my - ry - 0.5), 0, H).astype(np.int64)
        r1 = np.clip(np.floor(my + ry - 0.5), -1, H - 1).astype(np.int64)
    visible = (c0 <= c1) & (r0 <= r1) & (opac > 0.0)
    idx = np.flatnonzero(visible)
    tx0, tx1 = c0[idx] // tile, c1[idx] // tile
    ty0, ty1 = r0[idx] // tile, r1[idx] // tile
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(idx.size), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    ty = ty0[owner] + local // nx[owner]
    tx = tx0[owner] + local % nx[owner]
    tile_id = ty * tx_n + tx
    gauss = idx[owner]
    depth = proj.depth[gauss]
    order = np.lexsort((gauss, -depth, tile_id))
    tile_id = tile_id[order]
    gauss = gauss[order].astype(np.int64)
    start = np.searchsorted(tile_id, np.arange(n_tiles), side="left").astype(np.int64)
    end = np.searchsorted(tile_id, np.arange(n_tiles), side="right").astype(np.int64)
    return _Binning(start, end, gauss)


@contextmanager
def _threads(workers):
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(int(workers), _kernels.MAX_THREADS))
    prev = numba.get_num_threads()
    numba.set_num_threads(workers)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


def _prepared(scene, cfg):
    proj = project_ortho(scene, cfg)
    arrays = (
        np.ascontiguousarray(proj.mean2d),
        np.ascontiguousarray(proj.conic),
        np.ascontiguousarray(scene.opacities, dtype=np.float64),
        np.ascontiguousarray(scene.embeddings, dtype=np.float64),
    )
    return proj, arrays


def render(scene, cfg=None, workers=None):
    """Tile-binned forward pass. ``workers`` sets the number of kernel threads."""
    cfg = cfg or RenderConfig()
    out = np.zeros((cfg.height, cfg.width, scene.feature_dim))
    if len(scene) == 0:
        return BevGrid(out, cfg)
    proj, (mu, conic, opac, emb) = _prepared(scene, cfg)
    b = _bin(proj, opac, cfg)
    with _threads(workers):
        _kernels.forward_tiled(mu, conic, opac, emb, b.tile_start, b.tile_end, b.entry_gauss,
                               cfg.height, cfg.width, cfg.tile, cfg.tiles_x,
                               cfg.alpha_min, cfg.alpha_max, cfg.T_stop, out)
    return BevGrid(out, cfg)


def render_naive(scene, cfg=None, workers=None):
    """Reference renderer: every pixel visits every gaussian in global depth order.

    No tiling, footprint cutoff, ``alpha_min`` skip or early termination;
    ``alpha_max`` and dilation still apply.
    """
    cfg = cfg or RenderConfig()
    out = np.zeros((cfg.height, cfg.width, scene.feature_dim))
    if len(scene) == 0:
        return BevGrid(out, cfg)
    proj, (mu, conic, opac, emb) = _prepared(scene, cfg)
    order = np.lexsort((np.arange(len(scene)), -proj.depth)).astype(np.int64)
    with _threads(workers):
        _kernels.forward_naive(np.ascontiguousarray(mu[order]), np.ascontiguousarray(conic[order]),
                               opac[order], np.ascontiguousarray(emb[order]),
                               cfg.height, cfg.width, cfg.alpha_max, out)
    return BevGrid(out, cfg)


def render_backward(scene, cfg, grad_grid, workers=None):
    """Gradients of a scalar loss wrt scene parameters given ``dL/dB``."""
    cfg = cfg or RenderConfig()
    grad_grid = np.ascontiguousarray(grad_grid, dtype=np.float64)
    n, C = len(scene), scene.feature_dim
    if grad_grid.shape != (cfg.height, cfg.width, C):
        raise ConfigMismatch(
            f"gradient grid shape {grad_grid.shape} does not match config/scene "
            f"{(cfg.height, cfg.width, C)}"
        )
    if n == 0:
        z = np.zeros((0, 3))
        return GradientBundle(z, z.copy(), np.zeros((0, 4)), np.zeros(0), np.zeros((0, C)),
                              np.zeros((0, 2)), np.zeros((0, 3)))
    proj, (mu, conic, opac, emb) = _prepared(scene, cfg)
    b = _bin(proj, opac, cfg)
    E = b.entry_gauss.shape[0]
    per_entry = np.zeros((E, 6 + C))
    g_mu = np.zeros((E, 2))
    g_conic = np.zeros((E, 3))
    g_opac = np.zeros(E)
    g_emb = np.zeros((E, C))
    with _threads(workers):
        _kernels.backward_tiled(mu, conic, opac, emb, b.tile_start, b.tile_end, b.entry_gauss,
                                cfg.height, cfg.width, cfg.tile, cfg.tiles_x,
                                cfg.alpha_min, cfg.alpha_max, cfg.T_stop, grad_grid,
                                g_mu, g_conic, g_opac, g_emb)
        per_entry[:, 0:2] = g_mu
        per_entry[:, 2:5] = g_conic
        per_entry[:, 5] = g_opac
        per_entry[:, 6:] = g_emb
        # entries are tile-major, so a stable sort by gaussian keeps tile order
        order = np.argsort(b.entry_gauss, kind="stable").astype(np.int64)
        starts = np.searchsorted(b.entry_gauss[order], np.arange(n), side="left").astype(np.int64)
        ends = np.searchsorted(b.entry_gauss[order], np.arange(n), side="right").astype(np.int64)
        per_g = np.zeros((n, 6 + C))
        _kernels.reduce_entries(starts, ends, order, per_entry, per_g)
    return _chain(scene, cfg, proj, per_g)


def _chain(scene, cfg, proj, per_g):
    n = len(scene)
    g_mu = per_g[:, 0:2]
    g_con = per_g[:, 2:5]
    inv = 1.0 / cfg.resolution
    center = np.zeros((n, 3))
    center[:, 0] = g_mu[:, 0] * inv
    center[:, 1] = -g_mu[:, 1] * inv
    # conic entries (A00, A01, A11) with A01 used twice -> full symmetric gradient
    gA = np.empty((n, 2, 2))
    gA[:, 0, 0] = g_con[:, 0]
    gA[:, 0, 1] = gA[:, 1, 0] = 0.5 * g_con[:, 1]
    gA[:, 1, 1] = g_con[:, 2]
    A = np.empty((n, 2, 2))
    A[:, 0, 0] = proj.conic[:, 0]
    A[:, 0, 1] = A[:, 1, 0] = proj.conic[:, 1]
    A[:, 1, 1] = proj.conic[:, 2]
    g_cov2 = -A @ gA @ A
    sel = proj.select
    g_cov3 = sel.T @ g_cov2 @ sel
    scale = np.einsum("nij,nijk->nk", g_cov3, proj.dcov_ds)
    quat = np.einsum("nij,nijk->nk", g_cov3, proj.dcov_dq)
    return GradientBundle(center, scale, quat, per_g[:, 5].copy(), per_g[:, 6:].copy(),
                          g_mu.copy(), g_con.copy())
