"""Differentiable orthographic gaussian splatting into bird's-eye-view feature grids."""
import os

# Thread pool must be sized before numba loads; the workers argument of the
# rasterizer selects how many of these threads a call uses.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from .bev_rasterizer import BevGrid, GradientBundle, RenderConfig, render, render_backward, render_naive
from .camera_geometry import CameraCalib, RawHeadGrid, decode_camera
from .gaussian_scene import GaussianScene, concat_scenes, covariance_3d, validate

__version__ = "0.1.0"

__all__ = [
    "BevGrid", "CameraCalib", "GaussianScene", "GradientBundle", "RawHeadGrid", "RenderConfig",
    "concat_scenes", "covariance_3d", "decode_camera", "render", "render_backward", "render_naive",
    "validate",
]
