"""Matplotlib figures written next to CLI outputs."""
import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .formats import atomic_write  # noqa: E402
from .preview import preview_rgb  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}
# fixed metadata keeps PNG bytes reproducible across runs
PNG_METADATA = {"Software": None}


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def _extent(cfg):
    return (cfg.x_range[0], cfg.x_range[1], cfg.y_range[0], cfg.y_range[1])


def plot_fit(report, target_mask, logits, cfg, path):
    """Loss curves plus target / predicted BeV masks."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(10, 3.2))
        ax = axes[0]
        steps = np.arange(len(report.losses))
        ax.semilogy(steps, report.losses, color="k", lw=1.2, label="total")
        for name in sorted({k for p in report.parts for k in p}):
            vals = [p.get(name, np.nan) for p in report.parts]
            ax.semilogy(steps, vals, lw=0.8, label=name)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        for ax, img, title in ((axes[1], target_mask, "target"),
                               (axes[2], logits > 0.0, f"prediction (IoU {report.final_iou:.3f})")):
            ax.imshow(np.asarray(img, dtype=float), cmap="Greys", vmin=0, vmax=1,
                      extent=_extent(cfg), interpolation="nearest")
            ax.set_title(title)
            ax.set_xlabel("x [m]")
            ax.set_ylabel("y [m]")
        fig.tight_layout()
        _save(fig, path)


def plot_grid(grid, path, scene=None):
    """PCA preview of a BeV grid on metric axes, optionally with gaussian centers."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.imshow(preview_rgb(grid.data), extent=_extent(grid.config), interpolation="nearest")
        if scene is not None and len(scene):
            ax.scatter(scene.centers[:, 0], scene.centers[:, 1], s=2, c="w", lw=0)
            ax.set_xlim(*grid.config.x_range)
            ax.set_ylim(*grid.config.y_range)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        fig.tight_layout()
        _save(fig, path)
