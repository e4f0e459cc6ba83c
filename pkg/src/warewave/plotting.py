"""Matplotlib renderings of power maps for reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402


def render_power_map(grid, out, threshold_dbm=-90.0, tx_xy=None, cluster_rects=(),
                     title="Received power", dpi=120):
    """Write a PNG of ``grid`` with the coverage threshold contour.

    Cells below ``threshold_dbm`` are drawn black and interior cells gray,
    mirroring the pixmap convention.
    """
    vals = np.where(grid.interior_mask, np.nan, grid.values).T
    shown = np.ma.masked_invalid(np.where(vals >= threshold_dbm, vals, np.nan))
    x0, y0 = grid.origin
    extent = (x0, x0 + grid.nx * grid.spacing, y0, y0 + grid.ny * grid.spacing)
    fig, ax = plt.subplots(figsize=(10, 4.2))
    ax.set_facecolor("black")
    if grid.interior_mask.any():
        ax.imshow(np.where(grid.interior_mask.T, 0.5, np.nan), origin="lower",
                  extent=extent, cmap="gray", vmin=0, vmax=1, interpolation="nearest")
    im = ax.imshow(shown, origin="lower", extent=extent, cmap="jet",
                   vmin=threshold_dbm, vmax=-40.0, interpolation="nearest")
    for x0r, y0r, x1r, y1r in cluster_rects:
        ax.add_patch(Rectangle((x0r, y0r), x1r - x0r, y1r - y0r, fill=False,
                               edgecolor="white", linestyle="--", linewidth=0.8))
    if tx_xy is not None:
        ax.plot([tx_xy[0]], [tx_xy[1]], marker="*", color="white", markersize=12,
                markeredgecolor="black")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.colorbar(im, ax=ax, label="power (dBm)", shrink=0.8)
    fig.tight_layout()
    fig.savefig(out, dpi=dpi, metadata={"Software": None})
    plt.close(fig)


def render_difference(a, b, out, threshold_dbm=-90.0, title="Map difference", dpi=120):
    """PNG of ``a - b`` in dB over cells covered in both maps."""
    both = (a.values >= threshold_dbm) & (b.values >= threshold_dbm) & a.valid_mask & b.valid_mask
    diff = np.where(both, a.values - b.values, np.nan).T
    lim = max(1.0, float(np.nanmax(np.abs(diff)))) if both.any() else 1.0
    x0, y0 = a.origin
    extent = (x0, x0 + a.nx * a.spacing, y0, y0 + a.ny * a.spacing)
    fig, ax = plt.subplots(figsize=(10, 4.2))
    im = ax.imshow(np.ma.masked_invalid(diff), origin="lower", extent=extent,
                   cmap="coolwarm", vmin=-lim, vmax=lim, interpolation="nearest")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.set_aspect("equal")
    fig.colorbar(im, ax=ax, label="difference (dB)", shrink=0.8)
    fig.tight_layout()
    fig.savefig(out, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
