"""Receiver-grid sweeps, coverage statistics and safe-range estimation."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from . import tracer as _tracer
from .band import LinkBudget, UwbBand, band_samples, watts_to_dbm
from .em import AntennaModel
from .errors import DimensionMismatch, InvalidSpec
from .geometry import WarehouseSpec, generate_warehouse

CORRIDOR_PERIMETER_MARGIN = 0.5


@dataclass(frozen=True)
class ScenarioSpec:
    warehouse: WarehouseSpec = field(default_factory=WarehouseSpec)
    tx_position: Optional[tuple] = None
    tx_height: float = 1.5
    rx_height: float = 0.2
    grid_spacing: float = 0.1
    band: UwbBand = field(default_factory=UwbBand)
    budget: LinkBudget = field(default_factory=LinkBudget)
    tracer: _tracer.TracerConfig = field(default_factory=_tracer.TracerConfig)
    tx_antenna: AntennaModel = field(default_factory=AntennaModel)
    rx_antenna: AntennaModel = field(default_factory=AntennaModel)

    def __post_init__(self):
        if not self.grid_spacing > 0:
            raise InvalidSpec("grid_spacing must be positive")
        x, y, z = self.tx
        w = self.warehouse
        if not (0 <= x <= w.area_x and 0 <= y <= w.area_y and z > 0):
            raise InvalidSpec("transmitter must lie inside the warehouse")

    @property
    def tx(self):
        if self.tx_position is not None:
            return tuple(float(c) for c in self.tx_position)
        w = self.warehouse
        return (0.5 * w.area_x, 0.5 * w.area_y, float(self.tx_height))


@dataclass(frozen=True)
class SafetyConfig:
    stop_distance: float = 6.0
    threshold_dbm: float = LinkBudget().threshold_dbm

    def __post_init__(self):
        if not self.stop_distance > 0:
            raise ValueError("stop_distance must be positive")


@dataclass(eq=False)
class PowerGrid:
    origin: tuple
    spacing: float
    nx: int
    ny: int
    values: np.ndarray  # (nx, ny) dBm, -inf where nothing arrives
    rx_height: float
    corridor_mask: np.ndarray
    interior_mask: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.nx, self.ny)
        self.corridor_mask = np.asarray(self.corridor_mask, dtype=bool).reshape(self.nx, self.ny)
        if self.interior_mask is None:
            self.interior_mask = np.zeros((self.nx, self.ny), dtype=bool)
        self.interior_mask = np.asarray(self.interior_mask, dtype=bool).reshape(self.nx, self.ny)

    @property
    def xs(self):
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing

    @property
    def ys(self):
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing

    def centers(self):
        """Cell-center coordinates as two (nx, ny) arrays."""
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    @property
    def valid_mask(self):
        return ~self.interior_mask


def grid_shape(area_x, area_y, spacing):
    # the small slack keeps exact multiples from rounding up
    return (int(math.ceil(area_x / spacing - 1e-9)), int(math.ceil(area_y / spacing - 1e-9)))


def corridor_mask(spec, xs, ys):
    """Inter-cluster strips plus the perimeter aisles outside every cluster."""
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    rects = spec.cluster_rects() if spec.racks_per_cluster > 0 else []
    in_cluster = np.zeros(X.shape, dtype=bool)
    for x0, y0, x1, y1 in rects:
        in_cluster |= (X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)
    mask = np.zeros(X.shape, dtype=bool)
    for (_, _, x1, _), (x0n, _, _, _) in zip(rects[:-1], rects[1:]):
        mask |= (X > x1) & (X < x0n)
    m = CORRIDOR_PERIMETER_MARGIN
    near_edge = (X < m) | (X > spec.area_x - m) | (Y < m) | (Y > spec.area_y - m)
    mask |= near_edge & ~in_cluster
    return mask


def _workers(workers):
    if workers is None:
        workers = int(os.environ.get("WAREWAVE_THREADS", "0") or 0) or os.cpu_count() or 1
    return max(1, int(workers))


def compute_power_map(scene, spec, workers=None, chunk=64, progress=None):
    """Band-averaged received power on the receiver grid (the coverage map).

    Cells are independent; they are handed to worker threads in fixed
    index chunks and written back by index, so the result does not depend
    on ``workers``.
    """
    w = spec.warehouse
    nx, ny = grid_shape(w.area_x, w.area_y, spec.grid_spacing)
    xs = (np.arange(nx) + 0.5) * spec.grid_spacing
    ys = (np.arange(ny) + 0.5) * spec.grid_spacing
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, spec.rx_height)], axis=1)
    interior = np.array([scene.is_interior(p) for p in pts], dtype=bool)

    freqs = np.array([f for f, _ in band_samples(spec.band)])
    weights = np.array([wk for _, wk in band_samples(spec.band)])
    finder = _tracer.PathFinder(scene, spec.tx, spec.tracer, spec.band.center_frequency)
    ra = _tracer.radio_arrays(scene, freqs, spec.tx_antenna, spec.rx_antenna)
    tx = np.asarray(spec.tx, dtype=float)
    ratio = np.zeros(len(pts))
    chunks = [(s, min(s + chunk, len(pts))) for s in range(0, len(pts), chunk)]

    def run(bounds):
        s, e = bounds
        cap = 256
        while True:
            out = np.zeros(e - s)
            rc = _tracer.band_power_cells(
                scene.arrays, finder.tree, finder.edges, ra, weights, tx, pts[s:e],
                interior[s:e], finder.use_diffraction,
                int(spec.tracer.max_reflections_with_diffraction), finder.max_len,
                cap, finder.max_interactions, out)
            if rc == 0:
                ratio[s:e] = out
                return e - s
            cap *= 4

    n = _workers(workers)
    if n == 1:
        for b in chunks:
            run(b)
            if progress:
                progress(b[1], len(pts))
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            done = 0
            for k in pool.map(run, chunks):
                done += k
                if progress:
                    progress(done, len(pts))

    p_tx_w = 1e-3 * 10.0 ** (spec.budget.tx_power_dbm / 10.0)
    dbm = watts_to_dbm(p_tx_w * ratio).reshape(nx, ny)
    dbm[interior.reshape(nx, ny)] = -np.inf
    return PowerGrid((0.0, 0.0), spec.grid_spacing, nx, ny, dbm, spec.rx_height,
                     corridor_mask(w, xs, ys), interior.reshape(nx, ny))


@dataclass
class ShadowRegion:
    cells: np.ndarray  # (k, 2) integer cell indices
    centroid: tuple  # meters

    @property
    def size(self):
        return len(self.cells)


@dataclass
class CoverageStats:
    covered_fraction: float
    corridor_covered_fraction: float
    shadow_cell_count: int
    shadow_regions: list
    valid_cell_count: int


def coverage_stats(grid, threshold_dbm=-90.0):
    valid = grid.valid_mask
    shadow = valid & ~(grid.values >= threshold_dbm)
    nvalid = int(valid.sum())
    nshadow = int(shadow.sum())
    cov = 1.0 - nshadow / nvalid if nvalid else 0.0
    cvalid = valid & grid.corridor_mask
    ncv = int(cvalid.sum())
    corr = 1.0 - int((shadow & grid.corridor_mask).sum()) / ncv if ncv else 1.0
    labels, count = ndimage.label(shadow)  # 4-connectivity by default
    regions = []
    xs, ys = grid.xs, grid.ys
    for k in range(1, count + 1):
        cells = np.argwhere(labels == k)
        regions.append(ShadowRegion(cells, (float(xs[cells[:, 0]].mean()),
                                            float(ys[cells[:, 1]].mean()))))
    return CoverageStats(cov, corr, nshadow, regions, nvalid)


def safe_range(grid, tx_xy, safety=SafetyConfig(), mask="corridor"):
    """Largest radius around ``tx_xy`` within which every masked cell is covered."""
    if mask == "corridor":
        sel = grid.corridor_mask & grid.valid_mask
    elif mask == "all":
        sel = grid.valid_mask.copy()
    else:
        raise ValueError("mask must be 'corridor' or 'all'")
    X, Y = grid.centers()
    dist = np.hypot(X - tx_xy[0], Y - tx_xy[1])[sel]
    ok = (grid.values >= safety.threshold_dbm)[sel]
    if dist.size == 0:
        return 0.0
    bad = dist[~ok]
    if bad.size == 0:
        return float(dist.max())
    first_bad = bad.min()
    inside = dist[ok & (dist < first_bad)]
    return float(inside.max()) if inside.size else 0.0


@dataclass
class MapComparison:
    classification_disagreement_fraction: float
    mean_abs_diff_db: float
    coverage_delta: float


def compare_maps(a, b, threshold_dbm=-90.0):
    if (a.nx, a.ny) != (b.nx, b.ny):
        raise DimensionMismatch(f"grids differ: {a.nx}x{a.ny} vs {b.nx}x{b.ny}")
    valid = a.valid_mask & b.valid_mask
    ca = a.values >= threshold_dbm
    cb = b.values >= threshold_dbm
    n = int(valid.sum())
    dis = int((valid & (ca != cb)).sum()) / n if n else 0.0
    both = valid & ca & cb
    mad = float(np.mean(np.abs(a.values[both] - b.values[both]))) if both.any() else 0.0
    delta = coverage_stats(a, threshold_dbm).covered_fraction - \
        coverage_stats(b, threshold_dbm).covered_fraction
    return MapComparison(dis, mad, delta)


def regions_behind_clusters(stats, spec, tx_xy, min_cells=1):
    """Shadow regions whose centroid lies behind a rack cluster seen from tx.

    A region qualifies when the sight line from tx to its centroid crosses
    a cluster rectangle and the centroid is farther from tx than that
    cluster's centroid.
    """
    out = []
    tx_xy = np.asarray(tx_xy, dtype=float)
    for r in stats.shadow_regions:
        if r.size < min_cells:
            continue
        c = np.asarray(r.centroid)
        for x0, y0, x1, y1 in spec.cluster_rects():
            if not _segment_hits_rect(tx_xy, c, (x0, y0, x1, y1)):
                continue
            cc = np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])
            if np.linalg.norm(c - tx_xy) > np.linalg.norm(cc - tx_xy):
                out.append(r)
                break
    return out


def _segment_hits_rect(a, b, rect):
    x0, y0, x1, y1 = rect
    t0, t1 = 0.0, 1.0
    d = b - a
    for k, lo, hi in ((0, x0, x1), (1, y0, y1)):
        if abs(d[k]) < 1e-15:
            if not lo <= a[k] <= hi:
                return False
            continue
        ta, tb = (lo - a[k]) / d[k], (hi - a[k]) / d[k]
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return False
    return True


def run_scenario(spec, workers=None, progress=None):
    scene = generate_warehouse(spec.warehouse)
    return scene, compute_power_map(scene, spec, workers=workers, progress=progress)
