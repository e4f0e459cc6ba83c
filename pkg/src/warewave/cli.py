"""Command-line front end: ``warewave generate|run|stats|compare``."""

import argparse
import hashlib
import json
import math
import sys
from dataclasses import replace

import numpy as np

from . import scenario_io as sio
from .band import watts_to_dbm
from .coverage import (ScenarioSpec, SafetyConfig, compare_maps, compute_power_map,
                       corridor_mask, coverage_stats, grid_shape, safe_range)
from .errors import WarewaveError
from .geometry import generate_warehouse
from .tracer import PathFinder, evaluate_path


def _load_spec(path):
    return sio.load_scenario(path) if path else ScenarioSpec()


def _f4(v):
    return "-inf" if v == -math.inf else f"{v:.4f}"


def _report(out, stats, srange=None, extra=()):
    print(f"covered_fraction {_f4(stats.covered_fraction)}", file=out)
    print(f"corridor_covered_fraction {_f4(stats.corridor_covered_fraction)}", file=out)
    print(f"shadow_cells {stats.shadow_cell_count}", file=out)
    print(f"shadow_regions {len(stats.shadow_regions)}", file=out)
    if srange is not None:
        print(f"safe_range_m {_f4(srange)}", file=out)
    for k, v in extra:
        print(f"{k} {v}", file=out)


def _masks(spec, nx, ny, spacing):
    """Corridor and interior masks of ``spec`` on an (nx, ny) grid."""
    w = spec.warehouse
    xs = (np.arange(nx) + 0.5) * spacing
    ys = (np.arange(ny) + 0.5) * spacing
    scene = generate_warehouse(w)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    interior = np.array([scene.is_interior((x, y, spec.rx_height))
                         for x, y in zip(X.ravel(), Y.ravel())]).reshape(nx, ny)
    return corridor_mask(w, xs, ys), interior


def _grid_from_csv(path, spec):
    g = sio.read_grid_csv(path, rx_height=spec.rx_height)
    if (g.nx, g.ny) == grid_shape(spec.warehouse.area_x, spec.warehouse.area_y, g.spacing):
        g.corridor_mask, g.interior_mask = _masks(spec, g.nx, g.ny, g.spacing)
    return g


def cmd_generate(args, out):
    spec = _load_spec(args.scenario)
    w = spec.warehouse if args.seed is None else replace(spec.warehouse, rng_seed=args.seed)
    scene = generate_warehouse(w)
    summary = {
        "facet_count": len(scene.facets),
        "edge_count": len(scene.edges),
        "rack_count": len(scene.racks),
        "rng_seed": w.rng_seed,
        "bounds": [list(map(float, b)) for b in scene.bounds],
        "rack_footprint": list(map(float, w.rack_footprint)),
        "racks": [{"x0": round(float(x), 9), "y0": round(float(y), 9)} for x, y in scene.racks],
        "clusters": [list(map(float, r)) for r in w.cluster_rects()],
        "fingerprint_sha256": hashlib.sha256(scene.fingerprint()).hexdigest(),
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out_scene:
        with open(args.out_scene, "w", encoding="utf-8") as fh:
            fh.write(text)
    print(f"facets {len(scene.facets)}", file=out)
    print(f"edges {len(scene.edges)}", file=out)
    print(f"racks {len(scene.racks)}", file=out)
    return 0


def _dump_paths(path, scene, spec, grid):
    finder = PathFinder(scene, spec.tx, spec.tracer, spec.band.center_frequency)
    fc = spec.band.center_frequency
    p_tx = 1e-3 * 10.0 ** (spec.budget.tx_power_dbm / 10.0)
    X, Y = grid.centers()
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(grid.nx):
            for j in range(grid.ny):
                if grid.interior_mask[i, j]:
                    continue
                rx = (float(X[i, j]), float(Y[i, j]), spec.rx_height)
                paths = finder.paths(rx)
                powers = [watts_to_dbm(p_tx * abs(evaluate_path(p, fc, spec.tx_antenna,
                                                                spec.rx_antenna)) ** 2)
                          for p in paths]
                fh.write(sio.format_paths(rx, paths, fc, powers))


def cmd_run(args, out):
    spec = _load_spec(args.scenario)
    if args.grid_spacing is not None:
        spec = replace(spec, grid_spacing=args.grid_spacing)
    scene = generate_warehouse(spec.warehouse)
    grid = compute_power_map(scene, spec, workers=args.threads)
    threshold = spec.budget.threshold_dbm
    if args.out_csv:
        sio.write_grid_csv(grid, args.out_csv)
    if args.out_map:
        sio.write_heatmap(grid, sio.HeatmapStyle(threshold), args.out_map)
    if args.out_fig:
        from .plotting import render_power_map
        render_power_map(grid, args.out_fig, threshold, spec.tx[:2],
                         spec.warehouse.cluster_rects())
    if args.paths_dump:
        _dump_paths(args.paths_dump, scene, spec, grid)
    stats = coverage_stats(grid, threshold)
    srange = safe_range(grid, spec.tx[:2], SafetyConfig(threshold_dbm=threshold))
    _report(out, stats, srange)
    return 0


def cmd_stats(args, out):
    spec = _load_spec(args.scenario)
    grid = _grid_from_csv(args.csv, spec)
    stats = coverage_stats(grid, args.threshold)
    srange = safe_range(grid, spec.tx[:2], SafetyConfig(threshold_dbm=args.threshold))
    _report(out, stats, srange)
    return 0


def cmd_compare(args, out):
    if len(args.csv) != 2:
        raise WarewaveError("compare needs exactly two --csv files")
    spec = _load_spec(args.scenario)
    a, b = (_grid_from_csv(p, spec) for p in args.csv)
    cmp = compare_maps(a, b, args.threshold)
    print(f"classification_disagreement_fraction {_f4(cmp.classification_disagreement_fraction)}",
          file=out)
    print(f"mean_abs_diff_db {_f4(cmp.mean_abs_diff_db)}", file=out)
    print(f"coverage_delta {_f4(cmp.coverage_delta)}", file=out)
    if args.out_fig:
        from .plotting import render_difference
        render_difference(a, b, args.out_fig, args.threshold)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="warewave", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build the scene and write a JSON summary")
    g.add_argument("--scenario")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-scene")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="compute the coverage map")
    r.add_argument("--scenario")
    r.add_argument("--out-csv")
    r.add_argument("--out-map", help="P6 pixmap heatmap")
    r.add_argument("--out-fig", help="PNG figure rendered with matplotlib")
    r.add_argument("--paths-dump")
    r.add_argument("--threads", type=int, help="worker threads (default: $WAREWAVE_THREADS)")
    r.add_argument("--grid-spacing", type=float)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("stats", help="coverage statistics of a saved CSV map")
    s.add_argument("--csv", required=True)
    s.add_argument("--threshold", type=float, default=-90.0)
    s.add_argument("--scenario", help="scenario the map was computed for (masks)")
    s.set_defaults(func=cmd_stats)

    c = sub.add_parser("compare", help="compare two saved CSV maps")
    c.add_argument("--csv", action="append", required=True)
    c.add_argument("--threshold", type=float, default=-90.0)
    c.add_argument("--scenario")
    c.add_argument("--out-fig")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except (WarewaveError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
