"""Scenario files, map serialization (CSV, P6 pixmap) and path dumps.

Scenario files are line-oriented INI text::

    # empty racks, coarse grid
    [warehouse]
    item_material = coca_cola
    [grid]
    grid_spacing = 0.25

Every key is optional and defaults to the reference warehouse. Unknown
sections or keys are rejected with the offending line number.
"""

import io
import math
from dataclasses import fields, replace

import numpy as np

from .band import LinkBudget, UwbBand
from .coverage import PowerGrid, ScenarioSpec
from .em import PATTERNS, AntennaModel
from .errors import ParseError, RangeError, UnknownKey
from .geometry import WarehouseSpec
from .materials import MATERIAL_PRESETS, Material
from .tracer import TracerConfig

# key -> (type, range check)
_POS = (lambda v: v > 0, "must be > 0")
_NONNEG = (lambda v: v >= 0, "must be >= 0")
_ANY = (lambda v: True, "")
_COUNT = (lambda v: v >= 0, "must be >= 0")
_ONE = (lambda v: v >= 1, "must be >= 1")

WAREHOUSE_KEYS = {
    "area_x": (float, _POS), "area_y": (float, _POS),
    "cluster_count": (int, _COUNT), "racks_per_cluster": (int, _COUNT),
    "corridor_width": (float, _NONNEG), "inter_rack_gap": (float, _NONNEG),
    "plate_thickness": (float, _POS), "layer_air_gap": (float, _NONNEG),
    "layer_count": (int, _COUNT), "rack_footprint_x": (float, _POS),
    "rack_footprint_y": (float, _POS), "layer_pitch": (float, _POS),
    "item_material": (str, _ANY), "floor_material": (str, _ANY),
    "rack_material": (str, _ANY), "rng_seed": (int, _NONNEG),
    "cluster_depth": (float, _POS), "rack_roughness": (float, _NONNEG),
}
TX_KEYS = {"x": (float, _ANY), "y": (float, _ANY), "z": (float, _POS), "pattern": (str, _ANY)}
BAND_KEYS = {
    "center_frequency": (float, _POS), "bandwidth": (float, _NONNEG),
    "sample_count": (int, _ONE), "tx_power_dbm": (float, _ANY),
    "max_path_loss_db": (float, _POS),
}
TRACER_KEYS = {
    "max_reflections": (int, _COUNT), "enable_diffraction": (bool, _ANY),
    "max_reflections_with_diffraction": (int, (lambda v: v in (0, 1), "must be 0 or 1")),
    "path_loss_budget_db": (float, _POS),
}
GRID_KEYS = {"grid_spacing": (float, _POS), "rx_height": (float, _POS), "rx_pattern": (str, _ANY)}
MATERIAL_KEYS = {
    "relative_permittivity": (float, (lambda v: v >= 1, "must be >= 1")),
    "conductivity": (float, _NONNEG), "is_pec": (bool, _ANY),
    "roughness_rms": (float, _NONNEG),
}
SECTIONS = {"warehouse": WAREHOUSE_KEYS, "tx": TX_KEYS, "band": BAND_KEYS,
            "tracer": TRACER_KEYS, "grid": GRID_KEYS}


def _convert(kind, text, key, line):
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if kind is int:
            return int(text, 10)
        if kind is float:
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
        return text
    except ValueError:
        raise ParseError(f"bad value {text!r} for {key}", line) from None


def _read_sections(text):
    """{section: {key: (value_text, line)}} with syntax checks."""
    out = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError("unterminated section header", lineno)
            current = line[1:-1].strip()
            if current not in SECTIONS and not (
                    current.startswith("materials.") and len(current) > len("materials.")):
                raise UnknownKey(f"unknown section [{current}]", lineno)
            if current in out:
                raise ParseError(f"duplicate section [{current}]", lineno)
            out[current] = {}
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", lineno)
        if current is None:
            raise ParseError("key outside of any section", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        table = MATERIAL_KEYS if current.startswith("materials.") else SECTIONS[current]
        if key not in table:
            raise UnknownKey(f"unknown key {key!r} in [{current}]", lineno)
        if key in out[current]:
            raise ParseError(f"duplicate key {key!r}", lineno)
        out[current][key] = (value, lineno)
    return out


def _typed(section, table):
    vals = {}
    for key, (text, line) in section.items():
        kind, (check, msg) = table[key]
        v = _convert(kind, text, key, line)
        if not check(v):
            raise RangeError(f"{key} {msg}, got {text}", line)
        vals[key] = (v, line)
    return vals


def parse_scenario(text):
    """Parse scenario text into a :class:`ScenarioSpec` with reference defaults."""
    raw = _read_sections(text)
    materials = dict(MATERIAL_PRESETS)
    for name, sec in raw.items():
        if not name.startswith("materials."):
            continue
        mname = name[len("materials."):]
        vals = {k: v for k, (v, _) in _typed(sec, MATERIAL_KEYS).items()}
        base = materials.get(mname, Material(mname))
        materials[mname] = replace(base, name=mname, **vals)

    def material(name, line):
        try:
            return materials[name]
        except KeyError:
            raise ParseError(f"unknown material {name!r}", line) from None

    wh = _typed(raw.get("warehouse", {}), WAREHOUSE_KEYS)
    wkw = {}
    fx, fy = WarehouseSpec().rack_footprint
    for key, (v, line) in wh.items():
        if key == "rack_footprint_x":
            fx = v
        elif key == "rack_footprint_y":
            fy = v
        elif key.endswith("_material"):
            wkw[key] = material(v, line)
        else:
            wkw[key] = v
    wkw["rack_footprint"] = (fx, fy)
    warehouse = WarehouseSpec(**wkw)

    band_vals = _typed(raw.get("band", {}), BAND_KEYS)
    budget = LinkBudget(**{k: v for k, (v, _) in band_vals.items()
                           if k in ("tx_power_dbm", "max_path_loss_db")})
    try:
        band = UwbBand(**{k: v for k, (v, _) in band_vals.items()
                          if k in ("center_frequency", "bandwidth", "sample_count")})
    except ValueError as exc:
        raise RangeError(str(exc)) from None
    tracer_cfg = TracerConfig(**{k: v for k, (v, _) in _typed(raw.get("tracer", {}), TRACER_KEYS).items()})

    grid = _typed(raw.get("grid", {}), GRID_KEYS)
    tx = _typed(raw.get("tx", {}), TX_KEYS)
    for key, sec in (("pattern", tx), ("rx_pattern", grid)):
        if key in sec and sec[key][0] not in PATTERNS:
            raise RangeError(f"{key} must be one of {', '.join(PATTERNS)}", sec[key][1])
    tx_pos = None
    if "x" in tx or "y" in tx:
        tx_pos = (tx.get("x", (0.5 * warehouse.area_x,))[0],
                  tx.get("y", (0.5 * warehouse.area_y,))[0],
                  tx.get("z", (1.5,))[0])
    kw = dict(warehouse=warehouse, band=band, budget=budget, tracer=tracer_cfg,
              tx_position=tx_pos)
    if "z" in tx:
        kw["tx_height"] = tx["z"][0]
    if "grid_spacing" in grid:
        kw["grid_spacing"] = grid["grid_spacing"][0]
    if "rx_height" in grid:
        kw["rx_height"] = grid["rx_height"][0]
    kw["tx_antenna"] = AntennaModel(pattern=tx.get("pattern", (AntennaModel().pattern,))[0])
    kw["rx_antenna"] = AntennaModel(pattern=grid.get("rx_pattern", (AntennaModel().pattern,))[0])
    try:
        return ScenarioSpec(**kw)
    except Exception as exc:  # invalid combinations (e.g. tx outside the hall)
        raise RangeError(str(exc)) from None


def load_scenario(path):
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def serialize_scenario(spec):
    """Scenario text that parses back to an identical spec."""
    w = spec.warehouse
    out = io.StringIO()
    custom = {}
    for m in (w.item_material, w.floor_material, w.rack_material):
        if MATERIAL_PRESETS.get(m.name) != m:
            custom[m.name] = m
    for name in sorted(custom):
        m = custom[name]
        out.write(f"[materials.{name}]\n")
        for key in MATERIAL_KEYS:
            out.write(f"{key} = {_fmt(getattr(m, key))}\n")
    out.write("[warehouse]\n")
    for f in fields(WarehouseSpec):
        v = getattr(w, f.name)
        if f.name == "rack_footprint":
            out.write(f"rack_footprint_x = {_fmt(float(v[0]))}\n")
            out.write(f"rack_footprint_y = {_fmt(float(v[1]))}\n")
        elif isinstance(v, Material):
            out.write(f"{f.name} = {v.name}\n")
        else:
            out.write(f"{f.name} = {_fmt(v)}\n")
    out.write("[tx]\n")
    if spec.tx_position is not None:
        out.write(f"x = {_fmt(float(spec.tx_position[0]))}\n")
        out.write(f"y = {_fmt(float(spec.tx_position[1]))}\n")
        out.write(f"z = {_fmt(float(spec.tx_position[2]))}\n")
    else:
        out.write(f"z = {_fmt(float(spec.tx_height))}\n")
    out.write(f"pattern = {spec.tx_antenna.pattern}\n")
    out.write("[band]\n")
    for key in ("center_frequency", "bandwidth", "sample_count"):
        out.write(f"{key} = {_fmt(getattr(spec.band, key))}\n")
    out.write(f"tx_power_dbm = {_fmt(float(spec.budget.tx_power_dbm))}\n")
    out.write(f"max_path_loss_db = {_fmt(float(spec.budget.max_path_loss_db))}\n")
    out.write("[tracer]\n")
    for key in TRACER_KEYS:
        out.write(f"{key} = {_fmt(getattr(spec.tracer, key))}\n")
    out.write("[grid]\n")
    out.write(f"grid_spacing = {_fmt(float(spec.grid_spacing))}\n")
    out.write(f"rx_height = {_fmt(float(spec.rx_height))}\n")
    out.write(f"rx_pattern = {spec.rx_antenna.pattern}\n")
    return out.getvalue()


# ------------------------------------------------------------------- CSV

def _num(v):
    if v == -math.inf:
        return "-inf"
    return f"{v:.6f}"


def grid_csv_text(grid):
    lines = ["x_m,y_m,power_dbm"]
    xs, ys = grid.xs, grid.ys
    for i in range(grid.nx):
        for j in range(grid.ny):
            lines.append(f"{xs[i]:.6f},{ys[j]:.6f},{_num(grid.values[i, j])}")
    return "\n".join(lines) + "\n"


def write_grid_csv(grid, out):
    """Write ``x_m,y_m,power_dbm`` rows, x-major, to a path or text stream."""
    text = grid_csv_text(grid)
    if hasattr(out, "write"):
        out.write(text)
    else:
        with open(out, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


def read_grid_csv(src, corridor_mask=None, interior_mask=None, rx_height=0.2):
    """Rebuild a :class:`PowerGrid` from CSV written by :func:`write_grid_csv`."""
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src, encoding="ascii") as fh:
            text = fh.read()
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != "x_m,y_m,power_dbm":
        raise ParseError("missing x_m,y_m,power_dbm header", 1)
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError("expected three columns", k)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError("non-numeric value", k) from None
    arr = np.array(rows)
    xs = np.unique(arr[:, 0])
    ys = np.unique(arr[:, 1])
    nx, ny = len(xs), len(ys)
    if nx * ny != len(arr):
        raise ParseError("rows do not form a full grid")
    if nx > 1:
        spacing = xs[1] - xs[0]
    elif ny > 1:
        spacing = ys[1] - ys[0]
    else:
        spacing = 2.0 * xs[0]
    spacing = round(float(spacing), 9)
    origin = (round(float(xs[0] - spacing / 2), 9), round(float(ys[0] - spacing / 2), 9))
    values = arr[:, 2].reshape(nx, ny)
    if corridor_mask is None:
        corridor_mask = np.zeros((nx, ny), dtype=bool)
    return PowerGrid(origin, spacing, nx, ny, values, rx_height, corridor_mask, interior_mask)


# ---------------------------------------------------------------- pixmap

class HeatmapStyle:
    """Linear blue (-90 dBm) -> green (-65) -> red (-40) ramp."""

    low_dbm = -90.0
    mid_dbm = -65.0
    high_dbm = -40.0
    below = (0, 0, 0)
    interior = (128, 128, 128)

    def __init__(self, threshold_dbm=-90.0):
        self.threshold_dbm = threshold_dbm

    def colors(self, values, interior=None):
        v = np.asarray(values, dtype=float)
        rgb = np.zeros(v.shape + (3,), dtype=np.uint8)
        lo, mid, hi = self.low_dbm, self.mid_dbm, self.high_dbm
        with np.errstate(invalid="ignore"):
            c = np.clip(v, lo, hi)
            t1 = np.clip((c - lo) / (mid - lo), 0.0, 1.0)
            t2 = np.clip((c - mid) / (hi - mid), 0.0, 1.0)
        first = c <= mid
        r = np.where(first, 0.0, 255.0 * t2)
        g = np.where(first, 255.0 * t1, 255.0 * (1.0 - t2))
        b = np.where(first, 255.0 * (1.0 - t1), 0.0)
        rgb[..., 0] = np.rint(r).astype(np.uint8)
        rgb[..., 1] = np.rint(g).astype(np.uint8)
        rgb[..., 2] = np.rint(b).astype(np.uint8)
        rgb[~(v >= self.threshold_dbm)] = self.below
        if interior is not None:
            rgb[np.asarray(interior, dtype=bool)] = self.interior
        return rgb


def heatmap_bytes(grid, style=None):
    style = style or HeatmapStyle()
    rgb = style.colors(grid.values, grid.interior_mask)  # (nx, ny, 3)
    # image rows run along y, row 0 = minimum y
    img = np.ascontiguousarray(np.transpose(rgb, (1, 0, 2)))
    header = f"P6\n{grid.nx} {grid.ny}\n255\n".encode("ascii")
    return header + img.tobytes()


def write_heatmap(grid, style=None, out=None):
    data = heatmap_bytes(grid, style)
    if hasattr(out, "write"):
        out.write(data)
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def read_heatmap(src):
    """(width, height, rgb[height, width, 3]) from a P6 file."""
    if hasattr(src, "read"):
        data = src.read()
    else:
        with open(src, "rb") as fh:
            data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6":
        raise ParseError("not a binary P6 pixmap")
    w, h = (int(x) for x in parts[1].split())
    rgb = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)
    return w, h, rgb


# -------------------------------------------------------------- path dump

def format_paths(rx, paths, band_center, powers_dbm):
    """Text block listing the paths reaching one receiver point."""
    lines = [f"# rx {rx[0]:.4f} {rx[1]:.4f} {rx[2]:.4f} paths {len(paths)}"]
    for k, (p, pw) in enumerate(zip(paths, powers_dbm)):
        inter = " ".join(
            f"{'R' if it.kind == 'reflection' else 'D'}{it.ref.id}"
            f"@({it.point[0]:.4f},{it.point[1]:.4f},{it.point[2]:.4f})"
            for it in p.interactions) or "LOS"
        lines.append(f"{k} delay_ns={p.delay * 1e9:.4f} power_dbm={pw:.4f} {inter}")
    return "\n".join(lines) + "\n"
