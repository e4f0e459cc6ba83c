"""Deterministic UWB ray-tracing coverage simulator for stratified-rack warehouses."""

from .band import LinkBudget, UwbBand, band_averaged_power, band_samples
from .coverage import (PowerGrid, SafetyConfig, ScenarioSpec, compare_maps,
                       compute_power_map, coverage_stats, run_scenario, safe_range)
from .em import AntennaModel, antenna_gain, complex_permittivity, fresnel_coefficients, \
    roughness_attenuation, utd_diffraction
from .errors import WarewaveError
from .geometry import Scene, WarehouseSpec, generate_warehouse, intersect_ray, mirror_point, \
    segment_clear
from .materials import MATERIAL_PRESETS, Material
from .scenario_io import parse_scenario, serialize_scenario, write_grid_csv, write_heatmap
from .tracer import (PropagationPath, TracerConfig, evaluate_path, find_diffracted_paths,
                     find_paths, find_specular_paths)

__all__ = [
    "AntennaModel", "LinkBudget", "MATERIAL_PRESETS", "Material", "PowerGrid",
    "PropagationPath", "SafetyConfig", "ScenarioSpec", "Scene", "TracerConfig",
    "UwbBand", "WarehouseSpec", "WarewaveError", "antenna_gain", "band_averaged_power",
    "band_samples", "compare_maps", "complex_permittivity", "compute_power_map",
    "coverage_stats", "evaluate_path", "find_diffracted_paths", "find_paths",
    "find_specular_paths", "fresnel_coefficients", "generate_warehouse", "intersect_ray",
    "mirror_point", "parse_scenario", "roughness_attenuation", "run_scenario",
    "safe_range", "segment_clear", "serialize_scenario", "utd_diffraction",
    "write_grid_csv", "write_heatmap",
]
