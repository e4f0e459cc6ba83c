"""Material constants and the named preset table."""

from dataclasses import dataclass, replace

from .errors import InvalidSpec


@dataclass(frozen=True)
class Material:
    name: str
    relative_permittivity: float = 1.0
    conductivity: float = 0.0
    is_pec: bool = False
    roughness_rms: float = 0.0

    def __post_init__(self):
        if self.relative_permittivity < 1.0:
            raise InvalidSpec(f"material {self.name!r}: relative permittivity must be >= 1")
        if self.conductivity < 0.0:
            raise InvalidSpec(f"material {self.name!r}: conductivity must be >= 0")
        if self.roughness_rms < 0.0:
            raise InvalidSpec(f"material {self.name!r}: roughness_rms must be >= 0")

    @property
    def is_air(self):
        return (not self.is_pec and self.relative_permittivity == 1.0
                and self.conductivity == 0.0)

    def with_roughness(self, sigma_h):
        return replace(self, roughness_rms=float(sigma_h))


PEC = Material("pec", is_pec=True)
OLIVE_OIL = Material("olive_oil", 2.87, 0.0289)
COCA_COLA = Material("coca_cola", 71.25, 4.1991)
# Engineering default for the floor, not a measured value.
CONCRETE_DEFAULT = Material("concrete_default", 5.31, 0.1)
AIR = Material("air", 1.0, 0.0)

MATERIAL_PRESETS = {m.name: m for m in (PEC, OLIVE_OIL, COCA_COLA, CONCRETE_DEFAULT, AIR)}


def preset(name):
    try:
        return MATERIAL_PRESETS[name]
    except KeyError:
        raise InvalidSpec(f"unknown material preset {name!r}") from None
