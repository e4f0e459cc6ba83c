import numpy as np
import pytest

from warewave.geometry import Facet, box_facets, make_scene
from warewave.materials import PEC, Material

FC = 3.994e9
LAMBDA = 299_792_458.0 / FC

# acceptance results, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def floor_facet(material=PEC, half=100.0):
    return Facet(np.array([[-half, -half, 0], [half, -half, 0],
                           [half, half, 0], [-half, half, 0]], float),
                 np.array([0.0, 0.0, 1.0]), material)


def wall_facet(x, normal_sign, y0, y1, z0, z1, material=PEC):
    """Vertical wall in the plane x = const facing +x (sign 1) or -x (sign -1)."""
    v = np.array([[x, y0, z0], [x, y1, z0], [x, y1, z1], [x, y0, z1]], float)
    return Facet(v, np.array([float(normal_sign), 0.0, 0.0]), material)


def box_scene(lo, hi, material=PEC, with_floor=False, edges=True):
    """Scene made of one closed box, optionally above a floor."""
    from warewave.geometry import box_edges
    faces = box_facets(lo, hi, material)
    facets = list(faces.values())
    if with_floor:
        facets.insert(0, floor_facet(Material("ground", 5.31, 0.1)))
    return make_scene(facets, box_edges(faces) if edges else (), [(lo, hi)])


@pytest.fixture(scope="session")
def pec_floor_scene():
    return make_scene([floor_facet()])
