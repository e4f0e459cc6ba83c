import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from warewave.errors import InvalidSpec, PackingFailed
from warewave.geometry import (Facet, Plane, WarehouseSpec, WedgeEdge, box_facets,
                               generate_warehouse, intersect_ray, make_scene, mirror_point,
                               rack_geometry, segment_clear)
from warewave.materials import COCA_COLA, OLIVE_OIL, PEC

from .conftest import box_scene


@pytest.fixture(scope="module")
def default_scene():
    return generate_warehouse(WarehouseSpec())


@pytest.fixture(scope="module")
def coke_scene():
    return generate_warehouse(WarehouseSpec(item_material=COCA_COLA))


def _rack_overlap_gap(a, b, fx, fy):
    (ax, ay), (bx, by) = a, b
    return max(ax - (bx + fx), bx - (ax + fx), ay - (by + fy), by - (ay + fy))


class TestWarehouseGeneration:
    def test_defaults_place_28_racks(self, default_scene):
        spec = default_scene.spec
        assert len(default_scene.racks) == 28
        fx, fy = spec.rack_footprint
        for x, y in default_scene.racks:
            assert 0 <= x and x + fx <= spec.area_x
            assert 0 <= y and y + fy <= spec.area_y
        for i, a in enumerate(default_scene.racks):
            for b in default_scene.racks[i + 1:]:
                assert _rack_overlap_gap(a, b, fx, fy) >= spec.inter_rack_gap - 1e-12

    def test_racks_stay_inside_their_cluster(self, default_scene):
        spec = default_scene.spec
        fx, fy = spec.rack_footprint
        rects = spec.cluster_rects()
        for k, (x, y) in enumerate(default_scene.racks):
            x0, y0, x1, y1 = rects[k // spec.racks_per_cluster]
            assert x0 <= x and x + fx <= x1 and y0 <= y and y + fy <= y1

    def test_corridors_have_exact_width(self):
        rects = WarehouseSpec().cluster_rects()
        assert len(rects) == 4
        for a, b in zip(rects[:-1], rects[1:]):
            assert b[0] - a[2] == pytest.approx(1.5, abs=1e-12)
        assert rects[0][0] == 0.0 and rects[-1][2] == pytest.approx(22.0)
        assert rects[0][3] - rects[0][1] == pytest.approx(6.0)

    def test_no_clusters_gives_floor_only(self):
        scene = generate_warehouse(WarehouseSpec(cluster_count=0))
        assert len(scene.facets) == 1 and len(scene.edges) == 0
        assert scene.facets[0].unit_normal.tolist() == [0.0, 0.0, 1.0]

    def test_same_spec_is_byte_identical(self):
        spec = WarehouseSpec(item_material=OLIVE_OIL, rng_seed=7)
        assert generate_warehouse(spec).fingerprint() == generate_warehouse(spec).fingerprint()

    def test_seed_changes_layout(self):
        a = generate_warehouse(WarehouseSpec(rng_seed=1))
        b = generate_warehouse(WarehouseSpec(rng_seed=2))
        assert a.racks != b.racks

    def test_packing_failure(self):
        with pytest.raises(PackingFailed):
            generate_warehouse(WarehouseSpec(racks_per_cluster=40))

    @pytest.mark.parametrize("field,value", [("area_x", -1.0), ("plate_thickness", 0.0),
                                             ("rack_footprint", (0.0, 0.8))])
    def test_non_positive_dimensions_rejected(self, field, value):
        with pytest.raises(InvalidSpec):
            generate_warehouse(replace(WarehouseSpec(), **{field: value}))

    def test_loaded_rack_has_items_and_is_taller(self, coke_scene, default_scene):
        mats = {f.material.name for f in coke_scene.facets}
        assert "coca_cola" in mats and "pec" in mats
        assert coke_scene.bounds[1][2] == pytest.approx(1.90)
        assert default_scene.bounds[1][2] == pytest.approx(1.52)

    def test_rack_surfaces_carry_roughness(self, coke_scene):
        rack = [f for f in coke_scene.facets[1:]]
        assert all(f.material.roughness_rms == 0.05 for f in rack)
        assert coke_scene.facets[0].material.roughness_rms == 0.0

    def test_outward_normals(self, coke_scene):
        solids = coke_scene.solids
        for f in coke_scene.facets[1:]:
            c = f.centroid
            on = [s for s in solids
                  if np.all(c >= s[0] - 1e-9) and np.all(c <= s[1] + 1e-9)]
            assert on, "facet not on any solid"
            assert any(f.unit_normal @ (0.5 * (s[0] + s[1]) - c) < 0 for s in on)


class TestFacetAndEdge:
    def test_unit_normal_and_coplanarity_enforced(self):
        v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.1], [0, 1, 0]], float)
        with pytest.raises(InvalidSpec):
            Facet(v, np.array([0, 0, 1.0]), PEC)
        with pytest.raises(InvalidSpec):
            Facet(v[[0, 1, 3]], np.array([0, 0, 2.0]), PEC)

    def test_non_convex_rejected(self):
        v = np.array([[0, 0, 0], [2, 0, 0], [1, 0.5, 0], [2, 2, 0], [0, 2, 0]], float)
        with pytest.raises(InvalidSpec):
            Facet(v, np.array([0, 0, 1.0]), PEC)

    def test_box_edges_are_right_angle_wedges(self, coke_scene):
        for e in coke_scene.edges:
            assert e.exterior_wedge_index_n == pytest.approx(1.5)
            for face in (e.face_a, e.face_b):
                for q in e.endpoints:
                    assert abs(face.unit_normal @ q - face.plane.offset) < 1e-9

    def test_half_plane_index(self):
        faces = box_facets((0, 0, 0), (1, 1, 1), PEC)
        e = WedgeEdge(np.array([[1, 0, 0], [1, 0, 1.0]]), faces["xmax"], faces["ymin"])
        assert e.exterior_wedge_index_n == pytest.approx(1.5)
        assert np.allclose(np.cross(e.tangent_a, e.face_a.unit_normal), e.direction)

    def test_rack_corners_are_continuous(self):
        spec = WarehouseSpec(item_material=OLIVE_OIL)
        _, edges, _ = rack_geometry(0.0, 0.0, spec)
        vertical = [e for e in edges if abs(e.direction[2]) > 0.99]
        assert len(vertical) == 4
        assert all(e.length == pytest.approx(1.9) for e in vertical)


def _brute_nearest(scene, o, d):
    """Plain scan over every (quadrilateral) facet, no index involved."""
    verts = np.array([f.vertices for f in scene.facets])  # (F, 4, 3)
    normals = np.array([f.unit_normal for f in scene.facets])
    offsets = np.einsum("ij,ij->i", normals, verts[:, 0])
    den = normals @ d
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (offsets - normals @ o) / den
    p = o + t[:, None] * d
    inward = np.cross(normals[:, None, :], np.roll(verts, -1, axis=1) - verts)
    inward /= np.linalg.norm(inward, axis=2, keepdims=True)
    side = np.einsum("fkj,fkj->fk", inward, p[:, None, :] - verts)
    ok = np.isfinite(t) & (t > 1e-9) & np.all(side >= -1e-9, axis=1)
    if not ok.any():
        return None, math.inf
    k = int(np.argmin(np.where(ok, t, np.inf)))
    return scene.facets[k], float(t[k])


class TestIntersection:
    def test_ray_down_onto_rack_top(self):
        for item, z_top in ((None, 1.52), (COCA_COLA, 1.90)):
            spec = WarehouseSpec() if item is None else WarehouseSpec(item_material=item)
            facets, edges, solids = rack_geometry(0.5, 0.5, spec)
            scene = make_scene(facets, edges, solids)
            hit = intersect_ray(scene, (1.0, 1.0, 10.0), (0.0, 0.0, -1.0))
            assert hit.distance == pytest.approx(10.0 - z_top, abs=1e-12)
            assert hit.facet.unit_normal[2] == 1.0

    def test_ray_away_from_geometry_misses(self, default_scene):
        assert intersect_ray(default_scene, (5.0, 5.0, 50.0), (0.0, 0.0, 1.0)) is None

    def test_bad_direction(self, default_scene):
        with pytest.raises(ValueError):
            intersect_ray(default_scene, (0, 0, 1), (0, 0, 2.0))

    def test_index_matches_brute_force(self, coke_scene):
        rng = np.random.default_rng(11)
        lo = np.array([-1.0, -1.0, 0.05])
        hi = np.array([23.0, 9.0, 2.5])
        for _ in range(1000):
            o = lo + rng.random(3) * (hi - lo)
            while coke_scene.is_interior(o):
                o = lo + rng.random(3) * (hi - lo)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            hit = intersect_ray(coke_scene, o, d)
            f, t = _brute_nearest(coke_scene, o, d)
            if f is None:
                assert hit is None
            else:
                assert hit is not None
                assert hit.distance == pytest.approx(t, abs=1e-9)
                # shared edges may legitimately resolve to either neighbour
                if hit.facet.id != f.id:
                    assert f.contains(hit.point, 1e-7)


@pytest.fixture(scope="module")
def blocker():
    return box_scene((-1.0, 2.0, 0.0), (1.0, 3.0, 2.0))


class TestSegmentClear:
    def test_blocked_through_rack(self, blocker):
        assert not segment_clear(blocker, (0, 0, 1.5), (0, 5, 1.5))

    def test_clear_above(self, blocker):
        assert segment_clear(blocker, (0, 0, 5), (0, 5, 5))

    def test_endpoint_on_facet_is_not_a_blocker(self, blocker):
        on_face = (0.0, 2.0, 1.0)  # on the ymin face
        assert segment_clear(blocker, (0, 0, 1.5), on_face)

    def test_coincident_endpoints_rejected(self, blocker):
        with pytest.raises(ValueError):
            segment_clear(blocker, (0, 0, 1), (0, 0, 1))


class TestMirror:
    def test_examples(self):
        z0 = Plane(np.array([0, 0, 1.0]), 0.0)
        assert np.allclose(mirror_point((0, 0, 1.5), z0), (0, 0, -1.5))
        assert np.allclose(mirror_point((3, 2, 0), z0), (3, 2, 0))
        x2 = Plane(np.array([1.0, 0, 0]), 2.0)
        assert np.allclose(mirror_point((0, 1, 1), x2), (4, 1, 1))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3),
           st.floats(-50, 50), st.lists(st.floats(-100, 100), min_size=3, max_size=3))
    def test_involution(self, n, offset, p):
        n = np.array(n)
        if np.linalg.norm(n) < 1e-3:
            n = np.array([0.0, 0.0, 1.0])
        plane = Plane(n / np.linalg.norm(n), offset)
        back = mirror_point(mirror_point(p, plane), plane)
        assert np.allclose(back, p, atol=1e-12, rtol=0)
