import math

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from warewave.em import AntennaModel
from warewave.geometry import (Facet, WarehouseSpec, generate_warehouse, make_scene,
                               segment_clear)
from warewave.materials import CONCRETE_DEFAULT, OLIVE_OIL, PEC, Material
from warewave.tracer import (PathFinder, TracerConfig, evaluate_path, evaluate_paths,
                             find_diffracted_paths, find_paths, find_specular_paths)

from .conftest import FC, LAMBDA, box_scene, floor_facet

ISO = AntennaModel(pattern="isotropic")
DIPOLE = AntennaModel()
SPEC_ONLY = TracerConfig(enable_diffraction=False)
K = 2 * math.pi / LAMBDA


def _db(a):
    return 20 * math.log10(abs(a))


def _friis_db(d):
    return 20 * math.log10(LAMBDA / (4 * math.pi * d))


class TestSpecular:
    def test_floor_bounce_example(self):
        scene = make_scene([floor_facet(CONCRETE_DEFAULT)])
        paths = find_specular_paths(scene, (0, 0, 1.5), (4, 0, 0.2),
                                    TracerConfig(max_reflections=1, enable_diffraction=False))
        assert len(paths) == 2
        los, bounce = sorted(paths, key=lambda p: p.total_length)
        assert los.interactions == []
        assert los.total_length == pytest.approx(math.sqrt(16 + 1.3 ** 2), abs=1e-12)
        assert bounce.total_length == pytest.approx(math.sqrt(16 + 1.7 ** 2), abs=1e-12)
        assert np.allclose(bounce.interactions[0].point, (4 * 1.5 / 1.7, 0, 0), atol=1e-12)
        assert bounce.delay == pytest.approx(bounce.total_length / 299_792_458.0)

    def test_occluded_rx_without_reflections(self):
        scene = box_scene((1.0, -1.0, 0.0), (2.0, 1.0, 3.0))
        cfg = TracerConfig(max_reflections=0, enable_diffraction=False)
        assert find_specular_paths(scene, (0, 0, 1.5), (4, 0, 0.2), cfg) == []

    def test_coincident_endpoints_rejected(self, pec_floor_scene):
        with pytest.raises(ValueError):
            find_specular_paths(pec_floor_scene, (0, 0, 1), (0, 0, 1))

    @staticmethod
    def _wall(x, sgn, y0, y1, z0, z1):
        v = np.array([[x, y0, z0], [x, y1, z0], [x, y1, z1], [x, y0, z1]], float)
        return Facet(v, np.array([sgn, 0, 0.0]), PEC)

    @staticmethod
    def _launch(walls, tx, rx, n_rays=1_000_000, max_order=3):
        """Brute-force ray launching from tx with a distance-scaled reception sphere."""
        i = np.arange(n_rays) + 0.5
        polar = np.arccos(1 - 2 * i / n_rays)
        azim = math.pi * (1 + 5 ** 0.5) * i
        d = np.stack([np.cos(azim) * np.sin(polar), np.sin(azim) * np.sin(polar),
                      np.cos(polar)], axis=1)
        o = np.tile(np.asarray(tx, float), (n_rays, 1))
        length = np.zeros(n_rays)
        seq = np.zeros(n_rays, dtype=np.int64)
        alive = np.ones(n_rays, dtype=bool)
        spacing = math.sqrt(4 * math.pi / n_rays)
        found = set()
        for _ in range(max_order + 1):
            t_hit = np.full(n_rays, np.inf)
            f_hit = np.full(n_rays, -1)
            for k, (x, sgn, y0, y1, z0, z1) in enumerate(walls):
                with np.errstate(divide="ignore", invalid="ignore"):
                    t = (x - o[:, 0]) / d[:, 0]
                p = o + t[:, None] * d
                ok = ((t > 1e-9) & (p[:, 1] >= y0) & (p[:, 1] <= y1) & (p[:, 2] >= z0)
                      & (p[:, 2] <= z1) & (d[:, 0] * sgn < 0) & (t < t_hit))
                t_hit[ok] = t[ok]
                f_hit[ok] = k
            w = np.asarray(rx, float) - o
            s = np.einsum("ij,ij->i", w, d)
            miss = np.linalg.norm(w - s[:, None] * d, axis=1)
            caught = alive & (s > 0) & (s < t_hit) & (miss < 0.7 * spacing * (length + s))
            found.update(int(q) for q in np.unique(seq[caught]))
            alive &= f_hit >= 0
            step = np.where(np.isfinite(t_hit), t_hit, 0.0)
            o = o + step[:, None] * d
            length += step
            d[:, 0] = np.where(alive, -d[:, 0], d[:, 0])
            seq = seq * 3 + np.where(alive, f_hit + 1, 0)

        def decode(q):
            out = []
            while q:
                out.append(q % 3 - 1)
                q //= 3
            return tuple(out[::-1])

        return {decode(q) for q in found}

    @pytest.mark.parametrize("walls", [
        [(0.0, 1.0, -6, 10, -2, 5), (4.0, -1.0, -4, 12, -1, 4)],
        [(0.0, 1.0, -2, 1.5, 0, 3), (4.0, -1.0, -1, 5, 0, 3)],
    ])
    def test_matches_ray_launching_oracle(self, walls):
        scene = make_scene([self._wall(*w) for w in walls])
        tx, rx = (1.0, 0.0, 1.5), (3.0, 3.0, 1.0)
        cfg = TracerConfig(max_reflections=3, enable_diffraction=False)
        engine = {tuple(i.ref.id for i in p.interactions)
                  for p in find_specular_paths(scene, tx, rx, cfg)}
        assert engine == self._launch(walls, tx, rx)

    def test_monotone_enrichment(self):
        scene = generate_warehouse(WarehouseSpec(cluster_count=1, racks_per_cluster=3,
                                                 area_x=6.0, area_y=5.0, cluster_depth=3.0,
                                                 item_material=OLIVE_OIL))
        tx, rx = (3.0, 0.4, 1.5), (1.0, 4.6, 0.2)
        prev = set()
        for k in range(4):
            cur = {p.key for p in find_specular_paths(
                scene, tx, rx, TracerConfig(max_reflections=k, enable_diffraction=False))}
            assert prev <= cur
            prev = cur


class TestAmplitude:
    @pytest.mark.parametrize("d", [1.0, 2.0, 5.0, 6.0, 10.0, 20.0])
    def test_friis(self, d):
        scene = make_scene([])
        (p,) = find_paths(scene, (0, 0, 1.5), (d, 0, 1.5))
        assert _db(evaluate_path(p, FC, ISO, ISO)) == pytest.approx(_friis_db(d), abs=1e-9)

    def test_friis_examples(self):
        assert _friis_db(1.0) == pytest.approx(-44.47, abs=0.01)
        assert _friis_db(6.0) == pytest.approx(-60.04, abs=0.01)

    def test_two_ray_closed_form(self, pec_floor_scene):
        """Vertical dipoles over a PEC ground: direct ray plus a co-polar image."""
        rng = np.random.default_rng(21)
        checked = 0
        for d in rng.uniform(1.0, 20.0, size=50):
            paths = find_specular_paths(pec_floor_scene, (0, 0, 1.5), (d, 0, 0.2),
                                        TracerConfig(max_reflections=1, enable_diffraction=False))
            total = sum(evaluate_path(p, FC, DIPOLE, DIPOLE) for p in paths)
            r1, r2 = math.hypot(d, 1.3), math.hypot(d, 1.7)
            a1 = 1.5 * (d / r1) ** 2 * np.exp(-1j * K * r1) / r1
            a2 = 1.5 * (d / r2) ** 2 * np.exp(-1j * K * r2) / r2
            closed = LAMBDA / (4 * math.pi) * (a1 + a2)
            # skip the +-3 dB neighbourhoods of destructive nulls
            if abs(closed) ** 2 < 0.5 * (abs(a1) ** 2 + abs(a2) ** 2) * (LAMBDA / (4 * math.pi)) ** 2:
                continue
            checked += 1
            assert _db(total) == pytest.approx(_db(closed), abs=0.5)
        assert checked >= 15

    def test_pec_bounce_equals_image_friis(self):
        wall = Facet(np.array([[5, -10, -10], [5, 10, -10], [5, 10, 10], [5, -10, 10]], float),
                     np.array([-1.0, 0, 0]), PEC)
        scene = make_scene([wall])
        tx, rx = np.array([1.0, 0.0, 1.5]), np.array([2.0, 3.0, 0.7])
        paths = find_specular_paths(scene, tx, rx, TracerConfig(max_reflections=1,
                                                                enable_diffraction=False))
        (bounce,) = [p for p in paths if p.interactions]
        image = np.array([9.0, 0.0, 1.5])
        for ant in (ISO, DIPOLE):
            a = evaluate_path(bounce, FC, ant, ant)
            if ant is ISO:
                assert abs(a) == pytest.approx(LAMBDA / (4 * math.pi * np.linalg.norm(rx - image)),
                                               rel=1e-12)

    def test_reciprocity(self):
        spec = WarehouseSpec(cluster_count=1, racks_per_cluster=3, area_x=6.0, area_y=5.0,
                             cluster_depth=3.0, item_material=OLIVE_OIL)
        scene = generate_warehouse(spec)
        a, b = np.array([3.0, 0.4, 1.5]), np.array([1.0, 4.6, 0.2])
        cfg = TracerConfig(max_reflections=3)
        fwd = find_paths(scene, a, b, cfg)
        bwd = find_paths(scene, b, a, cfg)
        assert {p.reversed().key for p in fwd} == {p.key for p in bwd}
        by_key = {p.key: p for p in bwd}
        evaluate_paths(fwd, [FC], DIPOLE, DIPOLE)
        evaluate_paths(bwd, [FC], DIPOLE, DIPOLE)
        for p in fwd:
            q = by_key[p.reversed().key]
            assert abs(q.amplitude[FC]) == pytest.approx(abs(p.amplitude[FC]), rel=1e-9)

    def test_budget_length(self):
        cfg = TracerConfig()
        length = cfg.max_length(FC)
        assert -_friis_db(length) == pytest.approx(cfg.path_loss_budget_db + 10.0, abs=1e-9)


@pytest.fixture(scope="module")
def block():
    return box_scene((2.0, -1.0, 0.0), (3.0, 1.0, 3.0))


# rx sits in the block's shadow but sees its (2, 1) corner
SHADOW_TX = np.array([0.0, 0.3, 1.5])
SHADOW_RX = np.array([4.0, 1.3, 0.2])


class TestDiffraction:
    def test_fermat_point_against_golden_section(self, block):
        tx, rx = SHADOW_TX, SHADOW_RX
        assert not segment_clear(block, tx, rx)
        paths = find_diffracted_paths(block, tx, rx, TracerConfig(max_reflections_with_diffraction=0))
        vertical = [p for p in paths if abs(p.interactions[0].ref.direction[2]) > 0.99]
        assert vertical
        for p in paths:
            (it,) = p.interactions
            a, b = it.ref.endpoints

            def length(t):
                q = a + t * (b - a)
                return np.linalg.norm(q - tx) + np.linalg.norm(rx - q)

            res = minimize_scalar(length, bracket=(0.0, 0.5, 1.0), method="golden",
                                  options={"xtol": 1e-12})
            assert np.linalg.norm(a + res.x * (b - a) - it.point) < 1e-6
            e = it.ref.direction
            u_in = (it.point - tx) / np.linalg.norm(it.point - tx)
            u_out = (rx - it.point) / np.linalg.norm(rx - it.point)
            assert abs(math.acos(np.clip(u_in @ e, -1, 1)) - math.acos(np.clip(u_out @ e, -1, 1))) < 1e-6

    def test_no_edges_no_diffraction(self):
        scene = box_scene((2.0, -1.0, 0.0), (3.0, 1.0, 3.0), edges=False)
        assert find_diffracted_paths(scene, SHADOW_TX, SHADOW_RX) == []

    def test_los_dominates_when_clear(self, block):
        tx, rx = (0.0, 3.0, 1.5), (5.0, 3.0, 0.2)
        paths = find_paths(block, tx, rx, TracerConfig(max_reflections=0))
        evaluate_paths(paths, [FC], ISO, ISO)
        los = [p for p in paths if not p.interactions]
        assert los
        assert abs(los[0].amplitude[FC]) == max(abs(p.amplitude[FC]) for p in paths)

    def test_edge_hidden_from_tx(self, block):
        paths = find_diffracted_paths(block, SHADOW_TX, SHADOW_RX)
        assert paths
        for p in paths:
            e = p.interactions[0].ref
            a = e.endpoints[0]
            # tx must sit outside the wedge: in front of at least one face
            assert max((SHADOW_TX - a) @ e.face_a.unit_normal,
                       (SHADOW_TX - a) @ e.face_b.unit_normal) > 0
            # the (3, 1) corner faces away from tx
            assert not np.allclose(e.endpoints[:, :2], [[3.0, 1.0], [3.0, 1.0]])

    def test_diffraction_with_floor_reflection(self):
        scene = box_scene((2.0, -1.0, 0.0), (3.0, 1.0, 3.0), with_floor=True)
        fwd = find_diffracted_paths(scene, SHADOW_TX, SHADOW_RX)
        kinds = {tuple(i.kind[0] for i in p.interactions) for p in fwd}
        assert {("d",), ("d", "r")} <= kinds
        # swapping the ends turns the floor bounce after the edge into one before it
        bwd = find_diffracted_paths(scene, SHADOW_RX, SHADOW_TX)
        assert {p.reversed().key for p in fwd} == {p.key for p in bwd}
        assert ("r", "d") in {tuple(i.kind[0] for i in p.interactions) for p in bwd}


def _validate(scene, path):
    pts = path.points
    for a, b in zip(pts[:-1], pts[1:]):
        assert segment_clear(scene, a, b, eps=1e-7)
    for k, it in enumerate(path.interactions):
        u_in = pts[k + 1] - pts[k]
        u_out = pts[k + 2] - pts[k + 1]
        u_in /= np.linalg.norm(u_in)
        u_out /= np.linalg.norm(u_out)
        if it.kind == "reflection":
            assert it.ref.contains(it.point, 1e-6)
            n = it.ref.unit_normal
            assert abs(math.acos(np.clip(-u_in @ n, -1, 1)) - math.acos(np.clip(u_out @ n, -1, 1))) < 1e-6
            assert np.allclose(u_out, u_in - 2 * (u_in @ n) * n, atol=1e-6)
        else:
            a, b = it.ref.endpoints
            e = it.ref.direction
            t = (it.point - a) @ e
            assert -1e-6 <= t <= it.ref.length + 1e-6
            assert np.linalg.norm(a + t * e - it.point) < 1e-6
            assert abs(math.acos(np.clip(u_in @ e, -1, 1)) - math.acos(np.clip(u_out @ e, -1, 1))) < 1e-6
    assert sum(1 for it in path.interactions if it.kind == "diffraction") <= 1
    length = sum(np.linalg.norm(b - a) for a, b in zip(pts[:-1], pts[1:]))
    assert length == pytest.approx(path.total_length, rel=1e-12)


def test_path_validity_fuzz():
    """Every returned path replays cleanly through the geometry predicates."""
    rng = np.random.default_rng(77)
    materials = [PEC, OLIVE_OIL, Material("brick", 4.4, 0.02)]
    total = 0
    for k in range(100):
        spec = WarehouseSpec(cluster_count=1, racks_per_cluster=int(rng.integers(1, 4)),
                             area_x=6.0, area_y=5.0, cluster_depth=3.0, layer_count=2,
                             item_material=materials[k % 3], rng_seed=int(rng.integers(1 << 40)))
        scene = generate_warehouse(spec)
        tx = np.array([rng.uniform(0.2, 5.8), rng.uniform(0.1, 0.9), rng.uniform(0.3, 2.0)])
        rx = np.array([rng.uniform(0.2, 5.8), rng.uniform(4.1, 4.9), rng.uniform(0.1, 1.0)])
        for p in PathFinder(scene, tx, TracerConfig(max_reflections=2)).paths(rx):
            _validate(scene, p)
            total += 1
    assert total > 500
