"""Warehouse scene construction and geometric queries.

The scene is a list of convex planar facets (rack plates, item slabs and
the floor) plus the wedge edges used for diffraction. Queries run through
an axis-aligned bounding-volume hierarchy; the traversal kernels are
compiled with numba and shared with the tracer.
"""

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

from .errors import InvalidSpec, PackingFailed
from .materials import AIR, CONCRETE_DEFAULT, PEC, Material

PLACEMENT_ATTEMPTS = 10_000
# Plate edges shorter than this (the 2 cm vertical plate edges) are not
# registered as diffracting wedges.
MIN_EDGE_LENGTH = 0.05
HIT_EPS = 1e-9
LEAF_SIZE = 4


class Plane(NamedTuple):
    normal: np.ndarray
    offset: float  # normal . x == offset


@dataclass(eq=False)
class Facet:
    vertices: np.ndarray
    unit_normal: np.ndarray
    material: Material
    id: int = -1

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        n = np.asarray(self.unit_normal, dtype=float)
        if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 3:
            raise InvalidSpec("facet needs at least 3 vertices in 3-D")
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise InvalidSpec("facet normal must be unit length")
        if np.max(np.abs((v - v[0]) @ n)) > 1e-9:
            raise InvalidSpec("facet vertices are not coplanar with the normal")
        # counter-clockwise seen from the normal side
        if np.dot(np.cross(v[1] - v[0], v[2] - v[0]), n) < 0:
            v = v[::-1].copy()
        k = len(v)
        for i in range(k):
            a, b, c = v[i], v[(i + 1) % k], v[(i + 2) % k]
            if np.dot(np.cross(b - a, c - b), n) < -1e-12:
                raise InvalidSpec("facet polygon is not convex")
        self.vertices = v
        self.unit_normal = n

    @property
    def plane(self):
        return Plane(self.unit_normal, float(self.unit_normal @ self.vertices[0]))

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    def contains(self, p, tol=1e-9):
        """True if ``p`` lies on the facet (plane distance and polygon)."""
        p = np.asarray(p, dtype=float)
        if abs(self.unit_normal @ p - self.plane.offset) > tol:
            return False
        v = self.vertices
        k = len(v)
        for i in range(k):
            e = np.cross(self.unit_normal, v[(i + 1) % k] - v[i])
            e /= np.linalg.norm(e)
            if e @ (p - v[i]) < -tol:
                return False
        return True


@dataclass(eq=False)
class WedgeEdge:
    """Straight wedge edge between two facets.

    Endpoints are ordered so that the edge direction equals
    ``face_tangent_a x face_a.unit_normal``; UTD angles are then measured
    from face A, counter-clockwise about the edge, through the exterior.
    """

    endpoints: np.ndarray
    face_a: Facet
    face_b: Facet
    exterior_wedge_index_n: float = 1.5
    id: int = -1
    tangent_a: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = np.asarray(self.endpoints, dtype=float).copy()
        e = p[1] - p[0]
        length = np.linalg.norm(e)
        if length <= 0:
            raise InvalidSpec("degenerate edge")
        e /= length
        for face in (self.face_a, self.face_b):
            for q in p:
                if abs(face.unit_normal @ q - face.plane.offset) > 1e-9:
                    raise InvalidSpec("edge does not lie on its faces")

        def into(face):
            c = face.centroid - p[0]
            t = c - (c @ e) * e
            return t / np.linalg.norm(t)

        ta, tb = into(self.face_a), into(self.face_b)
        if np.dot(np.cross(ta, self.face_a.unit_normal), e) < 0:
            p = p[::-1].copy()
        interior = np.arccos(np.clip(ta @ tb, -1.0, 1.0))
        n = 2.0 - interior / np.pi
        if not 1.0 < n <= 2.0 + 1e-12:
            raise InvalidSpec("wedge index outside (1, 2]")
        self.endpoints = p
        self.tangent_a = ta
        self.exterior_wedge_index_n = float(min(n, 2.0))

    @property
    def direction(self):
        d = self.endpoints[1] - self.endpoints[0]
        return d / np.linalg.norm(d)

    @property
    def length(self):
        return float(np.linalg.norm(self.endpoints[1] - self.endpoints[0]))


@dataclass(frozen=True)
class WarehouseSpec:
    area_x: float = 22.0
    area_y: float = 8.0
    cluster_count: int = 4
    racks_per_cluster: int = 7
    corridor_width: float = 1.5
    inter_rack_gap: float = 0.05
    plate_thickness: float = 0.02
    layer_air_gap: float = 0.10
    layer_count: int = 4
    rack_footprint: tuple = (1.2, 0.8)
    layer_pitch: float = 0.5
    item_material: Material = AIR
    floor_material: Material = CONCRETE_DEFAULT
    rng_seed: int = 42
    # not dimensioned in the source figures; declared defaults
    cluster_depth: float = 6.0
    rack_material: Material = PEC
    rack_roughness: float = 0.05

    @property
    def cluster_width(self):
        n = self.cluster_count
        if n <= 0:
            return 0.0
        return (self.area_x - (n - 1) * self.corridor_width) / n

    def cluster_rects(self):
        """Cluster rectangles as ``(x0, y0, x1, y1)`` along the long axis."""
        w = self.cluster_width
        y0 = 0.5 * (self.area_y - self.cluster_depth)
        return [(i * (w + self.corridor_width), y0,
                 i * (w + self.corridor_width) + w, y0 + self.cluster_depth)
                for i in range(self.cluster_count)]

    def validate(self):
        positive = dict(area_x=self.area_x, area_y=self.area_y,
                        plate_thickness=self.plate_thickness,
                        layer_pitch=self.layer_pitch,
                        footprint_x=self.rack_footprint[0],
                        footprint_y=self.rack_footprint[1])
        for k, v in positive.items():
            if not v > 0:
                raise InvalidSpec(f"{k} must be positive, got {v}")
        for k in ("cluster_count", "racks_per_cluster", "layer_count"):
            if getattr(self, k) < 0:
                raise InvalidSpec(f"{k} must be >= 0")
        for k in ("corridor_width", "inter_rack_gap", "layer_air_gap",
                  "rack_roughness"):
            if getattr(self, k) < 0:
                raise InvalidSpec(f"{k} must be >= 0")
        if self.cluster_count == 0 or self.racks_per_cluster == 0:
            return
        if self.cluster_width <= 0:
            raise InvalidSpec("corridors leave no room for clusters")
        if not 0 < self.cluster_depth <= self.area_y:
            raise InvalidSpec("cluster_depth must lie in (0, area_y]")
        fx, fy = self.rack_footprint
        if fx > self.cluster_width or fy > self.cluster_depth:
            raise InvalidSpec("rack footprint larger than a cluster")
        if self.slab_height < 0:
            raise InvalidSpec("plate + air gap exceed layer pitch")

    @property
    def slab_height(self):
        return self.layer_pitch - self.plate_thickness - self.layer_air_gap

    @property
    def has_items(self):
        return not self.item_material.is_air

    @property
    def rack_height(self):
        return self.layer_count * self.layer_pitch


class BVH(NamedTuple):
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    order: np.ndarray


class GeomArrays(NamedTuple):
    """Flat facet and BVH arrays consumed by the compiled kernels."""

    fnormal: np.ndarray
    foffset: np.ndarray
    fnv: np.ndarray
    fverts: np.ndarray
    fedge_n: np.ndarray
    fedge_d: np.ndarray
    node_lo: np.ndarray
    node_hi: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    node_start: np.ndarray
    node_count: np.ndarray
    order: np.ndarray


@dataclass(eq=False)
class Scene:
    facets: list
    edges: list
    index: BVH
    bounds: np.ndarray
    solids: np.ndarray = field(default_factory=lambda: np.zeros((0, 2, 3)))
    racks: list = field(default_factory=list)
    spec: Optional[WarehouseSpec] = None
    arrays: GeomArrays = field(default=None, repr=False)

    @property
    def materials(self):
        seen = {}
        for f in self.facets:
            seen.setdefault(f.material, len(seen))
        return list(seen)

    def fingerprint(self):
        """Bytes that change with any facet, material or edge change."""
        parts = []
        for f in self.facets:
            parts.append(f.vertices.tobytes())
            parts.append(f.unit_normal.tobytes())
            parts.append(repr(f.material).encode())
        for e in self.edges:
            parts.append(e.endpoints.tobytes())
            parts.append(np.array([e.face_a.id, e.face_b.id]).tobytes())
        return b"".join(parts)

    def is_interior(self, p, tol=1e-9):
        """True if ``p`` lies strictly inside a rack solid."""
        if len(self.solids) == 0:
            return False
        p = np.asarray(p, dtype=float)
        lo, hi = self.solids[:, 0], self.solids[:, 1]
        inside = np.all((p > lo + tol) & (p < hi - tol), axis=1)
        return bool(inside.any())


def make_scene(facets, edges=(), solids=None, racks=(), spec=None):
    """Assemble a scene, assigning ids and building the acceleration index."""
    facets = list(facets)
    for i, f in enumerate(facets):
        f.id = i
    edges = list(edges)
    for i, e in enumerate(edges):
        e.id = i
    arr = _facet_arrays(facets)
    bvh = _build_bvh(facets)
    arrays = GeomArrays(*arr, *bvh)
    if facets:
        allv = np.concatenate([f.vertices for f in facets])
        bounds = np.array([allv.min(axis=0), allv.max(axis=0)])
    else:
        bounds = np.zeros((2, 3))
    solids = np.zeros((0, 2, 3)) if solids is None else np.asarray(solids, float).reshape(-1, 2, 3)
    return Scene(facets, edges, bvh, bounds, solids, list(racks), spec, arrays)


def _facet_arrays(facets):
    nf = len(facets)
    maxv = max([len(f.vertices) for f in facets], default=3)
    fnormal = np.zeros((nf, 3))
    foffset = np.zeros(nf)
    fnv = np.zeros(nf, dtype=np.int64)
    fverts = np.zeros((nf, maxv, 3))
    fedge_n = np.zeros((nf, maxv, 3))
    fedge_d = np.zeros((nf, maxv))
    for i, f in enumerate(facets):
        v, n = f.vertices, f.unit_normal
        k = len(v)
        fnormal[i] = n
        foffset[i] = n @ v[0]
        fnv[i] = k
        fverts[i, :k] = v
        for j in range(k):
            en = np.cross(n, v[(j + 1) % k] - v[j])
            en /= np.linalg.norm(en)
            fedge_n[i, j] = en
            fedge_d[i, j] = en @ v[j]
    return fnormal, foffset, fnv, fverts, fedge_n, fedge_d


def _build_bvh(facets):
    nf = len(facets)
    if nf == 0:
        z = np.zeros(0, dtype=np.int64)
        return BVH(np.zeros((0, 3)), np.zeros((0, 3)), z, z, z, z, z)
    lo = np.array([f.vertices.min(axis=0) for f in facets]) - 1e-9
    hi = np.array([f.vertices.max(axis=0) for f in facets]) + 1e-9
    cen = 0.5 * (lo + hi)
    order = np.arange(nf)
    nodes = []  # [lo, hi, left, right, start, count]

    def build(start, stop):
        idx = order[start:stop]
        node = [lo[idx].min(axis=0), hi[idx].max(axis=0), -1, -1, start, stop - start]
        me = len(nodes)
        nodes.append(node)
        if stop - start <= LEAF_SIZE:
            return me
        c = cen[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        # stable sort keeps the build deterministic for ties
        order[start:stop] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = (start + stop) // 2
        node[4], node[5] = 0, 0
        node[2] = build(start, mid)
        node[3] = build(mid, stop)
        return me

    build(0, nf)
    return BVH(
        np.array([n[0] for n in nodes]),
        np.array([n[1] for n in nodes]),
        np.array([n[2] for n in nodes], dtype=np.int64),
        np.array([n[3] for n in nodes], dtype=np.int64),
        np.array([n[4] for n in nodes], dtype=np.int64),
        np.array([n[5] for n in nodes], dtype=np.int64),
        order.astype(np.int64),
    )


# ---------------------------------------------------------------- kernels

@njit(cache=True)
def inside_facet(g, f, p, tol):
    for i in range(g.fnv[f]):
        en = g.fedge_n[f, i]
        if en[0] * p[0] + en[1] * p[1] + en[2] * p[2] - g.fedge_d[f, i] < -tol:
            return False
    return True


@njit(cache=True)
def _box_hit(lo, hi, o, d, tmax):
    t0 = 0.0
    t1 = tmax
    for a in range(3):
        if abs(d[a]) < 1e-300:
            if o[a] < lo[a] or o[a] > hi[a]:
                return False
        else:
            inv = 1.0 / d[a]
            ta = (lo[a] - o[a]) * inv
            tb = (hi[a] - o[a]) * inv
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
            if t0 > t1:
                return False
    return True


@njit(cache=True)
def nearest_hit(g, o, d, tmin, tmax):
    """Nearest facet hit with ``tmin < t < tmax``; returns (facet, t)."""
    best_f = -1
    best_t = tmax
    if g.node_lo.shape[0] == 0:
        return best_f, best_t
    stack = np.empty(128, dtype=np.int64)
    sp = 0
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(g.node_lo[node], g.node_hi[node], o, d, best_t):
            continue
        cnt = g.node_count[node]
        if cnt > 0:
            st = g.node_start[node]
            for k in range(st, st + cnt):
                f = g.order[k]
                n = g.fnormal[f]
                den = n[0] * d[0] + n[1] * d[1] + n[2] * d[2]
                if abs(den) < 1e-15:
                    continue
                t = (g.foffset[f] - (n[0] * o[0] + n[1] * o[1] + n[2] * o[2])) / den
                if t <= tmin or t >= best_t:
                    continue
                p = np.empty(3)
                p[0] = o[0] + t * d[0]
                p[1] = o[1] + t * d[1]
                p[2] = o[2] + t * d[2]
                if inside_facet(g, f, p, 1e-12):
                    best_t = t
                    best_f = f
        else:
            stack[sp] = g.node_left[node]
            stack[sp + 1] = g.node_right[node]
            sp += 2
    return best_f, best_t


@njit(cache=True)
def segment_blocked(g, p, q, eps):
    """True if any facet crosses the open segment (p, q) shrunk by ``eps``."""
    d = np.empty(3)
    d[0] = q[0] - p[0]
    d[1] = q[1] - p[1]
    d[2] = q[2] - p[2]
    length = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
    if length <= 2.0 * eps:
        return False
    d /= length
    if g.node_lo.shape[0] == 0:
        return False
    stack = np.empty(128, dtype=np.int64)
    stack[0] = 0
    sp = 1
    tmax = length - eps
    x = np.empty(3)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not _box_hit(g.node_lo[node], g.node_hi[node], p, d, tmax):
            continue
        cnt = g.node_count[node]
        if cnt > 0:
            st = g.node_start[node]
            for k in range(st, st + cnt):
                f = g.order[k]
                n = g.fnormal[f]
                den = n[0] * d[0] + n[1] * d[1] + n[2] * d[2]
                if abs(den) < 1e-15:
                    continue
                t = (g.foffset[f] - (n[0] * p[0] + n[1] * p[1] + n[2] * p[2])) / den
                if t <= eps or t >= tmax:
                    continue
                x[0] = p[0] + t * d[0]
                x[1] = p[1] + t * d[1]
                x[2] = p[2] + t * d[2]
                if inside_facet(g, f, x, 1e-12):
                    return True
        else:
            stack[sp] = g.node_left[node]
            stack[sp + 1] = g.node_right[node]
            sp += 2
    return False


# ------------------------------------------------------------- public API

@dataclass(frozen=True)
class Hit:
    facet: Facet
    distance: float
    point: np.ndarray


def intersect_ray(scene, origin, direction):
    """Nearest intersection of a ray with the scene, or ``None``."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    f, t = nearest_hit(scene.arrays, o, d, HIT_EPS, np.inf)
    if f < 0:
        return None
    return Hit(scene.facets[f], float(t), o + t * d)


def segment_clear(scene, p, q, eps=HIT_EPS):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.array_equal(p, q):
        raise ValueError("segment endpoints coincide")
    return not segment_blocked(scene.arrays, p, q, eps)


def mirror_point(p, plane):
    """Reflect ``p`` across a plane (a :class:`Plane` or a :class:`Facet`)."""
    if isinstance(plane, Facet):
        plane = plane.plane
    n = np.asarray(plane.normal, dtype=float)
    p = np.asarray(p, dtype=float)
    return p - 2.0 * (n @ p - plane.offset) * n


# ------------------------------------------------------------- generation

_BOX_FACES = {
    # name: (axis, side)
    "xmin": (0, 0), "xmax": (0, 1),
    "ymin": (1, 0), "ymax": (1, 1),
    "zmin": (2, 0), "zmax": (2, 1),
}


def box_facets(lo, hi, material, faces=tuple(_BOX_FACES)):
    """Outward-facing rectangular facets of an axis-aligned box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    out = {}
    for name in faces:
        axis, side = _BOX_FACES[name]
        u, v = [a for a in range(3) if a != axis]
        c = hi[axis] if side else lo[axis]
        corners = []
        for cu, cv in ((lo[u], lo[v]), (hi[u], lo[v]), (hi[u], hi[v]), (lo[u], hi[v])):
            p = np.zeros(3)
            p[axis], p[u], p[v] = c, cu, cv
            corners.append(p)
        n = np.zeros(3)
        n[axis] = 1.0 if side else -1.0
        out[name] = Facet(np.array(corners), n, material)
    return out


def box_edges(faces, min_length=MIN_EDGE_LENGTH, vertical=True):
    """90-degree wedge edges between pairs of present, adjacent box faces."""
    edges = []
    names = list(_BOX_FACES)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            if a not in faces or b not in faces:
                continue
            if _BOX_FACES[a][0] == _BOX_FACES[b][0]:
                continue
            if not vertical and 2 not in (_BOX_FACES[a][0], _BOX_FACES[b][0]):
                continue
            fa, fb = faces[a], faces[b]
            shared = [v for v in fa.vertices
                      if np.any(np.all(np.abs(fb.vertices - v) < 1e-12, axis=1))]
            if len(shared) != 2:
                continue
            if np.linalg.norm(shared[1] - shared[0]) < min_length:
                continue
            edges.append(WedgeEdge(np.array(shared), fa, fb, 1.5))
    return edges


def _place_racks(spec, rng):
    fx, fy = spec.rack_footprint
    g = spec.inter_rack_gap
    racks = []
    for cx0, cy0, cx1, cy1 in spec.cluster_rects():
        placed = []
        for _ in range(spec.racks_per_cluster):
            for _attempt in range(PLACEMENT_ATTEMPTS):
                x0 = float(rng.uniform(cx0, cx1 - fx))
                y0 = float(rng.uniform(cy0, cy1 - fy))
                if all(max(x0 - (px + fx), px - (x0 + fx),
                           y0 - (py + fy), py - (y0 + fy)) >= g
                       for px, py in placed):
                    placed.append((x0, y0))
                    break
            else:
                raise PackingFailed(
                    f"could not place rack {len(placed) + 1} in cluster "
                    f"after {PLACEMENT_ATTEMPTS} attempts")
        racks.extend(placed)
    return racks


def rack_geometry(x0, y0, spec):
    """Facets, wedge edges and solid boxes of one stratified rack."""
    fx, fy = spec.rack_footprint
    t = spec.plate_thickness
    plate_mat = spec.rack_material.with_roughness(spec.rack_roughness)
    item_mat = spec.item_material.with_roughness(spec.rack_roughness)
    facets, edges, solids = [], [], []
    top = (spec.layer_count - 1) * spec.layer_pitch + t
    if spec.has_items and spec.slab_height > 0:
        top += spec.slab_height
    for layer in range(spec.layer_count):
        z0 = layer * spec.layer_pitch
        plate_faces = ["xmin", "xmax", "ymin", "ymax"]
        if z0 > 0:
            plate_faces.append("zmin")
        if not spec.has_items:
            plate_faces.append("zmax")
        lo, hi = (x0, y0, z0), (x0 + fx, y0 + fy, z0 + t)
        pf = box_facets(lo, hi, plate_mat, plate_faces)
        facets.extend(pf.values())
        edges.extend(box_edges(pf))
        if layer == 0:
            # corner uprights make each rack corner one continuous wedge
            for fa, fb, cx, cy in (("xmin", "ymin", x0, y0), ("xmax", "ymin", x0 + fx, y0),
                                   ("xmax", "ymax", x0 + fx, y0 + fy),
                                   ("xmin", "ymax", x0, y0 + fy)):
                edges.append(WedgeEdge(np.array([[cx, cy, 0.0], [cx, cy, top]]),
                                       pf[fa], pf[fb], 1.5))
        solids.append((lo, hi))
        if spec.has_items and spec.slab_height > 0:
            lo, hi = (x0, y0, z0 + t), (x0 + fx, y0 + fy, z0 + t + spec.slab_height)
            sf = box_facets(lo, hi, item_mat, ("xmin", "xmax", "ymin", "ymax", "zmax"))
            facets.extend(sf.values())
            if layer == spec.layer_count - 1:
                # the top rim closes the loaded rack's silhouette; rims of
                # the slabs inside the stack are not diffracting edges
                edges.extend(box_edges(sf, vertical=False))
            solids.append((lo, hi))
    return facets, edges, solids


def generate_warehouse(spec):
    """Build the stratified-rack warehouse scene for ``spec``.

    Rack corners are drawn uniformly inside each cluster rectangle from a
    PCG64 generator seeded with ``spec.rng_seed`` and rejection-sampled
    against the inter-rack clearance, so the scene is a pure function of
    ``spec``.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.rng_seed))
    floor = Facet(np.array([[0, 0, 0], [spec.area_x, 0, 0],
                            [spec.area_x, spec.area_y, 0], [0, spec.area_y, 0]], float),
                  np.array([0.0, 0.0, 1.0]), spec.floor_material)
    facets, edges, solids = [floor], [], []
    racks = []
    if spec.cluster_count > 0 and spec.racks_per_cluster > 0 and spec.layer_count > 0:
        racks = _place_racks(spec, rng)
    for x0, y0 in racks:
        f, e, s = rack_geometry(x0, y0, spec)
        facets.extend(f)
        edges.extend(e)
        solids.extend(s)
    return make_scene(facets, edges, solids, racks, spec)
