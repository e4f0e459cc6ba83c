"""Deterministic multipath search and path amplitude evaluation.

Specular paths come from an image tree grown once per transmitter: each
node mirrors its parent's image source across a facet, and a child is only
kept if the facet intersects the parent's reflected beam (the pyramid from
the image source through the clipped aperture). A receiver then
back-traces every node. Diffraction uses the closed-form Keller point on
each straight edge, optionally combined with one reflection before or
after the edge through the same image construction.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numba import njit

from . import em
from .geometry import inside_facet, segment_blocked

REFLECTION = 1
DIFFRACTION = 2

ON_FACET_TOL = 1e-9
LEG_EPS = 1e-9
MAX_APERTURE = 48


@dataclass(frozen=True)
class TracerConfig:
    max_reflections: int = 4
    enable_diffraction: bool = True
    max_reflections_with_diffraction: int = 1
    path_loss_budget_db: float = 90.0

    def __post_init__(self):
        if self.max_reflections < 0:
            raise ValueError("max_reflections must be >= 0")
        if self.max_reflections_with_diffraction not in (0, 1):
            raise ValueError("max_reflections_with_diffraction must be 0 or 1")
        if not self.path_loss_budget_db > 0:
            raise ValueError("path loss budget must be positive")

    def max_length(self, f_center):
        """Longest unfolded path whose spreading loss stays within budget + 10 dB."""
        lam = em.C0 / f_center
        return lam / (4.0 * math.pi) * 10.0 ** ((self.path_loss_budget_db + 10.0) / 20.0)


@dataclass(frozen=True)
class Interaction:
    kind: str  # "reflection" or "diffraction"
    ref: object  # Facet or WedgeEdge
    point: np.ndarray


@dataclass(eq=False)
class PropagationPath:
    tx: np.ndarray
    rx: np.ndarray
    interactions: list
    total_length: float
    amplitude: dict = field(default_factory=dict)

    @property
    def delay(self):
        return self.total_length / em.C0

    @property
    def key(self):
        return tuple((i.kind[0], i.ref.id) for i in self.interactions)

    @property
    def points(self):
        return [self.tx] + [i.point for i in self.interactions] + [self.rx]

    def reversed(self):
        return PropagationPath(self.rx, self.tx, self.interactions[::-1], self.total_length)


class EdgeArrays(NamedTuple):
    p0: np.ndarray
    direction: np.ndarray
    length: np.ndarray
    n: np.ndarray
    tangent_a: np.ndarray
    normal_a: np.ndarray


class ImageTree(NamedTuple):
    facet: np.ndarray
    parent: np.ndarray
    depth: np.ndarray
    image: np.ndarray
    # first-order nodes and, per first-order node, edges inside its beam
    first: np.ndarray
    first_edge_ptr: np.ndarray
    first_edges: np.ndarray
    # per facet, edges with a part in front of it (post-reflection candidates)
    facet_edge_ptr: np.ndarray
    facet_edges: np.ndarray


def edge_arrays(scene):
    m = len(scene.edges)
    p0 = np.zeros((m, 3))
    dr = np.zeros((m, 3))
    ln = np.zeros(m)
    n = np.zeros(m)
    ta = np.zeros((m, 3))
    na = np.zeros((m, 3))
    for i, e in enumerate(scene.edges):
        p0[i] = e.endpoints[0]
        dr[i] = e.direction
        ln[i] = e.length
        n[i] = e.exterior_wedge_index_n
        ta[i] = e.tangent_a
        na[i] = e.face_a.unit_normal
    return EdgeArrays(p0, dr, ln, n, ta, na)


# --------------------------------------------------------------- helpers

@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _norm(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit(cache=True)
def _mirror(g, f, p):
    n = g.fnormal[f]
    k = 2.0 * (_dot(n, p) - g.foffset[f])
    out = np.empty(3)
    out[0] = p[0] - k * n[0]
    out[1] = p[1] - k * n[1]
    out[2] = p[2] - k * n[2]
    return out


@njit(cache=True)
def _signed(g, f, p):
    return _dot(g.fnormal[f], p) - g.foffset[f]


@njit(cache=True)
def _clip(poly, npoly, pn, pd, out):
    """Keep the part of a convex polygon with pn.x - pd >= 0."""
    m = 0
    for i in range(npoly):
        a = poly[i]
        b = poly[(i + 1) % npoly]
        da = _dot(pn, a) - pd
        db = _dot(pn, b) - pd
        if da >= 0:
            if m >= out.shape[0]:
                return -1
            out[m] = a
            m += 1
        if (da >= 0) != (db >= 0):
            t = da / (da - db)
            if m >= out.shape[0]:
                return -1
            out[m] = a + t * (b - a)
            m += 1
    return m


@njit(cache=True)
def _poly_area(poly, m):
    if m < 3:
        return 0.0
    acc = np.zeros(3)
    for i in range(1, m - 1):
        acc += _cross(poly[i] - poly[0], poly[i + 1] - poly[0])
    return 0.5 * _norm(acc)


@njit(cache=True)
def _beam_clip(g, src, ap, nap, parent_facet, poly, npoly, work_a, work_b):
    """Clip ``poly`` to the beam from ``src`` through aperture ``ap``.

    Returns the vertex count of the clipped polygon (left in work_a), or 0.
    """
    for i in range(npoly):
        work_a[i] = poly[i]
    m = npoly
    # beyond the aperture plane
    m = _clip(work_a, m, g.fnormal[parent_facet], g.foffset[parent_facet] + 1e-12, work_b)
    if m < 3:
        return 0
    work_a[:m] = work_b[:m]
    c = np.zeros(3)
    for i in range(nap):
        c += ap[i]
    c /= nap
    for i in range(nap):
        a = ap[i] - src
        b = ap[(i + 1) % nap] - src
        pn = _cross(a, b)
        s = _norm(pn)
        if s < 1e-300:
            continue
        pn /= s
        if _dot(pn, c - src) < 0:
            pn = -pn
        m = _clip(work_a, m, pn, _dot(pn, src), work_b)
        if m < 3:
            return 0
        work_a[:m] = work_b[:m]
    if _poly_area(work_a, m) < 1e-14:
        return 0
    return m


@njit(cache=True)
def _segment_in_beam(src, ap, nap, pn_parent, pd_parent, a, b):
    """True if part of segment ab lies inside the beam (conservative clip)."""
    ta = 0.0
    tb = 1.0
    planes_n = np.empty((nap + 1, 3))
    planes_d = np.empty(nap + 1)
    planes_n[0] = pn_parent
    planes_d[0] = pd_parent
    c = np.zeros(3)
    for i in range(nap):
        c += ap[i]
    c /= nap
    k = 1
    for i in range(nap):
        pn = _cross(ap[i] - src, ap[(i + 1) % nap] - src)
        s = _norm(pn)
        if s < 1e-300:
            continue
        pn /= s
        if _dot(pn, c - src) < 0:
            pn = -pn
        planes_n[k] = pn
        planes_d[k] = _dot(pn, src)
        k += 1
    d = b - a
    for i in range(k):
        da = _dot(planes_n[i], a) - planes_d[i]
        dd = _dot(planes_n[i], d)
        if abs(dd) < 1e-300:
            if da < 0:
                return False
            continue
        t = -da / dd
        if dd > 0:
            if t > ta:
                ta = t
        else:
            if t < tb:
                tb = t
        if ta > tb + 1e-12:
            return False
    return True


# ------------------------------------------------------------ image tree

@njit(cache=True)
def _grow_tree(g, tx, max_order, max_len):
    nf = g.fnormal.shape[0]
    cap = 1024
    node_facet = np.empty(cap, dtype=np.int64)
    node_parent = np.empty(cap, dtype=np.int64)
    node_depth = np.empty(cap, dtype=np.int64)
    node_image = np.empty((cap, 3))
    count = 0
    if max_order == 0 or nf == 0:
        return node_facet[:0], node_parent[:0], node_depth[:0], node_image[:0], 0

    ap = np.empty((max_order + 1, MAX_APERTURE, 3))
    ap_n = np.zeros(max_order + 1, dtype=np.int64)
    level_node = np.full(max_order + 1, -1, dtype=np.int64)
    level_img = np.empty((max_order + 1, 3))
    level_iter = np.zeros(max_order + 1, dtype=np.int64)
    work_a = np.empty((MAX_APERTURE, 3))
    work_b = np.empty((MAX_APERTURE, 3))
    poly = np.empty((g.fverts.shape[1], 3))
    level_img[0] = tx
    overflow = 0

    depth = 0
    while depth >= 0:
        if depth == max_order or level_iter[depth] >= nf:
            depth -= 1
            continue
        f = level_iter[depth]
        level_iter[depth] += 1
        parent = level_node[depth]
        src = level_img[depth]
        pf = -1
        if parent >= 0:
            pf = node_facet[parent]
            if pf == f:
                continue
        if _signed(g, f, src) <= 1e-9:
            continue
        nv = g.fnv[f]
        for i in range(nv):
            poly[i] = g.fverts[f, i]
        if parent < 0:
            m = nv
            for i in range(nv):
                work_a[i] = poly[i]
        else:
            m = _beam_clip(g, src, ap[depth], ap_n[depth], pf, poly, nv, work_a, work_b)
            if m == 0:
                continue
            if m < 0:
                overflow += 1
                continue
        img = _mirror(g, f, src)
        # spreading-only budget: the path is at least as long as the image
        # source's distance to the facet plane
        if abs(_signed(g, f, img)) > max_len:
            continue
        if count == cap:
            cap *= 2
            nfc = np.empty(cap, dtype=np.int64)
            nfc[:count] = node_facet[:count]
            node_facet = nfc
            npc = np.empty(cap, dtype=np.int64)
            npc[:count] = node_parent[:count]
            node_parent = npc
            ndc = np.empty(cap, dtype=np.int64)
            ndc[:count] = node_depth[:count]
            node_depth = ndc
            nic = np.empty((cap, 3))
            nic[:count] = node_image[:count]
            node_image = nic
        node_facet[count] = f
        node_parent[count] = parent
        node_depth[count] = depth + 1
        node_image[count] = img
        depth += 1
        level_node[depth] = count
        level_img[depth] = img
        level_iter[depth] = 0
        ap[depth, :m] = work_a[:m]
        ap_n[depth] = m
        count += 1
    return (node_facet[:count], node_parent[:count], node_depth[:count],
            node_image[:count], overflow)


@njit(cache=True)
def _edge_candidates(g, ea, tx, node_facet, node_image, first):
    """CSR lists of edges inside each first-order beam, and in front of each facet."""
    ne = ea.p0.shape[0]
    nf = g.fnormal.shape[0]
    nfirst = first.shape[0]
    ptr1 = np.zeros(nfirst + 1, dtype=np.int64)
    buf1 = np.empty(max(1, nfirst * ne), dtype=np.int64)
    k = 0
    work_a = np.empty((g.fverts.shape[1], 3))
    for i in range(nfirst):
        node = first[i]
        f = node_facet[node]
        nv = g.fnv[f]
        for j in range(nv):
            work_a[j] = g.fverts[f, j]
        for e in range(ne):
            a = ea.p0[e]
            b = ea.p0[e] + ea.length[e] * ea.direction[e]
            if _segment_in_beam(node_image[node], work_a, nv, g.fnormal[f],
                                g.foffset[f] + 1e-12, a, b):
                buf1[k] = e
                k += 1
        ptr1[i + 1] = k
    edges1 = buf1[:k].copy()

    ptr2 = np.zeros(nf + 1, dtype=np.int64)
    buf2 = np.empty(max(1, nf * ne), dtype=np.int64)
    k = 0
    for f in range(nf):
        for e in range(ne):
            a = ea.p0[e]
            b = ea.p0[e] + ea.length[e] * ea.direction[e]
            if _signed(g, f, a) > 1e-9 or _signed(g, f, b) > 1e-9:
                buf2[k] = e
                k += 1
        ptr2[f + 1] = k
    return ptr1, edges1, ptr2, buf2[:k].copy()


def build_image_tree(scene, tx, cfg, f_center=3.994e9):
    g = scene.arrays
    tx = np.asarray(tx, dtype=float)
    facet, parent, depth, image, overflow = _grow_tree(
        g, tx, int(cfg.max_reflections), cfg.max_length(f_center))
    if overflow:
        raise RuntimeError("beam aperture exceeded its vertex capacity")
    first = np.flatnonzero(depth == 1).astype(np.int64)
    ea = edge_arrays(scene)
    if cfg.enable_diffraction and cfg.max_reflections_with_diffraction > 0 and len(scene.edges):
        ptr1, e1, ptr2, e2 = _edge_candidates(g, ea, tx, facet, image, first)
    else:
        ptr1 = np.zeros(len(first) + 1, dtype=np.int64)
        ptr2 = np.zeros(len(scene.facets) + 1, dtype=np.int64)
        e1 = e2 = np.zeros(0, dtype=np.int64)
    return ImageTree(facet, parent, depth, image, first, ptr1, e1, ptr2, e2), ea


# ------------------------------------------------------------ path search

@njit(cache=True)
def _plane_cross(g, f, a, b, out):
    """Where segment a->b crosses facet f's plane (a in front, b behind).

    Writes the point into ``out`` and returns t in (0, 1), or -1.
    """
    n = g.fnormal[f]
    da = n[0] * a[0] + n[1] * a[1] + n[2] * a[2] - g.foffset[f]
    db = n[0] * b[0] + n[1] * b[1] + n[2] * b[2] - g.foffset[f]
    if da <= 0 or db >= 0:
        return -1.0
    t = da / (da - db)
    out[0] = a[0] + t * (b[0] - a[0])
    out[1] = a[1] + t * (b[1] - a[1])
    out[2] = a[2] + t * (b[2] - a[2])
    return t


@njit(cache=True)
def _keller(ea, e, a, b, out):
    """Keller (least path length) point on edge e between a and b.

    Writes the point into ``out`` and returns its parameter along the
    edge; NaN when both a and b lie on the edge line.
    """
    p0 = ea.p0[e]
    d = ea.direction[e]
    ax = a[0] - p0[0]
    ay = a[1] - p0[1]
    az = a[2] - p0[2]
    bx = b[0] - p0[0]
    by = b[1] - p0[1]
    bz = b[2] - p0[2]
    ta = ax * d[0] + ay * d[1] + az * d[2]
    tb = bx * d[0] + by * d[1] + bz * d[2]
    ax -= ta * d[0]
    ay -= ta * d[1]
    az -= ta * d[2]
    bx -= tb * d[0]
    by -= tb * d[1]
    bz -= tb * d[2]
    da = math.sqrt(ax * ax + ay * ay + az * az)
    db = math.sqrt(bx * bx + by * by + bz * bz)
    if da + db < 1e-12:
        return np.nan
    t = ta + (tb - ta) * da / (da + db)
    out[0] = p0[0] + t * d[0]
    out[1] = p0[1] + t * d[1]
    out[2] = p0[2] + t * d[2]
    return t


@njit(cache=True)
def _exterior(ea, e, q, pt):
    """Is q strictly inside the exterior wedge of edge e, seen from pt on it?"""
    d = ea.direction[e]
    vx = q[0] - pt[0]
    vy = q[1] - pt[1]
    vz = q[2] - pt[2]
    k = vx * d[0] + vy * d[1] + vz * d[2]
    vx -= k * d[0]
    vy -= k * d[1]
    vz -= k * d[2]
    if vx * vx + vy * vy + vz * vz < 1e-24:
        return False
    ta = ea.tangent_a[e]
    na = ea.normal_a[e]
    phi = math.atan2(vx * na[0] + vy * na[1] + vz * na[2],
                     vx * ta[0] + vy * ta[1] + vz * ta[2])
    if phi < 0:
        phi += 2.0 * math.pi
    return 1e-9 < phi < ea.n[e] * math.pi - 1e-9


@njit(cache=True)
def _dist(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


@njit(cache=True)
def _legs_clear(g, pts, npts):
    for i in range(npts - 1):
        if segment_blocked(g, pts[i], pts[i + 1], LEG_EPS):
            return False
    return True


@njit(cache=True)
def trace_point(g, tree, ea, tx, rx, use_diffraction, refl_with_diff, max_len,
                out_kind, out_id, out_pts, out_n, out_len):
    """Find all valid paths tx -> rx; returns the path count or -1 on overflow."""
    cap = out_kind.shape[0]
    maxi = out_kind.shape[1]
    npath = 0
    pts = np.empty((maxi + 2, 3))
    chain = np.empty(maxi + 1, dtype=np.int64)
    dp = np.empty(3)
    rp = np.empty(3)
    rimg = np.empty(3)

    # line of sight
    d_los = _dist(rx, tx)
    if d_los <= max_len and not segment_blocked(g, tx, rx, LEG_EPS):
        if npath >= cap:
            return -1
        out_n[npath] = 0
        out_len[npath] = d_los
        npath += 1

    # specular paths from the image tree
    nnode = tree.facet.shape[0]
    for node in range(nnode):
        f = tree.facet[node]
        if _signed(g, f, rx) <= 1e-9:
            continue
        unfolded = _dist(rx, tree.image[node])
        if unfolded > max_len:
            continue
        k = tree.depth[node]
        cur = node
        for i in range(k):
            chain[k - 1 - i] = cur
            cur = tree.parent[cur]
        ok = True
        b = rx
        for i in range(k - 1, -1, -1):
            nd = chain[i]
            t = _plane_cross(g, tree.facet[nd], b, tree.image[nd], pts[i + 1])
            if t <= 0.0 or t >= 1.0 or not inside_facet(g, tree.facet[nd], pts[i + 1], ON_FACET_TOL):
                ok = False
                break
            b = pts[i + 1]
        if not ok:
            continue
        # the previous point must see the facet's front side
        for i in range(1, k):
            if _signed(g, tree.facet[chain[i - 1]], pts[i + 1]) <= 1e-9:
                ok = False
                break
        if not ok or _signed(g, tree.facet[chain[0]], tx) <= 1e-9:
            continue
        pts[0] = tx
        pts[k + 1] = rx
        if not _legs_clear(g, pts, k + 2):
            continue
        if npath >= cap:
            return -1
        for i in range(k):
            out_kind[npath, i] = REFLECTION
            out_id[npath, i] = tree.facet[chain[i]]
            out_pts[npath, i] = pts[i + 1]
        out_n[npath] = k
        out_len[npath] = unfolded
        npath += 1

    if not use_diffraction:
        return npath

    ne = ea.p0.shape[0]
    # single diffraction
    for e in range(ne):
        t = _keller(ea, e, tx, rx, dp)
        if not (1e-9 < t < ea.length[e] - 1e-9):
            continue
        if not (_exterior(ea, e, tx, dp) and _exterior(ea, e, rx, dp)):
            continue
        total = _dist(dp, tx) + _dist(rx, dp)
        if total > max_len:
            continue
        pts[0] = tx
        pts[1] = dp
        pts[2] = rx
        if not _legs_clear(g, pts, 3):
            continue
        if npath >= cap:
            return -1
        out_kind[npath, 0] = DIFFRACTION
        out_id[npath, 0] = e
        out_pts[npath, 0] = dp
        out_n[npath] = 1
        out_len[npath] = total
        npath += 1

    if refl_with_diff < 1:
        return npath

    # reflection then diffraction
    for i in range(tree.first.shape[0]):
        node = tree.first[i]
        f = tree.facet[node]
        img = tree.image[node]
        for j in range(tree.first_edge_ptr[i], tree.first_edge_ptr[i + 1]):
            e = tree.first_edges[j]
            t = _keller(ea, e, img, rx, dp)
            if not (1e-9 < t < ea.length[e] - 1e-9):
                continue
            if not _exterior(ea, e, rx, dp):
                continue
            tr = _plane_cross(g, f, dp, img, rp)
            if tr <= 0.0 or tr >= 1.0 or not inside_facet(g, f, rp, ON_FACET_TOL):
                continue
            if not _exterior(ea, e, rp, dp):
                continue
            total = _dist(dp, img) + _dist(rx, dp)
            if total > max_len:
                continue
            pts[0] = tx
            pts[1] = rp
            pts[2] = dp
            pts[3] = rx
            if not _legs_clear(g, pts, 4):
                continue
            if npath >= cap:
                return -1
            out_kind[npath, 0] = REFLECTION
            out_id[npath, 0] = f
            out_pts[npath, 0] = rp
            out_kind[npath, 1] = DIFFRACTION
            out_id[npath, 1] = e
            out_pts[npath, 1] = dp
            out_n[npath] = 2
            out_len[npath] = total
            npath += 1

    # diffraction then reflection
    nf = g.fnormal.shape[0]
    for f in range(nf):
        if _signed(g, f, rx) <= 1e-9:
            continue
        n = g.fnormal[f]
        kk = 2.0 * (n[0] * rx[0] + n[1] * rx[1] + n[2] * rx[2] - g.foffset[f])
        rimg[0] = rx[0] - kk * n[0]
        rimg[1] = rx[1] - kk * n[1]
        rimg[2] = rx[2] - kk * n[2]
        for j in range(tree.facet_edge_ptr[f], tree.facet_edge_ptr[f + 1]):
            e = tree.facet_edges[j]
            t = _keller(ea, e, tx, rimg, dp)
            if not (1e-9 < t < ea.length[e] - 1e-9):
                continue
            tr = _plane_cross(g, f, dp, rimg, rp)
            if tr <= 0.0 or tr >= 1.0 or not inside_facet(g, f, rp, ON_FACET_TOL):
                continue
            if not (_exterior(ea, e, tx, dp) and _exterior(ea, e, rp, dp)):
                continue
            total = _dist(dp, tx) + _dist(rimg, dp)
            if total > max_len:
                continue
            pts[0] = tx
            pts[1] = dp
            pts[2] = rp
            pts[3] = rx
            if not _legs_clear(g, pts, 4):
                continue
            if npath >= cap:
                return -1
            out_kind[npath, 0] = DIFFRACTION
            out_id[npath, 0] = e
            out_pts[npath, 0] = dp
            out_kind[npath, 1] = REFLECTION
            out_id[npath, 1] = f
            out_pts[npath, 1] = rp
            out_n[npath] = 2
            out_len[npath] = total
            npath += 1
    return npath


# ---------------------------------------------------------- path amplitude

class RadioArrays(NamedTuple):
    """Per-frequency material constants and antenna descriptors."""

    freqs: np.ndarray
    facet_mat: np.ndarray
    mat_eps: np.ndarray  # (materials, freqs) complex
    mat_pec: np.ndarray
    mat_rough: np.ndarray
    tx_code: int
    tx_axis: np.ndarray
    rx_code: int
    rx_axis: np.ndarray


def radio_arrays(scene, freqs, tx_antenna, rx_antenna):
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    mats = scene.materials
    index = {m: i for i, m in enumerate(mats)}
    facet_mat = np.array([index[f.material] for f in scene.facets], dtype=np.int64)
    mat_eps = np.zeros((max(1, len(mats)), len(freqs)), dtype=complex)
    mat_pec = np.zeros(max(1, len(mats)), dtype=np.bool_)
    mat_rough = np.zeros(max(1, len(mats)))
    for i, m in enumerate(mats):
        mat_pec[i] = m.is_pec
        mat_rough[i] = m.roughness_rms
        if not m.is_pec:
            for j, f in enumerate(freqs):
                mat_eps[i, j] = em.complex_permittivity(m, f).value
    return RadioArrays(
        freqs, facet_mat, mat_eps, mat_pec, mat_rough,
        em.PATTERN_CODES[tx_antenna.pattern], np.asarray(tx_antenna.polarization, float),
        em.PATTERN_CODES[rx_antenna.pattern], np.asarray(rx_antenna.polarization, float))


@njit(cache=True)
def _cdot(e, v):
    return e[0] * v[0] + e[1] * v[1] + e[2] * v[2]


@njit(cache=True)
def _unit(v):
    return v / _norm(v)


@njit(cache=True)
def _perp(n):
    t = np.array([1.0, 0.0, 0.0])
    if abs(n[0]) > 0.9:
        t = np.array([0.0, 1.0, 0.0])
    t = t - _dot(t, n) * n
    return _unit(t)


@njit(cache=True)
def reflect_field(E, din, dout, normal, gs, gp):
    """Apply s/p reflection coefficients to a complex field vector."""
    s = _cross(din, normal)
    if _norm(s) < 1e-12:
        s = _perp(normal)
    else:
        s = _unit(s)
    p_in = _cross(s, din)
    p_out = _cross(s, dout)
    es = _cdot(E, s)
    ep = _cdot(E, p_in)
    out = np.empty(3, dtype=np.complex128)
    for i in range(3):
        out[i] = gs * es * s[i] + gp * ep * p_out[i]
    return out


@njit(cache=True)
def diffract_field(E, din, dout, edir, ds, dh):
    """Apply the UTD dyadic (soft along beta, hard along phi) to a field vector."""
    phi_i = _cross(edir, din)
    phi_i = -phi_i / _norm(phi_i)
    beta_i = _cross(din, phi_i)
    phi_d = _cross(edir, dout)
    phi_d = phi_d / _norm(phi_d)
    beta_d = _cross(dout, phi_d)
    eb = _cdot(E, beta_i)
    ef = _cdot(E, phi_i)
    out = np.empty(3, dtype=np.complex128)
    for i in range(3):
        out[i] = -ds * eb * beta_d[i] - dh * ef * phi_d[i]
    return out


class LocalInteractions(NamedTuple):
    """Per-interaction constants of one path, as consumed by the amplitude kernel."""

    normal: np.ndarray  # (m, 3) facet normals (reflections)
    eps: np.ndarray  # (m, nfreq) complex permittivity
    pec: np.ndarray
    rough: np.ndarray
    edir: np.ndarray  # (m, 3) edge directions (diffractions)
    tangent_a: np.ndarray
    normal_a: np.ndarray
    n: np.ndarray


def local_buffers(m, nfreq):
    return LocalInteractions(np.zeros((m, 3)), np.zeros((m, nfreq), dtype=np.complex128),
                             np.zeros(m, dtype=np.bool_), np.zeros(m), np.zeros((m, 3)),
                             np.zeros((m, 3)), np.zeros((m, 3)), np.zeros(m))


@njit(cache=True)
def _fill_local(g, ea, ra, kinds, ids, nint, loc):
    for i in range(nint):
        if kinds[i] == REFLECTION:
            f = ids[i]
            m = ra.facet_mat[f]
            loc.normal[i] = g.fnormal[f]
            loc.eps[i] = ra.mat_eps[m]
            loc.pec[i] = ra.mat_pec[m]
            loc.rough[i] = ra.mat_rough[m]
        else:
            e = ids[i]
            loc.edir[i] = ea.direction[e]
            loc.tangent_a[i] = ea.tangent_a[e]
            loc.normal_a[i] = ea.normal_a[e]
            loc.n[i] = ea.n[e]


@njit(cache=True)
def _phi_about(edir, ta, na, v):
    w = v - _dot(v, edir) * edir
    ang = math.atan2(_dot(w, na), _dot(w, ta))
    if ang < 0:
        ang += 2.0 * math.pi
    return ang


@njit(cache=True)
def path_amplitudes(ra, tx, rx, kinds, ipts, nint, loc, out):
    """Complex amplitude of one path at every frequency in ``ra.freqs``.

    The amplitude is normalized so that its squared magnitude is the
    received power per watt transmitted. Returns the unfolded length.
    """
    npts = nint + 2
    pts = np.empty((npts, 3))
    pts[0] = tx
    for i in range(nint):
        pts[i + 1] = ipts[i]
    pts[npts - 1] = rx
    dirs = np.empty((npts - 1, 3))
    seg = np.empty(npts - 1)
    for i in range(npts - 1):
        v = pts[i + 1] - pts[i]
        seg[i] = _norm(v)
        dirs[i] = v / seg[i]
    total = 0.0
    for i in range(npts - 1):
        total += seg[i]
    # unfolded lengths before/after the (single) diffraction
    s_before = total
    s_after = 0.0
    for i in range(nint):
        if kinds[i] == DIFFRACTION:
            s_before = 0.0
            for j in range(i + 1):
                s_before += seg[j]
            s_after = total - s_before
    gt, pol_t = em.pattern_gain(ra.tx_code, ra.tx_axis, dirs[0])
    gr, pol_r = em.pattern_gain(ra.rx_code, ra.rx_axis, -dirs[npts - 2])
    amp_g = math.sqrt(gt * gr)
    E = np.empty(3, dtype=np.complex128)
    for kf in range(ra.freqs.shape[0]):
        f = ra.freqs[kf]
        lam = em.C0 / f
        k = 2.0 * math.pi / lam
        for i in range(3):
            E[i] = pol_t[i]
        scale = lam / (4.0 * math.pi)
        if s_after > 0.0:
            scale *= 1.0 / s_before
        else:
            scale *= 1.0 / total
        for i in range(nint):
            din = dirs[i]
            dout = dirs[i + 1]
            if kinds[i] == REFLECTION:
                n = loc.normal[i]
                cos_t = -_dot(n, din)
                gs, gp = em.fresnel_sp(loc.eps[i, kf], loc.pec[i], cos_t)
                rho = em.rough_factor(loc.rough[i], cos_t, lam)
                E = reflect_field(E, din, dout, n, gs * rho, gp * rho)
            else:
                edir = loc.edir[i]
                sin_b = _norm(_cross(edir, din))
                phip = _phi_about(edir, loc.tangent_a[i], loc.normal_a[i], -din)
                phi = _phi_about(edir, loc.tangent_a[i], loc.normal_a[i], dout)
                L = s_before * s_after / (s_before + s_after) * sin_b * sin_b
                ds, dh = em.utd_coefficients(loc.n[i], k, L, phi, phip, sin_b)
                E = diffract_field(E, din, dout, edir, ds, dh)
                scale *= math.sqrt(s_before / (s_after * (s_before + s_after)))
        proj = _cdot(E, pol_r)
        ph = -k * total
        out[kf] = amp_g * scale * proj * complex(math.cos(ph), math.sin(ph))
    return total


@njit(cache=True, nogil=True)
def band_power_cells(g, tree, ea, ra, weights, tx, rx_pts, skip,
                     use_diffraction, refl_with_diff, max_len, cap, maxi, out):
    """Band-averaged received power (W per W transmitted) for many receivers.

    Returns 0, or -1 - i when cell i overflowed the path buffer.
    """
    nfreq = ra.freqs.shape[0]
    out_kind = np.zeros((cap, maxi), dtype=np.int64)
    out_id = np.zeros((cap, maxi), dtype=np.int64)
    out_pts = np.zeros((cap, maxi, 3))
    out_n = np.zeros(cap, dtype=np.int64)
    out_len = np.zeros(cap)
    amp = np.empty(nfreq, dtype=np.complex128)
    acc = np.empty(nfreq, dtype=np.complex128)
    loc = LocalInteractions(np.zeros((maxi, 3)), np.zeros((maxi, nfreq), dtype=np.complex128),
                            np.zeros(maxi, dtype=np.bool_), np.zeros(maxi), np.zeros((maxi, 3)),
                            np.zeros((maxi, 3)), np.zeros((maxi, 3)), np.zeros(maxi))
    for c in range(rx_pts.shape[0]):
        if skip[c]:
            out[c] = 0.0
            continue
        rx = rx_pts[c]
        npath = trace_point(g, tree, ea, tx, rx, use_diffraction, refl_with_diff,
                            max_len, out_kind, out_id, out_pts, out_n, out_len)
        if npath < 0:
            return -1 - c
        acc[:] = 0.0
        for p in range(npath):
            _fill_local(g, ea, ra, out_kind[p], out_id[p], out_n[p], loc)
            path_amplitudes(ra, tx, rx, out_kind[p], out_pts[p], out_n[p], loc, amp)
            for kf in range(nfreq):
                acc[kf] += amp[kf]
        pw = 0.0
        for kf in range(nfreq):
            pw += weights[kf] * (acc[kf].real ** 2 + acc[kf].imag ** 2)
        out[c] = pw
    return 0


# ------------------------------------------------------------- Python API

class PathFinder:
    """Path search for one transmitter position over a fixed scene."""

    def __init__(self, scene, tx, cfg=None, f_center=3.994e9):
        self.scene = scene
        self.tx = np.asarray(tx, dtype=float)
        self.cfg = cfg or TracerConfig()
        self.max_len = self.cfg.max_length(f_center)
        self.tree, self.edges = build_image_tree(scene, self.tx, self.cfg, f_center)
        self.max_interactions = max(self.cfg.max_reflections, 2, 1)
        self._cap = 256

    @property
    def use_diffraction(self):
        return bool(self.cfg.enable_diffraction and len(self.scene.edges))

    def raw(self, rx, diffraction=None):
        if diffraction is None:
            diffraction = self.use_diffraction
        rx = np.asarray(rx, dtype=float)
        while True:
            buf = (np.zeros((self._cap, self.max_interactions), dtype=np.int64),
                   np.zeros((self._cap, self.max_interactions), dtype=np.int64),
                   np.zeros((self._cap, self.max_interactions, 3)),
                   np.zeros(self._cap, dtype=np.int64),
                   np.zeros(self._cap))
            n = trace_point(self.scene.arrays, self.tree, self.edges, self.tx, rx,
                            diffraction, int(self.cfg.max_reflections_with_diffraction),
                            self.max_len, *buf)
            if n >= 0:
                return n, buf
            self._cap *= 2

    def paths(self, rx, diffraction=None):
        n, (kind, ids, pts, nint, length) = self.raw(rx, diffraction)
        rx = np.asarray(rx, dtype=float)
        out = []
        for p in range(n):
            inter = []
            for i in range(nint[p]):
                if kind[p, i] == REFLECTION:
                    inter.append(Interaction("reflection", self.scene.facets[ids[p, i]], pts[p, i].copy()))
                else:
                    inter.append(Interaction("diffraction", self.scene.edges[ids[p, i]], pts[p, i].copy()))
            out.append(PropagationPath(self.tx.copy(), rx.copy(), inter, float(length[p])))
        return out


def find_specular_paths(scene, tx, rx, cfg=None):
    """LOS plus all image-method reflection paths up to ``cfg.max_reflections``."""
    if np.array_equal(np.asarray(tx, float), np.asarray(rx, float)):
        raise ValueError("tx and rx coincide")
    cfg = cfg or TracerConfig()
    return PathFinder(scene, tx, cfg).paths(rx, diffraction=False)


def find_diffracted_paths(scene, tx, rx, cfg=None):
    """Single-edge diffraction paths, optionally with one reflection."""
    cfg = cfg or TracerConfig()
    if not cfg.enable_diffraction:
        raise ValueError("diffraction is disabled in this configuration")
    finder = PathFinder(scene, tx, cfg)
    return [p for p in finder.paths(rx, diffraction=True)
            if any(i.kind == "diffraction" for i in p.interactions)]


def find_paths(scene, tx, rx, cfg=None):
    cfg = cfg or TracerConfig()
    return PathFinder(scene, tx, cfg).paths(rx)


def _path_locals(path, ra):
    m = max(1, len(path.interactions))
    kinds = np.zeros(m, dtype=np.int64)
    pts = np.zeros((m, 3))
    loc = local_buffers(m, len(ra.freqs))
    for i, it in enumerate(path.interactions):
        pts[i] = it.point
        if it.kind == "reflection":
            kinds[i] = REFLECTION
            mat = it.ref.material
            loc.normal[i] = it.ref.unit_normal
            loc.pec[i] = mat.is_pec
            loc.rough[i] = mat.roughness_rms
            if not mat.is_pec:
                loc.eps[i] = [em.complex_permittivity(mat, f).value for f in ra.freqs]
        else:
            kinds[i] = DIFFRACTION
            e = it.ref
            loc.edir[i] = e.direction
            loc.tangent_a[i] = e.tangent_a
            loc.normal_a[i] = e.face_a.unit_normal
            loc.n[i] = e.exterior_wedge_index_n
    return kinds, pts, loc


def antenna_arrays(freqs, tx_antenna, rx_antenna):
    """RadioArrays carrying only frequencies and antenna descriptors."""
    return RadioArrays(
        np.atleast_1d(np.asarray(freqs, dtype=float)), np.zeros(0, dtype=np.int64),
        np.zeros((1, 1), dtype=complex), np.zeros(1, dtype=np.bool_), np.zeros(1),
        em.PATTERN_CODES[tx_antenna.pattern], np.asarray(tx_antenna.polarization, float),
        em.PATTERN_CODES[rx_antenna.pattern], np.asarray(rx_antenna.polarization, float))


def evaluate_path(path, f, tx_antenna, rx_antenna):
    """Complex amplitude of ``path`` at frequency ``f`` (or an array of them).

    ``|amplitude|**2`` is the received power per watt transmitted.
    """
    scalar = np.ndim(f) == 0
    ra = antenna_arrays(f, tx_antenna, rx_antenna)
    kinds, pts, loc = _path_locals(path, ra)
    out = np.empty(len(ra.freqs), dtype=complex)
    path_amplitudes(ra, np.asarray(path.tx, float), np.asarray(path.rx, float),
                    kinds, pts, len(path.interactions), loc, out)
    return complex(out[0]) if scalar else out


def evaluate_paths(paths, freqs, tx_antenna, rx_antenna):
    """Fill ``path.amplitude`` for every path; returns an (npath, nfreq) array."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    out = np.zeros((len(paths), len(freqs)), dtype=complex)
    for i, p in enumerate(paths):
        out[i] = evaluate_path(p, freqs, tx_antenna, rx_antenna)
        p.amplitude = {float(f): complex(a) for f, a in zip(freqs, out[i])}
    return out
