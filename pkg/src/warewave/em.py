"""Electromagnetic kernels.

Complex permittivity, Fresnel reflection, rough-surface attenuation,
PEC wedge diffraction (UTD) and the antenna pattern model. Scalar kernels
are numba-compiled so the tracer can call them from its own compiled
loops; the public functions are thin wrappers around them.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateGeometry, PecMaterial
from .materials import MATERIAL_PRESETS, Material  # noqa: F401  (re-exported)

C0 = 299_792_458.0
EPS0 = 8.8541878128e-12

ISOTROPIC = "isotropic"
SHORT_DIPOLE_VERTICAL = "short_dipole_vertical"
PATTERNS = (ISOTROPIC, SHORT_DIPOLE_VERTICAL)
PATTERN_CODES = {ISOTROPIC: 0, SHORT_DIPOLE_VERTICAL: 1}


def wavelength(f):
    return C0 / f


@dataclass(frozen=True)
class ComplexPermittivity:
    """Relative permittivity stored as ``real_part - 1j * imag_part``."""

    real_part: float
    imag_part: float = 0.0

    def __post_init__(self):
        if self.imag_part < 0:
            raise ValueError("passive media need a non-negative loss term")

    @property
    def value(self):
        return complex(self.real_part, -self.imag_part)


class _PecLimit:
    def __repr__(self):
        return "PEC"


PEC_LIMIT = _PecLimit()


def complex_permittivity(m, f):
    if m.is_pec:
        raise PecMaterial(f"{m.name} is a perfect conductor")
    if not f > 0:
        raise ValueError("frequency must be positive")
    return ComplexPermittivity(m.relative_permittivity,
                               m.conductivity / (2.0 * math.pi * f * EPS0))


# --------------------------------------------------------------- Fresnel

@njit(cache=True)
def fresnel_sp(eps, is_pec, cos_t):
    """(gamma_s, gamma_p) for a half-space of relative permittivity ``eps``."""
    if is_pec:
        return complex(-1.0, 0.0), complex(1.0, 0.0)
    sin2 = 1.0 - cos_t * cos_t
    root = np.sqrt(eps - sin2 + 0j)
    if root.real < 0:
        root = -root
    gs = (cos_t - root) / (cos_t + root)
    gp = (eps * cos_t - root) / (eps * cos_t + root)
    return gs, gp


def fresnel_coefficients(eps, theta_i):
    """Fresnel coefficients at incidence angle ``theta_i`` (from the normal).

    ``eps`` is a :class:`ComplexPermittivity`, a complex number, or
    :data:`PEC_LIMIT`. Returns ``(gamma_s, gamma_p)``; the PEC limit is
    exactly ``(-1, +1)``.
    """
    if not 0.0 <= theta_i < math.pi / 2:
        raise ValueError("theta_i must lie in [0, pi/2)")
    if eps is PEC_LIMIT:
        return complex(-1.0), complex(1.0)
    if isinstance(eps, ComplexPermittivity):
        eps = eps.value
    gs, gp = fresnel_sp(complex(eps), False, math.cos(theta_i))
    return complex(gs), complex(gp)


# ------------------------------------------------------------- roughness

@njit(cache=True)
def scaled_i0(g):
    """exp(-g) * I0(g) for g >= 0."""
    if g < 50.0:
        term = 1.0
        total = 1.0
        q = 0.25 * g * g
        k = 1
        while True:
            term *= q / (k * k)
            total += term
            if term < 1e-17 * total:
                break
            k += 1
        return math.exp(-g) * total
    # large-argument expansion
    s = 1.0
    term = 1.0
    for k in range(1, 12):
        term *= (2 * k - 1) ** 2 / (8.0 * k * g)
        s += term
    return s / math.sqrt(2.0 * math.pi * g)


@njit(cache=True)
def rough_factor(sigma_h, cos_t, lam):
    if sigma_h <= 0.0:
        return 1.0
    dphi = 4.0 * math.pi * sigma_h * cos_t / lam
    return scaled_i0(0.5 * dphi * dphi)


def roughness_attenuation(sigma_h, theta_i, lam):
    """Specular reduction factor of a rough surface, in [0, 1].

    Uses ``exp(-g) I0(g)`` with ``g = (4 pi sigma_h cos(theta_i) / lam)^2 / 2``.
    """
    if sigma_h < 0 or not lam > 0:
        raise ValueError("need sigma_h >= 0 and lam > 0")
    if sigma_h == 0:
        return 1.0
    return float(rough_factor(float(sigma_h), math.cos(theta_i), float(lam)))


# ---------------------------------------------------------------- antenna

@dataclass(frozen=True)
class AntennaModel:
    position: tuple = (0.0, 0.0, 0.0)
    pattern: str = SHORT_DIPOLE_VERTICAL
    polarization: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown antenna pattern {self.pattern!r}")
        p = np.asarray(self.polarization, dtype=float)
        if abs(np.linalg.norm(p) - 1.0) > 1e-9:
            raise ValueError("polarization must be a unit vector")

    def moved(self, position):
        return AntennaModel(tuple(float(c) for c in position), self.pattern,
                            self.polarization)


@njit(cache=True)
def pattern_gain(code, axis, d):
    """Power gain and theta-hat polarization (about ``axis``) toward ``d``."""
    c = axis[0] * d[0] + axis[1] * d[1] + axis[2] * d[2]
    pol = np.empty(3)
    pol[0] = c * d[0] - axis[0]
    pol[1] = c * d[1] - axis[1]
    pol[2] = c * d[2] - axis[2]
    s = math.sqrt(pol[0] ** 2 + pol[1] ** 2 + pol[2] ** 2)
    if s < 1e-12:
        # along the axis: any transverse unit vector
        tmp = np.array([1.0, 0.0, 0.0])
        if abs(d[0]) > 0.9:
            tmp = np.array([0.0, 1.0, 0.0])
        k = tmp[0] * d[0] + tmp[1] * d[1] + tmp[2] * d[2]
        pol = tmp - k * d
    # one more projection removes the cancellation residue near the axis
    k = pol[0] * d[0] + pol[1] * d[1] + pol[2] * d[2]
    pol -= k * d
    s = math.sqrt(pol[0] ** 2 + pol[1] ** 2 + pol[2] ** 2)
    pol /= s
    if code == 0:
        return 1.0, pol
    return 1.5 * max(0.0, 1.0 - c * c), pol


def antenna_gain(a, direction):
    """Return ``(power_gain, polarization_unit_vector)`` toward ``direction``."""
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    g, pol = pattern_gain(PATTERN_CODES[a.pattern],
                          np.asarray(a.polarization, dtype=float), d)
    return float(g), pol


# -------------------------------------------------------------- diffraction

@njit(cache=True)
def fresnel_tail(u):
    """Complex tail integral of exp(1j*pi*t**2/2) from ``u >= 0`` to infinity."""
    eps = 1e-16
    if u <= 1.5:
        if u < 1e-150:
            return complex(0.5, 0.5)
        total = 0.0
        sums = 0.0
        sumc = u
        sign = 1.0
        fact = 0.5 * math.pi * u * u
        odd = True
        term = u
        n = 3
        for k in range(1, 200):
            term *= fact / k
            total += sign * term / n
            test = abs(total) * eps
            if odd:
                sign = -sign
                sums = total
                total = sumc
            else:
                sumc = total
                total = sums
            if term < test:
                break
            odd = not odd
            n += 2
        return complex(0.5 - sumc, 0.5 - sums)
    pix2 = math.pi * u * u
    b = complex(1.0, -pix2)
    cc = complex(1e300, 0.0)
    d = 1.0 / b
    h = d
    n = -1
    for k in range(2, 200):
        n += 2
        a = -n * (n + 1.0)
        b = b + 4.0
        d = 1.0 / (a * d + b)
        cc = b + a / cc
        dl = cc * d
        h = h * dl
        if abs(dl.real - 1.0) + abs(dl.imag) < eps:
            break
    h = complex(u, -u) * h
    return complex(0.5, 0.5) * complex(math.cos(0.5 * pix2), math.sin(0.5 * pix2)) * h


@njit(cache=True)
def transition_function(x):
    """Kouyoumjian-Pathak transition function F(x) for x >= 0."""
    if x <= 0.0:
        return complex(0.0, 0.0)
    sx = math.sqrt(x)
    u = sx * math.sqrt(2.0 / math.pi)
    t = fresnel_tail(u)
    # integral of exp(-j tau^2) from sqrt(x): conjugate of the +j tail
    tail = math.sqrt(0.5 * math.pi) * complex(t.real, -t.imag)
    return 2j * sx * complex(math.cos(x), math.sin(x)) * tail


@njit(cache=True)
def _cot_f(n, kl, beta, sign):
    """cot((pi + sign*beta)/(2n)) * F(kL a^sign(beta)) with the boundary limit."""
    nn = round((beta + sign * math.pi) / (2.0 * math.pi * n))
    if sign > 0:
        eps = math.pi + beta - 2.0 * math.pi * n * nn
    else:
        eps = math.pi - beta + 2.0 * math.pi * n * nn
    if abs(eps) < 1e-8:
        e4 = complex(math.cos(math.pi / 4), math.sin(math.pi / 4))
        sg = 1.0 if eps >= 0 else -1.0
        return n * (math.sqrt(2.0 * math.pi * kl) * sg - 2.0 * kl * eps * e4) * e4
    a = 2.0 * math.cos(0.5 * (2.0 * n * math.pi * nn - beta)) ** 2
    arg = (math.pi + sign * beta) / (2.0 * n)
    return (math.cos(arg) / math.sin(arg)) * transition_function(kl * a)


@njit(cache=True)
def utd_coefficients(n, k, L, phi, phip, sin_beta0):
    """Soft and hard PEC wedge diffraction coefficients (units sqrt(m))."""
    kl = k * L
    bm = phi - phip
    bp = phi + phip
    t_minus = _cot_f(n, kl, bm, 1.0) + _cot_f(n, kl, bm, -1.0)
    t_plus = _cot_f(n, kl, bp, 1.0) + _cot_f(n, kl, bp, -1.0)
    pre = -complex(math.cos(-math.pi / 4), math.sin(-math.pi / 4)) / (
        2.0 * n * math.sqrt(2.0 * math.pi * k) * sin_beta0)
    return pre * (t_minus - t_plus), pre * (t_minus + t_plus)


def utd_diffraction(edge, s_incident, s_diffracted, angles, f):
    """Soft/hard UTD coefficients for a PEC wedge.

    Parameters
    ----------
    edge : WedgeEdge
        Supplies the exterior wedge index ``n``.
    s_incident, s_diffracted : float
        Source-to-edge and edge-to-observer distances in meters.
    angles : tuple
        ``(phi_incident, phi_diffracted, beta_0)`` in radians, the first two
        measured from face A through the exterior.
    f : float
        Frequency in Hz.

    Returns
    -------
    (d_s, d_p) : complex
    """
    phip, phi, beta0 = angles
    sb = math.sin(beta0)
    if abs(sb) < 1e-12:
        raise DegenerateGeometry("ray parallel to the edge")
    n = edge.exterior_wedge_index_n if hasattr(edge, "exterior_wedge_index_n") else float(edge)
    k = 2.0 * math.pi * f / C0
    L = s_incident * s_diffracted / (s_incident + s_diffracted) * sb * sb
    ds, dh = utd_coefficients(float(n), k, L, float(phi), float(phip), sb)
    return complex(ds), complex(dh)


def wedge_angle(edge, direction):
    """Angle of ``direction`` about the edge, measured from face A."""
    e = edge.direction
    v = np.asarray(direction, dtype=float)
    v = v - (v @ e) * e
    ang = math.atan2(v @ edge.face_a.unit_normal, v @ edge.tangent_a)
    return ang % (2.0 * math.pi)
