"""Partial-wave scattering of a plane pressure wave by a layered isotropic sphere.

Convention: time dependence ``exp(-i omega t)``, incident field
``exp(i k z) = sum (2l+1) i**l j_l(k r) P_l(cos theta)`` and scattered field
``sum s_l (2l+1) i**l h_l(k r) P_l(cos theta)`` with ``h_l = j_l + i y_l``.
The far-field amplitude is ``f(theta) = (1/(i k)) sum (2l+1) s_l P_l(cos theta)``.

Inside the stack each mode is carried as the pair ``(p, rho**-1 dp/dr)``, which
is continuous across every interface, so crossing an interface needs no
algebra.  The pair is renormalised after every layer.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .layers import LayerStack

COND_LIMIT = 1e12


@dataclass(frozen=True)
class ModalCoefficients:
    s: np.ndarray
    k: float

    @property
    def l_max(self):
        return len(self.s) - 1

    def cross_sections(self):
        """``(sigma_sc, sigma_ext)`` from the coefficient sums."""
        w = 2 * np.arange(len(self.s)) + 1
        sc = 4 * np.pi / self.k**2 * np.sum(w * np.abs(self.s) ** 2)
        ext = -4 * np.pi / self.k**2 * np.sum(w * self.s.real)
        return float(sc), float(ext)


@dataclass
class ScatteringResult:
    sigma_sc: float
    sigma_ext: float
    coefficients: ModalCoefficients
    radius: float
    theta: np.ndarray = field(default_factory=lambda: np.linspace(0, np.pi, 181))
    far_field: np.ndarray = None
    flags: set = field(default_factory=set)
    max_condition: float = 1.0

    def __post_init__(self):
        if self.far_field is None:
            self.far_field = np.abs(far_field(self.coefficients, self.theta))

    @property
    def efficiency(self):
        return self.sigma_sc / (np.pi * self.radius**2)

    def summary(self):
        return {
            "sigma_sc": self.sigma_sc,
            "sigma_ext": self.sigma_ext,
            "sigma_sc_over_pi_a2": self.efficiency,
            "radius": self.radius,
            "k0": self.coefficients.k,
            "l_max": self.coefficients.l_max,
            "flags": sorted(self.flags),
        }


def sph_bessel(l_max, x):
    """Spherical Bessel ``j_l, y_l`` and derivatives for ``l = 0..l_max``.

    ``j`` comes from Miller's downward recurrence normalised to ``j_0`` or
    ``j_1`` (whichever is larger in magnitude); ``y`` from upward recurrence.
    """
    if l_max < 0:
        raise ValueError("l_max must be non-negative")
    x = complex(x) if np.iscomplexobj(x) else float(x)
    if x == 0:
        raise ValueError("x = 0: use the small-argument limits")
    dtype = complex if isinstance(x, complex) else float
    ax = abs(x)
    start = l_max + int(ax) + 30 + int(4 * ax ** (1 / 3))
    j = np.zeros(start + 2, dtype=dtype)
    j[start + 1] = 0.0
    j[start] = 1e-300
    for l in range(start, 0, -1):
        j[l - 1] = (2 * l + 1) / x * j[l] - j[l + 1]
        if abs(j[l - 1]) > 1e250:
            j[l - 1:] *= 1e-250
    sx, cx = np.sin(x), np.cos(x)
    j0 = sx / x
    j1 = sx / x**2 - cx / x
    if abs(j0) >= abs(j1):
        j *= j0 / j[0]
    else:
        j *= j1 / j[1]
    j = j[: l_max + 2]
    y = np.zeros(l_max + 2, dtype=dtype)
    y[0] = -cx / x
    y[1] = -cx / x**2 - sx / x
    with np.errstate(over="ignore", invalid="ignore"):
        for l in range(1, l_max + 1):
            y[l + 1] = (2 * l + 1) / x * y[l] - y[l - 1]
    ls = np.arange(l_max + 1)
    jp = np.empty(l_max + 1, dtype=dtype)
    yp = np.empty(l_max + 1, dtype=dtype)
    jp[0], yp[0] = -j[1], -y[1]
    jp[1:] = j[: l_max] - (ls[1:] + 1) / x * j[1: l_max + 1]
    with np.errstate(over="ignore", invalid="ignore"):
        yp[1:] = y[: l_max] - (ls[1:] + 1) / x * y[1: l_max + 1]
    return j[: l_max + 1], y[: l_max + 1], jp, yp


def default_l_max(k0, radius):
    x = k0 * radius
    return int(np.ceil(x + 4 * x ** (1 / 3) + 8))


def rigid_sphere_coeffs(ka, l_max=None) -> ModalCoefficients:
    """``s_l = -j_l'(ka) / h_l'(ka)`` for a sound-hard sphere (``k`` set to 1/a units: ``k = ka``)."""
    if ka <= 0:
        raise ValueError("ka must be positive")
    if l_max is None:
        l_max = default_l_max(ka, 1.0)
    j, y, jp, yp = sph_bessel(l_max, ka)
    s = -jp / (jp + 1j * yp)
    return ModalCoefficients(s, float(ka))


def soft_sphere_coeffs(ka, l_max=None) -> ModalCoefficients:
    if l_max is None:
        l_max = default_l_max(ka, 1.0)
    j, y, _, _ = sph_bessel(l_max, ka)
    return ModalCoefficients(-j / (j + 1j * y), float(ka))


def _layer_step(state, k, rho, a, b, l_max):
    """Propagate ``(p, q)`` per mode across a homogeneous layer ``a -> b``.

    Returns the new state and the 2x2 layer matrices (for diagnostics).
    """
    x, X = k * a, k * b
    ja, ya, jpa, ypa = sph_bessel(l_max, x)
    jb, yb, jpb, ypb = sph_bessel(l_max, X)
    c1 = ja * yb - ya * jb
    c2 = ja * ypb - ya * jpb
    c3 = jpa * yb - ypa * jb
    c4 = jpa * ypb - ypa * jpb
    x2 = x * x
    m = np.empty((l_max + 1, 2, 2))
    m[:, 0, 0] = -x2 * c3
    m[:, 0, 1] = x2 * (rho / k) * c1
    m[:, 1, 0] = -x2 * (k / rho) * c4
    m[:, 1, 1] = x2 * c2
    if not np.all(np.isfinite(m)):
        raise FloatingPointError(
            f"Bessel cross products overflowed in layer [{a}, {b}] (k={k}); reduce l_max"
        )
    new = np.einsum("lij,lj->li", m, state)
    return new, m


def _core_state(stack: LayerStack, l_max):
    state = np.zeros((l_max + 1, 2), dtype=complex)
    if stack.core == "rigid":
        state[:, 0] = 1.0
    elif stack.core == "pressure-release":
        state[:, 1] = 1.0
    else:
        raise ValueError(f"no boundary state for core {stack.core!r}")
    return state


def layered_scatter(stack: LayerStack, k0, l_max=None, theta=None) -> ScatteringResult:
    """Plane-wave scattering by a layered sphere in a unit background (``rho = kappa = 1``).

    Layer wavenumbers are ``k_i = k0 sqrt(rho_i / kappa_i)``.
    """
    if k0 <= 0:
        raise ValueError("k0 must be positive")
    R = stack.outer_radius
    if l_max is None:
        l_max = default_l_max(k0, R)
    flags = set()
    if stack.core == "fluid":
        kc = k0 * np.sqrt(stack.core_rho / stack.core_kappa)
        jc, _, jpc, _ = sph_bessel(l_max, kc * stack.core_radius)
        state = np.stack([jc, kc / stack.core_rho * jpc], axis=1).astype(complex)
    else:
        state = _core_state(stack, l_max)
    prod = np.broadcast_to(np.eye(2), (l_max + 1, 2, 2)).copy()
    max_cond = 1.0
    for lay in stack.layers:
        if lay.rho <= 0 or lay.kappa <= 0:
            raise ValueError(f"negative material in layer {lay}")
        k = k0 * np.sqrt(lay.rho / lay.kappa)
        state, m = _layer_step(state, k, lay.rho, lay.r_in, lay.r_out, l_max)
        scale = np.abs(state[:, 0]) + np.abs(state[:, 1]) / k0
        scale[scale == 0] = 1.0
        state /= scale[:, None]
        prod = m @ prod
        nrm = np.linalg.norm(prod, axis=(1, 2))
        prod /= nrm[:, None, None]
        det = np.abs(np.linalg.det(prod))
        with np.errstate(divide="ignore"):
            cond = np.where(det > 0, 1.0 / np.maximum(det, 1e-300), np.inf)
        max_cond = max(max_cond, float(cond.max()))
    if max_cond > COND_LIMIT:
        # the cumulative transfer product is never used for the answer; the
        # renormalised state propagation stands in for scattering-matrix cascading
        flags.add("ill_conditioned_transfer")
    x0 = k0 * R
    j, y, jp, yp = sph_bessel(l_max, x0)
    h, hp = j + 1j * y, jp + 1j * yp
    P, Q = state[:, 0], state[:, 1]
    s = (P * k0 * jp - Q * j) / (Q * h - P * k0 * hp)
    coeffs = ModalCoefficients(s, float(k0))
    sc, ext = coeffs.cross_sections()
    kw = {} if theta is None else {"theta": np.asarray(theta, dtype=float)}
    return ScatteringResult(sc, ext, coeffs, R, flags=flags, max_condition=max_cond, **kw)


def rigid_sphere_scatter(radius, k0, l_max=None) -> ScatteringResult:
    return layered_scatter(LayerStack((), core="rigid", core_radius=radius), k0, l_max)


def legendre_table(l_max, mu):
    mu = np.asarray(mu, dtype=float)
    P = np.zeros((l_max + 1,) + mu.shape)
    P[0] = 1.0
    if l_max >= 1:
        P[1] = mu
    for l in range(1, l_max):
        P[l + 1] = ((2 * l + 1) * mu * P[l] - l * P[l - 1]) / (l + 1)
    return P


def far_field(coeffs: ModalCoefficients, theta):
    """Complex far-field amplitude ``f(theta)``; ``p_sc ~ f(theta) exp(i k r)/r``."""
    theta = np.asarray(theta, dtype=float)
    P = legendre_table(coeffs.l_max, np.cos(theta))
    w = (2 * np.arange(coeffs.l_max + 1) + 1) * coeffs.s
    return np.tensordot(w, P, axes=1) / (1j * coeffs.k)


def coefficients_to_csv(coeffs: ModalCoefficients):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["l", "re_s", "im_s"])
    for l, s in enumerate(coeffs.s):
        w.writerow([l, f"{s.real:.9g}", f"{s.imag:.9g}"])
    return buf.getvalue()


def summary_json(result: ScatteringResult):
    return json.dumps({k: (float(f"{v:.9g}") if isinstance(v, float) else v)
                       for k, v in result.summary().items()}, indent=2)


# ---------------------------------------------------------------------------
# Two-dimensional counterpart (used to check the FDFD solver)
# ---------------------------------------------------------------------------

def rigid_cylinder_coeffs(ka, n_max=None):
    """Cylindrical-harmonic coefficients ``b_n = -J_n'(ka)/H_n'(ka)``, ``n = 0..n_max``."""
    if n_max is None:
        n_max = default_l_max(ka, 1.0)
    n = np.arange(n_max + 1)
    return -special.jvp(n, ka) / special.h1vp(n, ka)


def rigid_cylinder_scattered(k, a, r, phi, n_max=None):
    """Scattered field of a rigid cylinder for the incident wave ``exp(i k x)``.

    ``phi`` is measured from the propagation direction.
    """
    b = rigid_cylinder_coeffs(k * a, n_max)
    r = np.asarray(r, dtype=float)
    phi = np.asarray(phi, dtype=float)
    out = np.zeros(np.broadcast(r, phi).shape, dtype=complex)
    for n, bn in enumerate(b):
        eps = 1.0 if n == 0 else 2.0
        out += eps * (1j**n) * bn * special.hankel1(n, k * r) * np.cos(n * phi)
    return out


def rigid_cylinder_width(k, a, n_max=None):
    """Scattering width (2D cross section) ``(4/k) sum eps_n |b_n|**2``."""
    b = rigid_cylinder_coeffs(k * a, n_max)
    eps = np.where(np.arange(len(b)) == 0, 1.0, 2.0)
    return float(4.0 / k * np.sum(eps * np.abs(b) ** 2))


def layered_cylinder_coeffs(stack: LayerStack, k0, n_max=None):
    """Cylindrical coefficients ``b_n`` of a layered cylinder (rigid or soft core).

    Same state propagation as the sphere, with ordinary Bessel functions.
    """
    if stack.core == "fluid":
        raise ValueError("layered cylinders support rigid or pressure-release cores")
    R = stack.outer_radius
    if n_max is None:
        n_max = default_l_max(k0, R)
    n = np.arange(n_max + 1)
    if stack.core == "rigid":
        P, Q = np.ones(n.size, dtype=complex), np.zeros(n.size, dtype=complex)
    else:
        P, Q = np.zeros(n.size, dtype=complex), np.ones(n.size, dtype=complex)
    for lay in stack.layers:
        k = k0 * np.sqrt(lay.rho / lay.kappa)
        a, b = k * lay.r_in, k * lay.r_out
        ja, ya = special.jv(n, a), special.yv(n, a)
        jpa, ypa = special.jvp(n, a) * k / lay.rho, special.yvp(n, a) * k / lay.rho
        det = ja * ypa - ya * jpa
        ca = (P * ypa - Q * ya) / det
        cb = (Q * ja - P * jpa) / det
        P = ca * special.jv(n, b) + cb * special.yv(n, b)
        Q = (ca * special.jvp(n, b) + cb * special.yvp(n, b)) * k / lay.rho
        scale = np.abs(P) + np.abs(Q)
        P, Q = P / scale, Q / scale
    x = k0 * R
    return -(P * k0 * special.jvp(n, x) - Q * special.jv(n, x)) / (
        P * k0 * special.h1vp(n, x) - Q * special.hankel1(n, x))


def layered_cylinder_width(stack: LayerStack, k0, n_max=None):
    b = layered_cylinder_coeffs(stack, k0, n_max)
    eps = np.where(np.arange(len(b)) == 0, 1.0, 2.0)
    return float(4.0 / k0 * np.sum(eps * np.abs(b) ** 2))
