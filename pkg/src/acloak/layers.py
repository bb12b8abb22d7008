"""Multilayer isotropic approximations of radially anisotropic cloak shells.

The design runs in two steps: the continuous shell profile is sampled into
``M`` homogeneous anisotropic sub-shells, and each sub-shell is realised by a
pair of isotropic sublayers whose homogenised (arithmetic radial, harmonic
tangential) densities reproduce it.

Two gauges are available for the shell profile.  ``"exact"`` is the
push-forward of the background through the small-ball blow-up.  ``"reduced"``
divides all three parameters by ``g(r) = alpha**2 (r/(r-beta))**2``, which
keeps both directional refractive indices and gives a constant bulk modulus
``alpha`` and constant radial density ``1/alpha``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

GAUGES = ("exact", "reduced")
CORE_KINDS = ("rigid", "pressure-release", "fluid")


class UnrealizableError(ValueError):
    """Tangential density exceeds radial density: no two-phase laminate exists."""


@dataclass(frozen=True)
class RadialProfile:
    """Radial/tangential relative densities and bulk modulus on ``[r_in, r_out]``."""

    rho_r: Callable
    rho_t: Callable
    kappa: Callable
    r_in: float
    r_out: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < self.r_in - 1e-12) or np.any(r > self.r_out + 1e-12):
            raise ValueError(f"radius outside [{self.r_in}, {self.r_out}]")
        return self.rho_r(r), self.rho_t(r), self.kappa(r)


@dataclass(frozen=True)
class Layer:
    r_in: float
    r_out: float
    rho: float
    kappa: float


@dataclass(frozen=True)
class LayerStack:
    """Concentric isotropic shells, innermost first, around a core.

    ``core`` is ``"rigid"``, ``"pressure-release"`` or ``"fluid"``; a fluid
    core fills ``r < core_radius`` with ``core_rho`` and ``core_kappa``.
    For an empty stack ``core_radius`` is the obstacle radius.
    """

    layers: tuple = ()
    core: str = "rigid"
    core_radius: float | None = None
    core_rho: float = 1.0
    core_kappa: float = 1.0

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if self.core not in CORE_KINDS:
            raise ValueError(f"core must be one of {CORE_KINDS}")
        if self.core_radius is None:
            if not layers:
                raise ValueError("an empty stack needs an explicit core_radius")
            object.__setattr__(self, "core_radius", layers[0].r_in)
        if layers and abs(layers[0].r_in - self.core_radius) > 1e-12 * max(1.0, self.core_radius):
            raise ValueError("first layer must start at the core radius")
        for a, b in zip(layers, layers[1:]):
            if abs(a.r_out - b.r_in) > 1e-12 * max(1.0, b.r_in):
                raise ValueError(f"layers are not contiguous at r={a.r_out}")
        for lay in layers:
            if not lay.r_out > lay.r_in:
                raise ValueError(f"layer radii not increasing: {lay}")
            if not (np.isfinite(lay.rho) and np.isfinite(lay.kappa)) or lay.rho <= 0 or lay.kappa <= 0:
                raise ValueError(f"layer material must be positive and finite: {lay}")
        if self.core == "fluid" and (self.core_rho <= 0 or self.core_kappa <= 0):
            raise ValueError("fluid core material must be positive")
        if self.core_radius < 0 or (self.core != "fluid" and self.core_radius == 0 and not layers):
            raise ValueError("core radius must be positive")

    @property
    def outer_radius(self):
        return self.layers[-1].r_out if self.layers else self.core_radius

    def __len__(self):
        return len(self.layers)

    def densities(self):
        return np.array([lay.rho for lay in self.layers])

    def moduli(self):
        return np.array([lay.kappa for lay in self.layers])

    def material_at(self, r):
        """``(rho, kappa)`` at radius ``r`` (background outside, core inside)."""
        r = np.asarray(r, dtype=float)
        rho = np.ones_like(r)
        kappa = np.ones_like(r)
        if self.core == "fluid":
            sel = r < self.core_radius
            rho[sel], kappa[sel] = self.core_rho, self.core_kappa
        for lay in self.layers:
            sel = (r >= lay.r_in) & (r < lay.r_out)
            rho[sel], kappa[sel] = lay.rho, lay.kappa
        return rho, kappa

    def field(self, points):
        """Isotropic ``(inv_density, bulk_modulus)`` sampler for grid solvers (2D or 3D points)."""
        points = np.asarray(points, dtype=float)
        rho, kappa = self.material_at(np.linalg.norm(points, axis=-1))
        eye = np.eye(points.shape[-1])
        return eye / rho[..., None, None], kappa


@dataclass(frozen=True)
class DesignSpec:
    r0: float
    R1: float
    R2: float
    M: int = 10
    N: int = 2
    eta: float = 1.0
    gauge: str = "reduced"
    core: str = "rigid"
    dim: int = 3

    def __post_init__(self):
        if not 0 <= self.r0 <= self.R1 < self.R2:
            raise ValueError("need 0 <= r0 <= R1 < R2")
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.N != 2:
            raise ValueError("only two-phase sublayer pairs (N=2) are supported")
        if self.eta != 1.0:
            raise ValueError("stack design uses equal sublayer thickness (eta=1)")
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")
        if self.gauge == "reduced" and self.r0 == 0:
            raise ValueError("the reduced gauge needs r0 > 0")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 (cylindrical shell) or 3 (spherical shell)")
        if self.dim == 2 and self.core == "fluid":
            raise ValueError("cylindrical designs support a rigid or pressure-release core only")


def _alpha_beta(r0, R1, R2):
    alpha = (R2 - R1) / (R2 - r0)
    beta = R2 * (R1 - r0) / (R2 - r0)
    return alpha, beta


def exact_shell_profile(r0, R1, R2, dim=3) -> RadialProfile:
    """Push-forward profile ``rho_r = alpha (r/(r-beta))**2``, ``rho_t = alpha``,
    ``kappa = alpha**3 (r/(r-beta))**2``.  ``r0 = 0`` gives the singular cloak.

    ``dim=2`` gives the cylindrical analogue ``rho_r = r/(r-beta)``,
    ``rho_t = (r-beta)/r``, ``kappa = alpha**2 r/(r-beta)``.
    """
    if not 0 <= r0 <= R1 < R2:
        raise ValueError("need 0 <= r0 <= R1 < R2")
    alpha, beta = _alpha_beta(r0, R1, R2)
    if dim == 2:
        return RadialProfile(
            rho_r=lambda r: r / (r - beta),
            rho_t=lambda r: (r - beta) / r,
            kappa=lambda r: alpha**2 * r / (r - beta),
            r_in=R1,
            r_out=R2,
        )
    if dim != 3:
        raise ValueError("dim must be 2 or 3")

    def ratio2(r):
        return (r / (r - beta)) ** 2

    return RadialProfile(
        rho_r=lambda r: alpha * ratio2(r),
        rho_t=lambda r: alpha * np.ones_like(np.asarray(r, dtype=float)),
        kappa=lambda r: alpha**3 * ratio2(r),
        r_in=R1,
        r_out=R2,
    )


def reduced_shell_profile(r0, R1, R2) -> RadialProfile:
    """Index-preserving profile ``rho_r = 1/alpha``, ``rho_t = ((r-beta)/r)**2/alpha``,
    ``kappa = alpha``."""
    if not 0 < r0 <= R1 < R2:
        raise ValueError("need 0 < r0 <= R1 < R2")
    alpha, beta = _alpha_beta(r0, R1, R2)
    const = lambda v: (lambda r: v * np.ones_like(np.asarray(r, dtype=float)))
    return RadialProfile(
        rho_r=const(1.0 / alpha),
        rho_t=lambda r: ((r - beta) / r) ** 2 / alpha,
        kappa=const(alpha),
        r_in=R1,
        r_out=R2,
    )


def shell_profile(r0, R1, R2, gauge="exact", dim=3) -> RadialProfile:
    if gauge == "exact":
        return exact_shell_profile(r0, R1, R2, dim)
    if gauge == "reduced":
        return reduced_shell_profile(r0, R1, R2)
    raise ValueError(f"unknown gauge {gauge!r}")


def effective_from_pair(rhoA, rhoB, kappaA, kappaB, eta=1.0):
    """Homogenised ``(rho_r, rho_t, kappa)`` of an A/B laminate with ``eta = d_B/d_A``.

    Radial density is the arithmetic mean, tangential density the harmonic
    mean, bulk modulus the arithmetic mean.
    """
    w = 1.0 / (1.0 + eta)
    rho_r = w * (rhoA + eta * rhoB)
    rho_t = 1.0 / (w * (1.0 / rhoA + eta / rhoB))
    kappa = w * (kappaA + eta * kappaB)
    return rho_r, rho_t, kappa


def pair_from_effective(rho_r, rho_t, eta=1.0):
    """Invert :func:`effective_from_pair` for the densities, returning ``(rhoA, rhoB)``
    with ``rhoA <= rhoB``."""
    if eta != 1.0:
        raise ValueError("only eta=1 is supported")
    rho_r = np.asarray(rho_r, dtype=float)
    rho_t = np.asarray(rho_t, dtype=float)
    disc = rho_r * rho_r - rho_r * rho_t
    # round-off can make disc slightly negative when rho_r == rho_t
    tiny = 1e-14 * rho_r * rho_r
    if np.any(disc < -tiny) or np.any(rho_t <= 0):
        raise UnrealizableError("tangential density exceeds radial density")
    root = np.sqrt(np.maximum(disc, 0.0))
    hi = rho_r + root
    # rho_r - root cancels when rho_t << rho_r; use rhoA rhoB = rho_r rho_t instead
    lo = rho_r * rho_t / hi
    if lo.ndim == 0:
        return float(lo), float(hi)
    return lo, hi


def build_stack(design: DesignSpec) -> LayerStack:
    """Sample the shell profile into ``2 M`` isotropic sublayers.

    Each anisotropic sub-shell is split into an inner ``A`` and an outer ``B``
    sublayer of equal thickness; both take the profile value at their own
    midpoint radius, ``A`` the low root and ``B`` the high root.
    """
    prof = shell_profile(design.r0, design.R1, design.R2, design.gauge, design.dim)
    edges = np.linspace(design.R1, design.R2, 2 * design.M + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    rho_r, rho_t, kappa = prof(mids)
    bad = rho_t > rho_r * (1 + 1e-12)
    if np.any(bad):
        raise UnrealizableError(f"unrealizable profile at r={mids[bad][0]:.6g}")
    lo, hi = pair_from_effective(rho_r, np.minimum(rho_t, rho_r))
    rho = np.where(np.arange(mids.size) % 2 == 0, lo, hi)
    layers = tuple(
        Layer(float(edges[i]), float(edges[i + 1]), float(rho[i]), float(kappa[i]))
        for i in range(mids.size)
    )
    if design.core == "fluid":
        c_rho, c_kappa = core_equivalent(design.r0, design.R1, design.gauge)
        return LayerStack(layers, core="fluid", core_rho=c_rho, core_kappa=c_kappa)
    return LayerStack(layers, core=design.core)


def anisotropic_staircase(design: DesignSpec):
    """Piecewise-constant ``(edges, rho_r, rho_t, kappa)`` of the M sub-shells
    (each evaluated at its midpoint)."""
    prof = shell_profile(design.r0, design.R1, design.R2, design.gauge, design.dim)
    edges = np.linspace(design.R1, design.R2, design.M + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    return (edges,) + tuple(prof(mids))


def stack_extremes(stack: LayerStack):
    d = stack.densities()
    return float(d.min()), float(d.max())


def core_equivalent(r0, R1, gauge="exact"):
    """Isotropic core fill for the ball ``r < R1``.

    ``exact`` is the push-forward of ``J = s I`` with ``s = R1/r0``: ``(s, s**3)``.
    ``reduced`` is the impedance-matched pair ``(1/s, s)`` with the same index.
    """
    if not 0 < r0 <= R1:
        raise ValueError("need 0 < r0 <= R1")
    s = R1 / r0
    if gauge == "exact":
        return s, s**3
    if gauge == "reduced":
        return 1.0 / s, s
    raise ValueError(f"unknown gauge {gauge!r}")


def stack_to_csv(stack: LayerStack):
    """``r_in,r_out,rho,kappa`` rows with nine significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["r_in", "r_out", "rho", "kappa"])
    for lay in stack.layers:
        w.writerow([f"{v:.9g}" for v in (lay.r_in, lay.r_out, lay.rho, lay.kappa)])
    return buf.getvalue()


def stack_from_csv(text, core="rigid"):
    rows = list(csv.DictReader(io.StringIO(text)))
    layers = [Layer(float(r["r_in"]), float(r["r_out"]), float(r["rho"]), float(r["kappa"]))
              for r in rows]
    return LayerStack(tuple(layers), core=core)
