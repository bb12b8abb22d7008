"""Analytic cloak transforms and the material fields they induce.

Four families are covered:

* the singular spherical cloak (a point blown up to a ball of radius ``R1``),
* the small-ball blow-up, which maps a ball of radius ``r0`` to ``R1`` and is
  non-singular everywhere,
* the carpet, which lifts a flat rigid ground ``z = 0`` onto a bump ``z1(x, y)``
  under a cover surface ``z2(x, y)``,
* faceted (polyhedral) cloaks built from three star-shaped triangulated
  surfaces.

Every family exposes a :class:`TransformSpec` (maps plus analytic Jacobian), a
point query returning :class:`~acloak.tensor.MaterialPoint`, and a vectorised
``*_field`` sampler returning ``(inv_density, bulk_modulus)`` arrays.  The
samplers are what the FDFD assembler consumes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import (
    MaterialPoint,
    diag_to_cartesian_array,
    push_forward_array,
    radial_frame,
)


class SingularRegionError(ValueError):
    """Raised when a material is requested on the singular locus of a transform."""


class DegenerateGeometryError(ValueError):
    """Raised for carpet or facet geometry that cannot define a transform."""


@dataclass(frozen=True)
class TransformSpec:
    """A piecewise-smooth coordinate map.

    ``to_virtual`` and ``to_physical`` are mutual inverses on the transformed
    region and the identity outside it; ``jacobian(x)`` returns
    ``d(physical)/d(virtual)`` at the *physical* point ``x``.
    """

    to_virtual: Callable
    to_physical: Callable
    jacobian: Callable
    contains: Callable
    name: str = ""


# ---------------------------------------------------------------------------
# Radially symmetric maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SphericalCloakSpec:
    R1: float
    R2: float

    def __post_init__(self):
        if not 0 < self.R1 < self.R2:
            raise ValueError(f"need 0 < R1 < R2, got R1={self.R1}, R2={self.R2}")

    @property
    def alpha(self):
        return (self.R2 - self.R1) / self.R2

    @property
    def clamp_radius(self):
        return self.R1 + 1e-6 * (self.R2 - self.R1)


@dataclass(frozen=True)
class KohnCloakSpec:
    r0: float
    R1: float
    R2: float

    def __post_init__(self):
        if not 0 < self.r0 <= self.R1 < self.R2:
            raise ValueError(
                f"need 0 < r0 <= R1 < R2, got r0={self.r0}, R1={self.R1}, R2={self.R2}"
            )

    @property
    def alpha(self):
        return (self.R2 - self.R1) / (self.R2 - self.r0)

    @property
    def beta(self):
        return self.R2 * (self.R1 - self.r0) / (self.R2 - self.r0)

    @property
    def core_scale(self):
        return self.R1 / self.r0


def _radial_pieces(slope, offset, r, dim):
    """Diagonal push-forward of the background through ``r = slope * r_v + offset``.

    Returns radial and tangential inverse densities and the bulk modulus.
    """
    r_v = (r - offset) / slope
    with np.errstate(divide="ignore", invalid="ignore"):
        stretch = np.where(offset == 0, slope, r / r_v)
    det = slope * stretch ** (dim - 1)
    return slope**2 / det, stretch**2 / det, det


def _radial_map_field(points, pieces, dim):
    """Sample a piecewise radial map given as ``[(r_lo, r_hi, slope, offset), ...]``."""
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=-1)
    inv_r = np.ones_like(r)
    inv_t = np.ones_like(r)
    kappa = np.ones_like(r)
    for lo, hi, slope, offset in pieces:
        sel = (r > lo) & (r <= hi) if lo > 0 else (r <= hi)
        if not np.any(sel):
            continue
        a, b, c = _radial_pieces(slope, offset, r[sel], dim)
        inv_r[sel], inv_t[sel], kappa[sel] = a, b, c
    inv = diag_to_cartesian_array(np.stack([inv_r, inv_t], axis=-1), points)
    return inv, kappa


def _radial_transform(pieces, name, dim=3):
    """TransformSpec for a piecewise-linear radial map (pieces in physical radius)."""

    def phys_to_virt_r(r):
        for lo, hi, slope, offset in pieces:
            if lo < r <= hi or (lo == 0 and r <= hi):
                return (r - offset) / slope
        return r

    def virt_to_phys_r(rv):
        for lo, hi, slope, offset in pieces:
            vlo, vhi = (lo - offset) / slope, (hi - offset) / slope
            if vlo < rv <= vhi or (lo == 0 and rv <= vhi):
                return slope * rv + offset
        return rv

    def scale_point(x, fn):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r == 0:
            return x.copy()
        return x * (fn(r) / r)

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        eye = np.eye(dim)
        for lo, hi, slope, offset in pieces:
            if lo < r <= hi or (lo == 0 and r <= hi):
                if r == 0:
                    return slope * eye
                rhat = x / r
                stretch = r / ((r - offset) / slope)
                return stretch * eye + (slope - stretch) * np.outer(rhat, rhat)
        return eye

    def contains(x):
        r = np.linalg.norm(np.asarray(x, dtype=float))
        return any(lo < r <= hi or (lo == 0 and r <= hi) for lo, hi, _, _ in pieces)

    return TransformSpec(
        to_virtual=lambda x: scale_point(x, phys_to_virt_r),
        to_physical=lambda x: scale_point(x, virt_to_phys_r),
        jacobian=jacobian,
        contains=contains,
        name=name,
    )


def _sphere_pieces(spec: SphericalCloakSpec):
    return [(spec.R1, spec.R2, spec.alpha, spec.R1)]


def _kohn_pieces(spec: KohnCloakSpec):
    return [
        (0.0, spec.R1, spec.core_scale, 0.0),
        (spec.R1, spec.R2, spec.alpha, spec.beta),
    ]


def pendry_transform(spec: SphericalCloakSpec, dim=3) -> TransformSpec:
    """``r = R1 + r_v (R2 - R1) / R2`` on the shell ``R1 < r <= R2``."""
    return _radial_transform(_sphere_pieces(spec), "pendry_sphere", dim)


def kohn_transform(spec: KohnCloakSpec, dim=3) -> TransformSpec:
    """Small-ball blow-up: core ``r = (R1/r0) r_v`` and shell ``r = alpha r_v + beta``."""
    return _radial_transform(_kohn_pieces(spec), "kohn_ball", dim)


def pendry_sphere_material(spec: SphericalCloakSpec, x, clamp=False) -> MaterialPoint:
    """Material of the singular spherical cloak at physical point ``x``.

    Inside the shell the spherical-frame values are
    ``rho_r = alpha (r/(r-R1))**2``, ``rho_t = alpha``,
    ``kappa = alpha**3 (r/(r-R1))**2`` with ``alpha = (R2-R1)/R2``.
    Points with ``|x| <= R1`` raise unless ``clamp`` is set, in which case the
    radius is clamped to ``R1 + 1e-6 (R2 - R1)`` and the result is flagged.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r > spec.R2:
        return MaterialPoint.background(x.size).with_flags("out_of_domain")
    flags = set()
    if r < spec.clamp_radius:
        if r <= spec.R1 and not clamp:
            raise SingularRegionError(f"|x| = {r} lies on or inside the singular radius R1")
        if clamp or r <= spec.R1:
            x = x / r * spec.clamp_radius if r > 0 else np.eye(x.size)[0] * spec.clamp_radius
            flags.add("singular_clamped")
    inv, kappa = _radial_map_field(x[None], _sphere_pieces(spec), x.size)
    return MaterialPoint(inv[0], float(kappa[0]), frozenset(flags))


def pendry_sphere_field(spec: SphericalCloakSpec, points, dim=3):
    """Vectorised sampler; the hidden region ``r <= R1`` is left as background.

    Shell points closer than the clamp radius are evaluated at the clamp radius.
    """
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=-1)
    near = (r > spec.R1) & (r < spec.clamp_radius)
    if np.any(near):
        points = points.copy()
        points[near] *= (spec.clamp_radius / r[near])[:, None]
    return _radial_map_field(points, _sphere_pieces(spec), dim)


def kohn_ball_material(spec: KohnCloakSpec, x) -> MaterialPoint:
    """Two-piece material of the small-ball blow-up.

    Core: isotropic push-forward of ``J = (R1/r0) I``.  Shell: spherical-frame
    inverse density ``diag((r-beta)**2/(alpha r**2), 1/alpha, 1/alpha)`` and
    ``kappa = alpha (r/r_v)**2`` with ``r_v = (r - beta)/alpha``.
    """
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x))
    if r > spec.R2:
        return MaterialPoint.background(x.size).with_flags("out_of_domain")
    inv, kappa = _radial_map_field(x[None], _kohn_pieces(spec), x.size)
    return MaterialPoint(inv[0], float(kappa[0]))


def kohn_ball_field(spec: KohnCloakSpec, points, dim=3, core=True):
    """Vectorised sampler.  With ``core=False`` the ball ``r <= R1`` is background."""
    pieces = _kohn_pieces(spec)
    if not core:
        pieces = pieces[1:]
    return _radial_map_field(points, pieces, dim)


# ---------------------------------------------------------------------------
# Carpet
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CarpetSpec:
    """Bump ``z1(x, y)`` and cover ``z2(x, y)``; gradients return ``(d/dx, d/dy)``.

    All four callables must accept arrays.  The carpet occupies
    ``z1 <= z <= z2`` wherever ``z2 > 0``; the ground is the plane ``z = 0``.
    """

    z1: Callable
    z2: Callable
    grad_z1: Callable
    grad_z2: Callable

    @classmethod
    def spherical_caps(cls, bump_radius=2.0, bump_offset=1.802776, cover_radius=1.0,
                       cover_offset=0.5):
        """Bump and cover built from sphere caps ``sqrt(R**2 - x**2 - y**2) - offset``."""

        def cap(R, off):
            def z(x, y):
                s = R * R - np.asarray(x) ** 2 - np.asarray(y) ** 2
                with np.errstate(invalid="ignore"):
                    return np.where(s > 0, np.sqrt(np.maximum(s, 0.0)), np.nan) - off

            def grad(x, y):
                s = np.sqrt(np.maximum(R * R - np.asarray(x) ** 2 - np.asarray(y) ** 2, 1e-300))
                return -np.asarray(x) / s, -np.asarray(y) / s

            return z, grad

        z1, g1 = cap(bump_radius, bump_offset)
        z2, g2 = cap(cover_radius, cover_offset)
        return cls(z1, z2, g1, g2)

    @classmethod
    def flat(cls, cover_height=0.5):
        zero = lambda x, y: np.zeros(np.broadcast(x, y).shape)
        top = lambda x, y: np.full(np.broadcast(x, y).shape, cover_height)
        gz = lambda x, y: (zero(x, y), zero(x, y))
        return cls(zero, top, gz, gz)

    def section(self, y0=0.0):
        """The y-independent carpet whose profile is the cut ``y = y0``."""

        z1 = lambda x, y: self.z1(x, np.full(np.shape(x), y0))
        z2 = lambda x, y: self.z2(x, np.full(np.shape(x), y0))

        def g(fn):
            def grad(x, y):
                gx, _ = fn(x, np.full(np.shape(x), y0))
                return gx, np.zeros(np.shape(gx))
            return grad

        return CarpetSpec(z1, z2, g(self.grad_z1), g(self.grad_z2))

    def footprint(self, x, y):
        z2 = self.z2(x, y)
        with np.errstate(invalid="ignore"):
            return np.isfinite(z2) & (z2 > 0)


def _carpet_terms(spec: CarpetSpec, x, y):
    z1 = np.asarray(spec.z1(x, y), dtype=float)
    z2 = np.asarray(spec.z2(x, y), dtype=float)
    g1x, g1y = spec.grad_z1(x, y)
    g2x, g2y = spec.grad_z2(x, y)
    alpha = (z2 - z1) / z2
    # d(alpha)/dx = (z1 z2_x - z2 z1_x) / z2**2
    ax = (z1 * np.asarray(g2x) - z2 * np.asarray(g1x)) / z2**2
    ay = (z1 * np.asarray(g2y) - z2 * np.asarray(g1y)) / z2**2
    return z1, z2, alpha, ax, ay, np.asarray(g1x), np.asarray(g1y)


def carpet_jacobian_array(spec: CarpetSpec, points):
    """``d(physical)/d(virtual)`` of ``z' = alpha z + z1`` at physical points (inside carpet)."""
    points = np.asarray(points, dtype=float)
    x, y, zp = points[..., 0], points[..., 1], points[..., 2]
    z1, z2, alpha, ax, ay, g1x, g1y = _carpet_terms(spec, x, y)
    zv = (zp - z1) / alpha
    jac = np.zeros(points.shape[:-1] + (3, 3))
    jac[..., 0, 0] = 1.0
    jac[..., 1, 1] = 1.0
    jac[..., 2, 0] = ax * zv + g1x
    jac[..., 2, 1] = ay * zv + g1y
    jac[..., 2, 2] = alpha
    return jac


def carpet_dz_dphys(spec: CarpetSpec, points):
    """Chain-rule derivatives ``dz/dx'`` and ``dz/dy'`` of the virtual height."""
    points = np.asarray(points, dtype=float)
    x, y, zp = points[..., 0], points[..., 1], points[..., 2]
    z1 = np.asarray(spec.z1(x, y), dtype=float)
    z2 = np.asarray(spec.z2(x, y), dtype=float)
    g1x, g1y = spec.grad_z1(x, y)
    g2x, g2y = spec.grad_z2(x, y)
    den = (z2 - z1) ** 2
    dzdx = z2 * (zp - z2) / den * g1x - z1 * (zp - z1) / den * g2x
    dzdy = z2 * (zp - z2) / den * g1y - z1 * (zp - z1) / den * g2y
    return dzdx, dzdy


def carpet_inside(spec: CarpetSpec, points):
    points = np.asarray(points, dtype=float)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    foot = spec.footprint(x, y)
    z1 = np.where(foot, spec.z1(x, y), np.inf)
    z2 = np.where(foot, spec.z2(x, y), -np.inf)
    return foot & (z >= np.maximum(z1, 0.0)) & (z <= z2)


def carpet_field(spec: CarpetSpec, points, dim=3):
    """Vectorised carpet sampler using the closed-form seven-entry tensor.

    ``dim=2`` returns the ``(x, z)`` block for points given as ``(x, z)`` pairs
    (the carpet should then be y-independent, see :meth:`CarpetSpec.section`).
    """
    points = np.asarray(points, dtype=float)
    if dim == 2:
        p3 = np.stack([points[..., 0], np.zeros(points.shape[:-1]), points[..., 1]], axis=-1)
    else:
        p3 = points
    inside = carpet_inside(spec, p3)
    inv = np.broadcast_to(np.eye(3), p3.shape[:-1] + (3, 3)).copy()
    kappa = np.ones(p3.shape[:-1])
    if np.any(inside):
        q = p3[inside]
        _, _, alpha, *_ = _carpet_terms(spec, q[:, 0], q[:, 1])
        dzdx, dzdy = carpet_dz_dphys(spec, q)
        t = np.zeros((q.shape[0], 3, 3))
        t[:, 0, 0] = t[:, 1, 1] = 1.0 / alpha
        t[:, 0, 2] = t[:, 2, 0] = -dzdx
        t[:, 1, 2] = t[:, 2, 1] = -dzdy
        t[:, 2, 2] = (1.0 + dzdx**2 + dzdy**2) * alpha
        inv[inside] = t
        kappa[inside] = alpha
    if dim == 2:
        inv = inv[..., [0, 2]][..., [0, 2], :]
    return inv, kappa


def carpet_material(spec: CarpetSpec, x) -> MaterialPoint:
    """Carpet inverse density ``T^-1`` and bulk modulus ``alpha`` at physical ``x``."""
    x = np.asarray(x, dtype=float)
    z1 = float(spec.z1(x[0], x[1]))
    z2 = float(spec.z2(x[0], x[1]))
    if np.isfinite(z2) and z2 > 0 and z2 <= z1:
        raise DegenerateGeometryError(f"cover z2={z2} does not lie above bump z1={z1} at {x[:2]}")
    if not carpet_inside(spec, x[None])[0]:
        return MaterialPoint.background(3).with_flags("out_of_domain")
    inv, kappa = carpet_field(spec, x[None])
    return MaterialPoint(inv[0], float(kappa[0]))


def carpet_transform(spec: CarpetSpec) -> TransformSpec:
    def to_virtual(x):
        x = np.asarray(x, dtype=float)
        if not carpet_inside(spec, x[None])[0]:
            return x.copy()
        z1 = spec.z1(x[0], x[1])
        z2 = spec.z2(x[0], x[1])
        return np.array([x[0], x[1], (x[2] - z1) * z2 / (z2 - z1)])

    def to_physical(v):
        v = np.asarray(v, dtype=float)
        z2 = spec.z2(v[0], v[1])
        if not (np.isfinite(z2) and z2 > 0 and 0 <= v[2] <= z2):
            return v.copy()
        z1 = spec.z1(v[0], v[1])
        return np.array([v[0], v[1], (z2 - z1) / z2 * v[2] + z1])

    def jacobian(x):
        x = np.asarray(x, dtype=float)
        if not carpet_inside(spec, x[None])[0]:
            return np.eye(3)
        return carpet_jacobian_array(spec, x[None])[0]

    return TransformSpec(to_virtual, to_physical, jacobian,
                         lambda x: bool(carpet_inside(spec, np.asarray(x, float)[None])[0]),
                         "carpet")


# ---------------------------------------------------------------------------
# Faceted cloaks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TriSurface:
    """Star-shaped triangulated surface around the origin.

    ``planes[f] = (a, b, c, d)`` with ``a x + b y + c z = d`` on face ``f``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    planes: np.ndarray = field(init=False, repr=False)
    _cone_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=int)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("vertices must be (n, 3) and faces (m, 3)")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("face index out of range")
        tri = v[f]
        planes = np.array([face_plane(*t) for t in tri])
        cone = np.transpose(tri, (0, 2, 1))
        if np.any(np.abs(np.linalg.det(cone)) < 1e-14):
            raise DegenerateGeometryError("a face is coplanar with the origin; not star-shaped")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "planes", planes)
        object.__setattr__(self, "_cone_inv", np.linalg.inv(cone))

    def scaled(self, s):
        return TriSurface(self.vertices * s, self.faces)

    def face_index(self, directions, tol=1e-12):
        """Face hit by each ray from the origin; lowest index wins on shared edges."""
        d = np.asarray(directions, dtype=float)
        flat = d.reshape(-1, 3)
        out = np.full(flat.shape[0], -1, dtype=int)
        chunk = max(1, 400000 // max(len(self.faces), 1))
        for s in range(0, flat.shape[0], chunk):
            u = flat[s:s + chunk]
            coef = np.einsum("fij,nj->nfi", self._cone_inv, u)
            ok = np.all(coef >= -tol * np.abs(coef).max(axis=-1, keepdims=True), axis=-1)
            first = np.argmax(ok, axis=1)
            first[~ok.any(axis=1)] = -1
            out[s:s + chunk] = first
        if np.any(out < 0):
            raise DegenerateGeometryError("surface is not star-shaped: a ray misses every face")
        return out.reshape(d.shape[:-1])

    def radius(self, directions, faces=None):
        """Distance from the origin to the surface along unit ``directions``."""
        u = np.asarray(directions, dtype=float)
        if faces is None:
            faces = self.face_index(u)
        pl = self.planes[faces]
        return pl[..., 3] / np.einsum("...i,...i->...", pl[..., :3], u)


def face_plane(p1, p2, p3):
    """Plane coefficients ``(a, b, c, d)`` through three points (cross-product form)."""
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    n = np.cross(p2 - p1, p3 - p1)
    return np.array([n[0], n[1], n[2], float(n @ p1)])


def icosahedron(edge):
    """Regular icosahedron centred at the origin with the given edge length."""
    g = (1 + 5**0.5) / 2
    v = []
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            v += [(0, s1, s2 * g), (s1, s2 * g, 0), (s2 * g, 0, s1)]
    v = np.array(v, dtype=float) * (edge / 2)
    faces = []
    n = len(v)
    for i in range(n):
        for j in range(i + 1, n):
            for k in range(j + 1, n):
                if all(abs(np.linalg.norm(v[a] - v[b]) - edge) < 1e-9 * edge
                       for a, b in ((i, j), (j, k), (i, k))):
                    faces.append((i, j, k))
    return TriSurface(v, np.array(faces))


STAR_TIP_RATIO = 2.5


def six_point_star(edge, tip_ratio=STAR_TIP_RATIO):
    """Six-point star: tips on the +-x, +-y, +-z axes, valleys on the diagonals.

    Valley vertices sit at radius ``c`` along the eight directions
    ``(+-1, +-1, +-1)/sqrt(3)``; tips at radius ``tip_ratio * c``.  Each tip is
    joined to its four nearest valleys (24 triangles).  ``edge`` is the
    tip-to-valley edge length.
    """
    if tip_ratio <= 1:
        raise ValueError("tip_ratio must exceed 1 for a star")
    # |tip - valley|**2 = c**2 (t**2 - 2 t/sqrt(3) + 1)
    c = edge / np.sqrt(tip_ratio**2 - 2 * tip_ratio / np.sqrt(3) + 1)
    tips = np.vstack([np.eye(3), -np.eye(3)]) * tip_ratio * c
    signs = np.array([(a, b, d) for a in (-1, 1) for b in (-1, 1) for d in (-1, 1)], dtype=float)
    valleys = signs / np.sqrt(3) * c
    verts = np.vstack([tips, valleys])
    faces = []
    for t in range(6):
        axis = t % 3
        sgn = 1.0 if t < 3 else -1.0
        ring = [6 + i for i in range(8) if signs[i, axis] == sgn]
        # order the four valleys around the tip axis
        others = [a for a in range(3) if a != axis]
        ang = [np.arctan2(signs[i - 6, others[1]], signs[i - 6, others[0]]) for i in ring]
        ring = [ring[i] for i in np.argsort(ang)]
        for i in range(4):
            faces.append((t, ring[i], ring[(i + 1) % 4]))
    return TriSurface(verts, np.array(faces))


@dataclass(frozen=True)
class FacetedCloakSpec:
    """Surfaces ``S0`` (optional, ``None`` means the origin), ``S1`` and ``S2``."""

    S1: TriSurface
    S2: TriSurface
    S0: TriSurface | None = None

    def check(self, directions=None):
        """Verify ``R0 < R1 < R2`` on a direction sample (vertex and face-centroid rays)."""
        if directions is None:
            pts = [self.S1.vertices, self.S2.vertices,
                   self.S1.vertices[self.S1.faces].mean(axis=1),
                   self.S2.vertices[self.S2.faces].mean(axis=1)]
            directions = np.vstack(pts)
            directions = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        R0, R1, R2 = self.radii(directions)
        if np.any(R1 >= R2) or np.any(R0 >= R1):
            raise DegenerateGeometryError("surfaces are not strictly nested")
        return True

    def radii(self, u):
        R1 = self.S1.radius(u)
        R2 = self.S2.radius(u)
        R0 = np.zeros_like(R1) if self.S0 is None else self.S0.radius(u)
        return R0, R1, R2


def _surface_terms(surface, u, theta, phi, sin_phi):
    """``R``, ``dR/dtheta / sin(phi)`` and ``dR/dphi`` along directions ``u``."""
    pl = surface.planes[surface.face_index(u)]
    a, b, c, d = pl[..., 0], pl[..., 1], pl[..., 2], pl[..., 3]
    ct, st, cp = np.cos(theta), np.sin(theta), np.cos(phi)
    den = a * ct * sin_phi + b * st * sin_phi + c * cp
    R = d / den
    # dR/dtheta carries a factor sin(phi); keep it divided out so poles are regular
    Rt_over_s = d * (a * st - b * ct) / den**2
    Rp = -d * (a * ct * cp + b * st * cp - c * sin_phi) / den**2
    return R, Rt_over_s, Rp


def _zero_terms(shape):
    z = np.zeros(shape)
    return z, z, z


def faceted_field(spec: FacetedCloakSpec, points, with_flags=False, clamp=1e-6):
    """Vectorised faceted-cloak sampler (background outside ``S2``).

    With ``S0`` absent the region inside ``S1`` is hidden and left as
    background, and shell points closer to ``S1`` than ``clamp (R2 - R1)`` are
    evaluated at that distance (the blow-up of a point is singular on ``S1``).
    """
    points = np.asarray(points, dtype=float)
    shape = points.shape[:-1]
    flat = np.array(points.reshape(-1, 3), copy=True)
    rho_p = np.linalg.norm(flat, axis=1)
    inv = np.broadcast_to(np.eye(3), (flat.shape[0], 3, 3)).copy()
    kappa = np.ones(flat.shape[0])
    nonzero = rho_p > 0
    u = np.zeros_like(flat)
    u[nonzero] = flat[nonzero] / rho_p[nonzero, None]
    sel = np.zeros(flat.shape[0], dtype=bool)
    if np.any(nonzero):
        R2 = spec.S2.radius(u[nonzero])
        inside = rho_p[nonzero] <= R2
        if spec.S0 is None:
            R1 = spec.S1.radius(u[nonzero])
            inside &= rho_p[nonzero] > R1
            floor = R1 + clamp * (R2 - R1)
            idx = np.flatnonzero(nonzero)
            low = inside & (rho_p[nonzero] < floor)
            flat[idx[low]] = u[idx[low]] * floor[low, None]
        sel[nonzero] = inside
    if np.any(sel):
        jac = faceted_jacobian_array(spec, flat[sel])
        t, k, _ = push_forward_array(jac, np.eye(3), 1.0)
        inv[sel], kappa[sel] = t, k
    inv = inv.reshape(shape + (3, 3))
    kappa = kappa.reshape(shape)
    if with_flags:
        return inv, kappa, sel.reshape(shape)
    return inv, kappa


def faceted_jacobian_array(spec: FacetedCloakSpec, points):
    """``d(physical)/d(virtual)`` at physical points inside ``S2``.

    Shell points (between ``S1`` and ``S2``) use the radial map
    ``rho' = R1 + alpha (rho - R0)``; core points (inside ``S1``) use the
    radial map from ``S0`` to ``S1``, which is only defined when ``S0`` is given.
    """
    points = np.asarray(points, dtype=float)
    q, rho_p, sin_phi = radial_frame(points)
    u = points / rho_p[:, None]
    theta = np.arctan2(u[:, 1], u[:, 0])
    phi = np.arccos(np.clip(u[:, 2], -1, 1))
    R2, R2t, R2p = _surface_terms(spec.S2, u, theta, phi, sin_phi)
    R1, R1t, R1p = _surface_terms(spec.S1, u, theta, phi, sin_phi)
    if spec.S0 is None:
        R0, R0t, R0p = _zero_terms(R1.shape)
    else:
        R0, R0t, R0p = _surface_terms(spec.S0, u, theta, phi, sin_phi)
    shell = rho_p > R1
    # shell: image [R1, R2] of virtual [R0, R2]; core: image [0, R1] of virtual [0, R0]
    lo_p = np.where(shell, R1, 0.0)
    hi_p = np.where(shell, R2, R1)
    lo_v = np.where(shell, R0, 0.0)
    hi_v = np.where(shell, R2, R0)
    lo_pt, hi_pt = np.where(shell, R1t, 0.0), np.where(shell, R2t, R1t)
    lo_pp, hi_pp = np.where(shell, R1p, 0.0), np.where(shell, R2p, R1p)
    lo_vt, hi_vt = np.where(shell, R0t, 0.0), np.where(shell, R2t, R0t)
    lo_vp, hi_vp = np.where(shell, R0p, 0.0), np.where(shell, R2p, R0p)
    if np.any(~shell) and spec.S0 is None:
        raise SingularRegionError("core region requested but S0 is the origin")
    span_v = hi_v - lo_v
    alpha = (hi_p - lo_p) / span_v
    rho_v = lo_v + (rho_p - lo_p) / alpha
    # angular derivatives of alpha (theta-derivative divided by sin(phi))
    alpha_t = ((hi_pt - lo_pt) - alpha * (hi_vt - lo_vt)) / span_v
    alpha_p = ((hi_pp - lo_pp) - alpha * (hi_vp - lo_vp)) / span_v
    drho_t = lo_pt + alpha_t * (rho_v - lo_v) - alpha * lo_vt
    drho_p = lo_pp + alpha_p * (rho_v - lo_v) - alpha * lo_vp
    n = points.shape[0]
    mid = np.zeros((n, 3, 3))
    mid[:, 0, 0] = alpha
    mid[:, 0, 1] = drho_t / rho_v
    mid[:, 0, 2] = drho_p / rho_v
    mid[:, 1, 1] = rho_p / rho_v
    mid[:, 2, 2] = rho_p / rho_v
    return q @ mid @ np.swapaxes(q, -1, -2)


def _faceted_radial_map(spec, x, forward):
    x = np.asarray(x, dtype=float)
    rho = np.linalg.norm(x)
    if rho == 0:
        return x.copy()
    u = x / rho
    R0, R1, R2 = (float(v[0]) for v in spec.radii(u[None]))
    if forward:  # virtual -> physical
        if rho > R2:
            return x.copy()
        if rho >= R0:
            return u * (R1 + (R2 - R1) / (R2 - R0) * (rho - R0))
        return u * (rho * R1 / R0)
    if rho > R2:
        return x.copy()
    if rho >= R1:
        return u * (R0 + (rho - R1) * (R2 - R0) / (R2 - R1))
    if spec.S0 is None:
        raise SingularRegionError("point inside the singular core of a point-blowup cloak")
    return u * (rho * R0 / R1)


def faceted_transform(spec: FacetedCloakSpec) -> TransformSpec:
    def jacobian(x):
        x = np.asarray(x, dtype=float)
        rho = np.linalg.norm(x)
        if rho == 0 or rho > float(spec.S2.radius((x / rho)[None])[0]):
            return np.eye(3)
        return faceted_jacobian_array(spec, x[None])[0]

    def contains(x):
        x = np.asarray(x, dtype=float)
        rho = np.linalg.norm(x)
        return bool(rho > 0 and rho <= spec.S2.radius((x / rho)[None])[0])

    return TransformSpec(
        to_virtual=lambda x: _faceted_radial_map(spec, x, forward=False),
        to_physical=lambda x: _faceted_radial_map(spec, x, forward=True),
        jacobian=jacobian,
        contains=contains,
        name="faceted",
    )


def faceted_material(spec: FacetedCloakSpec, x) -> MaterialPoint:
    """Faceted-cloak material ``T^-1 = J J^T / det J``, ``kappa = det J``."""
    x = np.asarray(x, dtype=float)
    inv, kappa, inside = faceted_field(spec, x[None], with_flags=True)
    mp = MaterialPoint(inv[0], float(kappa[0]))
    return mp if inside[0] else mp.with_flags("out_of_domain")


# ---------------------------------------------------------------------------
# Triangle-mesh text format
# ---------------------------------------------------------------------------

def read_mesh(text):
    """Parse ``v x y z`` / ``f i j k`` lines (1-based indices, ``#`` comments)."""
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "v" and len(parts) == 4:
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "f" and len(parts) == 4:
                faces.append([int(p) - 1 for p in parts[1:]])
            else:
                raise ValueError
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse {raw!r}") from None
    return TriSurface(np.array(verts), np.array(faces))


def write_mesh(surface: TriSurface):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in surface.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in surface.faces]
    return "\n".join(lines) + "\n"
