"""Material data model and the coordinate push-forward law.

All material values are relative to the background fluid: ``inv_density`` is
the inverse density tensor in units of ``1/rho0`` and ``bulk_modulus`` is in
units of ``kappa0``.  Jacobians always follow one convention,
``J = d(physical)/d(virtual)``; use :func:`invert_jacobian` to switch.

The array functions (``*_array``) operate on stacks of shape ``(..., d, d)``
and are what the grid samplers use; the scalar wrappers build
:class:`MaterialPoint` objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYMMETRY_TOL = 1e-12


class SingularJacobianError(ValueError):
    """Raised when a push-forward Jacobian is not invertible."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class DegenerateFrameError(ValueError):
    """Raised when the azimuthal direction is undefined (point on the polar axis)."""


@dataclass(frozen=True)
class MaterialPoint:
    """Inverse density tensor and bulk modulus at one point.

    ``flags`` collects non-fatal conditions: ``"orientation_reversed"``,
    ``"out_of_domain"``, ``"singular_clamped"``.
    """

    inv_density: np.ndarray
    bulk_modulus: complex | float
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        a = np.array(self.inv_density, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
            raise ValueError(f"inv_density must be 2x2 or 3x3, got shape {a.shape}")
        scale = max(np.abs(a).max(), 1e-300)
        if np.abs(a - a.T).max() > SYMMETRY_TOL * scale:
            raise ValueError("inv_density is not symmetric")
        a = 0.5 * (a + a.T)
        a.setflags(write=False)
        object.__setattr__(self, "inv_density", a)
        object.__setattr__(self, "flags", frozenset(self.flags))

    @classmethod
    def background(cls, dim=3):
        return cls(np.eye(dim), 1.0)

    @classmethod
    def isotropic(cls, density, bulk_modulus, dim=3):
        return cls(np.eye(dim) / density, bulk_modulus)

    @property
    def dim(self):
        return self.inv_density.shape[0]

    @property
    def density(self):
        """Density tensor (inverse of ``inv_density``)."""
        return np.linalg.inv(self.inv_density)

    def is_positive_definite(self):
        if np.iscomplexobj(self.inv_density):
            return False
        return bool(np.all(np.linalg.eigvalsh(self.inv_density) > 0))

    def with_flags(self, *flags):
        return MaterialPoint(self.inv_density, self.bulk_modulus, self.flags | set(flags))


@dataclass(frozen=True)
class FrameRotation:
    """Local spherical frame at azimuth ``theta`` and polar angle ``phi``.

    The frame is ordered (radial, azimuthal, polar), matching the coordinate
    order ``(rho, theta, phi)`` with ``x = rho cos(theta) sin(phi)``,
    ``y = rho sin(theta) sin(phi)``, ``z = rho cos(phi)``.
    """

    theta: float
    phi: float

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError("frame angles must be finite")

    @classmethod
    def from_point(cls, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x)
        if r == 0:
            raise DegenerateFrameError("spherical frame undefined at the origin")
        return cls(float(np.arctan2(x[1], x[0])), float(np.arccos(np.clip(x[2] / r, -1, 1))))

    def matrix(self, orthonormal=True):
        """Columns are the frame vectors in Cartesian components.

        With ``orthonormal=False`` the azimuthal column carries its coordinate
        length ``sin(phi)``, so that ``M.T @ M = diag(1, sin(phi)**2, 1)``.
        """
        return spherical_frame(self.theta, self.phi, orthonormal=orthonormal)


def spherical_frame(theta, phi, orthonormal=True):
    """Frame matrices ``(..., 3, 3)`` for arrays of angles."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp_ = np.cos(phi), np.sin(phi)
    q = np.empty(np.broadcast(theta, phi).shape + (3, 3))
    q[..., 0, 0], q[..., 1, 0], q[..., 2, 0] = ct * sp_, st * sp_, cp
    q[..., 0, 1], q[..., 1, 1], q[..., 2, 1] = -st, ct, 0.0
    q[..., 0, 2], q[..., 1, 2], q[..., 2, 2] = ct * cp, st * cp, -sp_
    if not orthonormal:
        q[..., :, 1] *= sp_[..., None]
    return q


def radial_frame(points):
    """Orthonormal (radial, azimuthal, polar) frames at Cartesian points.

    Returns ``(q, r, sin_phi)``.  On the polar axis the azimuth is taken as 0.
    """
    points = np.asarray(points, dtype=float)
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    r = np.sqrt(x * x + y * y + z * z)
    theta = np.arctan2(y, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.arccos(np.clip(np.where(r > 0, z / r, 1.0), -1.0, 1.0))
    return spherical_frame(theta, phi), r, np.sin(phi)


def push_forward_array(jac, inv_density, bulk_modulus):
    """Vectorised push-forward.

    Returns ``(J @ inv_density @ J.T / det J, bulk_modulus * det J, det J)``.
    The tensor result is symmetrised; the antisymmetric residual is checked
    against ``SYMMETRY_TOL``.
    """
    jac = np.asarray(jac)
    det = np.linalg.det(jac)
    if np.any(det == 0) or not np.all(np.isfinite(det)):
        raise SingularJacobianError("singular Jacobian in push-forward")
    out = np.einsum("...ik,...kl,...jl->...ij", jac, inv_density, jac) / det[..., None, None]
    asym = out - np.swapaxes(out, -1, -2)
    scale = np.maximum(np.abs(out).max(axis=(-1, -2)), 1e-300)
    if np.any(np.abs(asym).max(axis=(-1, -2)) > 1e-10 * scale):
        raise ValueError("push-forward produced a non-symmetric tensor; is the input symmetric?")
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return out, np.asarray(bulk_modulus) * det, det


def push_forward(jac, material: MaterialPoint, point=None) -> MaterialPoint:
    """Map a virtual-space material to physical space through ``J = d(phys)/d(virt)``.

    ``inv_density' = J inv_density J^T / det J`` and
    ``bulk_modulus' = bulk_modulus det J``.  A negative determinant does not
    raise; the result carries the ``"orientation_reversed"`` flag.
    """
    jac = np.asarray(jac)
    if jac.shape != material.inv_density.shape:
        raise ValueError(f"Jacobian shape {jac.shape} does not match material")
    try:
        inv_d, kappa, det = push_forward_array(jac, material.inv_density, material.bulk_modulus)
    except SingularJacobianError as err:
        raise SingularJacobianError(f"singular Jacobian at point {point}", point) from err
    flags = set(material.flags)
    if np.real(det) < 0:
        flags.add("orientation_reversed")
    return MaterialPoint(inv_d, kappa.item(), frozenset(flags))


def invert_jacobian(jac):
    """Switch between ``d(phys)/d(virt)`` and ``d(virt)/d(phys)``."""
    return np.linalg.inv(jac)


def numeric_jacobian(func, x, h=1e-5):
    """Central-difference Jacobian ``d func / d x`` at ``x``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(func(x), dtype=float)
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        fp = np.asarray(func(x + e), dtype=float)
        fm = np.asarray(func(x - e), dtype=float)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"map is not finite near {x}")
        jac[:, j] = (fp - fm) / (2 * h)
    return jac


def to_cartesian(diag_spherical, frame: FrameRotation, tol=1e-12):
    """Rotate a diagonal tensor given in the (radial, azimuthal, polar) frame to Cartesian."""
    d = np.asarray(diag_spherical)
    if d.shape != (3,):
        raise ValueError("expected three diagonal entries")
    if abs(np.sin(frame.phi)) < tol and abs(d[1] - d[2]) > tol * max(abs(d[1]), abs(d[2]), 1.0):
        raise DegenerateFrameError(
            "tangential entries differ but the point lies on the polar axis"
        )
    q = frame.matrix(orthonormal=True)
    out = (q * d) @ q.T
    return 0.5 * (out + out.T)


def diag_to_cartesian_array(diag, points):
    """Rotate per-point (radial, tangential, tangential) diagonals to Cartesian.

    ``diag`` has shape ``(..., 2)`` (radial, tangential); with equal tangential
    entries the result is well defined everywhere except the origin.
    """
    points = np.asarray(points, dtype=float)
    r = np.linalg.norm(points, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = points / r[..., None]
    rhat = np.where(r[..., None] > 0, rhat, 0.0)
    outer = rhat[..., :, None] * rhat[..., None, :]
    eye = np.eye(points.shape[-1])
    dr, dt = diag[..., 0], diag[..., 1]
    return dt[..., None, None] * eye + (dr - dt)[..., None, None] * outer
