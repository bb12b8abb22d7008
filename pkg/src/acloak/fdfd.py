"""Finite-volume frequency-domain solver for ``div(rho^-1 grad p) + k0**2 / kappa p = 0``.

Cell-centred unknowns on a uniform Cartesian grid in two (``x, z``) or three
(``x, y, z``) dimensions.  Diagonal flux coefficients live on faces;
off-diagonal terms use tangential differences averaged onto faces, applied in
symmetrised form so that the operator is (complex) symmetric.  The PML is a
complex coordinate stretch ``s(x) = 1 + i sigma(x)/k0`` folded into the
material tensor and modulus, which keeps symmetry.

Rigid (sound-hard) bodies are described by a level set ``phi`` with
``phi < 0`` inside the body.  Faces and cells crossed by the boundary are
weighted by their fluid aperture and volume fraction, which imposes the
zero-flux condition on the total field.  A boolean mask gives the plain
staircase version.

Solves use the scattered-field formulation: with ``L`` the operator and
``L_bg`` its background counterpart, ``L p_sc = -(L - L_bg) p_inc``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import special

log = logging.getLogger(__name__)

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


class NonConvergenceError(RuntimeError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


# ---------------------------------------------------------------------------
# Grid, PML and sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Uniform cell-centred grid.  ``lower``/``upper`` include any PML cells.

    In 2D the two axes are ``(x, z)``.
    """

    lower: tuple
    upper: tuple
    n: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        n = tuple(int(v) for v in self.n)
        if not (len(lo) == len(hi) == len(n)) or len(n) not in (2, 3):
            raise ValueError("grid must be 2D or 3D with matching lower/upper/n")
        if any(b <= a for a, b in zip(lo, hi)) or any(v < 1 for v in n):
            raise ValueError("empty grid")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "n", n)

    @classmethod
    def uniform(cls, lower, upper, h):
        """Grid with spacing close to ``h`` (exact when the extent is a multiple)."""
        n = [max(1, int(round((b - a) / h))) for a, b in zip(lower, upper)]
        return cls(tuple(lower), tuple(upper), tuple(n))

    @classmethod
    def centered(cls, half_width, h, dim, pml_cells=0):
        """Cube ``[-half_width, half_width]**dim`` plus ``pml_cells`` layers on each side."""
        m = int(round(half_width / h))
        ext = (m + pml_cells) * h
        return cls((-ext,) * dim, (ext,) * dim, (2 * (m + pml_cells),) * dim)

    @property
    def dim(self):
        return len(self.n)

    @property
    def spacing(self):
        return tuple((b - a) / m for a, b, m in zip(self.lower, self.upper, self.n))

    @property
    def size(self):
        return int(np.prod(self.n))

    def axis_centers(self, a):
        h = self.spacing[a]
        return self.lower[a] + (np.arange(self.n[a]) + 0.5) * h

    def axis_nodes(self, a):
        return self.lower[a] + np.arange(self.n[a] + 1) * self.spacing[a]

    def cell_points(self):
        axes = [self.axis_centers(a) for a in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def face_points(self, a):
        axes = [self.axis_nodes(b) if b == a else self.axis_centers(b) for b in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cells_per_wavelength(self, wavelength):
        return wavelength / max(self.spacing)


@dataclass(frozen=True)
class PMLSpec:
    """Perfectly matched layer of ``cells`` per side (int or per-axis ``(lo, hi)`` pairs).

    ``sigma(d) = sigma_max (d/L)**order`` with ``sigma_max`` chosen for a
    normal-incidence round-trip reflection ``reflection`` (continuum value).
    """

    cells: int | tuple = 10
    reflection: float = 1e-6
    order: int = 3

    def widths(self, dim):
        if isinstance(self.cells, int):
            return [(self.cells, self.cells)] * dim
        out = [tuple(c) if np.ndim(c) else (int(c), int(c)) for c in self.cells]
        if len(out) != dim:
            raise ValueError("PML cells must be given per axis")
        return out

    def stretch(self, grid: GridSpec, a, coords, k0):
        """``s_a`` at physical coordinates along axis ``a``."""
        lo_cells, hi_cells = self.widths(grid.dim)[a]
        h = grid.spacing[a]
        s = np.ones(np.shape(coords), dtype=complex)
        for cells, inner, sign in ((lo_cells, grid.lower[a] + lo_cells * h, -1),
                                   (hi_cells, grid.upper[a] - hi_cells * h, 1)):
            if cells == 0:
                continue
            L = cells * h
            smax = (self.order + 1) * math.log(1.0 / self.reflection) / (2 * L)
            d = np.clip(sign * (np.asarray(coords) - inner), 0.0, L)
            s = s + 1j * smax * (d / L) ** self.order / k0
        return s

    def interior_mask(self, grid: GridSpec):
        """Cells outside the PML."""
        mask = np.ones(grid.n, dtype=bool)
        for a, (lo, hi) in enumerate(self.widths(grid.dim)):
            sl = [slice(None)] * grid.dim
            if lo:
                sl[a] = slice(0, lo)
                mask[tuple(sl)] = False
            if hi:
                sl[a] = slice(grid.n[a] - hi, None)
                mask[tuple(sl)] = False
        return mask


NO_PML = PMLSpec(cells=0)


@dataclass(frozen=True)
class SourceSpec:
    """Plane wave (``direction``) or point source (``location``) of wavelength ``wavelength``.

    ``image_plane=(axis, position)`` adds the mirror wave reflected by a rigid
    plane, so the incident field already satisfies the ground condition.
    """

    kind: str
    wavelength: float
    direction: tuple | None = None
    location: tuple | None = None
    amplitude: complex = 1.0
    image_plane: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("plane", "point"):
            raise ValueError("source kind must be 'plane' or 'point'")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")
        if self.kind == "plane":
            if self.direction is None:
                raise ValueError("plane wave needs a direction")
            d = np.asarray(self.direction, dtype=float)
            if abs(np.linalg.norm(d) - 1) > 1e-12:
                raise ValueError("direction must be a unit vector")
        elif self.location is None:
            raise ValueError("point source needs a location")

    @property
    def k0(self):
        return 2 * np.pi / self.wavelength

    def _mirror(self, points):
        axis, pos = self.image_plane
        q = np.array(points, dtype=float, copy=True)
        q[..., axis] = 2 * pos - q[..., axis]
        return q

    def field(self, points):
        """Incident field at ``points`` (``(..., dim)``)."""
        points = np.asarray(points, dtype=float)
        out = self._field(points)
        if self.image_plane is not None:
            out = out + self._field(self._mirror(points))
        return out

    def _field(self, points):
        k = self.k0
        if self.kind == "plane":
            d = np.asarray(self.direction, dtype=float)
            return self.amplitude * np.exp(1j * k * points @ d)
        r = np.linalg.norm(points - np.asarray(self.location, dtype=float), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            if points.shape[-1] == 2:
                return self.amplitude * 0.25j * special.hankel1(0, k * r)
            return self.amplitude * np.exp(1j * k * r) / (4 * np.pi * r)


# ---------------------------------------------------------------------------
# Rigid geometry
# ---------------------------------------------------------------------------

@dataclass
class RigidGeometry:
    """Cell volume fractions and face apertures of the fluid region."""

    volume: np.ndarray
    apertures: list

    @property
    def solid(self):
        return self.volume <= 0


def sphere_levelset(radius, center=None):
    def phi(points):
        c = 0 if center is None else np.asarray(center, dtype=float)
        return np.linalg.norm(np.asarray(points) - c, axis=-1) - radius
    return phi


def _face_corner_offsets(dim, a):
    tang = [b for b in range(dim) if b != a]
    offs = []
    for signs in np.ndindex(*(2,) * len(tang)):
        o = np.zeros(dim)
        for b, s in zip(tang, signs):
            o[b] = s - 0.5
        offs.append(o)
    return tang, offs


def rigid_geometry(grid: GridSpec, rigid, subsamples=None) -> RigidGeometry:
    """Fluid fractions for a rigid body given as a level set or a boolean cell mask."""
    dim = grid.dim
    h = np.asarray(grid.spacing)
    if rigid is None:
        return RigidGeometry(np.ones(grid.n), [np.ones(grid.face_points(a).shape[:-1])
                                               for a in range(dim)])
    if not callable(rigid):
        mask = np.asarray(rigid, dtype=bool)
        if mask.shape != grid.n:
            raise ValueError("rigid mask shape must match the grid")
        vol = np.where(mask, 0.0, 1.0)
        aps = []
        for a in range(dim):
            pad = [(0, 0)] * dim
            pad[a] = (1, 1)
            m = np.pad(mask, pad, constant_values=False)
            sl_lo = [slice(None)] * dim
            sl_hi = [slice(None)] * dim
            sl_lo[a] = slice(0, -1)
            sl_hi[a] = slice(1, None)
            aps.append(np.where(m[tuple(sl_lo)] | m[tuple(sl_hi)], 0.0, 1.0))
        return RigidGeometry(vol, aps)

    phi = rigid
    if subsamples is None:
        subsamples = 16 if dim == 2 else 6
    # apertures
    aps = []
    for a in range(dim):
        pts = grid.face_points(a)
        tang, offs = _face_corner_offsets(dim, a)
        corners = np.stack([phi(pts + o * h) for o in offs], axis=0)
        ap = (corners.min(axis=0) >= 0).astype(float)
        cut = (corners.min(axis=0) < 0) & (corners.max(axis=0) >= 0)
        if np.any(cut):
            if dim == 2:
                c0, c1 = corners[0][cut], corners[1][cut]
                pos = np.maximum(c0, c1)
                neg = np.minimum(c0, c1)
                ap[cut] = pos / (pos - neg)
            else:
                q = pts[cut]
                m = 2 * subsamples
                t = (np.arange(m) + 0.5) / m - 0.5
                g1, g2 = np.meshgrid(t, t, indexing="ij")
                acc = np.zeros(q.shape[0])
                for u, v in zip(g1.ravel(), g2.ravel()):
                    o = np.zeros(dim)
                    o[tang[0]], o[tang[1]] = u, v
                    acc += phi(q + o * h) >= 0
                ap[cut] = acc / (m * m)
        aps.append(ap)
    # volume fractions
    pts = grid.cell_points()
    corner_vals = []
    for signs in np.ndindex(*(2,) * dim):
        o = (np.asarray(signs) - 0.5) * h
        corner_vals.append(phi(pts + o))
    corner_vals.append(phi(pts))
    corner_vals = np.stack(corner_vals)
    vol = (corner_vals.min(axis=0) >= 0).astype(float)
    cut = (corner_vals.min(axis=0) < 0) & (corner_vals.max(axis=0) >= 0)
    if np.any(cut):
        q = pts[cut]
        t = (np.arange(subsamples) + 0.5) / subsamples - 0.5
        acc = np.zeros(q.shape[0])
        for o in np.stack(np.meshgrid(*([t] * dim), indexing="ij"), -1).reshape(-1, dim):
            acc += phi(q + o * h) >= 0
        vol[cut] = acc / subsamples**dim
    # a cell without any open face cannot exchange flux: treat it as solid
    open_face = np.zeros(grid.n, dtype=bool)
    for a in range(dim):
        sl_lo = [slice(None)] * dim
        sl_hi = [slice(None)] * dim
        sl_lo[a] = slice(0, -1)
        sl_hi[a] = slice(1, None)
        open_face |= aps[a][tuple(sl_lo)] > 0
        open_face |= aps[a][tuple(sl_hi)] > 0
    vol[~open_face] = 0.0
    for a in range(dim):
        sl_lo = [slice(None)] * dim
        sl_hi = [slice(None)] * dim
        sl_lo[a] = slice(0, -1)
        sl_hi[a] = slice(1, None)
        solid = vol <= 0
        pad = [(0, 0)] * dim
        pad[a] = (1, 1)
        sp_ = np.pad(solid, pad, constant_values=False)
        aps[a] = np.where(sp_[tuple(sl_lo)] | sp_[tuple(sl_hi)], 0.0, aps[a])
    return RigidGeometry(vol, aps)


# ---------------------------------------------------------------------------
# Material sampling
# ---------------------------------------------------------------------------

def _eval_material(material, points, dim, chunk=200000):
    flat = points.reshape(-1, dim)
    inv = np.empty((flat.shape[0], dim, dim), dtype=complex)
    kap = np.empty(flat.shape[0], dtype=complex)
    for s in range(0, flat.shape[0], chunk):
        t, k = material(flat[s:s + chunk])
        t = np.asarray(t)
        if t.shape[-1] != dim:
            if t.shape[-1] == 3 and dim == 2:
                t = t[..., [0, 2]][..., [0, 2], :]
            else:
                raise ValueError("material tensor dimension does not match the grid")
        inv[s:s + chunk] = t
        kap[s:s + chunk] = k
    if not (np.all(np.isfinite(inv)) and np.all(np.isfinite(kap))):
        raise ValueError("material sampler returned non-finite entries")
    return inv.reshape(points.shape[:-1] + (dim, dim)), kap.reshape(points.shape[:-1])


def sample_material(grid: GridSpec, material, subsample=True):
    """Face tensors (one array per axis) and cell inverse moduli.

    With ``subsample`` each face value combines two samples at a quarter cell
    on either side (harmonic mean for the normal coefficient, arithmetic for
    the rest), and each cell's ``1/kappa`` is the mean over its ``2**dim``
    sub-cell centres.
    """
    dim = grid.dim
    h = np.asarray(grid.spacing)
    faces = []
    for a in range(dim):
        pts = grid.face_points(a)
        if material is None:
            faces.append(np.broadcast_to(np.eye(dim), pts.shape[:-1] + (dim, dim)).astype(complex))
            continue
        if subsample:
            off = np.zeros(dim)
            off[a] = 0.25 * h[a]
            t1, _ = _eval_material(material, pts - off, dim)
            t2, _ = _eval_material(material, pts + off, dim)
            t = 0.5 * (t1 + t2)
            n1, n2 = t1[..., a, a], t2[..., a, a]
            with np.errstate(divide="ignore", invalid="ignore"):
                harm = np.where((n1 == 0) | (n2 == 0), 0.0, 2 * n1 * n2 / (n1 + n2))
            t[..., a, a] = harm
        else:
            t, _ = _eval_material(material, pts, dim)
        faces.append(t)
    pts = grid.cell_points()
    if material is None:
        binv = np.ones(grid.n, dtype=complex)
    elif subsample:
        binv = np.zeros(grid.n, dtype=complex)
        for signs in np.ndindex(*(2,) * dim):
            o = (np.asarray(signs) - 0.5) * 0.5 * h
            _, k = _eval_material(material, pts + o, dim)
            binv += 1.0 / k
        binv /= 2**dim
    else:
        _, k = _eval_material(material, pts, dim)
        binv = 1.0 / k
    return faces, binv


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

@dataclass
class HelmholtzOperator:
    matrix: sp.csr_matrix
    grid: GridSpec
    k0: float
    material: Callable | None
    pml: PMLSpec
    boundary: tuple
    rigid: object = None
    geometry: RigidGeometry | None = None
    subsample: bool = True
    flags: set = field(default_factory=set)
    _background: sp.csr_matrix | None = None

    @property
    def solid(self):
        return self.geometry.solid if self.geometry is not None else np.zeros(self.grid.n, bool)

    def background(self):
        """Operator with background material and no rigid body (same grid, PML, boundaries)."""
        if self._background is None:
            if self.material is None and self.rigid is None:
                self._background = self.matrix
            else:
                self._background = assemble(self.grid, None, self.pml, self.k0,
                                            boundary=self.boundary).matrix
        return self._background

    def with_rigid(self, rigid):
        return assemble(self.grid, self.material, self.pml, self.k0, rigid=rigid,
                        boundary=self.boundary, subsample=self.subsample)


def _normalize_boundary(boundary, dim):
    if boundary is None:
        return tuple((DIRICHLET, DIRICHLET) for _ in range(dim))
    out = []
    for b in boundary:
        if isinstance(b, str):
            b = (b, b)
        for side in b:
            if side not in (DIRICHLET, NEUMANN):
                raise ValueError(f"unknown boundary kind {side!r}")
        out.append(tuple(b))
    if len(out) != dim:
        raise ValueError("boundary must be given per axis")
    return tuple(out)


def assemble(grid: GridSpec, material=None, pml: PMLSpec = None, k0=1.0, rigid=None,
             boundary=None, subsample=True) -> HelmholtzOperator:
    """Sparse operator for ``div(A grad p) + k0**2 b p`` with PML folded into ``A`` and ``b``.

    Parameters
    ----------
    material : callable or None
        ``material(points) -> (inv_density, bulk_modulus)`` for points of
        shape ``(n, dim)``; 3x3 tensors are reduced to the ``(x, z)`` block in 2D.
    pml : PMLSpec
        Absorbing layer; ``None`` means no PML.
    rigid : callable, boolean array or None
        Level set (negative inside) or staircase mask of sound-hard bodies.
    boundary : per-axis ``(lo, hi)`` kinds
        ``"dirichlet"`` (zero ghost, default) or ``"neumann"`` (rigid wall).
    """
    if k0 <= 0:
        raise ValueError("k0 must be positive")
    pml = NO_PML if pml is None else pml
    dim = grid.dim
    boundary = _normalize_boundary(boundary, dim)
    h = np.asarray(grid.spacing)
    n = grid.n
    N = grid.size
    flags = set()

    faces_t, binv = sample_material(grid, material, subsample)
    geom = rigid_geometry(grid, rigid) if rigid is not None else None
    solid = geom.solid if geom is not None else np.zeros(n, dtype=bool)
    volume = geom.volume if geom is not None else np.ones(n)

    # stretch factors at face centres and cell centres
    def stretch_at(points):
        return [pml.stretch(grid, b, points[..., b], k0) for b in range(dim)]

    pad_shape = tuple(m + 2 for m in n)
    unknown = -np.ones(pad_shape, dtype=np.int64)
    interior = tuple(slice(1, -1) for _ in range(dim))
    unknown[interior] = np.arange(N).reshape(n)
    # available for tangential differences: fluid unknowns and dirichlet ghosts
    avail = np.zeros(pad_shape, dtype=bool)
    avail[interior] = ~solid
    for a in range(dim):
        for side, kind in zip((0, -1), boundary[a]):
            if kind == DIRICHLET:
                sl = [slice(1, -1)] * dim
                sl[a] = side
                avail[tuple(sl)] = True

    rows, cols, vals = [], [], []
    for a in range(dim):
        fp = grid.face_points(a)
        fshape = fp.shape[:-1]
        s = stretch_at(fp)
        sdet = np.prod(s, axis=0)
        A = faces_t[a] * sdet[..., None, None]
        for b in range(dim):
            A[..., b, :] /= s[b][..., None]
            A[..., :, b] /= s[b][..., None]
        ap = np.ones(fshape) if geom is None else geom.apertures[a].copy()
        # neumann walls close the boundary faces
        for side, kind in zip((0, -1), boundary[a]):
            if kind == NEUMANN:
                sl = [slice(None)] * dim
                sl[a] = side
                ap[tuple(sl)] = 0.0
        # padded indices of the two cells adjacent to each face
        grids = np.meshgrid(*[np.arange(fshape[b]) + (0 if b == a else 1) for b in range(dim)],
                            indexing="ij")
        left = [g.ravel() for g in grids]
        right = [g.copy() for g in left]
        right[a] = right[a] + 1
        uL = unknown[tuple(left)]
        uR = unknown[tuple(right)]
        w_diag = (ap * A[..., a, a]).ravel() / h[a] ** 2
        keep = w_diag != 0
        # D_a^T w D_a with sign: L gets -w on diagonals and +w off-diagonal
        for ui, uj, sgn in ((uL, uL, -1), (uR, uR, -1), (uL, uR, 1), (uR, uL, 1)):
            m = keep & (ui >= 0) & (uj >= 0)
            rows.append(ui[m])
            cols.append(uj[m])
            vals.append(sgn * w_diag[m])
        # cross terms: -1/2 (D_a^T W T_ab + T_ab^T W D_a)
        for b in range(dim):
            if b == a:
                continue
            w = (ap * A[..., a, b]).ravel()
            if not np.any(w != 0):
                continue
            t_rows, t_cols, t_vals = _tangential_stencil(left, right, b, avail, unknown, h[b])
            # D_a (face f): +1/h at R, -1/h at L
            fidx = np.arange(w.size)
            d_rows = np.concatenate([fidx, fidx])
            d_cols = np.concatenate([uR, uL])
            d_vals = np.concatenate([np.full(w.size, 1.0 / h[a]), np.full(w.size, -1.0 / h[a])])
            dm = d_cols >= 0
            D = sp.csr_matrix((d_vals[dm], (d_rows[dm], d_cols[dm])), shape=(w.size, N))
            T = sp.csr_matrix((t_vals, (t_rows, t_cols)), shape=(w.size, N))
            W = sp.diags(w)
            C = -0.5 * (D.T @ W @ T + T.T @ W @ D)
            C = C.tocoo()
            rows.append(C.row)
            cols.append(C.col)
            vals.append(C.data)

    cp = grid.cell_points()
    s = stretch_at(cp)
    mass = (k0**2) * binv * np.prod(s, axis=0) * volume
    mass = np.where(solid, 0.0, mass).ravel()
    idx = np.arange(N)
    rows.append(idx)
    cols.append(idx)
    vals.append(mass)
    if np.any(solid):
        sidx = np.flatnonzero(solid.ravel())
        rows.append(sidx)
        cols.append(sidx)
        vals.append(np.ones(sidx.size))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate([np.asarray(v, dtype=complex) for v in vals])
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite operator entries")
    L = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    L.sum_duplicates()
    return HelmholtzOperator(L, grid, float(k0), material, pml, boundary, rigid, geom,
                             subsample, flags)


def _tangential_stencil(left, right, b, avail, unknown, hb):
    """Sparse rows of the face-averaged tangential derivative along axis ``b``."""
    nf = left[0].size
    rows, cols, vals = [], [], []
    sides = []
    for cell in (left, right):
        c = tuple(cell)
        is_unknown = unknown[c] >= 0
        sides.append(is_unknown & avail[c])
    count = sides[0].astype(float) + sides[1].astype(float)
    weight = np.where(count > 0, 1.0 / np.maximum(count, 1), 0.0)
    fidx = np.arange(nf)
    for cell, use in zip((left, right), sides):
        plus = [x.copy() for x in cell]
        minus = [x.copy() for x in cell]
        plus[b] = plus[b] + 1
        minus[b] = minus[b] - 1
        ap = avail[tuple(plus)]
        am = avail[tuple(minus)]
        both = use & ap & am
        only_p = use & ap & ~am
        only_m = use & ~ap & am
        uc = unknown[tuple(cell)]
        up = unknown[tuple(plus)]
        um = unknown[tuple(minus)]
        for sel, entries in (
            (both, ((up, 0.5 / hb), (um, -0.5 / hb))),
            (only_p, ((up, 1.0 / hb), (uc, -1.0 / hb))),
            (only_m, ((uc, 1.0 / hb), (um, -1.0 / hb))),
        ):
            for u, coef in entries:
                m = sel & (u >= 0)
                rows.append(fidx[m])
                cols.append(u[m])
                vals.append(coef * weight[m])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------

@dataclass
class FieldSolution:
    """Scattered and total fields on the grid (cell centres)."""

    p: np.ndarray
    p_total: np.ndarray
    grid: GridSpec
    residual: float
    iterations: int
    converged: bool
    residual_history: list = field(default_factory=list)
    source: SourceSpec | None = None
    solid: np.ndarray | None = None


def _preconditioner(A, kind):
    if kind in (None, "none"):
        return None
    if kind == "jacobi":
        d = A.diagonal()
        d = np.where(d == 0, 1.0, d)
        return spla.LinearOperator(A.shape, matvec=lambda v: v / d, dtype=complex)
    if kind == "ilu":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-5, fill_factor=20)
        return spla.LinearOperator(A.shape, matvec=ilu.solve, dtype=complex)
    if kind == "lu":
        lu = spla.splu(A.tocsc())
        return spla.LinearOperator(A.shape, matvec=lu.solve, dtype=complex)
    raise ValueError(f"unknown preconditioner {kind!r}")


def krylov_solve(A, b, tol=1e-6, max_iter=20000, restart=60, preconditioner="jacobi", x0=None):
    """Restarted GMRES to relative residual ``tol``, judged on the true residual.

    Returns ``(x, relative_residual, iterations, history)`` where ``history``
    holds the (preconditioned) residual estimate of every inner iteration.
    """
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0, 0, [0.0]
    M = _preconditioner(A, preconditioner)
    history = []
    x = np.zeros_like(b) if x0 is None else np.asarray(x0, dtype=complex)
    inner_tol = tol
    total = 0
    res = np.linalg.norm(b - A @ x) / bnorm
    # the preconditioned estimate can undershoot the true residual; tighten and resume
    for _ in range(4):
        budget = max_iter - total
        if res <= tol or budget <= 0:
            break
        start = len(history)
        x, _ = spla.gmres(A, b, x0=x, rtol=inner_tol, atol=0.0, restart=min(restart, budget),
                          maxiter=max(1, budget // restart), M=M,
                          callback=lambda rk: history.append(float(rk)),
                          callback_type="pr_norm")
        total += max(len(history) - start, 1)
        previous, res = res, np.linalg.norm(b - A @ x) / bnorm
        if res >= previous:
            break
        inner_tol *= 0.1
    return x, float(res), total, history


def scattered_field_solve(op: HelmholtzOperator, incident: SourceSpec, rigid=None, tol=1e-6,
                          max_iter=20000, preconditioner="jacobi", restart=60,
                          raise_on_failure=False) -> FieldSolution:
    """Solve ``L p_sc = -(L - L_bg) p_inc`` and return scattered and total fields.

    Solid cells are pinned to ``p_sc = -p_inc`` (zero total field).
    ``preconditioner`` is ``"jacobi"``, ``"ilu"``, ``"lu"`` or ``"none"``.
    """
    if rigid is not None:
        op = op.with_rigid(rigid)
    grid = op.grid
    if abs(incident.k0 - op.k0) > 1e-12 * op.k0:
        raise ValueError("source wavelength does not match the operator wavenumber")
    pts = grid.cell_points()
    with np.errstate(all="ignore"):
        p_inc = incident.field(pts).ravel()
    solid = op.solid.ravel()
    L = op.matrix
    Lb = op.background()
    diff = (L - Lb).tocsr()
    diff.eliminate_zeros()
    touched = np.unique(diff.indices)
    if not np.all(np.isfinite(p_inc[touched])):
        raise ValueError("incident field is singular where the material differs from background")
    p_use = np.where(np.isfinite(p_inc), p_inc, 0.0)
    rhs = -(diff @ p_use)
    rhs[solid] = -p_use[solid]
    x, res, its, hist = krylov_solve(L, rhs, tol, max_iter, restart, preconditioner)
    converged = res <= tol
    sol = FieldSolution(
        p=x.reshape(grid.n),
        p_total=(x + p_inc).reshape(grid.n),
        grid=grid,
        residual=res,
        iterations=its,
        converged=converged,
        residual_history=hist,
        source=incident,
        solid=op.solid,
    )
    if not converged:
        log.warning("FDFD solve stopped at relative residual %.3e after %d iterations", res, its)
        if raise_on_failure:
            raise NonConvergenceError(f"residual {res:.3e} > tol {tol:.1e}", sol)
    return sol


def point_source_solve(op: HelmholtzOperator, source: SourceSpec, tol=1e-6, max_iter=20000,
                       preconditioner="jacobi", restart=60, raise_on_failure=False):
    """Total-field solve ``L p = -amplitude delta(x - x_s)`` (delta spread over one cell)."""
    if source.kind != "point":
        raise ValueError("point_source_solve needs a point source")
    grid = op.grid
    idx = grid_index(grid, source.location)
    rhs = np.zeros(grid.size, dtype=complex)
    rhs[np.ravel_multi_index(idx, grid.n)] = -source.amplitude / np.prod(grid.spacing)
    x, res, its, hist = krylov_solve(op.matrix, rhs, tol, max_iter, restart, preconditioner)
    sol = FieldSolution(x.reshape(grid.n), x.reshape(grid.n), grid, res, its, res <= tol, hist,
                        source, op.solid)
    if not sol.converged and raise_on_failure:
        raise NonConvergenceError(f"residual {res:.3e} > tol {tol:.1e}", sol)
    return sol


def grid_index(grid: GridSpec, point):
    point = np.asarray(point, dtype=float)
    idx = tuple(int(np.clip(np.floor((point[a] - grid.lower[a]) / grid.spacing[a]), 0,
                            grid.n[a] - 1)) for a in range(grid.dim))
    return idx


# ---------------------------------------------------------------------------
# Post-processing
# ---------------------------------------------------------------------------

def mismatch_metric(field_, reference, region):
    """Relative L2 mismatch ``||p - p_ref|| / ||p_ref||`` over a boolean region."""
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty comparison region")
    p = field_.p_total if isinstance(field_, FieldSolution) else np.asarray(field_)
    q = reference.p_total if isinstance(reference, FieldSolution) else np.asarray(reference)
    if p.shape != q.shape:
        raise ValueError("fields live on different grids")
    den = np.linalg.norm(q[region])
    if den == 0:
        raise ValueError("reference field vanishes on the region")
    return float(np.linalg.norm((p - q)[region]) / den)


def interpolate(grid: GridSpec, values, points):
    """Multilinear interpolation of cell-centred ``values`` at ``points``."""
    from scipy.interpolate import RegularGridInterpolator

    axes = [grid.axis_centers(a) for a in range(grid.dim)]
    f_re = RegularGridInterpolator(axes, values.real, bounds_error=False, fill_value=None)
    f_im = RegularGridInterpolator(axes, values.imag, bounds_error=False, fill_value=None)
    return f_re(points) + 1j * f_im(points)


def box_flux(grid: GridSpec, p, box_lo, box_hi, k0):
    """Outward time-averaged power ``integral Im(conj(p) dp/dn) dS / k0`` through a box.

    The box faces are snapped to cell faces.  For a unit plane wave in a unit
    background this is the scattering cross section (width in 2D) of ``p``.
    """
    dim = grid.dim
    h = np.asarray(grid.spacing)
    lo_i = [int(round((box_lo[a] - grid.lower[a]) / h[a])) for a in range(dim)]
    hi_i = [int(round((box_hi[a] - grid.lower[a]) / h[a])) for a in range(dim)]
    total = 0.0
    for a in range(dim):
        others = [b for b in range(dim) if b != a]
        for face_i, sign in ((lo_i[a], -1.0), (hi_i[a], 1.0)):
            sl_in = [slice(None)] * dim
            sl_out = [slice(None)] * dim
            for b in others:
                sl_in[b] = slice(lo_i[b], hi_i[b])
                sl_out[b] = slice(lo_i[b], hi_i[b])
            sl_in[a] = face_i - 1
            sl_out[a] = face_i
            p_m = p[tuple(sl_in)]
            p_p = p[tuple(sl_out)]
            pf = 0.5 * (p_m + p_p)
            dp = (p_p - p_m) / h[a]
            area = np.prod([h[b] for b in others])
            total += sign * np.sum(np.imag(np.conj(pf) * dp)) * area
    return float(total / k0)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def extract_slice(solution, axis=None, position=None, component="total", line=None):
    """Plane (``axis``, ``position``) or line slice of ``Re(p)``.

    Returns ``(coords, values, origin, spacing, dims)`` where ``coords`` are
    the physical coordinates of the samples.
    """
    grid = solution.grid
    p = solution.p_total if component == "total" else solution.p
    if axis is None:
        axis = grid.dim - 1
        position = 0.0 if position is None else position
    if not grid.lower[axis] <= position <= grid.upper[axis]:
        raise ValueError(f"slice position {position} outside the grid along axis {axis}")
    i = min(int((position - grid.lower[axis]) / grid.spacing[axis]), grid.n[axis] - 1)
    sl = [slice(None)] * grid.dim
    sl[axis] = i
    vals = np.real(p[tuple(sl)])
    pts = grid.cell_points()[tuple(sl)]
    keep = [a for a in range(grid.dim) if a != axis]
    if line is not None:
        line_axis, line_pos = line
        other = [a for a in keep if a != line_axis]
        if other:
            o = other[0]
            oi = keep.index(o)
            if not grid.lower[o] <= line_pos <= grid.upper[o]:
                raise ValueError("line position outside the grid")
            k = min(int((line_pos - grid.lower[o]) / grid.spacing[o]), grid.n[o] - 1)
            idx = [slice(None)] * vals.ndim
            idx[oi] = k
            vals = vals[tuple(idx)]
            pts = pts[tuple(idx)]
            keep = [line_axis]
    origin = [float(pts.reshape(-1, grid.dim)[0][a]) for a in keep]
    spacing = [grid.spacing[a] for a in keep]
    return pts, vals, origin, spacing, list(vals.shape)


def slice_to_csv(pts, vals, names=None):
    dim = pts.shape[-1]
    names = names or (["x", "z"] if dim == 2 else ["x", "y", "z"])
    flat_p = pts.reshape(-1, dim)
    flat_v = np.asarray(vals).ravel()
    lines = [",".join(names + ["re_p"])]
    for q, v in zip(flat_p, flat_v):
        lines.append(",".join(f"{c:.9g}" for c in q) + f",{v:.9g}")
    return "\n".join(lines) + "\n"


def to_vtk(values, origin, spacing, name="re_p", title="acloak field"):
    """Legacy VTK structured-points text (ASCII) for a 1-3 dimensional array."""
    values = np.asarray(values, dtype=float)
    dims = list(values.shape) + [1] * (3 - values.ndim)
    origin = list(origin) + [0.0] * (3 - len(origin))
    spacing = list(spacing) + [1.0] * (3 - len(spacing))
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*dims),
        "ORIGIN {:.9g} {:.9g} {:.9g}".format(*origin),
        "SPACING {:.9g} {:.9g} {:.9g}".format(*spacing),
        f"POINT_DATA {values.size}",
        f"SCALARS {name} double 1",
        "LOOKUP_TABLE default",
    ]
    # VTK ordering: first axis varies fastest
    flat = values.reshape(dims).ravel(order="F")
    out += [f"{v:.9g}" for v in flat]
    return "\n".join(out) + "\n"


def probe_and_export(solution, path_stem, axis=None, position=None, line=None,
                     component="total"):
    """Write ``<stem>.csv`` and ``<stem>.vtk`` for a plane or line slice of ``Re(p)``."""
    from pathlib import Path

    pts, vals, origin, spacing, dims = extract_slice(solution, axis, position, component, line)
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    csv_path = stem.with_suffix(".csv")
    vtk_path = stem.with_suffix(".vtk")
    csv_path.write_text(slice_to_csv(pts, vals))
    vtk_path.write_text(to_vtk(vals, origin, spacing))
    return csv_path, vtk_path
