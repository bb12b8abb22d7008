"""Scene files, figure presets and the run pipeline.

A scene is an INI-style text file with the sections ``[transform]``,
``[obstacle]``, ``[source]``, ``[solver]`` and ``[output]``.  Lengths carry
their unit in the key name (``wavelength_m``).  Example::

    [transform]
    kind = kohn
    r0_m = 0.15
    r1_m = 0.2
    r2_m = 0.4
    shells = 10
    gauge = reduced

    [obstacle]
    kind = rigid-sphere
    radius_m = 0.2

    [source]
    kind = plane
    wavelength_m = 0.25

    [solver]
    kind = mie
"""
from __future__ import annotations

import configparser
import json
import logging
import re
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fdfd, layers, mie, transforms

log = logging.getLogger(__name__)

TRANSFORM_KINDS = ("none", "pendry", "kohn", "carpet", "faceted")
OBSTACLE_KINDS = ("none", "rigid-sphere", "soft-sphere", "bump")
SOLVER_KINDS = ("mie", "fdfd")
SHAPES = ("icosahedron", "star", "mesh")
PLANES = ("xz", "yz", "xy")


class SceneError(ValueError):
    """Invalid scene; ``line`` is the 1-based line in the scene text when known."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class TransformConfig:
    kind: str = "none"
    r0_m: float | None = None
    r1_m: float | None = None
    r2_m: float | None = None
    shells: int = 0
    sublayers: int = 2
    gauge: str = "exact"
    cover_radius_m: float | None = None
    cover_offset_m: float | None = None
    shape: str | None = None
    inner_edge_m: float | None = None
    outer_edge_m: float | None = None
    inner_mesh: str | None = None
    outer_mesh: str | None = None


@dataclass(frozen=True)
class ObstacleConfig:
    kind: str = "none"
    radius_m: float | None = None
    offset_m: float | None = None


@dataclass(frozen=True)
class SourceConfig:
    kind: str = "plane"
    wavelength_m: float | None = None
    direction: tuple = (0.0, 0.0, 1.0)
    location_m: tuple | None = None
    amplitude: complex = 1.0


@dataclass(frozen=True)
class SolverConfig:
    kind: str = "mie"
    dimension: int = 3
    cells_per_wavelength: float = 20.0
    half_width_m: float | None = None
    pml_cells: int = 10
    tol: float = 1e-6
    max_iter: int = 20000
    preconditioner: str = "jacobi"
    l_max: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    slices: tuple = ("xz",)
    profile_samples: int = 201


@dataclass(frozen=True)
class SceneSpec:
    transform: TransformConfig = field(default_factory=TransformConfig)
    obstacle: ObstacleConfig = field(default_factory=ObstacleConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    name: str = field(default="", compare=False)

    @property
    def radially_symmetric(self):
        return (self.transform.kind in ("none", "pendry", "kohn")
                and self.obstacle.kind in ("none", "rigid-sphere", "soft-sphere")
                and self.source.kind == "plane")

    @property
    def k0(self):
        return 2 * np.pi / self.source.wavelength_m


SECTIONS = {
    "transform": TransformConfig,
    "obstacle": ObstacleConfig,
    "source": SourceConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
}

# per transform kind: keys that must be present
REQUIRED = {
    "pendry": ("r1_m", "r2_m"),
    "kohn": ("r0_m", "r1_m", "r2_m"),
    "carpet": (),
    "faceted": ("shape",),
    "none": (),
}


# ---------------------------------------------------------------------------
# Parsing and printing
# ---------------------------------------------------------------------------

def _line_index(text):
    """``{(section, key): line}`` and ``{section: line}`` for error messages."""
    keys, sections = {}, {}
    current = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip().lower()
            sections.setdefault(current, no)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and current:
            keys.setdefault((current, m.group(1).strip().lower()), no)
    return keys, sections


def _convert(cls, name, value):
    f = {f.name: f for f in fields(cls)}[name]
    kind = str(f.type)
    if "tuple" in kind:
        if name == "slices":
            items = tuple(value.replace(",", " ").split())
            return items
        return tuple(float(v) for v in value.replace(",", " ").split())
    if "complex" in kind:
        return complex(value.replace(" ", ""))
    if "float" in kind:
        return float(value)
    if "int" in kind:
        return int(value)
    return value.strip()


def parse_scene(text, name=""):
    """Parse and validate scene text; raises :class:`SceneError` with line numbers."""
    keys, sections = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text)
    except configparser.DuplicateSectionError as err:
        raise SceneError(f"duplicate section [{err.section}]", err.lineno) from None
    except configparser.DuplicateOptionError as err:
        raise SceneError(f"duplicate key {err.option!r} in [{err.section}]", err.lineno) from None
    except configparser.MissingSectionHeaderError as err:
        raise SceneError("key outside any section", err.lineno) from None
    except configparser.Error as err:
        raise SceneError(str(err)) from None

    parts = {}
    for section in cp.sections():
        sec = section.lower()
        if sec not in SECTIONS:
            raise SceneError(f"unknown section [{section}]; expected one of {list(SECTIONS)}",
                             sections.get(sec))
        cls = SECTIONS[sec]
        allowed = [f.name for f in fields(cls)]
        if sec == "transform" and "kind" not in cp[section]:
            raise SceneError("[transform] needs 'kind'; required keys per kind: "
                             + "; ".join(f"{k}: {', '.join(('kind',) + v)}"
                                         for k, v in REQUIRED.items()),
                             sections.get(sec))
        if sec in ("source", "solver") and "kind" not in cp[section]:
            raise SceneError(f"[{sec}] needs 'kind'", sections.get(sec))
        values = {}
        for key, raw in cp[section].items():
            line = keys.get((sec, key))
            if key not in allowed:
                raise SceneError(f"unknown key {key!r} in [{sec}]; allowed: {', '.join(allowed)}",
                                 line)
            try:
                values[key] = _convert(cls, key, raw)
            except ValueError:
                raise SceneError(f"cannot read {key} = {raw!r}", line) from None
        parts[sec] = cls(**values)
    for sec in ("transform", "source", "solver"):
        if sec not in parts:
            raise SceneError(f"missing section [{sec}]")
    scene = SceneSpec(**parts, name=name)
    validate_scene(scene, keys, sections)
    return scene


def _fmt(value):
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, complex):
        return repr(value).strip("()")
    if isinstance(value, float):
        return repr(value)
    return str(value)


def print_scene(scene: SceneSpec):
    """Scene text; ``parse_scene(print_scene(s)) == s`` for valid scenes."""
    out = []
    for sec, cls in SECTIONS.items():
        part = getattr(scene, sec)
        out.append(f"[{sec}]")
        for f in fields(cls):
            value = getattr(part, f.name)
            if value is None:
                continue
            if f.name == "kind" or value != f.default:
                out.append(f"{f.name} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)


def validate_scene(scene: SceneSpec, keys=None, sections=None):
    keys = keys or {}
    sections = sections or {}

    def fail(msg, sec, key=None):
        raise SceneError(msg, keys.get((sec, key)) if key else sections.get(sec))

    t, o, s, v = scene.transform, scene.obstacle, scene.source, scene.solver
    if t.kind not in TRANSFORM_KINDS:
        fail(f"transform kind must be one of {TRANSFORM_KINDS}", "transform", "kind")
    missing = [k for k in REQUIRED[t.kind] if getattr(t, k) is None]
    if missing:
        fail(f"[transform] kind={t.kind} requires keys: {', '.join(missing)}", "transform")
    if t.gauge not in layers.GAUGES:
        fail(f"gauge must be one of {layers.GAUGES}", "transform", "gauge")
    if t.shells < 0:
        fail("shells must be >= 0", "transform", "shells")
    if t.sublayers != 2:
        fail("only two sublayers per shell are supported", "transform", "sublayers")
    if t.kind in ("pendry", "kohn"):
        r0 = 0.0 if t.kind == "pendry" else t.r0_m
        if t.kind == "pendry" and t.r0_m not in (None, 0.0):
            fail("the singular cloak has r0 = 0", "transform", "r0_m")
        if not 0 <= r0 <= t.r1_m < t.r2_m:
            fail(f"inconsistent radii: need r0 <= R1 < R2, got {r0}, {t.r1_m}, {t.r2_m}",
                 "transform", "r1_m")
        if t.gauge == "reduced" and r0 == 0:
            fail("the reduced gauge needs r0 > 0", "transform", "gauge")
    if t.kind == "faceted":
        if t.shape not in SHAPES:
            fail(f"shape must be one of {SHAPES}", "transform", "shape")
        need = ("inner_mesh", "outer_mesh") if t.shape == "mesh" else ("inner_edge_m",
                                                                       "outer_edge_m")
        miss = [k for k in need if getattr(t, k) is None]
        if miss:
            fail(f"faceted shape={t.shape} requires keys: {', '.join(miss)}", "transform")
    if o.kind not in OBSTACLE_KINDS:
        fail(f"obstacle kind must be one of {OBSTACLE_KINDS}", "obstacle", "kind")
    if o.kind in ("rigid-sphere", "soft-sphere"):
        if o.radius_m is None or o.radius_m <= 0:
            fail("sphere obstacle needs a positive radius_m", "obstacle", "radius_m")
        if t.kind in ("pendry", "kohn") and o.radius_m > t.r1_m * (1 + 1e-12):
            fail(f"obstacle radius {o.radius_m} exceeds the cloak inner radius {t.r1_m}",
                 "obstacle", "radius_m")
        if t.kind in ("pendry", "kohn") and t.shells and abs(o.radius_m - t.r1_m) > 1e-12:
            fail("a layered cloak must sit directly on the obstacle (radius_m = r1_m)",
                 "obstacle", "radius_m")
    if t.kind == "carpet" and o.kind != "bump":
        fail("a carpet needs a bump obstacle", "obstacle")
    if o.kind == "bump" and t.kind not in ("carpet", "none"):
        fail("a bump obstacle goes with a carpet or no transform", "obstacle", "kind")
    if s.kind not in ("plane", "point"):
        fail("source kind must be plane or point", "source", "kind")
    if s.wavelength_m is None or s.wavelength_m <= 0:
        fail("source needs a positive wavelength_m", "source", "wavelength_m")
    if len(s.direction) != 3 or abs(np.linalg.norm(s.direction) - 1) > 1e-9:
        fail("direction must be a 3-component unit vector", "source", "direction")
    if s.kind == "point" and (s.location_m is None or len(s.location_m) != 3):
        fail("point source needs location_m with three components", "source", "location_m")
    if v.kind not in SOLVER_KINDS:
        fail(f"solver kind must be one of {SOLVER_KINDS}", "solver", "kind")
    if v.kind == "mie":
        if not scene.radially_symmetric:
            fail("solver = mie needs a radially symmetric scene (spherical cloak or none, "
                 "sphere obstacle, plane wave)", "solver", "kind")
        if t.kind in ("pendry", "kohn") and t.shells < 1:
            fail("solver = mie needs a layered design (shells >= 1)", "transform", "shells")
        if t.kind == "none" and o.kind == "none":
            fail("nothing to scatter", "obstacle")
    else:
        if v.dimension not in (2, 3):
            fail("dimension must be 2 or 3", "solver", "dimension")
        if t.kind == "faceted" and v.dimension != 3:
            fail("faceted cloaks need dimension = 3", "solver", "dimension")
        if v.cells_per_wavelength < 10:
            fail("cells_per_wavelength must be at least 10", "solver", "cells_per_wavelength")
        if v.preconditioner not in ("jacobi", "ilu", "lu", "none"):
            fail("preconditioner must be jacobi, ilu, lu or none", "solver", "preconditioner")
        if t.kind in ("pendry", "kohn") and v.dimension == 2 and t.shells and o.kind == "none":
            fail("layered cylindrical cloaks need an obstacle core", "obstacle")
    for p in scene.output.slices:
        if p not in PLANES:
            fail(f"slice planes must be among {PLANES}", "output", "slices")
    if v.tol <= 0 or v.max_iter < 1:
        fail("tol must be positive and max_iter at least 1", "solver")
    return scene


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS = {
    "fig1-singular": ("Singular spherical cloak R1=0.5, R2=1 around a rigid ball, plane wave "
                      "0.3 m (layered approximation, Mie)", """
[transform]
kind = pendry
r1_m = 0.5
r2_m = 1.0
shells = 200
gauge = exact
[obstacle]
kind = rigid-sphere
radius_m = 0.5
[source]
kind = plane
wavelength_m = 0.3
direction = 1 0 0
[solver]
kind = mie
"""),
    "fig1-bare": ("Rigid ball of radius 0.5 m on its own, plane wave 0.3 m (Mie)", """
[transform]
kind = none
[obstacle]
kind = rigid-sphere
radius_m = 0.5
[source]
kind = plane
wavelength_m = 0.3
direction = 1 0 0
[solver]
kind = mie
"""),
}


def _kohn_2d(r0):
    return (f"Small-ball cloak r0={r0}, R1=0.5, R2=1 around a rigid core, plane wave 0.45 m "
            "(cylindrical analogue, FDFD, continuous anisotropic shell)", f"""
[transform]
kind = kohn
r0_m = {r0}
r1_m = 0.5
r2_m = 1.0
gauge = exact
[obstacle]
kind = rigid-sphere
radius_m = 0.5
[source]
kind = plane
wavelength_m = 0.45
direction = 0 0 1
[solver]
kind = fdfd
dimension = 2
cells_per_wavelength = 40
half_width_m = 1.3
pml_cells = 12
preconditioner = lu
""")


for _r0, _tag in ((0.2, "020"), (0.05, "005"), (0.45, "045")):
    PRESETS[f"fig2-kohn-{_tag}"] = _kohn_2d(_r0)

PRESETS["fig3-carpet"] = ("Carpet over the spherical-cap bump on rigid ground, plane wave "
                          "0.3 m from above (vertical section, FDFD)", """
[transform]
kind = carpet
cover_radius_m = 1.0
cover_offset_m = 0.5
[obstacle]
kind = bump
radius_m = 2.0
offset_m = 1.802776
[source]
kind = plane
wavelength_m = 0.3
direction = 0 0 -1
[solver]
kind = fdfd
dimension = 2
cells_per_wavelength = 20
half_width_m = 1.5
pml_cells = 12
preconditioner = lu
""")
PRESETS["fig3-bump"] = ("Bare spherical-cap bump on rigid ground, plane wave 0.3 m from above "
                        "(vertical section, FDFD)", """
[transform]
kind = none
[obstacle]
kind = bump
radius_m = 2.0
offset_m = 1.802776
[source]
kind = plane
wavelength_m = 0.3
direction = 0 0 -1
[solver]
kind = fdfd
dimension = 2
cells_per_wavelength = 20
half_width_m = 1.5
pml_cells = 12
preconditioner = lu
""")


def _mimetic(r0, tag):
    return (f"Layered small-ball cloak r0={r0}, R1=0.2, R2=0.4 on a rigid ball, 20 layers, "
            "reduced gauge, plane wave 0.25 m (Mie)", f"""
[transform]
kind = kohn
r0_m = {r0}
r1_m = 0.2
r2_m = 0.4
shells = 10
sublayers = 2
gauge = reduced
[obstacle]
kind = rigid-sphere
radius_m = 0.2
[source]
kind = plane
wavelength_m = 0.25
direction = 1 0 0
[solver]
kind = mie
""")


PRESETS["fig4-mimetic-005"] = _mimetic(0.05, "005")
PRESETS["fig4-mimetic-015"] = _mimetic(0.15, "015")
PRESETS["fig6-kohn-core"] = ("Layered small-ball cloak r0=0.15, R1=0.2, R2=0.4 with a fluid "
                             "core, reduced gauge, plane wave 0.25 m (Mie)", """
[transform]
kind = kohn
r0_m = 0.15
r1_m = 0.2
r2_m = 0.4
shells = 10
gauge = reduced
[obstacle]
kind = none
[source]
kind = plane
wavelength_m = 0.25
direction = 1 0 0
[solver]
kind = mie
""")
PRESETS["fig7-icosahedron"] = ("Icosahedral cloak, edges 0.2/0.4 m, point source 0.3 m "
                               "(3D FDFD)", """
[transform]
kind = faceted
shape = icosahedron
inner_edge_m = 0.2
outer_edge_m = 0.4
[source]
kind = point
wavelength_m = 0.3
location_m = -0.5 0 0
[solver]
kind = fdfd
dimension = 3
cells_per_wavelength = 10
half_width_m = 0.6
pml_cells = 8
[output]
slices = xz xy
""")
PRESETS["fig7-star"] = ("Six-point star cloak, edges 0.12/0.45 m, point source 0.3 m "
                        "(3D FDFD)", """
[transform]
kind = faceted
shape = star
inner_edge_m = 0.12
outer_edge_m = 0.45
[source]
kind = point
wavelength_m = 0.3
location_m = -0.6 0 0
[solver]
kind = fdfd
dimension = 3
cells_per_wavelength = 10
half_width_m = 0.7
pml_cells = 8
[output]
slices = xz xy
""")


def load_preset(name):
    if name not in PRESETS:
        raise SceneError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return parse_scene(PRESETS[name][1], name=name)


# ---------------------------------------------------------------------------
# Building blocks from a scene
# ---------------------------------------------------------------------------

def design_of(scene: SceneSpec):
    t = scene.transform
    if t.kind not in ("pendry", "kohn") or t.shells < 1:
        return None
    r0 = 0.0 if t.kind == "pendry" else t.r0_m
    core = {"rigid-sphere": "rigid", "soft-sphere": "pressure-release"}.get(scene.obstacle.kind,
                                                                            "fluid")
    dim = scene.solver.dimension if scene.solver.kind == "fdfd" else 3
    return layers.DesignSpec(r0, t.r1_m, t.r2_m, M=t.shells, N=t.sublayers, gauge=t.gauge,
                             core=core, dim=dim)


def stack_of(scene: SceneSpec):
    """Layer stack for Mie/FDFD; a bare obstacle gives an empty stack."""
    d = design_of(scene)
    if d is not None:
        if d.core == "fluid" and d.r0 == 0:
            return layers.LayerStack(layers.build_stack(replace(d, core="rigid")).layers,
                                     core="fluid", core_rho=1.0, core_kappa=1.0)
        return layers.build_stack(d)
    o = scene.obstacle
    core = "rigid" if o.kind == "rigid-sphere" else "pressure-release"
    return layers.LayerStack((), core=core, core_radius=o.radius_m)


def faceted_spec_of(t: TransformConfig, base=Path(".")):
    if t.shape == "mesh":
        inner = transforms.read_mesh((base / t.inner_mesh).read_text())
        outer = transforms.read_mesh((base / t.outer_mesh).read_text())
    elif t.shape == "icosahedron":
        inner, outer = transforms.icosahedron(t.inner_edge_m), transforms.icosahedron(t.outer_edge_m)
    else:
        inner = transforms.six_point_star(t.inner_edge_m)
        outer = transforms.six_point_star(t.outer_edge_m)
    spec = transforms.FacetedCloakSpec(inner, outer)
    spec.check()
    return spec


def carpet_spec_of(scene: SceneSpec):
    o, t = scene.obstacle, scene.transform
    return transforms.CarpetSpec.spherical_caps(
        o.radius_m, o.offset_m,
        1.0 if t.cover_radius_m is None else t.cover_radius_m,
        0.5 if t.cover_offset_m is None else t.cover_offset_m)


def material_sampler(scene: SceneSpec, dim=3):
    """``points -> (inv_density, bulk_modulus)`` for the scene (``None`` if no transform)."""
    t = scene.transform
    if t.kind == "none":
        return None
    if t.kind in ("pendry", "kohn"):
        d = design_of(replace(scene, solver=replace(scene.solver, dimension=dim)))
        if d is not None:
            return stack_of(replace(scene, solver=replace(scene.solver, dimension=dim))).field
        if t.kind == "pendry":
            spec = transforms.SphericalCloakSpec(t.r1_m, t.r2_m)
            return lambda p: transforms.pendry_sphere_field(spec, p, dim)
        spec = transforms.KohnCloakSpec(t.r0_m, t.r1_m, t.r2_m)
        core = scene.obstacle.kind == "none"
        return lambda p: transforms.kohn_ball_field(spec, p, dim, core=core)
    if t.kind == "carpet":
        spec = carpet_spec_of(scene)
        if dim == 2:
            spec = spec.section(0.0)
        return lambda p: transforms.carpet_field(spec, p, dim)
    spec = faceted_spec_of(t)
    return lambda p: transforms.faceted_field(spec, p)


def material_profile_csv(scene: SceneSpec, samples=None):
    """Material profile along a line: radial profile for spherical designs, tensor
    components along the symmetry axis otherwise."""
    samples = samples or scene.output.profile_samples
    t = scene.transform
    lines = []
    if t.kind in ("pendry", "kohn"):
        r0 = 0.0 if t.kind == "pendry" else t.r0_m
        prof = layers.shell_profile(r0, t.r1_m, t.r2_m, t.gauge)
        lo = t.r1_m + (t.r2_m - t.r1_m) * (1e-3 if r0 == 0 else 0.0)
        r = np.linspace(lo, t.r2_m, samples)
        rho_r, rho_t, kappa = prof(r)
        lines.append("r_m,rho_r,rho_t,kappa")
        lines += [f"{a:.9g},{b:.9g},{c:.9g},{d:.9g}" for a, b, c, d in zip(r, rho_r, rho_t, kappa)]
        return "\n".join(lines) + "\n"
    sampler = material_sampler(scene, 3)
    if sampler is None:
        raise SceneError("scene has no transform to sample")
    if t.kind == "carpet":
        z = np.linspace(0.0, carpet_spec_of(scene).z2(0.0, 0.0), samples)
        pts = np.stack([np.full_like(z, 1e-3), np.zeros_like(z), z], axis=-1)
    else:
        R = faceted_spec_of(t).S2.radius(np.array([[1.0, 0.0, 0.0]]))[0]
        x = np.linspace(0.0, 1.1 * R, samples)
        pts = np.stack([x, np.full_like(x, 1e-3), np.full_like(x, 1e-3)], axis=-1)
    inv, kappa = sampler(pts)
    lines.append("x_m,y_m,z_m,inv_xx,inv_yy,inv_zz,inv_xy,inv_xz,inv_yz,kappa")
    for p, m, k in zip(pts, np.real(inv), np.real(kappa)):
        vals = list(p) + [m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2], k]
        lines.append(",".join(f"{v:.9g}" for v in vals))
    return "\n".join(lines) + "\n"


def stack_summary(scene: SceneSpec):
    d = design_of(scene)
    if d is None:
        return None
    st = stack_of(scene)
    lo, hi = layers.stack_extremes(st)
    k = st.moduli()
    out = {"layers": len(st), "rho_min": lo, "rho_max": hi,
           "kappa_min": float(k.min()), "kappa_max": float(k.max())}
    if d.r0 > 0:
        out["core_rho"], out["core_kappa"] = layers.core_equivalent(d.r0, d.R1, d.gauge)
    return out


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------

def run_mie(scene: SceneSpec):
    st = stack_of(scene)
    res = mie.layered_scatter(st, scene.k0, l_max=scene.solver.l_max)
    out = {"sigma_sc": res.sigma_sc, "sigma_ext": res.sigma_ext,
           "efficiency": res.efficiency, "l_max": len(res.coefficients.s) - 1,
           "flags": sorted(res.flags)}
    if scene.obstacle.kind == "rigid-sphere":
        out["sigma_bare_obstacle"] = mie.rigid_sphere_scatter(scene.obstacle.radius_m,
                                                              scene.k0).sigma_sc
    t = scene.transform
    if t.kind == "kohn" and scene.obstacle.kind == "rigid-sphere":
        out["sigma_mimic_r0"] = mie.rigid_sphere_scatter(t.r0_m, scene.k0).sigma_sc
    return res, out


def _plane(dim, vec):
    v = np.asarray(vec, dtype=float)
    return tuple(v) if dim == 3 else (float(v[0]), float(v[2]))


def fdfd_problem(scene: SceneSpec):
    """``(grid, pml, boundary, material, rigid, source, region, reference)`` for an FDFD run.

    ``region`` is the comparison mask (outside cloak/obstacle and PML) and
    ``reference`` the unperturbed total field on the grid (or ``None``).
    """
    v, s, t, o = scene.solver, scene.source, scene.transform, scene.obstacle
    dim = v.dimension
    lam = s.wavelength_m
    h = lam / v.cells_per_wavelength
    npml = v.pml_cells
    hw = v.half_width_m
    extent = _object_radius(scene)
    if hw is None:
        hw = extent + lam
    m = int(np.ceil(hw / h))
    boundary = None
    image = None
    if o.kind == "bump":
        nz = int(np.ceil(hw / h))
        lower = (-(m + npml) * h,) * (dim - 1) + (0.0,)
        upper = ((m + npml) * h,) * (dim - 1) + ((nz + npml) * h,)
        n = (2 * (m + npml),) * (dim - 1) + (nz + npml,)
        grid = fdfd.GridSpec(lower, upper, n)
        pml = fdfd.PMLSpec(tuple([(npml, npml)] * (dim - 1) + [(0, npml)]))
        boundary = tuple([(fdfd.DIRICHLET, fdfd.DIRICHLET)] * (dim - 1)
                         + [(fdfd.NEUMANN, fdfd.DIRICHLET)])
        image = (dim - 1, 0.0)
    else:
        grid = fdfd.GridSpec.centered(m * h, h, dim, pml_cells=npml)
        pml = fdfd.PMLSpec(npml)
    if s.kind == "plane":
        source = fdfd.SourceSpec("plane", lam, direction=_plane(dim, s.direction),
                                 amplitude=s.amplitude, image_plane=image)
    else:
        source = fdfd.SourceSpec("point", lam, location=_plane(dim, s.location_m),
                                 amplitude=s.amplitude)
    material = material_sampler(scene, dim)
    rigid = None
    if o.kind == "rigid-sphere":
        rigid = fdfd.sphere_levelset(o.radius_m)
    elif o.kind == "bump":
        R, off = o.radius_m, o.offset_m

        def rigid(p):
            lateral = np.sum(p[..., :-1] ** 2, axis=-1)
            return p[..., -1] - (np.sqrt(np.maximum(R * R - lateral, 0.0)) - off)
    pts = grid.cell_points()
    region = pml.interior_mask(grid)
    if o.kind == "bump":
        lateral = np.sqrt(np.sum(pts[..., :-1] ** 2, axis=-1))
        top = np.sqrt(np.maximum(cover_radius(scene) ** 2 - lateral**2, 0.0)) - cover_offset(scene)
        region &= pts[..., -1] > np.maximum(top, 0.0) + 0.05 * lam
    else:
        region &= np.linalg.norm(pts, axis=-1) > extent + 0.05 * lam
    reference = None
    if s.kind == "plane":
        reference = source.field(pts)
    return grid, pml, boundary, material, rigid, source, region, reference


def cover_radius(scene):
    return 1.0 if scene.transform.cover_radius_m is None else scene.transform.cover_radius_m


def cover_offset(scene):
    return 0.5 if scene.transform.cover_offset_m is None else scene.transform.cover_offset_m


def _object_radius(scene: SceneSpec):
    t, o = scene.transform, scene.obstacle
    if t.kind in ("pendry", "kohn"):
        return t.r2_m
    if t.kind == "faceted":
        spec = faceted_spec_of(t)
        return float(np.max(np.linalg.norm(spec.S2.vertices, axis=1)))
    if t.kind == "carpet":
        return cover_radius(scene)
    if o.kind in ("rigid-sphere", "soft-sphere"):
        return o.radius_m
    if o.kind == "bump":
        return float(np.sqrt(o.radius_m**2 - o.offset_m**2))
    return 0.0


def run_fdfd(scene: SceneSpec, tol=None):
    v = scene.solver
    grid, pml, boundary, material, rigid, source, region, reference = fdfd_problem(scene)
    if scene.obstacle.kind == "soft-sphere":
        raise SceneError("pressure-release obstacles are available with the Mie solver only")
    op = fdfd.assemble(grid, material, pml, source.k0, rigid=rigid, boundary=boundary)
    tol = v.tol if tol is None else tol
    if source.kind == "plane":
        sol = fdfd.scattered_field_solve(op, source, tol=tol, max_iter=v.max_iter,
                                         preconditioner=v.preconditioner)
    else:
        sol = fdfd.point_source_solve(op, source, tol=tol, max_iter=v.max_iter,
                                      preconditioner=v.preconditioner)
    out = {"grid": list(grid.n), "spacing_m": list(grid.spacing), "residual": sol.residual,
           "iterations": sol.iterations, "converged": sol.converged}
    if reference is not None and region.any():
        ref_name = "flat_ground" if scene.obstacle.kind == "bump" else "free_field"
        out[f"mismatch_to_{ref_name}"] = fdfd.mismatch_metric(sol.p_total, reference, region)
    if source.kind == "plane" and scene.obstacle.kind != "bump":
        r = _object_radius(scene) + 0.1 * scene.source.wavelength_m
        inner = [grid.lower[a] + (pml.widths(grid.dim)[a][0] + 1) * grid.spacing[a]
                 for a in range(grid.dim)]
        b = min(max(r, 0.0), -max(inner))
        key = "sigma_sc" if grid.dim == 3 else "scattering_width"
        out[key] = fdfd.box_flux(grid, sol.p, (-b,) * grid.dim, (b,) * grid.dim, source.k0)
    return sol, out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

class SolverFailure(RuntimeError):
    pass


def _write(path: Path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return str(path)


def run(scene: SceneSpec, out_dir, tol=None, stages=("materials", "layers", "solve")):
    """Run the pipeline and write the report files; returns the summary dict.

    Raises :class:`SolverFailure` (after writing partial output) when the
    FDFD solve does not reach its tolerance.
    """
    out = Path(out_dir)
    summary = {"scene": scene.name or "custom"}
    files = []
    t0 = time.perf_counter()
    if "materials" in stages and scene.transform.kind != "none":
        files.append(_write(out / "material_profile.csv", material_profile_csv(scene)))
    if "layers" in stages:
        info = stack_summary(scene)
        if info is not None:
            summary["stack"] = info
            files.append(_write(out / "stack.csv", layers.stack_to_csv(stack_of(scene))))
    failure = None
    if "solve" in stages:
        if scene.solver.kind == "mie":
            res, info = run_mie(scene)
            summary["mie"] = info
            files.append(_write(out / "coefficients.csv", mie.coefficients_to_csv(res.coefficients)))
        else:
            sol, info = run_fdfd(scene, tol)
            summary["fdfd"] = info
            if sol.grid.dim == 2:
                files += [str(p) for p in fdfd.probe_and_export(sol, out / "field_xz")]
            else:
                for plane in scene.output.slices:
                    axis = {"xz": 1, "yz": 0, "xy": 2}[plane]
                    files += [str(p) for p in fdfd.probe_and_export(sol, out / f"field_{plane}",
                                                                     axis=axis, position=0.0)]
            if not sol.converged:
                summary["fdfd"]["residual_history"] = sol.residual_history[-50:]
                failure = SolverFailure(f"FDFD residual {sol.residual:.3e} above tolerance")
    summary["runtime_s"] = time.perf_counter() - t0
    summary["files"] = files
    _write(out / "summary.json", json.dumps(summary, indent=2, default=_json_default) + "\n")
    if failure is not None:
        raise failure
    return summary


def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, complex):
        return [v.real, v.imag]
    raise TypeError(type(v))


def scene_dict(scene: SceneSpec):
    return asdict(scene)
