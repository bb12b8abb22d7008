"""Quick invariant suite behind ``acloak validate``.

Each check returns ``(name, passed, detail)``.  The checks are small versions
of the test-suite invariants and run in a few seconds.
"""
from __future__ import annotations

import numpy as np

from . import fdfd, layers, mie, scene, tensor, transforms


def _random_shell_points(rng, n, r_lo, r_hi):
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * rng.uniform(r_lo, r_hi, size=(n, 1))


def catalog_transforms():
    """``(name, TransformSpec, sample(rng, n))`` for each catalog transform."""
    pend = transforms.SphericalCloakSpec(0.5, 1.0)
    kohn = transforms.KohnCloakSpec(0.15, 0.2, 0.4)
    carpet = transforms.CarpetSpec.spherical_caps()
    ico = transforms.FacetedCloakSpec(transforms.icosahedron(0.2), transforms.icosahedron(0.4))

    def carpet_points(rng, n):
        pts = []
        while len(pts) < n:
            x, y = rng.uniform(-0.8, 0.8, 2)
            z1, z2 = carpet.z1(x, y), carpet.z2(x, y)
            if np.isfinite(z2) and z2 > z1 + 1e-3 and z1 > 0:
                pts.append((x, y, rng.uniform(z1 + 0.05 * (z2 - z1), z2 - 0.05 * (z2 - z1))))
        return np.array(pts)

    def ico_points(rng, n):
        u = _random_shell_points(rng, n, 1.0, 1.0)
        r1, r2 = ico.S1.radius(u), ico.S2.radius(u)
        t = rng.uniform(0.1, 0.9, n)
        return u * (r1 + t * (r2 - r1))[:, None]

    return [
        ("pendry", transforms.pendry_transform(pend),
         lambda rng, n: _random_shell_points(rng, n, 0.55, 0.98)),
        ("kohn", transforms.kohn_transform(kohn),
         lambda rng, n: np.vstack([_random_shell_points(rng, n // 2, 0.21, 0.39),
                                   _random_shell_points(rng, n - n // 2, 0.01, 0.19)])),
        ("carpet", transforms.carpet_transform(carpet), carpet_points),
        ("faceted", transforms.faceted_transform(ico), ico_points),
    ]


def jacobian_error(spec, x, h=1e-6):
    """Relative Frobenius error between the analytic and central-difference Jacobians."""
    v = spec.to_virtual(x)
    num = tensor.numeric_jacobian(spec.to_physical, v, h)
    ana = spec.jacobian(x)
    return float(np.linalg.norm(ana - num) / np.linalg.norm(ana))


def check_jacobians(n=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = {}
    for name, spec, sample in catalog_transforms():
        worst[name] = max(jacobian_error(spec, x) for x in sample(rng, n))
    ok = all(v < 1e-6 for v in worst.values())
    return "analytic vs numeric Jacobians", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def check_determinant_identity(n=200, seed=1):
    rng = np.random.default_rng(seed)
    jac = rng.normal(size=(n, 3, 3)) + 3 * np.eye(3)
    a = rng.normal(size=(n, 3, 3))
    inv = a @ np.swapaxes(a, 1, 2) + np.eye(3)
    kappa = rng.uniform(0.5, 2.0, n)
    out, k2, _ = tensor.push_forward_array(jac, inv, kappa)
    lhs = np.linalg.det(out) * k2
    rhs = np.linalg.det(inv) * kappa
    err = float(np.max(np.abs(lhs - rhs) / np.abs(rhs)))
    return "push-forward determinant identity", err < 1e-10, f"max rel err {err:.1e}"


def check_spherical_closed_form():
    spec = transforms.SphericalCloakSpec(0.5, 1.0)
    m = transforms.pendry_sphere_material(spec, [0.75, 0.0, 0.0])
    got = (float(1 / m.inv_density[0, 0]), float(1 / m.inv_density[1, 1]), float(m.bulk_modulus))
    err = float(np.max(np.abs(np.array(got) - (4.5, 0.5, 1.125))))
    return "spherical cloak closed form", err < 1e-12, f"(rho_r, rho_t, kappa) = {got}"


def check_homogenization(n=1000, seed=2):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.01, 10, n), rng.uniform(0.01, 10, n)
    rr, rt, _ = layers.effective_from_pair(a, b, 1.0, 1.0)
    lo, hi = layers.pair_from_effective(rr, rt)
    err = float(np.max(np.abs(np.stack([lo, hi]) - np.sort(np.stack([a, b]), axis=0))
                       / np.sort(np.stack([a, b]), axis=0)))
    return "homogenization round trip", err < 1e-12, f"max rel err {err:.1e}"


def check_published_designs():
    out = []
    for r0 in (0.05, 0.15):
        st = layers.build_stack(layers.DesignSpec(r0, 0.2, 0.4))
        out.append((r0,) + layers.stack_extremes(st) + (st.layers[0].kappa,))
    ok = (abs(out[0][3] - 4 / 7) < 1e-4 and abs(out[1][3] - 0.8) < 1e-4
          and abs(out[0][1] - 0.0243) < 2e-3 and abs(out[0][2] - 3.4636) < 2e-3
          and abs(out[1][1] - 0.2601) < 2e-3 and abs(out[1][2] - 2.2229) < 2e-3)
    detail = "; ".join(f"r0={r}: rho [{a:.4f}, {b:.4f}], kappa {k:.4f}" for r, a, b, k in out)
    return "layer designs vs published ranges", ok, detail


def check_mie():
    res = []
    j, y, jp, yp = mie.sph_bessel(40, 3.7)
    w = np.max(np.abs(3.7**2 * (j * yp - jp * y) - 1))
    res.append(("Bessel Wronskian", w < 1e-10, f"max err {w:.1e}"))
    st = layers.build_stack(layers.DesignSpec(0.15, 0.2, 0.4, M=10, gauge="exact"))
    r = mie.layered_scatter(st, 2 * np.pi / 0.25)
    f0 = mie.far_field(r.coefficients, [0.0])[0]
    e = abs(4 * np.pi / r.coefficients.k * f0.imag - r.sigma_sc) / r.sigma_sc
    res.append(("optical theorem", e < 1e-8, f"rel err {e:.1e}"))
    # the approach to 2 goes like (ka)**(-2/3); ka=10 sits near 1.57
    q = [mie.rigid_sphere_scatter(1.0, ka).efficiency for ka in (10.0, 100.0, 500.0)]
    ok = q[0] < q[1] < q[2] < 2 and abs(q[2] - 2) < 0.04
    res.append(("rigid sphere high-frequency limit", ok,
                 "sigma/(pi a^2) at ka=10, 100, 500: " + ", ".join(f"{v:.4f}" for v in q)))
    return res


def check_fdfd_operator():
    k = 2 * np.pi / 0.3
    spec = transforms.KohnCloakSpec(0.15, 0.2, 0.4)
    grid = fdfd.GridSpec((-0.5, -0.5), (0.5, 0.5), (40, 40))
    op = fdfd.assemble(grid, lambda p: transforms.kohn_ball_field(spec, p, dim=2), None, k)
    asym = abs(op.matrix - op.matrix.T).max() / abs(op.matrix).max()
    return "FDFD operator symmetry", asym < 1e-12, f"max |L - L^T| / max |L| = {asym:.1e}"


def check_scene_round_trip():
    bad = [n for n in scene.PRESETS
           if scene.parse_scene(scene.print_scene(scene.load_preset(n))) != scene.load_preset(n)]
    return "scene print/parse round trip", not bad, "all presets" if not bad else f"failed: {bad}"


def run_checks():
    results = [check_determinant_identity(), check_spherical_closed_form(), check_jacobians(),
               check_homogenization(), check_published_designs()]
    results += check_mie()
    results += [check_fdfd_operator(), check_scene_round_trip()]
    return results
