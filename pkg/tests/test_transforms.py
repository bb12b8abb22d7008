import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from acloak import tensor, transforms as tr
from acloak.validation import catalog_transforms, jacobian_error


def icosphere(radius, levels):
    """Icosahedron subdivided ``levels`` times with vertices pushed onto the sphere."""
    base = tr.icosahedron(1.0)
    verts = [v / np.linalg.norm(v) for v in base.vertices]
    faces = [tuple(f) for f in base.faces]
    for _ in range(levels):
        cache, new = {}, []

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return tr.TriSurface(np.array(verts) * radius, np.array(faces))


def shell_samples(spec, n, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r1, r2 = spec.S1.radius(u), spec.S2.radius(u)
    t = rng.uniform(0.02, 1.0, n)
    return u * (r1 + t * (r2 - r1))[:, None]


# -- radial cloaks ----------------------------------------------------------

def test_singular_cloak_at_three_quarters():
    m = tr.pendry_sphere_material(tr.SphericalCloakSpec(0.5, 1.0), [0.75, 0, 0])
    assert np.diag(m.density) == pytest.approx([4.5, 0.5, 0.5], rel=1e-12)
    assert m.bulk_modulus == pytest.approx(1.125, rel=1e-12)


def test_singular_cloak_outer_rim_is_impedance_matched():
    m = tr.pendry_sphere_material(tr.SphericalCloakSpec(0.5, 1.0), [0, 0, 1.0])
    rho = m.density
    assert rho[2, 2] == pytest.approx(2.0)
    assert rho[0, 0] == pytest.approx(0.5)
    assert m.bulk_modulus == pytest.approx(0.5)
    assert np.sqrt(rho[2, 2] * m.bulk_modulus) == pytest.approx(1.0)


def test_singular_cloak_diverges_at_inner_radius():
    spec = tr.SphericalCloakSpec(0.5, 1.0)
    near = [tr.pendry_sphere_material(spec, [0.5 + d, 0, 0]) for d in (1e-2, 1e-3, 1e-4)]
    rho_r = [m.density[0, 0] for m in near]
    assert rho_r[0] < rho_r[1] < rho_r[2]
    assert near[2].bulk_modulus > 1e3
    with pytest.raises(tr.SingularRegionError):
        tr.pendry_sphere_material(spec, [0.4, 0, 0])
    clamped = tr.pendry_sphere_material(spec, [0.4, 0, 0], clamp=True)
    assert "singular_clamped" in clamped.flags


def test_outside_the_cloak_is_flagged_background():
    m = tr.pendry_sphere_material(tr.SphericalCloakSpec(0.5, 1.0), [0, 1.5, 0])
    assert np.allclose(m.inv_density, np.eye(3))
    assert "out_of_domain" in m.flags


def test_kohn_parameters_on_published_geometries():
    assert tr.KohnCloakSpec(0.05, 0.2, 0.4).alpha == pytest.approx(4 / 7)
    s = tr.KohnCloakSpec(0.2, 0.5, 1.0)
    assert (s.alpha, s.beta) == pytest.approx((0.625, 0.375))


def test_kohn_radial_derivative():
    t = tr.kohn_transform(tr.KohnCloakSpec(0.05, 0.2, 0.4))
    x = np.array([0.3, 0.0, 0.0])
    jac = tensor.numeric_jacobian(t.to_physical, t.to_virtual(x), 1e-5)
    assert jac[0, 0] == pytest.approx(4 / 7, rel=1e-6)


def test_kohn_with_r0_equal_R1_is_identity():
    spec = tr.KohnCloakSpec(0.5, 0.5, 1.0)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    inv, kappa = tr.kohn_ball_field(spec, pts)
    assert np.allclose(inv, np.eye(3), atol=1e-14)
    assert np.allclose(kappa, 1.0)


def test_kohn_core_is_scaled_isotropic():
    spec = tr.KohnCloakSpec(0.15, 0.2, 0.4)
    m = tr.kohn_ball_material(spec, [0.05, 0.05, 0.0])
    s = 0.2 / 0.15
    assert np.allclose(m.density, s * np.eye(3))
    assert m.bulk_modulus == pytest.approx(s**3)


def test_radial_maps_are_continuous_at_the_outer_rim():
    for t in (tr.pendry_transform(tr.SphericalCloakSpec(0.5, 1.0)),
              tr.kohn_transform(tr.KohnCloakSpec(0.15, 0.2, 0.4))):
        x = np.array([0.0, 0.6, 0.8]) * (0.4 if t.name == "kohn_ball" else 1.0)
        assert np.allclose(t.to_physical(x), x, atol=1e-14)


def test_cylindrical_kohn_field_matches_exact_2d_profile():
    from acloak import layers
    spec = tr.KohnCloakSpec(0.05, 0.5, 1.0)
    prof = layers.exact_shell_profile(0.05, 0.5, 1.0, dim=2)
    inv, kappa = tr.kohn_ball_field(spec, np.array([[0.7, 0.0]]), dim=2)
    rr, rt, kp = prof(0.7)
    assert 1 / inv[0, 0, 0] == pytest.approx(rr)
    assert 1 / inv[0, 1, 1] == pytest.approx(rt)
    assert kappa[0] == pytest.approx(kp)


def test_bad_radii_rejected():
    with pytest.raises(ValueError):
        tr.SphericalCloakSpec(1.0, 0.5)
    with pytest.raises(ValueError):
        tr.KohnCloakSpec(0.3, 0.2, 0.4)


# -- carpet -----------------------------------------------------------------

def test_flat_bump_gives_identity():
    spec = tr.CarpetSpec.flat(0.5)
    m = tr.carpet_material(spec, [0.1, 0.2, 0.3])
    assert np.allclose(m.inv_density, np.eye(3))
    assert m.bulk_modulus == pytest.approx(1.0)


def test_published_carpet_on_axis():
    spec = tr.CarpetSpec.spherical_caps()
    assert spec.z1(0.0, 0.0) == pytest.approx(0.197224, abs=1e-6)
    assert spec.z2(0.0, 0.0) == pytest.approx(0.5)
    m = tr.carpet_material(spec, [0.0, 0.0, 0.3])
    alpha = (0.5 - spec.z1(0.0, 0.0)) / 0.5
    assert alpha == pytest.approx(0.605552, abs=1e-6)
    assert np.allclose(m.inv_density, np.diag([1 / alpha, 1 / alpha, alpha]), atol=1e-12)
    assert m.bulk_modulus == pytest.approx(alpha)


def test_carpet_map_is_continuous_at_the_cover():
    spec = tr.CarpetSpec.spherical_caps()
    t = tr.carpet_transform(spec)
    for x, y in [(0.1, 0.2), (-0.4, 0.3), (0.6, 0.0)]:
        z2 = spec.z2(x, y)
        assert t.to_physical(np.array([x, y, z2])) == pytest.approx([x, y, z2], abs=1e-12)


def test_carpet_jacobian_against_finite_differences():
    spec = tr.CarpetSpec.spherical_caps()
    t = tr.carpet_transform(spec)
    x = np.array([0.3, -0.2, 0.3])
    num = tensor.numeric_jacobian(t.to_physical, t.to_virtual(x), 1e-5)
    assert np.linalg.norm(num - t.jacobian(x)) / np.linalg.norm(num) < 1e-6


def test_carpet_tensor_matches_push_forward():
    spec = tr.CarpetSpec.spherical_caps()
    x = np.array([0.25, 0.1, 0.35])
    jac = tr.carpet_jacobian_array(spec, x[None])[0]
    ref = tensor.push_forward(jac, tensor.MaterialPoint.background())
    m = tr.carpet_material(spec, x)
    assert np.allclose(m.inv_density, ref.inv_density, atol=1e-12)
    assert m.bulk_modulus == pytest.approx(ref.bulk_modulus)


def test_cover_below_bump_is_rejected():
    spec = tr.CarpetSpec.spherical_caps(bump_offset=1.2)
    with pytest.raises(tr.DegenerateGeometryError):
        tr.carpet_material(spec, [0.0, 0.0, 0.4])


def test_two_dimensional_carpet_is_the_xz_block():
    spec = tr.CarpetSpec.spherical_caps().section(0.0)
    inv2, k2 = tr.carpet_field(spec, np.array([[0.3, 0.35]]), dim=2)
    inv3, k3 = tr.carpet_field(spec, np.array([[0.3, 0.0, 0.35]]))
    assert np.allclose(inv2[0], inv3[0][np.ix_([0, 2], [0, 2])])
    assert k2[0] == pytest.approx(k3[0])


# -- faceted ----------------------------------------------------------------

def test_face_planes_contain_their_vertices():
    for surf in (tr.icosahedron(0.2), tr.six_point_star(0.45)):
        tri = surf.vertices[surf.faces]
        res = np.einsum("fi,fki->fk", surf.planes[:, :3], tri) - surf.planes[:, 3:4]
        assert np.abs(res).max() < 1e-10


def test_icosahedron_has_twenty_faces_of_equal_edge():
    ico = tr.icosahedron(0.4)
    assert ico.faces.shape == (20, 3)
    tri = ico.vertices[ico.faces]
    edges = np.linalg.norm(tri - np.roll(tri, 1, axis=1), axis=-1)
    assert np.allclose(edges, 0.4)


def test_star_edge_and_tips():
    star = tr.six_point_star(0.45)
    assert star.faces.shape == (24, 3)
    tri = star.vertices[star.faces]
    assert np.allclose(np.linalg.norm(tri[:, 0] - tri[:, 1], axis=-1), 0.45)
    r = np.linalg.norm(star.vertices, axis=1)
    assert r[:6].min() / r[6:].max() == pytest.approx(tr.STAR_TIP_RATIO)


def test_axis_aligned_face_radius():
    # one face of a cube-like octahedron is not axis aligned, so build a single plane z = c
    surf = tr.TriSurface(np.array([[1, 0, 0.3], [-0.5, 0.9, 0.3], [-0.5, -0.9, 0.3],
                                   [0, 0, -1.0]]), np.array([[0, 1, 2], [0, 3, 1], [1, 3, 2], [2, 3, 0]]))
    pl = surf.planes[0] / surf.planes[0][2]
    assert pl == pytest.approx([0, 0, 1, 0.3], abs=1e-12)
    phi = 0.2
    u = np.array([[np.sin(phi), 0.0, np.cos(phi)]])
    assert surf.radius(u)[0] == pytest.approx(0.3 / np.cos(phi))


def test_mesh_round_trip():
    star = tr.six_point_star(0.45)
    back = tr.read_mesh(tr.write_mesh(star))
    assert np.allclose(back.vertices, star.vertices, rtol=1e-8)
    assert np.array_equal(back.faces, star.faces)


def test_mesh_parse_error_reports_line():
    with pytest.raises(ValueError, match="line 2"):
        tr.read_mesh("v 0 0 1\nv 1 2\n")


def test_nesting_violation_detected():
    with pytest.raises(tr.DegenerateGeometryError):
        tr.FacetedCloakSpec(tr.icosahedron(0.4), tr.icosahedron(0.2)).check()


@pytest.mark.parametrize("spec", [
    tr.FacetedCloakSpec(tr.icosahedron(0.2), tr.icosahedron(0.4)),
    tr.FacetedCloakSpec(tr.six_point_star(0.12), tr.six_point_star(0.45)),
], ids=["icosahedron", "star"])
def test_faceted_material_is_spd_and_satisfies_determinant_identity(spec):
    pts = shell_samples(spec, 2000, 3)
    inv, kappa = tr.faceted_field(spec, pts)
    assert np.allclose(inv, np.swapaxes(inv, 1, 2))
    assert np.all(np.linalg.eigvalsh(inv) > 0)
    assert np.all(kappa > 0)
    # background has det(inv) kappa = 1
    assert np.allclose(np.linalg.det(inv) * kappa, 1.0, rtol=1e-10)


def test_faceted_sphere_limit_approaches_kohn_cloak():
    spec = tr.FacetedCloakSpec(icosphere(0.2, 4), icosphere(0.4, 4), icosphere(0.15, 4))
    kohn = tr.KohnCloakSpec(0.15, 0.2, 0.4)
    x = np.array([0.12, -0.2, 0.18])
    m = tr.faceted_material(spec, x)
    ref = tr.kohn_ball_material(kohn, x)
    assert np.abs(m.inv_density - ref.inv_density).max() < 0.02
    assert m.bulk_modulus == pytest.approx(ref.bulk_modulus, rel=0.02)


def test_point_blowup_core_is_hidden():
    spec = tr.FacetedCloakSpec(tr.icosahedron(0.2), tr.icosahedron(0.4))
    inv, kappa, inside = tr.faceted_field(spec, np.array([[0.0, 0.0, 0.05]]), with_flags=True)
    assert not inside[0]
    assert np.allclose(inv[0], np.eye(3))
    with pytest.raises(tr.SingularRegionError):
        tr.faceted_transform(spec).to_virtual(np.array([0.0, 0.0, 0.05]))


# -- catalog-wide properties ------------------------------------------------

@pytest.mark.parametrize("name,spec,sample", catalog_transforms(), ids=lambda v: v if isinstance(v, str) else "")
def test_analytic_jacobian_matches_finite_differences(name, spec, sample):
    pts = sample(np.random.default_rng(11), 100)
    assert max(jacobian_error(spec, x) for x in pts) < 1e-6


@pytest.mark.parametrize("name,spec,sample", catalog_transforms(), ids=lambda v: v if isinstance(v, str) else "")
def test_maps_are_mutual_inverses(name, spec, sample):
    for x in sample(np.random.default_rng(12), 30):
        assert np.allclose(spec.to_physical(spec.to_virtual(x)), x, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.2001, 0.4), st.floats(0, 2 * np.pi), st.floats(0.05, np.pi - 0.05))
def test_kohn_shell_material_is_spd_with_unit_determinant_product(r, th, ph):
    spec = tr.KohnCloakSpec(0.15, 0.2, 0.4)
    x = r * np.array([np.cos(th) * np.sin(ph), np.sin(th) * np.sin(ph), np.cos(ph)])
    m = tr.kohn_ball_material(spec, x)
    assert m.is_positive_definite()
    assert np.linalg.det(m.inv_density) * m.bulk_modulus == pytest.approx(1.0, rel=1e-10)
