import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from acloak import tensor
from acloak.tensor import MaterialPoint, FrameRotation


def test_identity_jacobian_leaves_material_unchanged():
    m = MaterialPoint(np.diag([2.0, 0.5, 1.5]), 0.7)
    out = tensor.push_forward(np.eye(3), m)
    assert np.allclose(out.inv_density, m.inv_density)
    assert out.bulk_modulus == pytest.approx(0.7)


def test_uniform_scaling_by_two():
    out = tensor.push_forward(2 * np.eye(3), MaterialPoint.background())
    assert np.allclose(out.inv_density, 0.5 * np.eye(3))
    assert out.bulk_modulus == pytest.approx(8.0)
    assert np.allclose(out.density, 2 * np.eye(3))


def test_singular_cloak_diagonal_jacobian_at_three_quarters():
    # radial slope alpha, tangential stretch r/r_v = alpha r/(r-R1); R1=0.5, R2=1, r=0.75
    alpha = 0.5
    s = alpha * 0.75 / 0.25
    out = tensor.push_forward(np.diag([alpha, s, s]), MaterialPoint.background())
    rho = np.diag(out.density)
    assert rho == pytest.approx([4.5, 0.5, 0.5], rel=1e-12)
    assert out.bulk_modulus == pytest.approx(1.125, rel=1e-12)


def test_negative_determinant_is_flagged_not_raised():
    out = tensor.push_forward(np.diag([-1.0, 1.0, 1.0]), MaterialPoint.background())
    assert "orientation_reversed" in out.flags


def test_singular_jacobian_raises_with_point():
    with pytest.raises(tensor.SingularJacobianError) as err:
        tensor.push_forward(np.diag([1.0, 0.0, 1.0]), MaterialPoint.background(), point=(1, 2, 3))
    assert err.value.point == (1, 2, 3)


def test_material_point_rejects_asymmetric_and_bad_shapes():
    with pytest.raises(ValueError):
        MaterialPoint(np.array([[1.0, 0.2], [0.0, 1.0]]), 1.0)
    with pytest.raises(ValueError):
        MaterialPoint(np.eye(4), 1.0)


def test_jacobian_shape_mismatch():
    with pytest.raises(ValueError):
        tensor.push_forward(np.eye(2), MaterialPoint.background(3))


def test_numeric_jacobian_of_identity():
    jac = tensor.numeric_jacobian(lambda x: x, np.array([0.3, -1.2, 2.0]))
    assert np.allclose(jac, np.eye(3), atol=1e-10)


def test_numeric_jacobian_rejects_bad_step():
    with pytest.raises(ValueError):
        tensor.numeric_jacobian(lambda x: x, np.zeros(3), h=0.0)


def test_invert_jacobian_round_trip():
    j = np.array([[2.0, 0.3, 0.0], [0.1, 1.0, 0.2], [0.0, 0.4, 3.0]])
    assert np.allclose(tensor.invert_jacobian(j) @ j, np.eye(3))


def test_isotropic_tensor_is_frame_invariant():
    out = tensor.to_cartesian(np.ones(3), FrameRotation(0.7, 1.1))
    assert np.allclose(out, np.eye(3), atol=1e-14)


def test_frame_aligned_with_x_axis():
    out = tensor.to_cartesian(np.array([3.0, 2.0, 2.0]), FrameRotation(0.0, np.pi / 2))
    assert np.allclose(out, np.diag([3.0, 2.0, 2.0]), atol=1e-14)


def test_rotated_singular_cloak_keeps_eigenvalues():
    out = tensor.to_cartesian(np.array([4.5, 0.5, 0.5]), FrameRotation(np.pi / 4, np.pi / 2))
    assert np.allclose(out, out.T)
    assert np.sort(np.linalg.eigvalsh(out)) == pytest.approx([0.5, 0.5, 4.5], rel=1e-12)
    # radial direction (1,1,0)/sqrt2 carries the 4.5 eigenvalue
    r = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    assert r @ out @ r == pytest.approx(4.5)


def test_polar_axis_with_unequal_tangential_entries_raises():
    with pytest.raises(tensor.DegenerateFrameError):
        tensor.to_cartesian(np.array([1.0, 2.0, 3.0]), FrameRotation(0.0, 0.0))


def test_frame_from_origin_raises():
    with pytest.raises(tensor.DegenerateFrameError):
        FrameRotation.from_point([0.0, 0.0, 0.0])


def test_unnormalised_frame_metric():
    q = FrameRotation(0.4, 0.9).matrix(orthonormal=False)
    assert np.allclose(q.T @ q, np.diag([1.0, np.sin(0.9) ** 2, 1.0]))


def test_diag_to_cartesian_array_matches_frame_rotation():
    x = np.array([0.3, -0.2, 0.5])
    frame = FrameRotation.from_point(x)
    a = tensor.diag_to_cartesian_array(np.array([2.0, 0.7]), x)
    b = tensor.to_cartesian(np.array([2.0, 0.7, 0.7]), frame)
    assert np.allclose(a, b, atol=1e-14)


jacobians = arrays(np.float64, (3, 3), elements=st.floats(-2, 2)).map(lambda a: a + 3 * np.eye(3))
spd = arrays(np.float64, (3, 3), elements=st.floats(-2, 2)).map(lambda a: a @ a.T + 0.1 * np.eye(3))


@settings(max_examples=200, deadline=None)
@given(jacobians, spd, st.floats(0.1, 10))
def test_determinant_identity(jac, inv, kappa):
    out, k2, det = tensor.push_forward_array(jac, inv, kappa)
    assert np.linalg.det(out) * k2 == pytest.approx(np.linalg.det(inv) * kappa, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(jacobians, spd, st.floats(0.1, 10))
def test_push_forward_preserves_symmetry_and_definiteness(jac, inv, kappa):
    out, k2, det = tensor.push_forward_array(jac, inv, kappa)
    assert np.allclose(out, out.T)
    if det > 0:
        assert np.all(np.linalg.eigvalsh(out) > 0)
        assert k2 > 0


@settings(max_examples=100, deadline=None)
@given(jacobians, jacobians, spd)
def test_push_forward_composes(j1, j2, inv):
    a, ka, _ = tensor.push_forward_array(j1, inv, 1.0)
    b, kb, _ = tensor.push_forward_array(j2, a, ka)
    c, kc, _ = tensor.push_forward_array(j2 @ j1, inv, 1.0)
    assert np.allclose(b, c, rtol=1e-8, atol=1e-10 * np.abs(c).max())
    assert kb == pytest.approx(kc, rel=1e-9)
