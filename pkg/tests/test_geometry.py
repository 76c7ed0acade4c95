import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from slagflow.calculus import covariant_jet
from slagflow.flow import step
from slagflow.geometry import (BranchRiskError, angle, branch_safe, centered_rate, chi_from_hessian,
                               fast_angle, generalized_eigenvalues, generalized_eigh, induced_metric_matrix,
                               monitors, residual_rho_sphere, residual_vartheta, spd_inverse,
                               theta_gradient_identity)
from slagflow.initial import InitialCondition, initial_field
from slagflow.manifold import build_sphere, build_torus
from slagflow.oracles import angle_bruteforce

entries = st.floats(-3, 3, allow_nan=False)


@st.composite
def spd_and_symmetric(draw, n=None):
    n = n or draw(st.integers(1, 3))
    a = draw(arrays(float, (n, n), elements=st.floats(-1, 1)))
    b = draw(arrays(float, (n, n), elements=entries))
    return a.T @ a + 0.1 * np.eye(n), np.triu(b) + np.triu(b, 1).T


def test_angle_examples():
    assert angle(np.zeros((2, 2)), np.eye(2)) == 0.0
    assert angle(np.eye(2), np.eye(2)) == pytest.approx(np.pi / 2)
    assert angle(np.diag([2.0, 1.0]), np.diag([2.0, 1.0])) == pytest.approx(np.pi / 2)
    assert angle(np.eye(2), np.eye(2), "complex_det") == pytest.approx(np.pi / 2)


@settings(max_examples=200, deadline=None)
@given(spd_and_symmetric())
def test_complex_det_agrees_with_eigen_sum(pair):
    sigma, hess = pair
    lam = generalized_eigenvalues(hess, sigma)
    assume(branch_safe(lam))
    assert angle(hess, sigma, "complex_det") == pytest.approx(angle(hess, sigma), abs=1e-10)
    assert angle_bruteforce(sigma, hess) == pytest.approx(angle(hess, sigma), abs=1e-10)


@settings(max_examples=200, deadline=None)
@given(spd_and_symmetric())
def test_determinant_identity(pair):
    sigma, hess = pair
    lhs = abs(np.linalg.det(sigma + 1j * hess)) ** 2
    rhs = np.linalg.det(sigma) * np.linalg.det(induced_metric_matrix(hess, sigma))
    assert lhs == pytest.approx(rhs, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(spd_and_symmetric())
def test_fast_angle_and_chi(pair):
    sigma, hess = pair
    sinv = np.linalg.inv(sigma)
    lam = generalized_eigenvalues(hess, sigma)
    assert fast_angle(hess, sinv, np.linalg.det(sigma)) == pytest.approx(np.arctan(lam).sum(), abs=1e-12)
    assert chi_from_hessian(hess, sinv) == pytest.approx(np.prod(1 + lam**2), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(spd_and_symmetric(n=3))
def test_generalized_eigh_is_sigma_orthonormal(pair):
    sigma, hess = pair
    lam, vec = generalized_eigh(hess, sigma)
    assert np.allclose(vec.T @ sigma @ vec, np.eye(3), atol=1e-8)
    assert np.allclose(vec.T @ hess @ vec, np.diag(lam), atol=1e-7 * (1 + np.abs(lam).max()))
    assert np.allclose(spd_inverse(sigma) @ sigma, np.eye(3), atol=1e-8)


def test_complex_det_refuses_branch_risk():
    hess = np.diag([100.0, 100.0, 100.0])
    assert angle(hess, np.eye(3)) == pytest.approx(3 * np.arctan(100.0))
    with pytest.raises(BranchRiskError):
        angle(hess, np.eye(3), "complex_det")


def test_non_finite_input_rejected():
    with pytest.raises(ValueError):
        angle(np.array([[np.nan]]), np.eye(1))


def test_angle_is_stacked():
    rng = np.random.default_rng(1)
    h = rng.standard_normal((4, 5, 2, 2))
    h = h + h.swapaxes(-1, -2)
    out = angle(h, np.broadcast_to(np.eye(2), h.shape))
    assert out.shape == (4, 5)


def test_gradient_identity_constant_is_zero():
    atlas = build_sphere(48)
    assert theta_gradient_identity(np.full(atlas.grid_shape, 2.0), atlas) < 1e-12


def test_monitors_of_zero_section():
    atlas = build_torus(2, 32)
    state = monitors(covariant_jet(atlas.zeros(), atlas, 4), atlas)
    ext = state.extrema(atlas, 1.0)
    assert ext["max_chi"] == 1.0 and ext["max_vartheta"] == 0.0 and ext["max_Theta2"] == 0.0
    assert ext["max_Upsilon2"] == 0.0


def test_monitors_match_closed_form_on_circle():
    atlas = build_torus(1, 128)
    x = atlas.coords[..., 0]
    u = 0.5 * np.sin(x)
    state = monitors(covariant_jet(u, atlas, 4), atlas)
    upp = -0.5 * np.sin(x)
    assert np.allclose(state.theta, np.arctan(upp), atol=1e-6)
    assert np.allclose(state.chi, 1 + upp**2, atol=1e-6)
    assert np.allclose(state.vartheta, (0.5 * np.cos(x)) ** 2, atol=1e-6)
    assert np.allclose(state.Theta2, (0.5 * np.cos(x)) ** 2 / (1 + upp**2) ** 3, atol=1e-5)
    assert np.allclose(state.mu[..., 0], -0.5 * np.cos(x) / (1 + upp**2), atol=1e-5)


def _flow_residuals(atlas, dt):
    u0 = initial_field(atlas, InitialCondition(kind="bump", bandlimit=2, target_max_chi=1.3), 4)
    u1 = step(u0, atlas, dt)
    u2 = step(u1, atlas, dt)
    rate = centered_rate(u0, u2, dt)
    return residual_vartheta(u1, rate, atlas), residual_rho_sphere(u1, rate, atlas)


def test_flat_residuals_converge():
    a, b = build_torus(2, 32), build_torus(2, 64)
    dt = 0.2 * a.physical_h**2
    (v0, r0), (v1, r1) = _flow_residuals(a, dt), _flow_residuals(b, dt / 2)
    assert v1.norm < v0.norm / 8 and r1.norm < r0.norm / 8
    assert r0.checked > 0


def test_rho_residual_needs_space_form():
    atlas = build_torus(1, 32)
    object.__setattr__(atlas, "curvature_parallel", False)
    with pytest.raises(ValueError):
        residual_rho_sphere(atlas.zeros(), atlas.zeros(), atlas)


def test_rho_residual_skips_degenerate_nodes():
    # the degree-one harmonic has a multiple of sigma as Hessian: every node is degenerate
    atlas = build_sphere(48)
    from slagflow.manifold import sphere_embedding
    u = 1e-2 * sphere_embedding(atlas)[..., 2]
    with pytest.warns(UserWarning):
        res = residual_rho_sphere(u, atlas.zeros(), atlas)
    assert res.skipped > 0
