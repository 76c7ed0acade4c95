import numpy as np
import pytest

from slagflow.manifold import (ConfigurationError, build_sphere, build_torus, curvature_from_christoffel,
                               sectional_curvatures, sphere_embedding, transfer_scalar, transfer_tensor)
from slagflow.oracles import sphere_harmonic_restriction


@pytest.fixture(scope="module")
def sphere64():
    return build_sphere(64, 1.0)


def test_torus_is_flat_and_unit():
    atlas = build_torus(2, 32)
    assert atlas.grid_shape == (1, 32, 32)
    assert np.allclose(atlas.sigma, np.eye(2))
    assert not atlas.christoffel.any()
    assert not atlas.curvature.any()
    assert atlas.owned.all()
    assert atlas.h == pytest.approx(2 * np.pi / 32)


@pytest.mark.parametrize("n, res", [(0, 32), (4, 32), (2, 8)])
def test_torus_rejects_bad_parameters(n, res):
    with pytest.raises(ConfigurationError):
        build_torus(n, res)


@pytest.mark.parametrize("kappa, res", [(0.0, 64), (-1.0, 64), (1.0, 16)])
def test_sphere_rejects_bad_parameters(kappa, res):
    with pytest.raises(ConfigurationError):
        build_sphere(res, kappa)


def test_torus_transfer_is_identity():
    atlas = build_torus(2, 16)
    u = np.random.default_rng(0).standard_normal(atlas.grid_shape)
    out = transfer_scalar(u, atlas)
    assert np.array_equal(out, u) and out is not u


@pytest.mark.parametrize("kappa", [1.0, 4.0])
def test_owned_nodes_cover_sphere_once(kappa):
    atlas = build_sphere(96, kappa)
    area = atlas.area_weights.sum()
    assert area == pytest.approx(4 * np.pi / kappa, rel=2e-2)
    assert not np.any(atlas.owned & ~atlas.active)


def test_embedding_lies_on_unit_sphere(sphere64):
    p = sphere_embedding(sphere64)
    assert np.allclose(np.sum(p**2, axis=-1), 1.0)
    # chart origins are antipodal poles
    assert sphere64.coords[0].shape[-1] == 2


def test_pullback_metric_matches_embedding(sphere64):
    # sigma must be the pullback of the round metric of radius 1/sqrt(kappa)
    from slagflow.initial import sphere_chart_map_derivatives
    dphi, _ = sphere_chart_map_derivatives(sphere64)
    pull = np.einsum("...ai,...aj->...ij", dphi, dphi) / sphere64.kappa
    assert np.allclose(pull, sphere64.sigma, rtol=1e-12, atol=1e-14)


def test_sectional_curvature_is_kappa():
    atlas = build_sphere(48, 2.5)
    sec = sectional_curvatures(atlas)
    assert np.allclose(sec[atlas.active], 2.5)


def test_curvature_from_christoffel_converges_to_analytic():
    errs = []
    for res in (48, 96):
        atlas = build_sphere(res, 1.0)
        diff = curvature_from_christoffel(atlas) - atlas.curvature
        errs.append(np.abs(diff[atlas.owned]).max())
    assert errs[1] < errs[0] / 12


def test_scalar_transfer_converges(sphere64):
    errs = []
    for res in (48, 96):
        atlas = build_sphere(res, 1.0)
        z = sphere_embedding(atlas)[..., 2] ** 3
        spoiled = np.where(atlas.active, z, 123.0)
        filled = transfer_scalar(spoiled, atlas)
        fringe = ~atlas.active
        errs.append(np.abs(filled - z)[fringe & (np.hypot(*np.moveaxis(atlas.coords, -1, 0)) < 1.45)].max())
    assert errs[0] < 1e-4
    assert errs[1] < errs[0] / 16


def test_gradient_transfer_uses_jacobian(sphere64):
    jet = sphere_harmonic_restriction(2, sphere64, 1)
    spoiled = np.where(sphere64.active[..., None], jet.grad, 0.0)
    filled = transfer_tensor(spoiled, sphere64, rank=1)
    r = np.hypot(*np.moveaxis(sphere64.coords, -1, 0))
    band = ~sphere64.active & (r < 1.45)
    assert np.abs(filled - jet.grad)[band].max() < 1e-3
    # without the Jacobian the values would be off by O(1)
    assert np.abs(spoiled - jet.grad)[band].max() > 0.1
