import numpy as np
import pytest

from mvspectra.condsim import PCGConfig, dense_covariance
from mvspectra.dft import FrequencyGrid
from mvspectra.factor import (FactorModel, SingularSpectrumWarning, angles_to_unit, conditional_factor_field,
                              factor_model, fit_factors, normalize_csd, profile_g1, profile_g2, reconstruct_band,
                              sign_convention, sum_of_variance, _g2_from_inverse)
from mvspectra.fixtures import STORM_LOADINGS, factor_spectrum
from mvspectra.lattice import ComponentMeans, MultiField
from mvspectra.models import CrossSpectrum, quasi_matern_shape, sin2_sum, white_noise_spectrum
from oracles import dense_conditional, grid_search_g2, random_hermitian_pd, random_unit
from test_condsim import coregional_spectrum


def planted(sizes, A, noise=0.01, alpha=0.3, nu=1.0):
    """``A A^T g(w) + noise I`` with a quasi-Matern ``g`` of unit mean."""
    fg = FrequencyGrid(tuple(sizes))
    g = quasi_matern_shape(sin2_sum(fg), alpha, nu, fg.d)
    g = g / g.mean()
    A = np.asarray(A, float)
    mats = g[..., None, None] * np.outer(A, A) + noise * np.eye(A.size)
    return CrossSpectrum(mats.astype(complex)), g


# --- normalisation ---------------------------------------------------------

def test_normalize_unit_variance_unchanged():
    f = coregional_spectrum((6, 6))
    var = np.diag(f.lag0_cov()).real
    ft = normalize_csd(f, var)
    np.testing.assert_allclose(np.diag(ft.lag0_cov()).real, 1.0, atol=1e-10)
    np.testing.assert_allclose(normalize_csd(ft, np.ones(2)).mats, ft.mats)


def test_normalize_scale_invariant():
    f = coregional_spectrum((6, 6))
    c = np.array([3.0, 0.01])
    g = CrossSpectrum(f.mats * c[:, None] * c[None, :])
    a = normalize_csd(f, np.diag(f.lag0_cov()).real)
    b = normalize_csd(g, ComponentMeans(np.zeros(2), np.diag(g.lag0_cov()).real))
    np.testing.assert_allclose(a.mats, b.mats, atol=1e-12)


def test_normalize_rejects_nonpositive():
    with pytest.raises(ValueError):
        normalize_csd(white_noise_spectrum((4,), 2), [1.0, 0.0])


# --- profiled factor spectra ----------------------------------------------

def test_profile_g1_examples(rng):
    assert profile_g1([1.0, 0.0], 2 * np.eye(2)) == pytest.approx(2.0)
    assert profile_g1(random_unit(rng, 3), np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        profile_g1([1.0, 0.0], np.zeros((2, 2)))


def test_profile_g1_matches_grid_search(rng):
    for _ in range(20):
        f = random_hermitian_pd(rng, 3)
        a = random_unit(rng, 3)
        g = float(profile_g1(a, f))
        grid = np.linspace(0, np.trace(f).real, 20001)
        ok = np.array([np.linalg.eigvalsh(f - t * np.outer(a, a))[0] >= 0 for t in grid])
        assert abs(g - grid[ok].max()) < 1e-4 + (grid[1] - grid[0])
        ev = np.linalg.eigvalsh(f - g * np.outer(a, a))
        assert abs(ev[0]) < 1e-10 * ev[-1]
        # dominance: any larger g leaves a negative eigenvalue
        assert np.linalg.eigvalsh(f - g * (1 + 1e-6) * np.outer(a, a))[0] < 0


def test_profile_g1_stacked(rng):
    fs = np.stack([random_hermitian_pd(rng, 3) for _ in range(5)])
    a = random_unit(rng, 3)
    np.testing.assert_allclose(profile_g1(a, fs), [profile_g1(a, f) for f in fs])


def test_profile_g2_decoupled():
    f = np.diag([2.0, 3.0, 1.0])
    g1, g2 = profile_g2([1.0, 0, 0], [0, 1.0, 0], f)
    assert (g1, g2) == (pytest.approx(2.0), pytest.approx(3.0))


def test_profile_g2_boundary_when_interior_infeasible():
    # f tight along e2 and A1 tilted towards e2, so |B12| > B11 and the interior g2 < 0
    a1 = np.array([1.0, 0.1, 0.0]) / np.sqrt(1.01)
    a2 = np.array([0.0, 1.0, 0.0])
    f = np.diag([1.0, 0.01, 1.0])
    B = np.stack([a1, a2]) @ np.linalg.inv(f) @ np.stack([a1, a2]).T
    det = np.linalg.det(B)
    assert (B[0, 0] - abs(B[0, 1])) / det < 0
    g1, g2 = profile_g2(a1, a2, f)
    assert g2 == 0.0 or g1 == 0.0
    single = max(float(profile_g1(a1, f)), float(profile_g1(a2, f)))
    assert g1 + g2 == pytest.approx(single)
    og1, og2 = grid_search_g2(f, a1, a2)
    assert abs((g1 + g2) - (og1 + og2)) < 1e-3


@pytest.mark.parametrize("p", [3, 4])
def test_profile_g2_matches_grid_search(rng, p):
    for _ in range(10):
        f = random_hermitian_pd(rng, p)
        a1, a2 = random_unit(rng, p), random_unit(rng, p)
        g1, g2 = profile_g2(a1, a2, f)
        og1, og2 = grid_search_g2(f, a1, a2)
        assert abs(g1 - og1) < 1e-3 and abs(g2 - og2) < 1e-3
        assert g1 >= 0 and g2 >= 0
        lam = np.linalg.eigvalsh(f - g1 * np.outer(a1, a1) - g2 * np.outer(a2, a2))[0]
        assert -1e-8 <= lam <= 1e-4


def test_interior_solution_satisfies_constraint(rng):
    hits = 0
    for _ in range(100):
        f = random_hermitian_pd(rng, 3)
        a1, a2 = random_unit(rng, 3), random_unit(rng, 3)
        A = np.stack([a1, a2])
        B = A @ np.linalg.inv(f) @ A.T
        g1, g2 = _g2_from_inverse(a1, a2, np.linalg.inv(f))
        if g1 > 0 and g2 > 0:
            hits += 1
            D = np.diag([1 / g1, 1 / g2]) - B
            assert abs(np.linalg.det(D)) < 1e-8 * max(1.0, abs(B).max() ** 2)
    assert hits > 10


# --- criterion --------------------------------------------------------------

def test_sum_of_variance_forms(rng):
    sizes = (4, 5)
    f = factor_spectrum(sizes, STORM_LOADINGS, [(1.0, 0.2, 1.0), (0.5, 0.4, 0.5)], [(0.3, 0.5, 0.5)] * 4)
    A = np.stack([random_unit(rng, 4), random_unit(rng, 4)])
    g = rng.random((2,) + sizes)
    trace_form = sum_of_variance(f, A, g)
    rewrite = float(np.mean(f.trace())) - float(np.mean(g.sum(axis=0)))
    assert trace_form == pytest.approx(rewrite, abs=1e-10)
    assert sum_of_variance(f, A, np.zeros((2,) + sizes)) == pytest.approx(np.mean(f.trace()))


def test_sum_of_variance_perfect_fit():
    A = np.array([0.6, 0.8, 0.0])
    f, g = planted((5, 5), A, noise=0.0)
    assert sum_of_variance(f, A, g) == pytest.approx(0.0, abs=1e-12)


def test_angles_round_trip(rng):
    from mvspectra.factor import unit_to_angles
    for p in (2, 3, 5):
        x = random_unit(rng, p)
        np.testing.assert_allclose(angles_to_unit(unit_to_angles(x)), x, atol=1e-12)
        assert np.linalg.norm(angles_to_unit(rng.uniform(-3, 3, p - 1))) == pytest.approx(1.0)


def test_sign_convention():
    A = sign_convention([[0.0, -0.6, 0.8], [-1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(A, [[0.0, 0.6, -0.8], [1.0, 0.0, 0.0]])


# --- fitting ------------------------------------------------------------------

def test_planted_factor_recovered(rng):
    A_star = random_unit(rng, 4)
    f, _ = planted((12, 12), A_star)
    model = fit_factors(f, 1)
    assert abs(model.loadings[0] @ A_star) > 0.99
    assert model.explained_fraction > 0.95
    np.testing.assert_allclose(np.linalg.norm(model.loadings, axis=1), 1.0)
    first = model.loadings[0][np.flatnonzero(np.abs(model.loadings[0]) > 1e-12)[0]]
    assert first > 0


def test_explained_invariant_to_sign_flip(rng):
    f = factor_spectrum((6, 6), STORM_LOADINGS, [(1.0, 0.2, 1.0), (0.5, 0.4, 0.5)], [(0.3, 0.5, 0.5)] * 4)
    A = np.stack([random_unit(rng, 4), random_unit(rng, 4)])
    a = factor_model(f, A)
    b = factor_model(f, A * np.array([[-1.0], [1.0]]))
    assert a.explained_fraction == pytest.approx(b.explained_fraction, abs=1e-14)


def test_nesting_and_residual_invariants():
    f = factor_spectrum((6, 6, 4), STORM_LOADINGS, [(1.0, 0.15, 1.0), (1.0, 0.3, 0.8)], [(0.4, 0.5, 0.5)] * 4)
    f = normalize_csd(f, np.diag(f.lag0_cov()).real)
    m1, m2 = fit_factors(f, 1), fit_factors(f, 2)
    assert m2.explained_fraction >= m1.explained_fraction - 1e-12
    assert m2.criterion <= m1.criterion + 1e-12
    for m in (m1, m2):
        assert isinstance(m, FactorModel)
        assert np.all(m.g >= 0)
        lam = m.residual.min_eigenvalue()
        assert lam.min() >= -1e-8
        assert np.mean((lam >= -1e-8) & (lam <= 1e-4)) > 0
        assert 0 <= m.explained_fraction <= 1
        assert m.residual.hermitian_error() < 1e-12


@pytest.mark.parametrize("J", [0, 3])
def test_fit_rejects_bad_J(J):
    with pytest.raises(ValueError):
        fit_factors(white_noise_spectrum((4, 4), 3), J)


def test_fit_rejects_non_pd():
    mats = np.zeros((4, 4, 2, 2), complex)
    mats[...] = np.diag([1.0, 0.0])
    with pytest.raises(ValueError):
        fit_factors(CrossSpectrum(mats), 1)


# --- conditional factor fields ---------------------------------------------

def test_conditional_factor_field_matches_dense_gls(rng):
    A = np.array([0.6, 0.8])
    f, g = planted((6, 6), A)
    model = factor_model(f, A[None])
    # white noise along A is absorbed into the profiled factor spectrum
    np.testing.assert_allclose(model.g[0], g + 0.01, rtol=1e-10)
    g = model.g[0]
    # joint spectrum of (W, Y): [[g, g A^T], [g A, f]]
    aug = np.zeros((6, 6, 3, 3), complex)
    aug[..., 0, 0] = g
    aug[..., 0, 1:] = g[..., None] * A
    aug[..., 1:, 0] = g[..., None] * A
    aug[..., 1:, 1:] = f.mats
    Y = rng.standard_normal((2, 6, 6))
    field = MultiField.from_observations(Y)
    W = conditional_factor_field(model, f, field, 0)
    obs = np.arange(36, 108)
    y_obs = np.concatenate([Y[0].ravel(order="F"), Y[1].ravel(order="F")])
    mis, mean, _ = dense_conditional(dense_covariance(CrossSpectrum(aug)), obs, y_obs)
    np.testing.assert_allclose(W.ravel(order="F"), mean, atol=1e-6)
    # complete data never calls the solver
    W2 = conditional_factor_field(model, f, field, 0, PCGConfig(rel_tolerance=0.5, max_iters=1))
    np.testing.assert_array_equal(W, W2)


def test_conditional_factor_field_incomplete_is_real(rng):
    A = np.array([0.6, 0.8])
    f, _ = planted((6, 6), A)
    model = factor_model(f, A[None])
    Y = rng.standard_normal((2, 6, 6))
    Y[rng.random(Y.shape) < 0.3] = np.nan
    W = conditional_factor_field(model, f, MultiField.from_observations(Y), 0)
    assert W.shape == (6, 6) and W.dtype == float and np.all(np.isfinite(W))


def test_zero_factor_gives_zero_field(rng):
    f = coregional_spectrum((6, 6))
    model = factor_model(f, [[1.0, 0.0]])
    model.g[:] = 0
    W = conditional_factor_field(model, f, MultiField.from_observations(rng.standard_normal((2, 6, 6))), 0)
    assert np.all(W == 0)
    with pytest.raises(IndexError):
        conditional_factor_field(model, f, MultiField.from_observations(np.zeros((2, 6, 6))), 1)


def test_singular_frequency_flagged(rng):
    A = np.array([0.6, 0.8])
    f, _ = planted((6, 6), A, noise=0.0)
    f.mats[...] += 1e-3 * np.eye(2)
    f.mats[0, 0] = np.outer(A, A)
    model = FactorModel(A[None], np.ones((1, 6, 6)), f, 0.5, 0.0, 1.0)
    with pytest.warns(SingularSpectrumWarning):
        W = conditional_factor_field(model, f, MultiField.from_observations(rng.standard_normal((2, 6, 6))), 0)
    assert np.all(np.isfinite(W))


# --- reconstruction -----------------------------------------------------------

def _two_factor_model():
    A = np.array([[0.6, 0.8], [0.0, 1.0]])
    return FactorModel(A, np.ones((2, 3, 3)), white_noise_spectrum((3, 3), 2), 0.5, 0.0, 1.0)


def test_reconstruct_zero_fields_constant():
    means = ComponentMeans(np.array([5.0, -1.0]), np.array([4.0, 9.0]))
    out = reconstruct_band(_two_factor_model(), means, np.zeros((2, 3, 3)), 1)
    np.testing.assert_array_equal(out, -1.0)


def test_reconstruct_linear_and_scales(rng):
    model = _two_factor_model()
    means = ComponentMeans(np.array([5.0, -1.0]), np.array([4.0, 9.0]))
    W = rng.standard_normal((2, 3, 3))
    two = reconstruct_band(model, means, W, 1)
    one = reconstruct_band(model, means, W[:1], 1)
    np.testing.assert_allclose(two - one, 3.0 * model.loadings[1, 1] * W[1], atol=1e-12)
    var = reconstruct_band(model, means, W, 1, scale="variance")
    np.testing.assert_allclose(var - (-1.0), 3.0 * (two - (-1.0)), atol=1e-12)
    unit = ComponentMeans(np.array([5.0, -1.0]), np.ones(2))
    np.testing.assert_allclose(reconstruct_band(model, unit, W, 0),
                               5.0 + 0.6 * W[0] + 0.0 * W[1], atol=1e-12)
    with pytest.raises(ValueError):
        reconstruct_band(model, means, W, 0, scale="bogus")
