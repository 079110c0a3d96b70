import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import nnls

from aeromix.exceptions import DegenerateInputError, InsufficientDataError, ValidationError
from aeromix.kriging import (
    VARIOGRAM_KINDS,
    OrdinaryKriging,
    VariogramModel,
    _nnls2,
    empirical_variogram,
    fit_variogram,
    krige,
    kriging_weights,
    loo_rmse,
)


def random_sites(rng, n, span=10000.0):
    return rng.uniform(0, span, size=(n, 2))


@pytest.mark.parametrize("kind", VARIOGRAM_KINDS)
def test_semivariance_at_zero_is_nugget(kind):
    m = VariogramModel(kind, 0.3, 2.0, 1500.0)
    assert m.semivariance(0.0) == 0.3
    assert m.semivariance(1e9) == pytest.approx(2.0)


@given(st.sampled_from(VARIOGRAM_KINDS), st.floats(0, 1), st.floats(0, 5), st.floats(1, 1e4),
       st.lists(st.floats(0, 5e4), min_size=2, max_size=20))
def test_semivariance_monotone(kind, nugget, psill, rng_, lags):
    m = VariogramModel(kind, nugget, nugget + psill, rng_)
    lags = np.sort(lags)
    g = m.semivariance(lags)
    assert np.all(np.diff(g) >= -1e-12)


def test_variogram_validation():
    with pytest.raises(ValidationError):
        VariogramModel("cubic", 0, 1, 1)
    with pytest.raises(ValidationError):
        VariogramModel("spherical", 2, 1, 1)
    with pytest.raises(ValidationError):
        VariogramModel("spherical", 0, 1, 0)


def test_empirical_variogram_hand_example():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [10.0, 0.0]])
    values = np.array([1.0, 3.0, 4.0, 0.0])
    lags, gamma, counts = empirical_variogram(coords, values, n_bins=5)
    # cutoff 5: only the pairs at distances 1, 2 and 3 count, one per bin
    assert counts.tolist() == [1, 1, 1]
    assert lags.tolist() == [1.0, 2.0, 3.0]
    assert gamma.tolist() == [0.5 * 4, 0.5 * 1, 0.5 * 9]


def test_single_sample_gives_constant():
    model = VariogramModel("spherical", 0.0, 1.0, 1000.0)
    pred = krige([[5.0, 5.0]], [7.5], model, [[0.0, 0.0], [1e4, -3.0]])
    assert np.allclose(pred, 7.5, atol=1e-12)


@given(st.sampled_from(VARIOGRAM_KINDS), st.integers(-5000, 5000), st.integers(1, 5000),
       st.lists(st.integers(-20000, 20000), min_size=1, max_size=5), st.floats(0, 0.5), st.floats(500, 20000),
       st.floats(-50, 50), st.floats(-50, 50))
def test_two_point_symmetry_is_exact(kind, x0, dx, ys, nugget, range_, va, vb):
    model = VariogramModel(kind, nugget, 1.0, range_)
    pts = [[float(x0 - dx), 0.0], [float(x0 + dx), 0.0]]
    targets = [[float(x0), float(y)] for y in ys]
    assert np.all(krige(pts, [va, vb], model, targets) == (va + vb) / 2)


@pytest.mark.parametrize("kind", ["spherical", "exponential"])
def test_exact_at_samples_and_weights_sum_to_one(rng, kind):
    coords = random_sites(rng, 30)
    values = rng.normal(size=30)
    model = VariogramModel(kind, 0.0, 1.0, 4000.0)
    assert np.allclose(krige(coords, values, model, coords), values, atol=1e-6)
    w = kriging_weights(coords, model, random_sites(rng, 50, 12000.0))
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-10)


def test_loo_closed_form_matches_refitting(rng):
    coords = random_sites(rng, 25)
    values = rng.normal(size=25)
    model = VariogramModel("exponential", 0.2, 1.5, 5000.0)
    errors = []
    for i in range(25):
        keep = np.arange(25) != i
        errors.append(krige(coords[keep], values[keep], model, coords[i])[0] - values[i])
    brute = float(np.sqrt(np.mean(np.square(errors))))
    assert loo_rmse(coords, values, model) == pytest.approx(brute, rel=1e-8)


def test_nnls2_matches_scipy(rng):
    for _ in range(200):
        m = rng.integers(3, 12)
        c1 = np.ones(m)
        c2 = rng.uniform(0, 1, size=(5, m))
        g = rng.normal(size=m) + rng.uniform(-1, 1)
        x1, x2, sse = _nnls2(c1, c2, g)
        for k in range(5):
            x, resid = nnls(np.column_stack([c1, c2[k]]), g)
            assert sse[k] == pytest.approx(resid**2, abs=1e-9)
            assert x1[k] >= 0 and x2[k] >= 0


def test_pure_nugget_field(rng):
    coords = random_sites(rng, 200)
    values = rng.normal(size=200)
    model = fit_variogram(coords, values)
    # flat semivariance: structured part small next to the nugget
    assert model.nugget >= 0.8 * model.sill
    lags = np.linspace(100, 5000, 20)
    g = model.semivariance(lags)
    assert np.ptp(g) <= 0.2 * model.sill


def test_smooth_field_prefers_structure(rng):
    coords = random_sites(rng, 120)
    values = np.sin(coords[:, 0] / 3000.0) + np.cos(coords[:, 1] / 4000.0)
    model = fit_variogram(coords, values)
    assert model.nugget < 0.2 * model.sill
    assert loo_rmse(coords, values, model) < 0.1 * values.std()


def test_constant_values_give_sill_zero():
    coords = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [2, 2]], dtype=float)
    model = fit_variogram(coords, np.full(5, 4.2))
    assert model.sill == 0.0
    assert np.allclose(krige(coords, np.full(5, 4.2), model, [[0.5, 0.5], [9, 9]]), 4.2)


def test_fit_preconditions():
    with pytest.raises(InsufficientDataError):
        fit_variogram([[0, 0], [1, 1]], [1.0, 2.0])
    with pytest.raises(DegenerateInputError):
        fit_variogram([[3, 3]] * 6, np.arange(6.0))
    with pytest.raises(InsufficientDataError):
        fit_variogram([[0, 0]] * 3 + [[1, 1]] * 3, np.arange(6.0))


def test_estimator_api(rng):
    from sklearn.base import clone

    coords = random_sites(rng, 40)
    values = coords[:, 0] / 1000.0
    est = OrdinaryKriging().fit(coords, values)
    assert est.variogram_.kind in VARIOGRAM_KINDS
    assert np.allclose(est.weights(coords[:3]).sum(axis=1), 1.0, atol=1e-10)
    assert clone(est).get_params() == {"variogram": None, "kinds": VARIOGRAM_KINDS}
    fixed = OrdinaryKriging(VariogramModel("spherical", 0.0, 1.0, 5000.0)).fit(coords, values)
    assert np.allclose(fixed.predict(coords), values, atol=1e-6)
    with pytest.raises(ValidationError):
        OrdinaryKriging().fit(np.ones((6, 3)), np.ones(6))
