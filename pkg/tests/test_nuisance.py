import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from sieve_hte.errors import InputError, NonConvergenceError, SingularDesignError
from sieve_hte.nuisance import (
    Family,
    FeatureMap,
    ObservationFrame,
    PropensityFit,
    fit_outcome_arm,
    fit_propensity,
    predict_outcome,
    predict_propensity,
)
from sieve_hte.simulation import Scenario, draw_arrays, generate_dataset


def test_intercept_only_logit_is_log_odds():
    d = np.array([1.0] * 30 + [0.0] * 70)
    frame = ObservationFrame(np.zeros(100), d, np.zeros((100, 0)))
    fit = fit_propensity(frame)
    assert fit.converged
    assert fit.beta[0] == pytest.approx(math.log(0.3 / 0.7), abs=1e-10)


def test_separated_data_raise_with_last_iterate():
    x = np.linspace(-2, 2, 41).reshape(-1, 1)
    x = x[np.abs(x[:, 0]) > 1e-9]
    d = (x[:, 0] > 0).astype(float)
    with pytest.raises(NonConvergenceError) as info:
        fit_propensity(ObservationFrame(np.zeros(d.size), d, x))
    assert isinstance(info.value.last_iterate, PropensityFit)


def test_large_sample_recovers_generating_coefficients():
    sc = Scenario(n=50_000, target_prop=0.5)
    data = generate_dataset(sc, np.random.default_rng(7))
    fit = fit_propensity(data.frame)
    assert data.true_beta0 == pytest.approx(0.0, abs=1e-3)
    np.testing.assert_allclose(fit.beta, [0.0, 1.0, 0.0, -0.5], atol=0.05)


def test_converged_gradient_is_small():
    data = generate_dataset(Scenario(n=1500, link="cubic"), np.random.default_rng(0))
    for family in Family:
        fit = fit_propensity(data.frame, family)
        x = np.column_stack([np.ones(data.frame.n), data.frame.x])
        eta = x @ fit.beta
        if family is Family.LOGISTIC:
            grad = x.T @ (data.frame.d - expit(eta))
        else:
            from scipy.stats import norm

            lam1 = norm.pdf(eta) / norm.cdf(eta)
            lam0 = norm.pdf(eta) / norm.cdf(-eta)
            grad = x.T @ (data.frame.d * lam1 - (1 - data.frame.d) * lam0)
        assert np.max(np.abs(grad)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_log_likelihood_never_decreases(seed):
    data = generate_dataset(Scenario(n=300, target_prop=0.3), np.random.default_rng(seed))
    for family in Family:
        hist = np.array(fit_propensity(data.frame, family).history)
        assert np.all(np.diff(hist) >= -1e-12 * np.abs(hist[:-1]))


def test_probit_and_logit_probabilities_agree():
    data = generate_dataset(Scenario(n=20_000, target_prop=0.5), np.random.default_rng(2))
    pl = predict_propensity(fit_propensity(data.frame, Family.LOGISTIC), data.frame.x, clip=None)
    pp = predict_propensity(fit_propensity(data.frame, Family.PROBIT), data.frame.x, clip=None)
    assert np.max(np.abs(pl - pp)) < 0.05


def test_predict_propensity_examples():
    zero = PropensityFit(np.zeros(3), True, 0, 0.0)
    assert predict_propensity(zero, [1.0, -2.0]) == 0.5
    big = PropensityFit(np.array([10.0, 0.0]), True, 0, 0.0)
    assert predict_propensity(big, [0.0]) == 0.975
    assert predict_propensity(big, [0.0], clip=None) == pytest.approx(expit(10.0))
    assert predict_propensity(PropensityFit(np.array([-10.0, 0.0]), True, 0, 0.0), [0.0]) == 0.025
    with pytest.raises(InputError):
        predict_propensity(zero, [0.0, 0.0], clip=(0.1, 0.8))


def test_rank_deficient_propensity_design():
    x = np.random.default_rng(0).standard_normal((50, 1))
    x = np.column_stack([x, 2 * x])
    d = np.tile([0.0, 1.0], 25)
    with pytest.raises(SingularDesignError):
        fit_propensity(ObservationFrame(np.zeros(50), d, x))


def test_ols_exact_on_noiseless_linear_data():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((80, 3))
    d = np.tile([0.0, 1.0], 40)
    y = 1.0 + x @ [2.0, -1.0, 0.5]
    frame = ObservationFrame(y, d, x)
    for arm in (0, 1):
        fit = fit_outcome_arm(frame, arm)
        np.testing.assert_allclose(fit.alpha, [1.0, 2.0, -1.0, 0.5], atol=1e-10)
    const = ObservationFrame(np.full(80, 3.0), d, x)
    fit = fit_outcome_arm(const, 1)
    np.testing.assert_allclose(predict_outcome(fit, x), 3.0, atol=1e-10)


def test_ols_residuals_orthogonal_to_design():
    data = generate_dataset(Scenario(n=2000), np.random.default_rng(4))
    f = data.frame
    for fmap in FeatureMap:
        for arm in (0, 1):
            fit = fit_outcome_arm(f, arm, fmap)
            mask = f.d == arm
            design = fmap.apply(f.x[mask])
            resid = f.y[mask] - predict_outcome(fit, f.x[mask])
            assert np.max(np.abs(design.T @ resid)) < 1e-8 * mask.sum()


def test_quadratic_map_drops_linear_terms():
    x = np.array([[1.0, -2.0, 3.0]])
    np.testing.assert_array_equal(FeatureMap.QUADRATIC.apply(x), [[1.0, 1.0, 4.0, 9.0]])
    np.testing.assert_array_equal(FeatureMap.LINEAR.apply(x), [[1.0, 1.0, -2.0, 3.0]])


def test_cubic_map_spans_every_monomial_up_to_degree_three():
    x = np.array([[2.0, 3.0, 5.0]])
    feats = FeatureMap.CUBIC.apply(x)[0]
    # 1 + 3 + 6 + 10 monomials for three covariates
    assert feats.shape == (20,)
    assert feats[0] == 1.0
    assert sorted(feats[1:4]) == [2.0, 3.0, 5.0]
    assert 30.0 in feats and 8.0 in feats and 125.0 in feats
    rng = np.random.default_rng(6)
    z = rng.standard_normal((200, 3))
    d = np.tile([0.0, 1.0], 100)
    y = 1.0 + z[:, 0] * z[:, 1] * z[:, 2] - z[:, 1] ** 3
    fit = fit_outcome_arm(ObservationFrame(y, d, z), 1, FeatureMap.CUBIC)
    np.testing.assert_allclose(predict_outcome(fit, z), y, atol=1e-9)


def test_treated_arm_regression_matches_population_projection():
    # oracle: weighted population least squares on a large independent draw
    sc = Scenario(n=400_000, target_prop=0.5)
    pop = draw_arrays(sc, np.random.default_rng(99), noise=False)
    w = pop["prob"]
    design = np.column_stack([np.ones(sc.n), pop["x"]])
    target = pop["mu0"] + pop["tau"]
    oracle = np.linalg.solve((design * w[:, None]).T @ design, (design * w[:, None]).T @ target)
    data = generate_dataset(Scenario(n=50_000, target_prop=0.5), np.random.default_rng(5))
    fit = fit_outcome_arm(data.frame, 1)
    np.testing.assert_allclose(fit.alpha, oracle, atol=0.05)
    np.testing.assert_allclose(oracle, [0.0, 1.8, -1.1, 0.0], atol=0.01)


def test_frame_validation():
    x = np.zeros((5, 1))
    with pytest.raises(InputError):
        ObservationFrame(np.zeros(5), np.array([0, 1, 2, 0, 1.0]), x)
    with pytest.raises(InputError):
        ObservationFrame(np.zeros(5), np.ones(5), x)
    with pytest.raises(InputError):
        ObservationFrame(np.array([0, 1, np.nan, 0, 0.0]), np.array([0, 1, 0, 1, 0.0]), x)
    frame = ObservationFrame(np.zeros(5), np.array([0, 1, 0, 1, 1.0]), x)
    with pytest.raises(InputError):
        fit_outcome_arm(frame, 2)
