import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sieve_hte.errors import InputError, NumericError
from sieve_hte.nuisance import FeatureMap, ObservationFrame, OutcomeFit, PropensityFit
from sieve_hte.pseudo import aipw_pseudo_outcome, aipw_transform


def test_formula_unit_cases():
    assert aipw_transform(1.0, 1.0, 0.5, 0.0, 0.0) == pytest.approx(2.0)
    assert aipw_transform(1.0, 0.0, 0.5, 0.0, 0.0) == pytest.approx(-2.0)
    assert aipw_transform(3.0, 1.0, 0.2, 3.0, 1.0) == pytest.approx(2.0)
    assert aipw_transform(1.0, 0.0, 0.7, 3.0, 1.0) == pytest.approx(2.0)


@given(
    st.floats(-50, 50), st.sampled_from([0.0, 1.0]), st.floats(0.01, 0.99),
    st.floats(-50, 50), st.floats(-50, 50),
)
def test_formula_against_direct_expression(y, d, prob, mu1, mu0):
    expect = d * (y - mu1) / prob - (1 - d) * (y - mu0) / (1 - prob) + mu1 - mu0
    assert aipw_transform(y, d, prob, mu1, mu0) == pytest.approx(expect, rel=1e-12, abs=1e-9)




def test_exact_outcome_models_give_exact_effects():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((200, 2))
    d = (rng.uniform(size=200) < 0.4).astype(float)
    mu0 = 1.0 + x[:, 0]
    mu1 = mu0 + 2.0 * x[:, 1]
    frame = ObservationFrame(np.where(d == 1, mu1, mu0), d, x)
    o0 = OutcomeFit(0, np.array([1.0, 1.0, 0.0]))
    o1 = OutcomeFit(1, np.array([1.0, 1.0, 2.0]))
    pf = PropensityFit(np.array([0.3, -1.0, 0.5]), True, 0, 0.0)
    out = aipw_pseudo_outcome(frame, pf, o0, o1)
    np.testing.assert_allclose(out.values, 2.0 * x[:, 1], atol=1e-12)


def test_clipping_is_counted_and_unclipped_extremes_fail():
    x = np.array([[-1.0], [1.0], [0.0], [0.5]])
    frame = ObservationFrame(np.ones(4), np.array([0.0, 1.0, 1.0, 0.0]), x)
    o0 = OutcomeFit(0, np.zeros(2))
    o1 = OutcomeFit(1, np.zeros(2))
    steep = PropensityFit(np.array([0.0, 800.0]), True, 0, 0.0)
    out = aipw_pseudo_outcome(frame, steep, o0, o1)
    assert out.n_clipped == 3
    assert out.clip_used == (0.025, 0.975)
    assert np.all(np.isfinite(out.values))
    with pytest.raises(NumericError, match="row"):
        aipw_pseudo_outcome(frame, steep, o0, o1, clip=None)


def test_outcome_fits_in_wrong_order():
    frame = ObservationFrame(np.ones(4), np.array([0.0, 1.0, 1.0, 0.0]), np.zeros((4, 1)))
    pf = PropensityFit(np.zeros(2), True, 0, 0.0)
    with pytest.raises(InputError):
        aipw_pseudo_outcome(frame, pf, OutcomeFit(1, np.zeros(2)), OutcomeFit(0, np.zeros(2)))


def test_quadratic_outcome_fit_predicts_with_its_map():
    o = OutcomeFit(0, np.array([1.0, 2.0]), FeatureMap.QUADRATIC)
    frame = ObservationFrame(np.array([3.0, 9.0, 0.0]), np.array([0.0, 0.0, 1.0]),
                             np.array([[1.0], [2.0], [0.0]]))
    pf = PropensityFit(np.zeros(2), True, 0, 0.0)
    out = aipw_pseudo_outcome(frame, pf, o, OutcomeFit(1, np.zeros(2)))
    np.testing.assert_allclose(out.values[:2], 0.0 - (1 + 2 * np.array([1.0, 4.0])), atol=1e-12)
