"""Parametric nuisance models: propensity score and arm-wise outcome means."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, ndtr

from ._linalg import qr_lstsq
from .errors import InputError, NonConvergenceError, SingularDesignError

DEFAULT_CLIP = (0.025, 0.975)
MAX_COEF_NORM = 1e3
LL_ROUNDING = 1e-12


@dataclass(frozen=True)
class ObservationFrame:
    """Observed data ``(Y, D, X)`` with ``n`` rows and ``p`` covariates."""

    y: np.ndarray
    d: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        d = np.asarray(self.d, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2 or x.shape[0] != y.size or d.size != y.size:
            raise InputError(
                f"inconsistent shapes: y {y.shape}, d {d.shape}, x {x.shape}"
            )
        n, p = x.shape
        if n <= p + 1:
            raise InputError(f"need n > p + 1, got n={n}, p={p}")
        for name, arr in (("y", y), ("d", d), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise InputError(f"{name} contains non-finite values")
        if not np.all((d == 0.0) | (d == 1.0)):
            raise InputError("treatment indicators must be exactly 0 or 1")
        if d.sum() < 1 or (1 - d).sum() < 1:
            raise InputError("both treatment arms must be nonempty")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "x", x)

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.x.shape[1]

    def take(self, idx):
        """Sub-frame of the given row indices (duplicates allowed)."""
        return ObservationFrame(self.y[idx], self.d[idx], self.x[idx])


class Family(str, enum.Enum):
    LOGISTIC = "logistic"
    PROBIT = "probit"


class FeatureMap(str, enum.Enum):
    """Covariate expansion used by the outcome regressions.

    ``QUADRATIC`` keeps only the squared covariates (linear terms dropped),
    the deliberately misspecified outcome model. ``CUBIC`` is the full
    polynomial of degree three, all cross products included.
    """

    LINEAR = "linear"
    QUADRATIC = "quadratic"
    CUBIC = "cubic"

    def apply(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self is FeatureMap.LINEAR:
            feats = [x]
        elif self is FeatureMap.QUADRATIC:
            feats = [x**2]
        else:
            p = x.shape[1]
            feats = [
                np.prod(x[:, combo], axis=1, keepdims=True)
                for degree in (1, 2, 3)
                for combo in itertools.combinations_with_replacement(range(p), degree)
            ]
        return np.column_stack([np.ones(x.shape[0]), *feats])


@dataclass(frozen=True)
class PropensityFit:
    beta: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    family: Family = Family.LOGISTIC
    history: tuple = ()

    def linear_predictor(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.beta[0] + x @ self.beta[1:]


@dataclass(frozen=True)
class OutcomeFit:
    arm: int
    alpha: np.ndarray
    feature_map: FeatureMap = FeatureMap.LINEAR


def _with_intercept(x):
    return np.column_stack([np.ones(x.shape[0]), x])


def _loglik(family, eta, d):
    if family is Family.LOGISTIC:
        return float(np.sum(d * eta - np.logaddexp(0.0, eta)))
    return float(np.sum(d * log_ndtr(eta) + (1 - d) * log_ndtr(-eta)))


def _score_and_info(family, design, eta, d):
    if family is Family.LOGISTIC:
        prob = expit(eta)
        grad = design.T @ (d - prob)
        w = prob * (1 - prob)
    else:
        # Fisher scoring: expected information for the probit link
        log_phi = -0.5 * eta**2 - 0.5 * np.log(2 * np.pi)
        lam1 = np.exp(log_phi - log_ndtr(eta))
        lam0 = np.exp(log_phi - log_ndtr(-eta))
        grad = design.T @ (d * lam1 - (1 - d) * lam0)
        w = lam1 * lam0
    info = (design * w[:, None]).T @ design
    return grad, info


def fit_propensity(frame, family=Family.LOGISTIC, max_iter=100, tol=1e-8):
    """Maximum-likelihood binary regression of ``d`` on ``[1, x]``.

    Newton-Raphson (Fisher scoring for probit) with step halving, so the
    log-likelihood never decreases between iterations.

    Raises
    ------
    SingularDesignError
        If ``[1, x]`` does not have full column rank.
    NonConvergenceError
        After ``max_iter`` iterations, or when the coefficient norm exceeds
        1e3 (quasi-complete separation has no finite MLE).
    """
    family = Family(family)
    design = _with_intercept(frame.x)
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesignError("propensity design [1, X] is rank deficient")
    d = frame.d
    beta = np.zeros(design.shape[1])
    eta = design @ beta
    ll = _loglik(family, eta, d)

    history = [ll]

    def _fail(msg, it):
        raise NonConvergenceError(
            msg, PropensityFit(beta.copy(), False, it, ll, family, tuple(history))
        )

    for it in range(max_iter + 1):
        grad, info = _score_and_info(family, design, eta, d)
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            _fail("singular information matrix (separation?)", it)
        # a vanishing score alone is not enough: under separation the score
        # decays while the Newton steps keep growing
        if np.max(np.abs(grad)) < tol and np.linalg.norm(step) <= 1e-6 * (1 + np.linalg.norm(beta)):
            return PropensityFit(beta, True, it, ll, family, tuple(history))
        if it == max_iter:
            break
        # near the optimum the gain drops below the rounding error of the sum
        slack = LL_ROUNDING * max(1.0, abs(ll))
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = design @ cand
            ll_c = _loglik(family, eta_c, d)
            if ll_c >= ll - slack or t < 1e-10:
                break
            t *= 0.5
        if ll_c < ll - slack:
            _fail("line search failed to increase the log-likelihood", it)
        beta, eta, ll = cand, eta_c, ll_c
        history.append(ll)
        if np.linalg.norm(beta) > MAX_COEF_NORM:
            _fail("propensity coefficients diverge (separation)", it + 1)
    _fail(f"no convergence in {max_iter} iterations", max_iter)


def predict_propensity(fit, x, clip=DEFAULT_CLIP):
    """Fitted treatment probability, optionally clamped to ``clip``.

    ``x`` is one covariate row or a matrix of rows; a scalar comes back for a
    single row.
    """
    single = np.ndim(x) <= 1
    eta = fit.linear_predictor(np.reshape(x, (1, -1)) if single else x)
    prob = expit(eta) if fit.family is Family.LOGISTIC else ndtr(eta)
    if clip is not None:
        lo, hi = clip
        if not (0.0 < lo < 0.5 and np.isclose(hi, 1.0 - lo)):
            raise InputError(f"clip bounds must be (lo, 1 - lo) with lo in (0, 0.5): {clip}")
        prob = np.clip(prob, lo, hi)
    return float(prob[0]) if single else prob


def fit_outcome_arm(frame, arm, feature_map=FeatureMap.LINEAR):
    """OLS of ``y`` on the mapped covariates within one treatment arm."""
    if arm not in (0, 1):
        raise InputError(f"arm must be 0 or 1, got {arm!r}")
    feature_map = FeatureMap(feature_map)
    mask = frame.d == arm
    if not mask.any():
        raise InputError(f"treatment arm {arm} is empty")
    design = feature_map.apply(frame.x[mask])
    if mask.sum() <= design.shape[1]:
        raise SingularDesignError(
            f"arm {arm} has {int(mask.sum())} rows for {design.shape[1]} coefficients"
        )
    alpha = qr_lstsq(design, frame.y[mask], what=f"outcome design (arm {arm})")
    return OutcomeFit(arm, alpha, feature_map)


def predict_outcome(fit, x):
    single = np.ndim(x) <= 1
    design = fit.feature_map.apply(np.reshape(x, (1, -1)) if single else x)
    out = design @ fit.alpha
    return float(out[0]) if single else out
