"""Plug-in sandwich covariances and pairs-bootstrap inference.

Plug-in standard errors treat the truncation ``k`` as fixed, so they are a
fixed-k approximation to the sampling variability.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
from scipy.special import ndtri

from ._parallel import child_int, child_rng, parallel_map
from .errors import BootstrapDegeneracyError, HTEError, InputError, SingularCovarianceError
from .hermite import hermite_design
from .pipeline import PipelineConfig, fit_pipeline
from .single_index import FitOptions, canonicalize, tangent_basis

MAX_FAILURE_RATE = 0.10
PLUGIN_LABEL = "fixed-k approximation"


@dataclass(frozen=True)
class ProjectionBasis:
    v: np.ndarray

    @property
    def projector(self):
        return self.v @ self.v.T


@dataclass(frozen=True)
class GammaCovariance:
    sigma_gamma: np.ndarray
    reduced: np.ndarray
    cov: np.ndarray
    se: np.ndarray
    basis: ProjectionBasis


@dataclass(frozen=True)
class CoefficientCovariance:
    sigma_a: np.ndarray
    sigma_b: np.ndarray
    sigma_d: np.ndarray
    sigma_c: np.ndarray
    cov: np.ndarray
    se: np.ndarray


@dataclass
class InferenceReport:
    gamma: np.ndarray
    se_gamma_boot: np.ndarray | None
    se_gamma_plugin: np.ndarray | None
    se_coeffs_plugin: np.ndarray | None
    ci_gamma: list
    level: float
    b_resamples: int
    failures: int = 0
    sigma_gamma_reduced: np.ndarray | None = None
    sigma_matrices: dict = field(default_factory=dict)
    coeff_cov: np.ndarray | None = None
    boot_gammas: np.ndarray | None = field(default=None, repr=False)
    plugin_label: str = PLUGIN_LABEL


def _sym(a):
    return 0.5 * (a + a.T)


def z_quantile(level):
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    return float(ndtri(0.5 * (1.0 + level)))


def wald_interval(est, se, level=0.95):
    """``est -/+ z se`` with z the standard-normal (1 + level)/2 quantile."""
    if se < 0:
        raise InputError("standard error must be nonnegative")
    z = z_quantile(level)
    return (est - z * se, est + z * se)


def projection_basis(gamma):
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if abs(np.linalg.norm(gamma) - 1.0) > 1e-8:
        raise InputError("gamma must have unit norm")
    return ProjectionBasis(tangent_basis(gamma))


def _inv_pd(a, what):
    a = _sym(a)
    if a.size == 0:
        return a
    w = np.linalg.eigvalsh(a)
    if w.max() <= 0 or w.min() <= 1e-12 * w.max():
        raise SingularCovarianceError(f"{what} is singular (eigenvalues {w.min():.3g}..{w.max():.3g})")
    return _sym(np.linalg.inv(a))


def plug_in_gamma_covariance(fit, x):
    """Sandwich covariance of gamma_hat on the tangent space of the sphere.

    Sigma_Gamma = mean of (H'(u)^T c)^2 x x^T; the covariance of V^T gamma is
    sigma^2 (V^T Sigma_Gamma V)^{-1} / n, embedded back as V cov V^T.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    _, dh, _ = hermite_design(x @ fit.gamma, fit.k)
    slope = dh @ fit.coeffs.c
    sigma_gamma = _sym((x * slope[:, None] ** 2).T @ x / n)
    basis = projection_basis(fit.gamma)
    inner = _inv_pd(basis.v.T @ sigma_gamma @ basis.v, "V^T Sigma_Gamma V")
    reduced = _sym(fit.sigma2 * inner / n)
    cov = _sym(basis.v @ reduced @ basis.v.T)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return GammaCovariance(sigma_gamma, reduced, cov, se, basis)


def plug_in_coeff_covariance(fit, x, gamma_cov=None):
    """Sandwich covariance of the sieve coefficients.

    Sigma_C = Sigma_B + Sigma_D V (V^T Sigma_Gamma V)^{-1} V^T Sigma_D^T and the
    covariance is sigma^2 Sigma_B^{-1} Sigma_C Sigma_B^{-1} / n. Sigma_A is
    reported but not inverted: its first row is identically zero.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if gamma_cov is None:
        gamma_cov = plug_in_gamma_covariance(fit, x)
    h, dh, _ = hermite_design(x @ fit.gamma, fit.k)
    slope = dh @ fit.coeffs.c
    sigma_a = _sym(dh.T @ dh / n)
    sigma_b = _sym(h.T @ h / n)
    sigma_d = (h * slope[:, None]).T @ x / n
    v = gamma_cov.basis.v
    inner = _inv_pd(v.T @ gamma_cov.sigma_gamma @ v, "V^T Sigma_Gamma V")
    correction = _sym(sigma_d @ v @ inner @ v.T @ sigma_d.T)
    sigma_c = _sym(sigma_b + correction)
    bread = _inv_pd(sigma_b, "Sigma_B")
    cov = _sym(fit.sigma2 * bread @ sigma_c @ bread / n)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CoefficientCovariance(sigma_a, sigma_b, sigma_d, sigma_c, cov, se)


def plug_in_report(fit, x, level=0.95):
    """Inference report from the plug-in formulas alone (no resampling)."""
    gcov = plug_in_gamma_covariance(fit, x)
    ccov = plug_in_coeff_covariance(fit, x, gcov)
    return InferenceReport(
        gamma=fit.gamma,
        se_gamma_boot=None,
        se_gamma_plugin=gcov.se,
        se_coeffs_plugin=ccov.se,
        ci_gamma=[wald_interval(g, s, level) for g, s in zip(fit.gamma, gcov.se)],
        level=level,
        b_resamples=0,
        sigma_gamma_reduced=gcov.reduced,
        sigma_matrices=_sigma_dict(gcov, ccov),
        coeff_cov=ccov.cov,
    )


def _sigma_dict(gcov, ccov):
    return {
        "gamma": gcov.sigma_gamma,
        "A": ccov.sigma_a,
        "B": ccov.sigma_b,
        "D": ccov.sigma_d,
        "C": ccov.sigma_c,
    }


def uniform_resampler(rng, n):
    return rng.integers(0, n, size=n)


def align_to(fit, reference_gamma):
    """Canonicalise, then reflect if pointing away from ``reference_gamma``."""
    fit = canonicalize(fit)
    if fit.gamma @ reference_gamma < 0:
        fit = fit.reflected()
    return fit


def _one_resample(j, frame, point_gamma, k, config, opts, seed, resampler):
    rng = child_rng(seed, j)
    idx = resampler(rng, frame.n)
    boot_opts = replace(opts, k=k, seed=child_int(seed, j, 1))
    try:
        res = fit_pipeline(frame.take(idx), config, boot_opts, init=point_gamma)
    except HTEError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    fit = align_to(res.fit, point_gamma)
    return np.concatenate([fit.gamma, fit.coeffs.c]), None


def bootstrap_inference(
    frame,
    point_fit,
    b=100,
    level=0.95,
    opts=None,
    seed=0,
    config=PipelineConfig(),
    resampler=uniform_resampler,
    workers=1,
    plugin=True,
):
    """Pairs bootstrap of the whole pipeline around ``point_fit``.

    Each resample refits the nuisances, the pseudo-outcomes and the
    single-index model at the point estimate's ``k``, starting from the
    point estimate. Resample ``j`` draws from its own stream derived from
    ``seed``, so results do not depend on ``workers``. Failed resamples are
    dropped; more than 10% failures raise :class:`BootstrapDegeneracyError`.
    """
    if b < 2:
        raise InputError("need at least 2 bootstrap resamples")
    opts = opts or FitOptions()
    task = partial(
        _one_resample,
        frame=frame,
        point_gamma=point_fit.gamma,
        k=point_fit.k,
        config=config,
        opts=opts,
        seed=seed,
        resampler=resampler,
    )
    results = parallel_map(task, range(b), workers)
    draws = [r for r, _ in results if r is not None]
    reasons = [msg for r, msg in results if r is None]
    failures = len(reasons)
    if failures > MAX_FAILURE_RATE * b or len(draws) < 2:
        raise BootstrapDegeneracyError(
            f"{failures} of {b} bootstrap fits failed; first: {reasons[:1]}",
            failures=failures,
            attempted=b,
        )
    draws = np.vstack(draws)
    p = point_fit.gamma.size
    boot_gammas = draws[:, :p]
    se_boot = boot_gammas.std(axis=0, ddof=1)
    report = InferenceReport(
        gamma=point_fit.gamma,
        se_gamma_boot=se_boot,
        se_gamma_plugin=None,
        se_coeffs_plugin=None,
        ci_gamma=[wald_interval(g, s, level) for g, s in zip(point_fit.gamma, se_boot)],
        level=level,
        b_resamples=len(draws),
        failures=failures,
        boot_gammas=boot_gammas,
    )
    if plugin:
        try:
            gcov = plug_in_gamma_covariance(point_fit, frame.x)
            ccov = plug_in_coeff_covariance(point_fit, frame.x, gcov)
        except SingularCovarianceError:
            pass
        else:
            report.se_gamma_plugin = gcov.se
            report.se_coeffs_plugin = ccov.se
            report.sigma_gamma_reduced = gcov.reduced
            report.sigma_matrices = _sigma_dict(gcov, ccov)
            report.coeff_cov = ccov.cov
    return report
