"""Simulation designs, the Monte Carlo driver and its summary metrics.

Data follow

    Y = X1 - 0.5 X2 + D g(gamma^T X) + eps,    eps ~ N(0, 1)
    P(D = 1 | X) = expit(b0 + X1 - 0.5 X3)

with gamma = (0.8, -0.6, 0) and the intercept ``b0`` calibrated to a target
treated fraction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache, partial

import numpy as np
from scipy.optimize import bisect
from scipy.special import expit

from ._parallel import child_int, child_rng, parallel_map, worker_count
from .comparators import ForestOptions, t_learner_cate, x_learner_cate
from .errors import HTEError, InputError, ReplicationFailureError
from .hermite import hermite_design
from .inference import bootstrap_inference, z_quantile
from .nuisance import FeatureMap, ObservationFrame
from .pipeline import PipelineConfig, fit_pipeline
from .single_index import FitOptions, predict_cate

GAMMA_TRUE = (0.8, -0.6, 0.0)
LINKS = {
    "linear": lambda u: u,
    "cubic": lambda u: 2.0 * u**3 - 1.0,
}
COVARIATE_LAWS = ("normal", "uniform")
CALIBRATION_DRAWS = 1_000_000
CALIBRATION_SEED = 20240601
EVAL_N = 1000
METHODS = ("sim", "t_rf", "x_rf")


@dataclass(frozen=True)
class Scenario:
    link: str = "linear"
    covariate_law: str = "normal"
    n: int = 1000
    target_prop: float = 0.5
    gamma_true: tuple = GAMMA_TRUE
    misspec: tuple = (True, True, True)
    seed: int = 0

    def __post_init__(self):
        if self.link not in LINKS:
            raise InputError(f"unknown link {self.link!r}")
        if self.covariate_law not in COVARIATE_LAWS:
            raise InputError(f"unknown covariate law {self.covariate_law!r}")
        if not 0.05 < self.target_prop < 0.95:
            raise InputError("target_prop must lie in (0.05, 0.95)")
        if len(self.misspec) != 3:
            raise InputError("misspec must be a (ps_ok, outcome_ok, sim_ok) triplet")
        object.__setattr__(self, "misspec", tuple(bool(f) for f in self.misspec))
        g = np.asarray(self.gamma_true, dtype=float)
        if abs(np.linalg.norm(g) - 1.0) > 1e-12:
            raise InputError("gamma_true must have unit norm")
        object.__setattr__(self, "gamma_true", tuple(float(v) for v in g))

    @property
    def p(self):
        return len(self.gamma_true)

    @property
    def ps_ok(self):
        return self.misspec[0]

    @property
    def outcome_ok(self):
        return self.misspec[1]

    @property
    def sim_ok(self):
        return self.misspec[2]

    def pipeline_config(self):
        # E[Y | X, D = 1] carries tau(X): only the linear single-index truth
        # is linear in X, every other design is a cubic polynomial
        linear = self.link == "linear" and self.sim_ok
        correct = FeatureMap.LINEAR if linear else FeatureMap.CUBIC
        return PipelineConfig.from_flags(self.ps_ok, self.outcome_ok, correct_map=correct)


def parse_misspec(text):
    """'TTF' -> (True, True, False)."""
    text = text.strip().upper()
    if len(text) != 3 or set(text) - {"T", "F"}:
        raise InputError(f"misspec must be three of T/F, got {text!r}")
    return tuple(ch == "T" for ch in text)


def draw_covariates(law, n, p, rng):
    if law == "normal":
        return rng.standard_normal((n, p))
    if law == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, p))
    raise InputError(f"unknown covariate law {law!r}")


def treatment_score(x):
    """Linear predictor of treatment without the intercept: X1 - 0.5 X3."""
    return x[:, 0] - 0.5 * x[:, 2]


def true_cate(scenario, x):
    tau = LINKS[scenario.link](x @ np.asarray(scenario.gamma_true))
    if not scenario.sim_ok:
        tau = tau - 0.5 * x[:, 2] ** 2
    return tau


@lru_cache(maxsize=None)
def _calibration_scores(law):
    rng = np.random.default_rng(CALIBRATION_SEED)
    s = treatment_score(draw_covariates(law, CALIBRATION_DRAWS, 3, rng))
    # antithetic pairing makes the integral exactly symmetric for symmetric laws
    return np.concatenate([s, -s])


@lru_cache(maxsize=None)
def _calibrate(law, target_prop):
    s = _calibration_scores(law)

    def gap(b0):
        return float(np.mean(expit(b0 + s))) - target_prop

    if gap(0.0) == 0.0:
        return 0.0
    return bisect(gap, -20.0, 20.0, xtol=1e-10)


def calibrate_intercept(scenario, target_prop=None):
    """Intercept b0 with E[expit(b0 + X1 - 0.5 X3)] equal to the target proportion.

    Solved by bisection against a fixed-seed Monte Carlo integral over
    10^6 antithetic covariate draws.
    """
    target = scenario.target_prop if target_prop is None else target_prop
    if not 0.05 < target < 0.95:
        raise InputError("target_prop must lie in (0.05, 0.95)")
    return _calibrate(scenario.covariate_law, float(target))


@dataclass(frozen=True)
class GeneratedData:
    frame: ObservationFrame
    true_cate: np.ndarray
    true_beta0: float
    true_propensity: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    provenance: dict = field(default_factory=dict)


def draw_arrays(scenario, rng, noise=True, treatment=None):
    """Raw simulation arrays; ``treatment`` forces every D to that value."""
    beta0 = calibrate_intercept(scenario)
    x = draw_covariates(scenario.covariate_law, scenario.n, scenario.p, rng)
    prob = expit(beta0 + treatment_score(x))
    u = rng.uniform(size=scenario.n)
    d = (u < prob).astype(float) if treatment is None else np.full(scenario.n, float(treatment))
    eps = rng.standard_normal(scenario.n) if noise else np.zeros(scenario.n)
    mu0 = x[:, 0] - 0.5 * x[:, 1]
    tau = true_cate(scenario, x)
    y = mu0 + d * tau + eps
    return {"x": x, "d": d, "y": y, "tau": tau, "prob": prob, "mu0": mu0, "beta0": beta0}


def generate_dataset(scenario, rng=None):
    rng = rng if rng is not None else np.random.default_rng(scenario.seed)
    a = draw_arrays(scenario, rng)
    frame = ObservationFrame(a["y"], a["d"], a["x"])
    provenance = {
        "link": scenario.link,
        "covariate_law": scenario.covariate_law,
        "sim_ok": scenario.sim_ok,
    }
    return GeneratedData(
        frame, a["tau"], a["beta0"], a["prob"], a["mu0"], a["mu0"] + a["tau"], provenance
    )


def cate_mse(predict, x, truth):
    """Mean of (tau_hat(x) - tau(x))^2 over the evaluation points."""
    pred = np.asarray(predict(x), dtype=float).reshape(-1)
    truth = np.asarray(truth, dtype=float).reshape(-1)
    return float(np.mean((pred - truth) ** 2))


class RunningStats:
    """Welford accumulator with an associative ``merge``."""

    def __init__(self, dim=1):
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, value):
        value = np.asarray(value, dtype=float)
        self.count += 1
        delta = value - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (value - self.mean)

    def merge(self, other):
        out = RunningStats(self.mean.size)
        out.count = self.count + other.count
        if out.count == 0:
            return out
        delta = other.mean - self.mean
        out.mean = self.mean + delta * other.count / out.count
        out.m2 = self.m2 + other.m2 + delta**2 * self.count * other.count / out.count
        return out

    @property
    def std(self):
        if self.count < 2:
            return np.full(self.mean.size, np.nan)
        return np.sqrt(self.m2 / (self.count - 1))


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    ok: bool
    gamma: np.ndarray | None = None
    se: np.ndarray | None = None
    covered: np.ndarray | None = None
    mse: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class ReplicationSummary:
    gamma_true: np.ndarray
    bias: np.ndarray
    sd: np.ndarray
    ese: np.ndarray | None
    ci_coverage: np.ndarray | None
    mse_mean: dict
    mse_sd: dict
    mse_median: dict
    reps: int
    failures: int
    sd_undefined: bool
    gammas: np.ndarray = field(repr=False)
    mses: dict = field(repr=False, default_factory=dict)
    errors: list = field(repr=False, default_factory=list)

    def rows(self):
        """One record per index component, as bias, sd, ese and ci_cover columns."""
        out = []
        for j in range(self.gamma_true.size):
            row = {
                "component": f"gamma{j + 1}",
                "bias": float(self.bias[j]),
                "sd": float(self.sd[j]),
                "ese": float(self.ese[j]) if self.ese is not None else math.nan,
                "ci_cover": float(self.ci_coverage[j]) if self.ci_coverage is not None else math.nan,
            }
            for m in sorted(self.mse_mean):
                row[f"mse_mean_{m}"] = self.mse_mean[m]
                row[f"mse_sd_{m}"] = self.mse_sd[m]
                row[f"mse_median_{m}"] = self.mse_median[m]
            out.append(row)
        return out


def run_replicate(
    j,
    scenario,
    fit_opts=FitOptions(),
    boot_b=0,
    boot_opts=None,
    methods=("sim",),
    forest_opts=ForestOptions(),
    eval_n=EVAL_N,
    level=0.95,
):
    """One Monte Carlo replicate; every random stream is derived from (seed, j)."""
    seed = scenario.seed
    data = generate_dataset(scenario, child_rng(seed, j, 0))
    config = scenario.pipeline_config()
    opts = replace(fit_opts, seed=child_int(seed, j, 1))
    try:
        res = fit_pipeline(data.frame, config, opts)
        gamma = res.fit.gamma
        se = covered = None
        if boot_b:
            bopts = replace(boot_opts or fit_opts, seed=child_int(seed, j, 2))
            report = bootstrap_inference(
                data.frame, res.fit, boot_b, level, bopts,
                seed=child_int(seed, j, 3), config=config, plugin=False,
            )
            se = report.se_gamma_boot
            z = z_quantile(level)
            covered = np.abs(gamma - np.asarray(scenario.gamma_true)) <= z * se
        x_eval = draw_covariates(scenario.covariate_law, eval_n, scenario.p, child_rng(seed, j, 4))
        tau_eval = true_cate(scenario, x_eval)
        mse = {}
        fopts = replace(forest_opts, seed=child_int(seed, j, 5))
        for m in methods:
            if m == "sim":
                mse[m] = cate_mse(partial(predict_cate, res.fit), x_eval, tau_eval)
            elif m == "t_rf":
                mse[m] = cate_mse(t_learner_cate(data.frame, fopts), x_eval, tau_eval)
            elif m == "x_rf":
                mse[m] = cate_mse(x_learner_cate(data.frame, res.propensity, fopts), x_eval, tau_eval)
            else:
                raise InputError(f"unknown method {m!r}")
    except HTEError as exc:
        return ReplicateResult(j, False, error=f"{type(exc).__name__}: {exc}")
    provenance = dict(res.provenance, **data.provenance)
    return ReplicateResult(j, True, gamma, se, covered, mse, provenance)


def summarize(results, gamma_true):
    gamma_true = np.asarray(gamma_true, dtype=float)
    good = [r for r in results if r.ok]
    failures = len(results) - len(good)
    if not good:
        raise ReplicationFailureError("every replicate failed")
    gammas = np.vstack([r.gamma for r in good])
    bias = gammas.mean(axis=0) - gamma_true
    sd_undefined = len(good) < 2
    sd = np.full(gamma_true.size, np.nan) if sd_undefined else gammas.std(axis=0, ddof=1)
    if all(r.se is not None for r in good):
        ese = np.vstack([r.se for r in good]).mean(axis=0)
        cover = np.vstack([r.covered for r in good]).mean(axis=0)
    else:
        ese = cover = None
    mses = {m: np.array([r.mse[m] for r in good]) for m in good[0].mse}
    return ReplicationSummary(
        gamma_true=gamma_true,
        bias=bias,
        sd=sd,
        ese=ese,
        ci_coverage=cover,
        mse_mean={m: float(v.mean()) for m, v in mses.items()},
        mse_sd={m: float(v.std(ddof=1)) if v.size > 1 else math.nan for m, v in mses.items()},
        mse_median={m: float(np.median(v)) for m, v in mses.items()},
        reps=len(results),
        failures=failures,
        sd_undefined=sd_undefined,
        gammas=gammas,
        mses=mses,
        errors=[r.error for r in results if not r.ok],
    )


def run_monte_carlo(
    scenario,
    reps,
    fit_opts=FitOptions(),
    boot_b=100,
    parallelism=None,
    boot_opts=None,
    methods=("sim",),
    forest_opts=ForestOptions(),
    eval_n=EVAL_N,
    max_failure_rate=0.10,
):
    """Replicate the full estimation pipeline ``reps`` times.

    Replicate ``j`` uses only streams derived from ``(scenario.seed, j)`` and
    results are reduced in index order, so the summary is bit-identical for
    any ``parallelism``. Bootstrap refits default to a single start from the
    replicate's point estimate.
    """
    if reps < 1:
        raise InputError("reps must be at least 1")
    if boot_b and boot_opts is None:
        boot_opts = replace(fit_opts, n_starts=1)
    task = partial(
        run_replicate,
        scenario=scenario,
        fit_opts=fit_opts,
        boot_b=boot_b,
        boot_opts=boot_opts,
        methods=tuple(methods),
        forest_opts=forest_opts,
        eval_n=eval_n,
    )
    results = parallel_map(task, range(reps), worker_count(parallelism))
    summary = summarize(results, scenario.gamma_true)
    if summary.failures > max_failure_rate * reps:
        raise ReplicationFailureError(
            f"{summary.failures} of {reps} replicates failed; first: {summary.errors[:1]}"
        )
    return summary


@dataclass(frozen=True)
class LinkCurve:
    u: np.ndarray
    g_hat: np.ndarray
    lo: np.ndarray | None
    hi: np.ndarray | None
    level: float = 0.95

    def rows(self):
        for i in range(self.u.size):
            yield (
                float(self.u[i]),
                float(self.g_hat[i]),
                None if self.lo is None else float(self.lo[i]),
                None if self.hi is None else float(self.hi[i]),
            )


def parse_grid(spec):
    """'lo:hi:step' -> inclusive grid; '0:0:0.1' is the single point 0."""
    try:
        lo, hi, step = (float(v) for v in spec.split(":"))
    except ValueError as exc:
        raise InputError(f"grid must look like lo:hi:step, got {spec!r}") from exc
    if not all(map(math.isfinite, (lo, hi, step))) or step <= 0 or hi < lo:
        raise InputError(f"invalid grid {spec!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def link_curve(fit, report_or_cov, grid, level=0.95):
    """Estimated link on ``grid`` with a pointwise delta-method Wald band.

    ``report_or_cov`` is an inference report, a coefficient covariance
    matrix, or ``None`` (no band).
    """
    u = parse_grid(grid) if isinstance(grid, str) else np.asarray(grid, dtype=float).reshape(-1)
    if not np.all(np.isfinite(u)):
        raise InputError("grid must be finite")
    h, _, _ = hermite_design(u, fit.k, derivatives=False)
    g_hat = h @ fit.coeffs.c
    cov = getattr(report_or_cov, "coeff_cov", report_or_cov)
    if cov is None:
        return LinkCurve(u, g_hat, None, None, level)
    se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", h, np.asarray(cov), h), 0.0, None))
    z = z_quantile(level)
    return LinkCurve(u, g_hat, g_hat - z * se, g_hat + z * se, level)


def scenario_dict(scenario):
    return asdict(scenario)
