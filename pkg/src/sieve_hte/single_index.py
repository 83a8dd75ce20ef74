"""Sieve estimation of the single-index CATE model tau(x) = g(gamma^T x).

The link g is expanded in the first ``k`` orthonormal Hermite functions and
the index ``gamma`` lives on the unit sphere with ``gamma[0] >= 0``. The
least-squares problem is solved by alternating an exact coefficient step
with a Gauss-Newton step for ``gamma`` in the tangent space of the sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import qr_lstsq
from .errors import InputError, NonConvergenceError, SingularDesignError
from .hermite import DEFAULT_CAP, LinkCoefficients, hermite_design
from .pseudo import PseudoOutcome

DEFAULT_K = 6
DEFAULT_K_GRID = tuple(range(2, 9))


@dataclass(frozen=True)
class FitOptions:
    """Knobs for :func:`fit_single_index`.

    ``k`` is a positive integer or ``"auto"`` (BIC over ``k_grid``).
    """

    k: int | str = DEFAULT_K
    n_starts: int = 5
    max_iter: int = 200
    tol_obj: float = 1e-10
    tol_param: float = 1e-8
    seed: int = 0
    cap: float = DEFAULT_CAP
    k_grid: tuple = DEFAULT_K_GRID

    def __post_init__(self):
        if self.n_starts < 1:
            raise InputError("n_starts must be at least 1")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if not (self.tol_obj > 0 and self.tol_param > 0):
            raise InputError("tolerances must be positive")
        if self.k != "auto" and (isinstance(self.k, bool) or int(self.k) != self.k or self.k < 1):
            raise InputError(f"k must be a positive integer or 'auto', got {self.k!r}")


@dataclass(frozen=True)
class SingleIndexFit:
    gamma: np.ndarray
    coeffs: LinkCoefficients
    k: int
    lagrange: float
    sigma2: float
    objective: float
    starts: int
    iterations: int
    converged: bool
    history: tuple = field(default=(), repr=False, compare=False)

    def link(self, u):
        h, _, _ = hermite_design(u, self.k, derivatives=False)
        return h @ self.coeffs.c

    def reflected(self):
        """The equivalent solution (-gamma, c_m (-1)^m)."""
        return replace(self, gamma=-self.gamma, coeffs=self.coeffs.reflected())


def _values(pseudo):
    if isinstance(pseudo, PseudoOutcome):
        return pseudo.values
    return np.asarray(pseudo, dtype=float).reshape(-1)


def _check_xy(y, x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise InputError(f"dimension mismatch: {y.size} responses, x of shape {x.shape}")
    return x


def _unit(v):
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if not nrm > 0 or not math.isfinite(nrm):
        raise InputError("index vector must be nonzero and finite")
    return v / nrm


def tangent_basis(gamma):
    """Orthonormal basis (p x (p-1)) of the complement of a unit vector.

    Built by QR-completing ``gamma`` to an orthonormal frame and dropping
    the first column.
    """
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    p = gamma.size
    if p == 1:
        return np.zeros((1, 0))
    frame = np.column_stack([gamma, np.eye(p)])
    q, _ = np.linalg.qr(frame)
    return q[:, 1:p]


def sieve_objective(pseudo, x, gamma, coeffs):
    """(1/n) sum_i (Yhat_i - H(gamma^T x_i)^T c)^2."""
    y = _values(pseudo)
    x = _check_xy(y, x)
    gamma = np.asarray(gamma, dtype=float).reshape(-1)
    if gamma.size != x.shape[1]:
        raise InputError(f"gamma has {gamma.size} entries for {x.shape[1]} covariates")
    if abs(np.linalg.norm(gamma) - 1.0) > 1e-8:
        raise InputError("gamma must have unit norm")
    h, _, _ = hermite_design(x @ gamma, coeffs.k, derivatives=False)
    r = y - h @ coeffs.c
    return float(r @ r / y.size)


def sieve_objective_gradient(pseudo, x, gamma, coeffs):
    """Gradient of :func:`sieve_objective` in ``gamma`` at fixed coefficients."""
    y = _values(pseudo)
    x = _check_xy(y, x)
    h, dh, _ = hermite_design(x @ gamma, coeffs.k)
    r = y - h @ coeffs.c
    return -2.0 * (r * (dh @ coeffs.c)) @ x / y.size


def solve_coefficients(pseudo, index_values, k, cap=DEFAULT_CAP):
    """Least-squares sieve coefficients at fixed index values.

    The solution is rescaled onto the ball ``||c|| <= cap`` when it falls
    outside. Raises :class:`SingularDesignError` if the Hermite design is
    rank deficient (for example when all index values coincide).
    """
    y = _values(pseudo)
    u = np.asarray(index_values, dtype=float).reshape(-1)
    if u.size != y.size:
        raise InputError(f"{u.size} index values for {y.size} responses")
    h, _, _ = hermite_design(u, k, derivatives=False)
    return _solve_c(h, y, cap)


def _solve_c(h, y, cap):
    c = qr_lstsq(h, y, what="Hermite design")
    nrm = np.linalg.norm(c)
    if nrm > cap:
        c = c * (cap / nrm)
    return LinkCoefficients(c, cap)


def canonicalize(fit):
    """Flip to ``gamma[0] >= 0``; predictions are unchanged."""
    if fit.gamma[0] < 0:
        return fit.reflected()
    return fit


def predict_cate(fit, x):
    """tau_hat(x) = g_k(gamma^T x); ``x`` is a row or a matrix of rows."""
    single = np.ndim(x) <= 1
    x = np.reshape(np.asarray(x, dtype=float), (1, -1)) if single else np.asarray(x, dtype=float)
    out = fit.link(x @ fit.gamma)
    return float(out[0]) if single else out


@dataclass
class _Run:
    gamma: np.ndarray
    c: LinkCoefficients
    obj: float
    iterations: int
    converged: bool
    history: list


def _alternate(y, x, gamma, k, cap, max_iter, tol_obj, tol_param):
    n, p = x.shape
    h = hermite_design(x @ gamma, k, derivatives=False)[0]
    c = _solve_c(h, y, cap)
    r = y - h @ c.c
    obj = r @ r / n
    history = [obj]
    if p == 1:
        return _Run(gamma, c, obj, 0, True, history)
    for it in range(1, max_iter + 1):
        _, dh, _ = hermite_design(x @ gamma, k)
        jac = (dh @ c.c)[:, None] * (x @ tangent_basis(gamma))
        try:
            step = qr_lstsq(jac, r, what="index Jacobian")
        except SingularDesignError:
            # flat link: no first-order information about gamma
            return _Run(gamma, c, obj, it, True, history)
        direction = tangent_basis(gamma) @ step
        t = 1.0
        for _ in range(40):
            cand = _unit(gamma + t * direction)
            h_c = hermite_design(x @ cand, k, derivatives=False)[0]
            r_c = y - h_c @ c.c
            obj_c = r_c @ r_c / n
            if obj_c <= obj:
                break
            t *= 0.5
        else:
            return _Run(gamma, c, obj, it, True, history)
        c_new = _solve_c(h_c, y, cap)
        r_new = y - h_c @ c_new.c
        obj_new = r_new @ r_new / n
        if obj_new > obj_c:
            # only possible when the cap binds; the old coefficients are better
            c_new, r_new, obj_new = c, r_c, obj_c
        moved = np.linalg.norm(cand - gamma)
        rel = (obj - obj_new) / max(obj, np.finfo(float).tiny)
        gamma, c, r, obj = cand, c_new, r_new, obj_new
        history.append(obj)
        if rel < tol_obj or moved < tol_param:
            return _Run(gamma, c, obj, it, True, history)
    return _Run(gamma, c, obj, max_iter, False, history)


def _ols_start(y, x):
    design = np.column_stack([np.ones(y.size), x])
    try:
        beta = qr_lstsq(design, y, what="OLS start")[1:]
    except SingularDesignError:
        return None
    nrm = np.linalg.norm(beta)
    return beta / nrm if nrm > 0 and math.isfinite(nrm) else None


def initial_indices(y, x, n_starts, seed, init=None):
    """Starting values: ``init`` or the normalised OLS slope, then sphere draws."""
    p = x.shape[1]
    rng = np.random.default_rng(seed)
    starts = []
    first = _unit(init) if init is not None else _ols_start(y, x)
    if first is not None:
        starts.append(first)
    while len(starts) < n_starts:
        starts.append(_unit(rng.standard_normal(p)))
    return starts


def fit_single_index(pseudo, x, opts=None, init=None):
    """Minimise the sieve least-squares criterion over (gamma, c).

    Every start runs the alternating scheme to convergence; the converged
    run with the smallest objective is kept and canonicalised. ``init``
    replaces the OLS warm start (used by the bootstrap).
    """
    opts = opts or FitOptions()
    y = _values(pseudo)
    x = _check_xy(y, x)
    n, p = x.shape
    if opts.k == "auto":
        k = select_truncation(y, x, opts.k_grid, opts)
        opts = replace(opts, k=k)
    k = int(opts.k)
    if n <= p + k:
        raise InputError(f"need n > p + k, got n={n}, p={p}, k={k}")
    runs = []
    for g0 in initial_indices(y, x, opts.n_starts, opts.seed, init):
        runs.append(
            _alternate(y, x, g0, k, opts.cap, opts.max_iter, opts.tol_obj, opts.tol_param)
        )
    ok = [r for r in runs if r.converged]
    best = min(ok or runs, key=lambda r: r.obj)
    fit = _finish(y, x, best, k, len(runs))
    if not ok:
        raise NonConvergenceError(
            f"none of {len(runs)} starts converged in {opts.max_iter} iterations", fit
        )
    return fit


def _finish(y, x, run, k, starts):
    n, p = x.shape
    u = x @ run.gamma
    h, dh, _ = hermite_design(u, k)
    r = y - h @ run.c.c
    lagrange = float(np.mean(r * (dh @ run.c.c) * u))
    rss = float(r @ r)
    fit = SingleIndexFit(
        gamma=run.gamma,
        coeffs=run.c,
        k=k,
        lagrange=lagrange,
        sigma2=rss / max(n - k - p + 1, 1),
        objective=rss / n,
        starts=starts,
        iterations=run.iterations,
        converged=run.converged,
        history=tuple(run.history),
    )
    return canonicalize(fit)


def bic(rss, n, k, scale):
    """n log(RSS/n) + k log n with RSS/n floored relative to ``scale``."""
    floor = 1e-20 * max(scale, np.finfo(float).tiny)
    return n * math.log(max(rss / n, floor)) + k * math.log(n)


def select_truncation(pseudo, x, k_grid=DEFAULT_K_GRID, opts=None):
    """BIC choice of the truncation parameter; ties go to the smaller k."""
    opts = opts or FitOptions()
    y = _values(pseudo)
    x = _check_xy(y, x)
    n, p = x.shape
    grid = sorted(int(k) for k in k_grid)
    if not grid:
        raise InputError("k_grid must be nonempty")
    scale = float(np.mean(y**2))
    best_k, best_score, errors = None, math.inf, []
    for k in grid:
        if k >= n - p:
            raise InputError(f"k={k} is not below n - p = {n - p}")
        try:
            fit = fit_single_index(y, x, replace(opts, k=k))
        except (NonConvergenceError, SingularDesignError) as exc:
            errors.append((k, exc))
            continue
        score = bic(fit.objective * n, n, k, scale)
        if score < best_score:
            best_k, best_score = k, score
    if best_k is None:
        raise NonConvergenceError(
            f"every truncation in {grid} failed: {errors[-1][1]}", errors
        )
    return best_k
