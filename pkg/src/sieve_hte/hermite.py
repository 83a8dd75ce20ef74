"""Orthonormal Hermite basis used as the sieve for the link function.

The basis functions are

    h_m(x) = He_m(x) / sqrt(sqrt(2 pi) m!)

where ``He_m`` are the probabilists' Hermite polynomials. They are
orthonormal in L2(R, exp(-x^2/2)) and satisfy h_m' = sqrt(m) h_{m-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

#: Default bound on the Euclidean norm of the sieve coefficients.
DEFAULT_CAP = 1e6

#: Node count used for Gauss-Hermite checks of the basis.
QUADRATURE_NODES = 64


def weight(x):
    """exp(-x^2 / 2), elementwise."""
    return np.exp(-0.5 * np.asarray(x, dtype=float) ** 2)


def _norms(k):
    m = np.arange(k)
    log_fact = np.array([math.lgamma(j + 1.0) for j in m])
    return np.exp(-0.5 * (0.5 * math.log(2.0 * math.pi) + log_fact))


@dataclass(frozen=True)
class BasisValues:
    """H(u) and its first two derivatives for a single point."""

    k: int
    h: np.ndarray
    dh: np.ndarray
    ddh: np.ndarray


@dataclass(frozen=True)
class LinkCoefficients:
    """Sieve coefficients c_0..c_{k-1} together with their norm bound."""

    c: np.ndarray
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if c.ndim != 1 or c.size < 1:
            raise InputError("coefficients must be a non-empty vector")
        if not np.all(np.isfinite(c)):
            raise InputError("coefficients must be finite")
        if not self.cap > 0:
            raise InputError("coefficient cap must be positive")
        # allow for rounding from the boundary projection
        if np.linalg.norm(c) > self.cap * (1.0 + 1e-12):
            raise InputError(
                f"coefficient norm {np.linalg.norm(c):.6g} exceeds cap {self.cap:.6g}"
            )
        object.__setattr__(self, "c", c)

    @property
    def k(self):
        return self.c.size

    def reflected(self):
        """Coefficients of x -> g(-x): c_m -> (-1)^m c_m."""
        signs = np.where(np.arange(self.k) % 2 == 0, 1.0, -1.0)
        return LinkCoefficients(self.c * signs, self.cap)


def _check_k(k):
    if isinstance(k, bool) or int(k) != k or k < 1:
        raise InputError(f"truncation k must be a positive integer, got {k!r}")
    return int(k)


def hermite_design(u, k, derivatives=True):
    """Evaluate the first ``k`` basis functions at every entry of ``u``.

    Returns ``(H, dH, ddH)`` each of shape ``(len(u), k)``; the derivative
    arrays are ``None`` when ``derivatives`` is false.
    """
    k = _check_k(k)
    u = np.asarray(u, dtype=float).reshape(-1)
    if not np.all(np.isfinite(u)):
        raise InputError("basis evaluation points must be finite")
    he = np.empty((u.size, k))
    he[:, 0] = 1.0
    if k > 1:
        he[:, 1] = u
    for m in range(1, k - 1):
        he[:, m + 1] = u * he[:, m] - m * he[:, m - 1]
    h = he * _norms(k)
    if not derivatives:
        return h, None, None
    root = np.sqrt(np.arange(k))
    dh = np.zeros_like(h)
    dh[:, 1:] = root[1:] * h[:, :-1]
    ddh = np.zeros_like(h)
    if k > 2:
        ddh[:, 2:] = np.sqrt(np.arange(2, k) * np.arange(1, k - 1)) * h[:, :-2]
    return h, dh, ddh


def eval_basis(u, k):
    """H(u), H'(u), H''(u) at a single finite point."""
    u = float(u)
    if not math.isfinite(u):
        raise InputError("basis evaluation point must be finite")
    h, dh, ddh = hermite_design([u], k)
    return BasisValues(int(k), h[0], dh[0], ddh[0])


def truncated_link_eval(u, coeffs):
    """g_k(u) = H(u)^T c; ``u`` may be scalar or array."""
    scalar = np.ndim(u) == 0
    h, _, _ = hermite_design(u, coeffs.k, derivatives=False)
    out = h @ coeffs.c
    return float(out[0]) if scalar else out


def link_derivative_eval(u, coeffs):
    """g_k'(u) = H'(u)^T c, vectorised over ``u``."""
    _, dh, _ = hermite_design(u, coeffs.k)
    return dh @ coeffs.c


def project_function(g, k, nodes=QUADRATURE_NODES):
    """Coefficients c_m = int g(x) h_m(x) exp(-x^2/2) dx by Gauss-Hermite."""
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    h, _, _ = hermite_design(x, k, derivatives=False)
    return (w * np.asarray(g(x), dtype=float)) @ h
