import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularDesignError

RANK_RTOL = 1e-10


def qr_lstsq(a, b, what="design"):
    """Least squares ``min ||a x - b||`` by thin QR, refusing rank-deficient ``a``."""
    a = np.asarray(a, dtype=float)
    n, q = a.shape
    if n < q:
        raise SingularDesignError(f"{what} has {n} rows for {q} columns")
    qmat, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    scale = max(diag.max(initial=0.0), np.abs(a).max(initial=0.0))
    if q and (scale == 0.0 or diag.min() <= RANK_RTOL * scale):
        raise SingularDesignError(f"{what} is rank deficient")
    return solve_triangular(r, qmat.T @ b)
