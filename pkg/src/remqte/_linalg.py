"""Small numerical helpers: order-statistic ranks and guarded matrix roots."""
from __future__ import annotations

import math

import numpy as np
from scipy import linalg

from .errors import DegenerateCovariatesError

#: relative eigenvalue floor below which a symmetric matrix counts as singular
SINGULAR_RTOL = 1e-12


def lower_rank(m: int, p: float) -> int:
    """Smallest k in 1..m with k/m >= p (float comparison, as the CDF is computed)."""
    k = min(max(math.ceil(m * p), 1), m)
    while k > 1 and (k - 1) / m >= p:
        k -= 1
    while k < m and k / m < p:
        k += 1
    return k


def is_singular(mat: np.ndarray) -> bool:
    w = np.linalg.eigvalsh(np.atleast_2d(mat))
    top = w[-1]
    return not (top > 0 and w[0] >= SINGULAR_RTOL * top)


def inv_sqrt(mat: np.ndarray, exc: type[Exception] = DegenerateCovariatesError,
             what: str = "matrix") -> np.ndarray:
    """Symmetric inverse square root via eigendecomposition; refuses near-singular input."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    w, v = np.linalg.eigh(mat)
    top = w[-1]
    if not (top > 0 and w[0] >= SINGULAR_RTOL * top):
        raise exc(f"{what} is singular (eigenvalues {w[0]:.3g} .. {top:.3g})")
    return (v / np.sqrt(w)) @ v.T


def spd_cholesky(mat: np.ndarray, what: str = "covariate covariance S_xx") -> np.ndarray:
    """Lower Cholesky factor after the same singularity screen as :func:`inv_sqrt`."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if is_singular(mat):
        raise DegenerateCovariatesError(f"{what} is singular")
    return linalg.cholesky(mat, lower=True)
