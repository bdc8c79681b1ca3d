"""Treatment assignment: complete randomization and Mahalanobis rerandomization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _backend
from ._linalg import spd_cholesky
from .errors import InvalidParameterError, RejectionBudgetExhausted
from .limitlaw import chisq_cdf, chisq_quantile

#: proposals are scored in blocks of at most this many rows
MAX_BATCH = 256


def threshold_from_p(k: int, p: float) -> float:
    """Threshold ``a`` with ``P(chi2_k <= a) = p``; ``inf`` when ``p == 1``."""
    if k < 1:
        raise InvalidParameterError(f"covariate dimension must be >= 1, got {k}")
    if not 0.0 < p <= 1.0:
        raise InvalidParameterError(f"acceptance probability must lie in (0, 1], got {p!r}")
    if p == 1.0:
        return math.inf
    return chisq_quantile(k, p)


@dataclass(frozen=True)
class DesignSpec:
    """Arm sizes and the acceptance rule.

    Give either ``acceptance_probability`` (the threshold is derived from the
    chi-square law with ``k`` degrees of freedom) or an explicit ``threshold``.
    """

    n: int
    n1: int
    k: int
    acceptance_probability: float = 1.0
    threshold: float | None = None
    max_attempts: int | None = None

    def __post_init__(self):
        if not 1 <= self.n1 <= self.n - 1:
            raise InvalidParameterError(f"need 1 <= n1 <= n-1, got n={self.n}, n1={self.n1}")
        if self.threshold is None:
            a = threshold_from_p(self.k, self.acceptance_probability)
            object.__setattr__(self, "threshold", a)
        else:
            if not self.threshold > 0:
                raise InvalidParameterError(f"threshold must be positive, got {self.threshold!r}")
            p = 1.0 if math.isinf(self.threshold) else chisq_cdf(self.k, self.threshold)
            object.__setattr__(self, "acceptance_probability", p)
        if self.max_attempts is None:
            p = max(self.acceptance_probability, 1e-300)
            object.__setattr__(self, "max_attempts", math.ceil(50.0 / p))
        elif self.max_attempts < 1:
            raise InvalidParameterError("max_attempts must be positive")

    @classmethod
    def from_fraction(cls, n: int, r1: float, k: int, acceptance_probability: float = 1.0,
                      **kw) -> "DesignSpec":
        return cls(n=n, n1=int(round(r1 * n)), k=k,
                   acceptance_probability=acceptance_probability, **kw)

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def r1(self) -> float:
        return self.n1 / self.n


@dataclass(frozen=True)
class BalanceState:
    """Cached Cholesky factor of S_xx and the whitened, centred covariates."""

    mean: np.ndarray
    s_xx: np.ndarray
    chol: np.ndarray
    whitened: np.ndarray

    @classmethod
    def from_covariates(cls, x) -> "BalanceState":
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        mean = x.mean(axis=0)
        s_xx = np.atleast_2d(np.cov(x, rowvar=False))
        chol = spd_cholesky(s_xx)
        # rows w_i = L^{-1}(x_i - xbar), so sum_i w_i w_i^T = (n-1) I
        w = np.ascontiguousarray(linalg.solve_triangular(chol, (x - mean).T, lower=True).T)
        for arr in (mean, s_xx, chol, w):
            arr.setflags(write=False)
        return cls(mean, s_xx, chol, w)

    @property
    def n(self) -> int:
        return self.whitened.shape[0]

    @property
    def k(self) -> int:
        return self.whitened.shape[1]


@dataclass(frozen=True)
class AssignmentDraw:
    z: np.ndarray
    M: float | None
    accepted: bool
    attempts: int


def covariate_mean_diff(x, z) -> np.ndarray:
    """Treated-minus-control difference of covariate means."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    z = np.asarray(z)
    treated = z == 1
    if treated.all() or not treated.any():
        raise InvalidParameterError("both arms must be nonempty")
    return x[treated].mean(axis=0) - x[~treated].mean(axis=0)


def mahalanobis(state: BalanceState, tau_x, n: int, r1: float) -> float:
    """``n r1 r0 * tau_x' S_xx^{-1} tau_x`` using the cached factor."""
    v = linalg.solve_triangular(state.chol, np.atleast_1d(np.asarray(tau_x, dtype=float)),
                                lower=True)
    return float(n * r1 * (1.0 - r1) * (v @ v))


def assignment_distance(state: BalanceState, z) -> float:
    """Mahalanobis distance of assignment ``z``, computed in whitened coordinates."""
    tau_w = covariate_mean_diff(state.whitened, z)
    r1 = np.count_nonzero(np.asarray(z) == 1) / state.n
    return float(state.n * r1 * (1.0 - r1) * (tau_w @ tau_w))


def _indicator(n: int, treated_idx) -> np.ndarray:
    z = np.zeros(n, dtype=np.int8)
    z[treated_idx] = 1
    return z


def sample_cre(n: int, n1: int, rng: np.random.Generator,
               state: BalanceState | None = None) -> AssignmentDraw:
    """Uniform draw over all assignments with exactly ``n1`` treated units."""
    if not 1 <= n1 <= n - 1:
        raise InvalidParameterError(f"need 1 <= n1 <= n-1, got n={n}, n1={n1}")
    z = _indicator(n, rng.permutation(n)[:n1])
    m = None if state is None else assignment_distance(state, z)
    return AssignmentDraw(z=z, M=m, accepted=True, attempts=1)


def _batch_rows(p: float) -> int:
    return max(1, min(MAX_BATCH, math.ceil(1.0 / p)))


def _draw_bits(rng: np.random.Generator, rows: int, subset: int) -> np.ndarray:
    words = (subset + 1) // 2
    raw = rng.bit_generator.random_raw(rows * words)
    return raw.view(np.uint32).reshape(rows, 2 * words)


def sample_rem(state: BalanceState, spec: DesignSpec, rng: np.random.Generator) -> AssignmentDraw:
    """Redraw complete randomizations until ``M <= a``; return the first accepted one.

    Each proposal picks the smaller arm by a partial Fisher-Yates shuffle
    driven by 32-bit words from ``rng``; the subset sum of whitened
    covariates gives ``M = n/(n1 n0) * |sum|^2`` without any solve.
    """
    n, n1, n0 = spec.n, spec.n1, spec.n0
    if state.n != n:
        raise InvalidParameterError(f"design is for n={n} units but covariates have {state.n}")
    subset = min(n1, n0)
    scale = n / (n1 * n0)
    a = spec.threshold
    batch = _batch_rows(spec.acceptance_probability)
    attempts = 0
    while attempts < spec.max_attempts:
        rows = min(batch, spec.max_attempts - attempts)
        row, m, chosen = _backend.rem_search(state.whitened, subset, scale, a,
                                             _draw_bits(rng, rows, subset))
        if row >= 0:
            z = _indicator(n, chosen)
            if subset != n1:
                z = 1 - z
            return AssignmentDraw(z=z, M=m, accepted=True, attempts=attempts + row + 1)
        attempts += rows
    raise RejectionBudgetExhausted(
        f"no assignment with M <= {a:.6g} in {spec.max_attempts} attempts "
        f"(nominal acceptance probability {spec.acceptance_probability:.3g}); "
        "the threshold is too strict for these covariates")
