"""Finite-population model and oracle quantities.

Everything here is computed from *both* potential outcomes of every unit, so it
is only available in simulation.  These quantities are the ground truth that
the observed-data estimators in :mod:`remqte.estimate` are checked against.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from ._linalg import SINGULAR_RTOL, inv_sqrt, is_singular, lower_rank, spd_cholesky
from .errors import (
    DegenerateCovariatesError,
    DegenerateDensityError,
    DegenerateIndicatorError,
    InvalidParameterError,
)

DENSITY_FLOOR = 1e-8
_SQRT_2PI = np.sqrt(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FinitePopulation:
    """Both potential outcomes and the covariates of ``n`` fixed units."""

    y1: np.ndarray
    y0: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y1, y0 = _frozen(self.y1).ravel(), _frozen(self.y0).ravel()
        x = _frozen(self.covariates)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        x.setflags(write=False)
        if not (len(y1) == len(y0) == x.shape[0]):
            raise InvalidParameterError(
                f"length mismatch: y1={len(y1)}, y0={len(y0)}, covariates={x.shape[0]}")
        if len(y1) < 4:
            raise InvalidParameterError("a population needs at least 4 units")
        if x.shape[1] < 1:
            raise InvalidParameterError("at least one covariate is required")
        if not (np.all(np.isfinite(y1)) and np.all(np.isfinite(y0)) and np.all(np.isfinite(x))):
            raise InvalidParameterError("outcomes and covariates must be finite")
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "covariates", x)
        if is_singular(self.s_xx):
            raise DegenerateCovariatesError("covariate covariance S_xx is singular")

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    @cached_property
    def s_xx(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.covariates, rowvar=False))

    def outcomes(self, arm: int) -> np.ndarray:
        if arm not in (0, 1):
            raise InvalidParameterError(f"arm must be 0 or 1, got {arm!r}")
        return self.y1 if arm == 1 else self.y0

    def observe(self, z) -> np.ndarray:
        """Observed outcomes ``Z*Y(1) + (1-Z)*Y(0)`` under assignment ``z``."""
        z = np.asarray(z)
        return np.where(z == 1, self.y1, self.y0)


@dataclass(frozen=True)
class PopulationMoments:
    """Blocks of the finite-population covariance of the stacked vectors u_i."""

    alpha: float
    r1: float
    n: int
    q1: float
    q0: float
    s_uu: np.ndarray
    F1_at_q: float
    F0_at_q: float
    F_joint: float

    @property
    def s_qq(self) -> np.ndarray:
        return self.s_uu[:2, :2]

    @property
    def s_qx(self) -> np.ndarray:
        return self.s_uu[:2, 2:]

    @property
    def s_xx(self) -> np.ndarray:
        return self.s_uu[2:, 2:]

    @property
    def V(self) -> np.ndarray:
        return self.s_uu / (self.n * self.r1 * (1.0 - self.r1))


@dataclass(frozen=True)
class OracleLaw:
    """True asymptotic variance components of the QTE estimator (outcome units squared)."""

    A: float
    B: float
    C: float
    A_tilde: float
    C_tilde: float
    V_tilde_qq: float
    R2_tilde: float
    f1: float
    f0: float
    q1: float
    q0: float
    tau: float
    R2_matrix: np.ndarray | None
    R2_z: tuple[float, float] | None


def population_cdf(pop: FinitePopulation, arm: int, q: float) -> float:
    y = pop.outcomes(arm)
    return np.count_nonzero(y <= q) / len(y)


def _quantile(values: np.ndarray, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"quantile level must lie in (0, 1), got {alpha!r}")
    s = np.sort(values)
    return float(s[lower_rank(len(s), alpha) - 1])


def population_quantile(pop: FinitePopulation, arm: int, alpha: float) -> float:
    """``inf{q : F_arm(q) >= alpha}``; always one of the arm's outcomes."""
    return _quantile(pop.outcomes(arm), alpha)


def true_qte(pop: FinitePopulation, alpha: float) -> float:
    return population_quantile(pop, 1, alpha) - population_quantile(pop, 0, alpha)


def _check_r1(r1: float) -> None:
    if not 0.0 < r1 < 1.0:
        raise InvalidParameterError(f"treated fraction r1 must lie in (0, 1), got {r1!r}")


def stacked_units(pop: FinitePopulation, alpha: float, r1: float):
    """Rows ``u_i = (r0*1{Y_i(1)<=q1}, -r1*1{Y_i(0)<=q0}, X_i)`` and the quantiles used."""
    q1 = population_quantile(pop, 1, alpha)
    q0 = population_quantile(pop, 0, alpha)
    r0 = 1.0 - r1
    ind1 = (pop.y1 <= q1).astype(float)
    ind0 = (pop.y0 <= q0).astype(float)
    u = np.column_stack([r0 * ind1, -r1 * ind0, pop.covariates])
    return u, q1, q0, ind1, ind0


def covariance_blocks(pop: FinitePopulation, alpha: float, r1: float) -> PopulationMoments:
    _check_r1(r1)
    u, q1, q0, ind1, ind0 = stacked_units(pop, alpha, r1)
    s_uu = np.cov(u, rowvar=False)
    if is_singular(s_uu[2:, 2:]):
        raise DegenerateCovariatesError("covariate covariance S_xx is singular")
    s_uu.setflags(write=False)
    return PopulationMoments(
        alpha=alpha, r1=r1, n=pop.n, q1=q1, q0=q0, s_uu=s_uu,
        F1_at_q=float(ind1.mean()), F0_at_q=float(ind0.mean()),
        F_joint=float(np.mean(ind1 * ind0)),
    )


def squared_correlations(moments: PopulationMoments):
    """Matrix ``R^2_q`` and the per-arm scalars ``(R^2_{q1}, R^2_{q0})``."""
    s_qq, s_qx, s_xx = moments.s_qq, moments.s_qx, moments.s_xx
    root = inv_sqrt(s_qq, DegenerateIndicatorError, "indicator covariance S_qq")
    proj = s_qx @ linalg.solve(s_xx, s_qx.T, assume_a="pos")
    r2 = root @ proj @ root
    r2 = 0.5 * (r2 + r2.T)
    r2_z = (float(proj[0, 0] / s_qq[0, 0]), float(proj[1, 1] / s_qq[1, 1]))
    return r2, r2_z


def kde_at(values: np.ndarray, point: float, bandwidth: float) -> float:
    """Gaussian-kernel density estimate of ``values`` at ``point``."""
    if not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be positive, got {bandwidth!r}")
    t = (np.asarray(values, dtype=float) - point) / bandwidth
    return float(np.mean(np.exp(-0.5 * t * t)) / (_SQRT_2PI * bandwidth))


def default_bandwidth(n: int) -> float:
    return n ** (-1.0 / 3.0)


def oracle_densities(pop: FinitePopulation, alpha: float, bandwidth: float | None = None):
    h = default_bandwidth(pop.n) if bandwidth is None else bandwidth
    f1 = kde_at(pop.y1, population_quantile(pop, 1, alpha), h)
    f0 = kde_at(pop.y0, population_quantile(pop, 0, alpha), h)
    return f1, f0


def oracle_variance_components(pop: FinitePopulation, alpha: float, r1: float,
                               bandwidth: float | None = None) -> OracleLaw:
    """A, B, C and their conservative bounds for the design with treated fraction ``r1``.

    The cross terms are evaluated from the closed forms in F1, F0 and the joint
    CDF so that ``C_tilde >= C`` survives floating-point rounding.
    """
    moments = covariance_blocks(pop, alpha, r1)
    f1, f0 = oracle_densities(pop, alpha, bandwidth)
    if f1 < DENSITY_FLOOR or f0 < DENSITY_FLOOR:
        raise DegenerateDensityError(
            f"oracle density below floor {DENSITY_FLOOR:g}: f1={f1:.3g}, f0={f0:.3g}")
    n, r0 = pop.n, 1.0 - r1
    F1, F0, Fj = moments.F1_at_q, moments.F0_at_q, moments.F_joint
    k = n * r0 * r1 / (n - 1)
    s11 = n * r0 * r0 / (n - 1) * (F1 - F1 * F1)
    s00 = n * r1 * r1 / (n - 1) * (F0 - F0 * F0)
    neg_s10 = k * (Fj - F1 * F0)
    bound = k * min(F1 - F1 * F1, F0 - F0 * F0)

    pref = 1.0 / (r1 * r0)
    own = s11 / f1 ** 2 + s00 / f0 ** 2
    C = pref * (own + 2.0 * neg_s10 / (f1 * f0))
    C_tilde = pref * (own + 2.0 * bound / (f1 * f0))

    chol = spd_cholesky(moments.s_xx)
    contrast = moments.s_qx[0] / f1 - moments.s_qx[1] / f0
    w = linalg.solve_triangular(chol, contrast, lower=True)
    B = pref * float(w @ w)
    # C = 0 only when the density-weighted contrast is constant; nothing to explain then
    r2_tilde = B / C if C > 0 else 0.0

    try:
        r2_matrix, r2_z = squared_correlations(moments)
    except DegenerateIndicatorError:
        r2_matrix, r2_z = None, None
    return OracleLaw(
        A=C - B, B=B, C=C, A_tilde=C_tilde - B, C_tilde=C_tilde,
        V_tilde_qq=C / n, R2_tilde=r2_tilde, f1=f1, f0=f0,
        q1=moments.q1, q0=moments.q0, tau=moments.q1 - moments.q0,
        R2_matrix=r2_matrix, R2_z=r2_z,
    )


def gamma_diagnostic(pop: FinitePopulation, alpha: float, r1: float) -> float:
    """Normalized third moment of the standardized u_i; ``inf`` when degenerate."""
    if r1 <= 0.0 or r1 >= 1.0:
        return float("inf")
    u, *_ = stacked_units(pop, alpha, r1)
    centered = u - u.mean(axis=0)
    s_uu = np.cov(u, rowvar=False)
    w, v = np.linalg.eigh(s_uu)
    if not (w[-1] > 0 and w[0] >= SINGULAR_RTOL * w[-1]):
        return float("inf")
    std = centered @ ((v / np.sqrt(w)) @ v.T)
    norms = np.linalg.norm(std, axis=1)
    dim = u.shape[1]
    return float(dim ** 0.25 / np.sqrt(pop.n * r1 * (1.0 - r1)) * np.mean(norms ** 3))
