"""Observed-data inference for the quantile treatment effect.

Point estimate, plug-in variance components, kernel density estimates at the
empirical quantiles, the conservative bounds ``C_hat``, ``B_hat``, ``A_hat``
and a confidence interval that accounts for the design's acceptance region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from ._linalg import lower_rank, spd_cholesky
from .errors import DegenerateDensityError, InvalidParameterError
from .limitlaw import (
    DEFAULT_MIXTURE_DRAWS,
    MixtureDraws,
    mixture_draws,
    quantile_of_draws,
)
from .popmodel import DENSITY_FLOOR, default_bandwidth, kde_at


@dataclass(frozen=True)
class ObservedData:
    y: np.ndarray
    z: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z = np.asarray(self.z).ravel()
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if not (len(y) == len(z) == x.shape[0]):
            raise InvalidParameterError(
                f"length mismatch: y={len(y)}, z={len(z)}, covariates={x.shape[0]}")
        if not np.isin(z, (0, 1)).all():
            raise InvalidParameterError("assignment must be binary")
        z = z.astype(np.int8)
        n1 = int(z.sum())
        if n1 < 2 or len(z) - n1 < 2:
            raise InvalidParameterError(f"each arm needs at least 2 units, got n1={n1}, "
                                        f"n0={len(z) - n1}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "covariates", x)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def n1(self) -> int:
        return int(self.z.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def k(self) -> int:
        return self.covariates.shape[1]

    def arm(self, arm: int) -> np.ndarray:
        if arm not in (0, 1):
            raise InvalidParameterError(f"arm must be 0 or 1, got {arm!r}")
        return self.y[self.z == arm]


@dataclass(frozen=True)
class SampleCovariances:
    """Within-arm plug-ins; ``w1``/``w0`` are ``L^{-1} s_qzx`` with ``S_xx = L L'``."""

    F1_hat: float
    F0_hat: float
    s1_sq: float
    s0_sq: float
    s_q1x: np.ndarray
    s_q0x: np.ndarray
    w1: np.ndarray
    w0: np.ndarray

    @property
    def proj1(self) -> float:
        return float(self.w1 @ self.w1)

    @property
    def proj0(self) -> float:
        return float(self.w0 @ self.w0)

    @property
    def cross(self) -> float:
        return float(self.w1 @ self.w0)


@dataclass(frozen=True)
class QteInference:
    q1_hat: float
    q0_hat: float
    tau_hat: float
    s1_sq: float
    s0_sq: float
    s_q1x: np.ndarray
    s_q0x: np.ndarray
    f1_hat: float
    f0_hat: float
    C_hat: float
    B_hat: float
    A_hat: float
    ci_low: float
    ci_high: float
    nu: float
    warnings: tuple[str, ...] = field(default=())

    @property
    def clamped(self) -> bool:
        return any(w.startswith("A_hat clamped") for w in self.warnings)


def arm_cdf(data: ObservedData, arm: int, q: float) -> float:
    y = data.arm(arm)
    return np.count_nonzero(y <= q) / len(y)


def arm_quantile(data: ObservedData, arm: int, alpha: float) -> float:
    """``inf{q : F_hat_arm(q) >= alpha}``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"quantile level must lie in (0, 1), got {alpha!r}")
    y = np.sort(data.arm(arm))
    return float(y[lower_rank(len(y), alpha) - 1])


def qte_estimate(data: ObservedData, alpha: float) -> float:
    return arm_quantile(data, 1, alpha) - arm_quantile(data, 0, alpha)


def sample_covariances(data: ObservedData, q1_hat: float, q0_hat: float,
                       chol: np.ndarray | None = None) -> SampleCovariances:
    """Indicator variances and indicator-covariate covariances within each arm.

    ``chol`` is the lower Cholesky factor of the full-sample S_xx; it is
    computed when not supplied.
    """
    n1, n0 = data.n1, data.n0
    r1 = n1 / data.n
    r0 = 1.0 - r1
    if chol is None:
        chol = spd_cholesky(np.atleast_2d(np.cov(data.covariates, rowvar=False)))
    t = data.z == 1
    x1, x0 = data.covariates[t], data.covariates[~t]
    ind1 = (data.y[t] <= q1_hat).astype(float)
    ind0 = (data.y[~t] <= q0_hat).astype(float)
    F1, F0 = float(ind1.mean()), float(ind0.mean())
    s1 = n1 * r0 * r0 / (n1 - 1) * (F1 - F1 * F1)
    s0 = n0 * r1 * r1 / (n0 - 1) * (F0 - F0 * F0)
    s_q1x = r0 / (n1 - 1) * ((ind1 - F1) @ (x1 - x1.mean(axis=0)))
    s_q0x = -r1 / (n0 - 1) * ((ind0 - F0) @ (x0 - x0.mean(axis=0)))
    w1 = linalg.solve_triangular(chol, s_q1x, lower=True)
    w0 = linalg.solve_triangular(chol, s_q0x, lower=True)
    return SampleCovariances(F1, F0, s1, s0, s_q1x, s_q0x, w1, w0)


def kde_density(values, q_hat: float, bandwidth: float) -> float:
    """Gaussian-kernel estimate of the arm's outcome density at ``q_hat``."""
    return kde_at(values, q_hat, bandwidth)


def variance_bounds(cov: SampleCovariances, r1: float, f1_hat: float, f0_hat: float):
    """``(C_hat, B_hat, A_hat, warnings)``.

    ``B_hat`` is evaluated as a squared norm so it cannot go negative.  When
    ``C_hat < B_hat``, ``A_hat`` is clamped to zero and a warning is recorded.
    """
    if f1_hat < DENSITY_FLOOR or f0_hat < DENSITY_FLOOR:
        raise DegenerateDensityError(
            f"estimated density below floor {DENSITY_FLOOR:g}: f1={f1_hat:.3g}, "
            f"f0={f0_hat:.3g}; the bandwidth is far too large for the outcome scale")
    r0 = 1.0 - r1
    pref = 1.0 / (r1 * r0)
    bound = min(r1 / r0 * cov.s1_sq, r0 / r1 * cov.s0_sq)
    C = pref * (cov.s1_sq / f1_hat ** 2 + cov.s0_sq / f0_hat ** 2
                + 2.0 * bound / (f1_hat * f0_hat))
    d = cov.w1 / f1_hat - cov.w0 / f0_hat
    B = pref * float(d @ d)
    warnings = []
    A = C - B
    if A < 0.0:
        warnings.append(f"A_hat clamped to 0 (C_hat={C:.6g} < B_hat={B:.6g})")
        A = 0.0
    return C, B, A, warnings


def confidence_interval(tau_hat: float, A_hat: float, B_hat: float, k: int, a: float, n: int,
                        miscoverage: float = 0.05, m: int = DEFAULT_MIXTURE_DRAWS,
                        rng: np.random.Generator | None = None,
                        draws: MixtureDraws | None = None):
    """``tau_hat -/+ nu/sqrt(n)`` with ``nu`` the ``1 - miscoverage/2`` mixture quantile.

    Pass ``draws`` to reuse standard (eps, L) draws for the same ``(k, a)``;
    otherwise ``m`` fresh draws are taken from ``rng``.  With ``a = inf`` and
    neither given, the exact Gaussian quantile is used.
    """
    if not 0.0 < miscoverage < 1.0:
        raise InvalidParameterError(f"miscoverage must lie in (0, 1), got {miscoverage!r}")
    if A_hat < 0 or B_hat < 0:
        raise InvalidParameterError("A_hat and B_hat must be nonnegative")
    if draws is None and rng is None and math.isinf(a):
        nu = math.sqrt(A_hat + B_hat) * float(special.ndtri(1.0 - miscoverage / 2.0))
        half = nu / math.sqrt(n)
        return tau_hat - half, tau_hat + half, nu
    if draws is None:
        if rng is None:
            raise InvalidParameterError("need either an rng or precomputed draws")
        if m < 10_000:
            raise InvalidParameterError(f"need at least 10,000 draws, got {m}")
        draws = mixture_draws(k, a, m, rng)
    nu = quantile_of_draws(A_hat, B_hat, draws, 1.0 - miscoverage / 2.0)
    half = nu / math.sqrt(n)
    return tau_hat - half, tau_hat + half, nu


def analyze(data: ObservedData, quantile_level: float, threshold: float = math.inf,
            miscoverage: float = 0.05, bandwidth: float | None = None,
            m: int = DEFAULT_MIXTURE_DRAWS, rng: np.random.Generator | None = None,
            draws: MixtureDraws | None = None,
            chol: np.ndarray | None = None) -> QteInference:
    """Full inference for one experiment.

    ``threshold`` is the acceptance threshold ``a`` of the design that
    generated ``data``; pass ``inf`` for a completely randomized experiment.
    """
    q1 = arm_quantile(data, 1, quantile_level)
    q0 = arm_quantile(data, 0, quantile_level)
    cov = sample_covariances(data, q1, q0, chol)
    h = default_bandwidth(data.n) if bandwidth is None else bandwidth
    f1 = kde_density(data.arm(1), q1, h)
    f0 = kde_density(data.arm(0), q0, h)
    C, B, A, warnings = variance_bounds(cov, data.n1 / data.n, f1, f0)
    tau = q1 - q0
    lo, hi, nu = confidence_interval(tau, A, B, data.k, threshold, data.n, miscoverage,
                                     m=m, rng=rng, draws=draws)
    return QteInference(
        q1_hat=q1, q0_hat=q0, tau_hat=tau, s1_sq=cov.s1_sq, s0_sq=cov.s0_sq,
        s_q1x=cov.s_q1x, s_q0x=cov.s_q0x, f1_hat=f1, f0_hat=f0,
        C_hat=C, B_hat=B, A_hat=A, ci_low=lo, ci_high=hi, nu=nu, warnings=tuple(warnings),
    )
