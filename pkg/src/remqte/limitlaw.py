"""Asymptotic laws under rerandomization.

The QTE estimator under a Mahalanobis acceptance rule behaves like
``sqrt(A)*eps + sqrt(B)*L`` where ``eps`` is standard normal and ``L`` is the
first coordinate of a ``K``-dimensional standard normal vector conditioned on
its squared norm being at most ``a``.  This module samples ``L`` exactly,
evaluates its variance in closed form and computes Monte Carlo quantiles of
the mixture.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ._linalg import lower_rank
from .errors import InvalidParameterError

DEFAULT_MIXTURE_DRAWS = 200_000


def _check_df(k: int) -> None:
    if int(k) != k or k < 1:
        raise InvalidParameterError(f"degrees of freedom must be a positive integer, got {k!r}")


def chisq_cdf(k: int, x):
    """Regularized lower incomplete gamma ``P(k/2, x/2)``; accepts arrays."""
    _check_df(k)
    x = np.asarray(x, dtype=float)
    out = special.gammainc(0.5 * k, 0.5 * np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


def _chisq_logpdf(k: int, x: float) -> float:
    h = 0.5 * k
    return (h - 1.0) * math.log(0.5 * x) - 0.5 * x - special.gammaln(h) - math.log(2.0)


def chisq_quantile(k: int, p: float) -> float:
    """Inverse of :func:`chisq_cdf` for scalar ``p`` in (0, 1)."""
    _check_df(k)
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"probability must lie in (0, 1), got {p!r}")
    x = 2.0 * float(special.gammaincinv(0.5 * k, p))
    # one Newton step on the CDF; kept only if it reduces the residual
    if x > 0.0:
        resid = chisq_cdf(k, x) - p
        step = resid / math.exp(_chisq_logpdf(k, x))
        if math.isfinite(step) and x - step > 0.0:
            cand = x - step
            if abs(chisq_cdf(k, cand) - p) < abs(resid):
                x = cand
    return x


def _chisq_quantile_array(k: int, p: np.ndarray) -> np.ndarray:
    return 2.0 * special.gammaincinv(0.5 * k, p)


def _chisq_tail_ratio(k: int, a: float) -> float:
    """``P(chi2_{k+2} <= a) / P(chi2_k <= a)`` by the confluent series.

    With ``s = k/2`` and ``x = a/2`` the ratio equals ``T/(1+T)`` where
    ``T = sum_{j>=1} x^j / ((s+1)...(s+j))``; this stays accurate where both
    CDFs underflow.
    """
    s, x = 0.5 * k, 0.5 * a
    term, total = 1.0, 0.0
    for j in range(1, 10_000):
        term *= x / (s + j)
        total += term
        if term < 1e-17 * total:
            break
    return total / (1.0 + total)


def truncated_variance(k: int, a: float) -> float:
    """Variance of ``L_{K,a}``: ``P(chi2_{K+2} <= a) / P(chi2_K <= a)``."""
    _check_df(k)
    if not a > 0:
        raise InvalidParameterError(f"threshold must be positive, got {a!r}")
    if math.isinf(a):
        return 1.0
    denom = chisq_cdf(k, a)
    if denom > 1e-200 and a > k:
        return min(1.0, chisq_cdf(k + 2, a) / denom)
    return _chisq_tail_ratio(k, a)


def priasv(r2_tilde: float, k: int, a: float) -> float:
    """Asymptotic fractional variance reduction of ReM over complete randomization."""
    if not 0.0 <= r2_tilde < 1.0:
        raise InvalidParameterError(f"R2 must lie in [0, 1), got {r2_tilde!r}")
    return (1.0 - truncated_variance(k, a)) * r2_tilde


@dataclass(frozen=True)
class TruncatedComponent:
    """First ``d`` coordinates of ``D ~ N(0, I_K)`` given ``|D|^2 <= a``."""

    k: int
    a: float
    d: int = 1

    def __post_init__(self):
        _check_df(self.k)
        if self.d not in (1, 2) or self.d > self.k:
            raise InvalidParameterError(f"dimension d must be 1 or 2 and at most K, got {self.d}")
        if not self.a > 0:
            raise InvalidParameterError(f"threshold must be positive, got {self.a!r}")


def sample_truncated(comp: TruncatedComponent, rng: np.random.Generator,
                     size: int | None = None) -> np.ndarray:
    """Exact draws by radial decomposition.

    The squared radius is drawn from the chi-square law restricted to ``[0, a]``
    by inverse CDF, and the direction's first ``d`` coordinates come from
    ``g / sqrt(|g|^2 + chi2_{K-d})``.  Returns shape ``(size, d)`` (or ``(d,)``).
    """
    m = 1 if size is None else int(size)
    top = 1.0 if math.isinf(comp.a) else chisq_cdf(comp.k, comp.a)
    r2 = _chisq_quantile_array(comp.k, rng.random(m) * top)
    g = rng.standard_normal((m, comp.d))
    rest = rng.chisquare(comp.k - comp.d, m) if comp.k > comp.d else np.zeros(m)
    out = g * np.sqrt(r2 / (np.einsum("ij,ij->i", g, g) + rest))[:, None]
    return out[0] if size is None else out


@dataclass(frozen=True)
class MixtureLaw:
    """Law of ``sqrt(A)*eps + sqrt(B)*L_{K,a}`` with independent components."""

    A: float
    B: float
    k: int
    a: float

    def __post_init__(self):
        _check_df(self.k)
        if self.A < 0 or self.B < 0:
            raise InvalidParameterError(f"A and B must be nonnegative, got A={self.A}, B={self.B}")
        if not self.a > 0:
            raise InvalidParameterError(f"threshold must be positive, got {self.a!r}")

    @property
    def variance(self) -> float:
        return self.A + self.B * truncated_variance(self.k, self.a)


@dataclass(frozen=True)
class MixtureDraws:
    """Paired standard draws ``(eps, L)`` reusable for any (A, B) at fixed (K, a)."""

    eps: np.ndarray
    l: np.ndarray

    def combine(self, A: float, B: float) -> np.ndarray:
        return math.sqrt(A) * self.eps + math.sqrt(B) * self.l


def mixture_draws(k: int, a: float, m: int, rng: np.random.Generator) -> MixtureDraws:
    eps = rng.standard_normal(m)
    l = sample_truncated(TruncatedComponent(k, a, 1), rng, m)[:, 0]
    return MixtureDraws(eps, l)


def order_statistic(values: np.ndarray, p: float) -> float:
    """Lower empirical quantile: the ``ceil(m*p)``-th smallest value."""
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"probability must lie in (0, 1), got {p!r}")
    idx = lower_rank(len(values), p) - 1
    return float(np.partition(values, idx)[idx])


def quantile_of_draws(A: float, B: float, draws: MixtureDraws, p: float) -> float:
    if A == 0.0 and B == 0.0:
        return 0.0
    return order_statistic(draws.combine(A, B), p)


def mixture_quantile(law: MixtureLaw, p: float, m: int = DEFAULT_MIXTURE_DRAWS,
                     rng: np.random.Generator | None = None) -> float:
    """Monte Carlo ``p``-quantile of the mixture from ``m`` draws of ``rng``."""
    if m < 10_000:
        raise InvalidParameterError(f"need at least 10,000 draws, got {m}")
    if rng is None:
        raise InvalidParameterError("an explicit random generator is required")
    return quantile_of_draws(law.A, law.B, mixture_draws(law.k, law.a, m, rng), p)


def sample_qte_limit(v_tilde: float, r2_tilde: float, k: int, a: float, n: int,
                     rng: np.random.Generator, size: int | None = None):
    """Draws of ``sqrt(n*V)*(sqrt(1-R2)*eps + R*L)``, the limit of sqrt(n)(tau_hat - tau)."""
    if not 0.0 <= r2_tilde < 1.0:
        raise InvalidParameterError(f"R2 must lie in [0, 1), got {r2_tilde!r}")
    m = 1 if size is None else int(size)
    scale = n * v_tilde
    out = mixture_draws(k, a, m, rng).combine(scale * (1.0 - r2_tilde), scale * r2_tilde)
    return float(out[0]) if size is None else out
