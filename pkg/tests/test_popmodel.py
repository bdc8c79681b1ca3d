import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from remqte.errors import DegenerateCovariatesError, InvalidParameterError
from remqte.popmodel import (
    FinitePopulation,
    covariance_blocks,
    gamma_diagnostic,
    kde_at,
    oracle_densities,
    oracle_variance_components,
    population_cdf,
    population_quantile,
    squared_correlations,
    true_qte,
)

from conftest import random_population, sort_quantile

PHI0 = 0.3989422804014327


def pop_from(y1, y0, x=None):
    n = len(y1)
    if x is None:
        x = np.arange(n, dtype=float) ** 1.5
    return FinitePopulation(y1, y0, x)


class TestCdfAndQuantile:
    @pytest.mark.parametrize("q,expected", [(0, 0.0), (4, 1.0), (2.5, 0.5)])
    def test_cdf(self, q, expected):
        assert population_cdf(pop_from([1, 2, 3, 4], [1, 2, 3, 4]), 1, q) == expected

    @pytest.mark.parametrize("alpha,expected", [(0.5, 2), (0.75, 3), (0.25, 1), (0.26, 2)])
    def test_quantile(self, alpha, expected):
        assert population_quantile(pop_from([1, 2, 3, 4], [0, 0, 0, 0]), 1, alpha) == expected

    def test_constant_arm(self):
        p = pop_from([7.0] * 5, [1, 2, 3, 4, 5])
        for a in (0.01, 0.5, 0.99):
            assert population_quantile(p, 1, a) == 7.0

    def test_shift(self):
        y0 = np.random.default_rng(0).standard_normal(30)
        p = pop_from(y0 + 5, y0)
        for a in (0.1, 0.5, 0.9):
            assert true_qte(p, a) == pytest.approx(5.0, abs=1e-12)

    def test_null(self):
        y0 = np.random.default_rng(1).standard_normal(30)
        assert true_qte(pop_from(y0, y0), 0.3) == 0.0

    def test_hand_example(self):
        # a fourth unit above both medians keeps the per-arm medians at 2 and 0
        assert true_qte(pop_from([1, 2, 3, 10], [0, 0, 4, 10]), 0.5) == 2

    def test_bad_level(self):
        with pytest.raises(InvalidParameterError):
            population_quantile(pop_from([1, 2, 3, 4], [1, 2, 3, 4]), 1, 1.0)

    @given(st.lists(st.integers(-3, 3), min_size=4, max_size=30), st.floats(0.01, 0.99))
    def test_matches_sort_oracle(self, values, alpha):
        x = np.arange(len(values), dtype=float)
        p = FinitePopulation(values, values, x)
        assert population_quantile(p, 1, alpha) == sort_quantile(values, alpha)


class TestPopulationValidation:
    def test_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            FinitePopulation([1, 2, 3, 4], [1, 2, 3], [1, 2, 3, 4])

    def test_singular_covariates(self):
        x = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
        with pytest.raises(DegenerateCovariatesError):
            FinitePopulation(np.arange(6.0), np.arange(6.0), x)

    def test_non_finite(self):
        with pytest.raises(InvalidParameterError):
            FinitePopulation([1, np.nan, 3, 4], [1, 2, 3, 4], [1, 2, 3, 4])

    def test_observe(self):
        p = pop_from([10, 20, 30, 40], [1, 2, 3, 4])
        assert list(p.observe([1, 0, 1, 0])) == [10, 2, 30, 4]

    def test_immutable(self):
        p = pop_from([10, 20, 30, 40], [1, 2, 3, 4])
        with pytest.raises(ValueError):
            p.y1[0] = 5


class TestCovarianceBlocks:
    def test_four_unit_closed_form(self):
        m = covariance_blocks(FinitePopulation([1, 2, 3, 4], [0, 3, 1, 2], [0.0, 1.0, 3.0, 7.0]),
                              0.5, 0.5)
        assert m.s_qq[0, 0] == pytest.approx(4 * 0.25 / 3 * 0.25)
        assert m.s_qq[1, 1] == pytest.approx(4 * 0.25 / 3 * 0.25)

    def test_too_small(self):
        with pytest.raises(InvalidParameterError):
            FinitePopulation([1, 2], [0, 3], [0.0, 1.0])

    def test_identical_arms_sign_structure(self):
        y = np.random.default_rng(2).standard_normal(20)
        m = covariance_blocks(pop_from(y, y), 0.4, 0.5)
        assert m.F_joint == m.F1_at_q
        assert m.s_qq[0, 1] == pytest.approx(-m.s_qq[0, 0], abs=1e-15)

    def test_cross_moments_brute_force(self, rng):
        p = random_population(rng, 25, k=3)
        alpha, r1 = 0.4, 0.3
        m = covariance_blocks(p, alpha, r1)
        q1, q0 = population_quantile(p, 1, alpha), population_quantile(p, 0, alpha)
        n = p.n
        a = [(1 - r1) * (p.y1[i] <= q1) for i in range(n)]
        b = [-r1 * (p.y0[i] <= q0) for i in range(n)]
        xbar = [sum(p.covariates[i, j] for i in range(n)) / n for j in range(3)]
        for col, vals in enumerate((a, b)):
            vbar = sum(vals) / n
            for j in range(3):
                s = sum((vals[i] - vbar) * (p.covariates[i, j] - xbar[j]) for i in range(n)) / (n - 1)
                assert m.s_qx[col, j] == pytest.approx(s, abs=1e-14)

    def test_scaled_covariance(self, rng):
        p = random_population(rng, 15)
        m = covariance_blocks(p, 0.5, 0.4)
        np.testing.assert_allclose(m.V, m.s_uu / (15 * 0.4 * 0.6))

    def test_r1_domain(self, rng):
        with pytest.raises(InvalidParameterError):
            covariance_blocks(random_population(rng, 10), 0.5, 1.0)


def orthogonal_population(rng, n=30):
    y1 = rng.standard_normal(n)
    y0 = rng.standard_normal(n)
    ind1 = (y1 <= np.sort(y1)[n // 2 - 1]).astype(float)
    ind0 = (y0 <= np.sort(y0)[n // 2 - 1]).astype(float)
    basis = np.column_stack([np.ones(n), ind1, ind0])
    raw = rng.standard_normal((n, 2))
    x = raw - basis @ np.linalg.lstsq(basis, raw, rcond=None)[0]
    return FinitePopulation(y1, y0, x)


class TestSquaredCorrelations:
    def test_orthogonal_covariates(self, rng):
        m = covariance_blocks(orthogonal_population(rng), 0.5, 0.5)
        r2, (r2_1, r2_0) = squared_correlations(m)
        np.testing.assert_allclose(r2, 0, atol=1e-12)
        assert abs(r2_1) < 1e-12 and abs(r2_0) < 1e-12

    def test_perfect_fit(self, rng):
        n = 20
        y1, y0 = rng.standard_normal(n), rng.standard_normal(n)
        ind1 = (y1 <= np.median(y1)).astype(float)
        x = np.column_stack([ind1, rng.standard_normal(n)])
        _, (r2_1, _) = squared_correlations(covariance_blocks(FinitePopulation(y1, y0, x), 0.5, 0.5))
        assert r2_1 == pytest.approx(1.0, abs=1e-10)

    def test_regression_oracle(self, rng):
        p = random_population(rng, 20, k=3)
        m = covariance_blocks(p, 0.5, 0.5)
        _, r2_z = squared_correlations(m)
        design = np.column_stack([np.ones(20), p.covariates])
        for arm, q in ((1, m.q1), (0, m.q0)):
            ind = (p.outcomes(arm) <= q).astype(float)
            resid = ind - design @ np.linalg.lstsq(design, ind, rcond=None)[0]
            r2 = 1 - resid @ resid / np.sum((ind - ind.mean()) ** 2)
            assert r2_z[1 - arm] == pytest.approx(r2, abs=1e-10)


class TestKde:
    def test_kernel_at_zero(self):
        assert kde_at([3.0], 3.0, 0.5) == pytest.approx(PHI0 / 0.5)

    def test_uniform_grid(self):
        grid = np.arange(1.0, 1001.0)
        # bandwidth wide relative to the unit spacing, so the estimate sees a flat density
        assert kde_at(grid, 500.0, 10.0) == pytest.approx(1 / 999, rel=0.2)

    def test_doubling_halves_density(self, rng):
        p = random_population(rng, 50)
        q = FinitePopulation(2 * p.y1, 2 * p.y0, p.covariates)
        f = oracle_densities(p, 0.5, 0.3)
        g = oracle_densities(q, 0.5, 0.6)
        assert g[0] == pytest.approx(f[0] / 2) and g[1] == pytest.approx(f[1] / 2)

    def test_bandwidth_positive(self):
        with pytest.raises(InvalidParameterError):
            kde_at([1.0], 1.0, 0.0)


class TestVarianceComponents:
    def test_orthogonal_covariates(self, rng):
        law = oracle_variance_components(orthogonal_population(rng), 0.5, 0.5, 0.5)
        assert abs(law.B) < 1e-12
        assert law.A == pytest.approx(law.C)
        assert abs(law.R2_tilde) < 1e-12

    def test_term_by_term(self, rng):
        p = random_population(rng, 12, k=2)
        alpha, r1, h = 0.5, 0.5, 0.7
        law = oracle_variance_components(p, alpha, r1, h)
        n, r0 = p.n, 1 - r1
        q1 = sort_quantile(p.y1, alpha)
        q0 = sort_quantile(p.y0, alpha)
        F1 = sum(v <= q1 for v in p.y1) / n
        F0 = sum(v <= q0 for v in p.y0) / n
        Fj = sum((a <= q1) and (b <= q0) for a, b in zip(p.y1, p.y0)) / n
        s11 = n * r0 ** 2 / (n - 1) * F1 * (1 - F1)
        s00 = n * r1 ** 2 / (n - 1) * F0 * (1 - F0)
        s10 = n * r0 * r1 / (n - 1) * (F1 * F0 - Fj)
        f1 = sum(math.exp(-0.5 * ((v - q1) / h) ** 2) for v in p.y1) / (n * h * math.sqrt(2 * math.pi))
        f0 = sum(math.exp(-0.5 * ((v - q0) / h) ** 2) for v in p.y0) / (n * h * math.sqrt(2 * math.pi))
        C = (s11 / f1 ** 2 + s00 / f0 ** 2 - 2 * s10 / (f1 * f0)) / (r1 * r0)
        assert law.C == pytest.approx(C, abs=1e-10)
        s_xx = np.cov(p.covariates, rowvar=False)
        m = covariance_blocks(p, alpha, r1)
        d = m.s_qx[0] / f1 - m.s_qx[1] / f0
        assert law.B == pytest.approx(d @ np.linalg.solve(s_xx, d) / (r1 * r0), abs=1e-10)
        assert law.R2_tilde == pytest.approx(law.B / law.C)
        assert law.V_tilde_qq == pytest.approx(law.C / n)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(8, 40), st.sampled_from([0.2, 0.5, 0.7]),
           st.sampled_from([0.25, 0.5, 0.8]), st.booleans())
    def test_conservative_bounds(self, seed, n, r1, alpha, ties):
        p = random_population(np.random.default_rng(seed), n, k=2, ties=ties)
        law = oracle_variance_components(p, alpha, r1)
        assert law.C_tilde >= law.C
        assert law.A_tilde >= law.A
        assert law.B >= 0

    def test_constant_indicators(self):
        p = FinitePopulation([1.0] * 6, [2.0] * 6, np.arange(6.0))
        law = oracle_variance_components(p, 0.5, 0.5, 0.5)
        assert law.C == 0 and law.B == 0 and law.R2_tilde == 0

    def test_tau_matches(self, rng):
        p = random_population(rng, 40)
        law = oracle_variance_components(p, 0.3, 0.5)
        assert law.tau == true_qte(p, 0.3)


class TestGamma:
    def test_degenerate_allocation(self, rng):
        p = random_population(rng, 20)
        assert gamma_diagnostic(p, 0.5, 0.0) == math.inf

    def test_formula(self, rng):
        p = random_population(rng, 30, k=2)
        r1 = 0.4
        u = np.column_stack([(1 - r1) * (p.y1 <= population_quantile(p, 1, 0.5)),
                             -r1 * (p.y0 <= population_quantile(p, 0, 0.5)), p.covariates])
        root = np.real(linalg.inv(linalg.sqrtm(np.cov(u, rowvar=False))))
        norms = np.linalg.norm((u - u.mean(axis=0)) @ root, axis=1)
        expected = 4 ** 0.25 / math.sqrt(30 * r1 * (1 - r1)) * np.mean(norms ** 3)
        assert gamma_diagnostic(p, 0.5, r1) == pytest.approx(expected, rel=1e-8)

    def test_decreases_with_duplication(self, rng):
        p = random_population(rng, 100)
        noise = rng.standard_normal((100, 2)) * 1e-3
        big = FinitePopulation(np.r_[p.y1, p.y1 + noise[:, 0]], np.r_[p.y0, p.y0 + noise[:, 1]],
                               np.r_[p.covariates, p.covariates + noise])
        assert gamma_diagnostic(big, 0.5, 0.5) < gamma_diagnostic(p, 0.5, 0.5)
