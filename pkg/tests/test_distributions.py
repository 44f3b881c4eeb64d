"""Exit-law and log-gamma analytics.

Reference values were computed once with mpmath (30 digits) by direct
quadrature of the densities in ``t``, a route that shares nothing with the
library's series and ``-ln t`` substitution.
"""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from epsstrong.distributions import (
    EXIT_SPEC,
    ExitLaw,
    LogGammaSpec,
    _laplace_series,
    exit_time_cdf,
    exit_time_pdf,
    gamma32_from_uniform_normal,
    laplace_bound,
    laplace_bound_omega,
    loggamma_integral,
    loggamma_laplace,
    loggamma_moment,
    loggamma_pdf,
    sample_gamma32,
    sample_rademacher,
    sample_w,
    w_cdf,
    w_from_uniform_normal,
)
from epsstrong.rng import RngStream

MPMATH_MOMENTS = {
    1: 0.192450089729875254836382926834,
    2: 0.0894427190999915878563669467492,
    3: 0.0539949247156038896020737908906,
}
MPMATH_LAPLACE = {
    0.5: 0.91392015095084693777,
    1.0: 0.84461344720090149927,
    2.0: 0.74090934044864351838,
    5.0: 0.57088684333860615832,
    30.0: 0.29338724559814868105,
    50.0: 0.23858943130970350439,
    1000.0: 0.06613446510537776486,
    10000.0: 0.023531000483469057835,
}
MPMATH_OMEGA = {3.0: 1.1227581119782626841, 4.0: 1.2406774756764702389, 6.0: 1.649591127892900793}
# P(U_1 <= frac * e eps^2) at eps = 0.1
MPMATH_EXIT_CDF = {
    0.001: 0.074896771993066135337,
    0.01: 0.20309900534517754072,
    0.1: 0.51202585269314228201,
    0.3: 0.7520516276146388079,
    0.5: 0.8748146057828504524,
    0.9: 0.99118647221762497013,
}


class TestSamplers:
    def test_w_in_unit_interval(self):
        w = sample_w(RngStream(3, 0), 100_000)
        assert w.min() > 0.0 and w.max() <= 1.0

    def test_w_map_clamps(self):
        assert w_from_uniform_normal(1e-200, 30.0) == 1e-300
        assert w_from_uniform_normal(1.0, 0.0) == 1.0

    def test_gamma32_map(self):
        assert gamma32_from_uniform_normal(math.exp(-1.0), 2.0) == pytest.approx(6.0)

    def test_gamma32_moments(self):
        a = sample_gamma32(RngStream(5, 0), 400_000)
        se_mean = math.sqrt(6.0 / len(a))
        assert abs(a.mean() - 3.0) < 5 * se_mean
        # Gamma(3/2, 2): variance alpha * beta^2 = 6
        assert a.var() == pytest.approx(6.0, rel=0.03)
        assert a.min() >= 0.0

    def test_rademacher(self):
        z = sample_rademacher(RngStream(1, 0), 20_000)
        assert set(np.unique(z)) == {-1.0, 1.0}
        assert sample_rademacher(RngStream(1, 0)) in (-1.0, 1.0)

    def test_w_law_matches_cdf(self):
        w = sample_w(RngStream(8, 0), 100_000)
        x = np.sort(w)
        f = w_cdf(x)
        n = len(x)
        ks = max(np.max(np.arange(1, n + 1) / n - f), np.max(f - np.arange(n) / n))
        assert ks < 1.95 / math.sqrt(n)


class TestLogGammaSpec:
    def test_rejects_small_parameters(self):
        with pytest.raises(ValueError):
            LogGammaSpec(0.5, 2.0)
        with pytest.raises(ValueError):
            LogGammaSpec(1.5, 0.5)


class TestLogGammaPdf:
    def test_normalized(self):
        val, _ = integrate.quad(lambda t: loggamma_pdf(EXIT_SPEC, t), 0, 1, points=[1e-6, 1e-3], limit=200)
        assert val == pytest.approx(1.0, abs=1e-7)

    def test_zero_outside(self):
        assert loggamma_pdf(EXIT_SPEC, 0.0) == 0.0
        assert loggamma_pdf(EXIT_SPEC, 1.5) == 0.0
        assert loggamma_pdf(EXIT_SPEC, -0.1) == 0.0

    def test_alpha_one_branch(self):
        spec = LogGammaSpec(1.0, 2.0)
        t = np.array([0.01, 0.3, 0.9])
        assert np.allclose(loggamma_pdf(spec, t), t ** -0.5 / 2.0)

    def test_tiny_t_finite(self):
        v = loggamma_pdf(EXIT_SPEC, 1e-300)
        assert math.isfinite(v) and v > 0

    def test_matches_closed_form(self):
        t = 0.37
        expect = math.sqrt(-math.log(t)) * t ** -0.5 / (math.gamma(1.5) * 2 ** 1.5)
        assert loggamma_pdf(EXIT_SPEC, t) == pytest.approx(expect, rel=1e-14)


class TestMoments:
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_against_mpmath(self, k):
        assert loggamma_moment(EXIT_SPEC, k) == pytest.approx(MPMATH_MOMENTS[k], rel=1e-14)

    @pytest.mark.parametrize("k", [0, -1, 1.5])
    def test_bad_order(self, k):
        with pytest.raises(ValueError):
            loggamma_moment(EXIT_SPEC, k)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_quadrature_route(self, k):
        assert loggamma_integral(EXIT_SPEC, lambda t: t ** k) == pytest.approx(MPMATH_MOMENTS[k], rel=1e-10)

    @given(st.integers(1, 50))
    def test_decreasing_in_k(self, k):
        assert 0 < loggamma_moment(EXIT_SPEC, k + 1) < loggamma_moment(EXIT_SPEC, k) < 1


class TestLaplace:
    @pytest.mark.parametrize("lam", sorted(MPMATH_LAPLACE))
    def test_against_mpmath(self, lam):
        assert loggamma_laplace(EXIT_SPEC, lam) == pytest.approx(MPMATH_LAPLACE[lam], rel=1e-10)

    @pytest.mark.parametrize("lam", [5.0, 10.0, 15.0])
    def test_series_and_quadrature_agree(self, lam):
        series = _laplace_series(EXIT_SPEC, lam, 1e-16)
        quad = loggamma_integral(EXIT_SPEC, lambda t: math.exp(-lam * t), breakpoints=(math.log(lam),))
        assert series == pytest.approx(quad, abs=1e-10)

    def test_zero(self):
        assert loggamma_laplace(EXIT_SPEC, 0.0) == 1.0

    def test_negative(self):
        with pytest.raises(ValueError):
            loggamma_laplace(EXIT_SPEC, -1.0)

    @given(st.floats(0.0, 5e3), st.floats(1e-3, 5e3))
    def test_monotone_in_lambda(self, lam, gap):
        assert loggamma_laplace(EXIT_SPEC, lam + gap) <= loggamma_laplace(EXIT_SPEC, lam) + 1e-12

    def test_mc_agreement(self):
        w = sample_w(RngStream(12, 0), 200_000)
        for lam in (0.5, 1.0, 5.0):
            v = np.exp(-lam * w)
            se = v.std(ddof=1) / math.sqrt(len(v))
            assert abs(v.mean() - loggamma_laplace(EXIT_SPEC, lam)) < 5 * se


class TestLaplaceBound:
    @pytest.mark.parametrize("bp", [3.0, 4.0, 6.0])
    def test_omega_against_mpmath(self, bp):
        assert laplace_bound_omega(1.5, 2.0, bp) == pytest.approx(MPMATH_OMEGA[bp], rel=1e-13)

    @pytest.mark.parametrize("bp", [3.0, 4.0, 6.0])
    @pytest.mark.parametrize("lam", [1.0, 10.0, 1e2, 1e3, 1e4, 1e6])
    def test_bound_dominates(self, bp, lam):
        assert loggamma_laplace(EXIT_SPEC, lam) <= laplace_bound(EXIT_SPEC, lam, bp)

    @pytest.mark.parametrize("bp", [2.0, 1.0, None])
    def test_beta_prime_must_exceed_beta(self, bp):
        with pytest.raises(ValueError):
            laplace_bound_omega(1.5, 2.0, bp)

    def test_alpha_one_constant(self):
        assert laplace_bound_omega(1.0, 2.0) == pytest.approx(math.gamma(0.5) / 2.0)
        spec = LogGammaSpec(1.0, 2.0)
        for lam in (1.0, 10.0, 1e3):
            # exact value sqrt(pi) erf(sqrt(lam)) / (2 sqrt(lam)): equality up to rounding
            exact = math.sqrt(math.pi) * math.erf(math.sqrt(lam)) / (2 * math.sqrt(lam))
            assert loggamma_laplace(spec, lam) == pytest.approx(exact, rel=1e-9)
            assert loggamma_laplace(spec, lam) <= laplace_bound(spec, lam) * (1 + 1e-12)

    @given(st.floats(2.05, 50.0), st.floats(0.5, 1e5))
    def test_bound_dominates_property(self, bp, lam):
        assert loggamma_laplace(EXIT_SPEC, lam) <= laplace_bound(EXIT_SPEC, lam, bp) * (1 + 1e-12)


class TestExitTime:
    @pytest.mark.parametrize("frac", sorted(MPMATH_EXIT_CDF))
    def test_cdf_against_mpmath(self, frac):
        law = ExitLaw(0.1)
        assert exit_time_cdf(law, frac * law.r_eps) == pytest.approx(MPMATH_EXIT_CDF[frac], abs=1e-10)

    @pytest.mark.parametrize("eps", [0.01, 0.1, 2.0])
    def test_cdf_matches_closed_form(self, eps):
        law = ExitLaw(eps)
        t = np.linspace(0.0, 1.0, 41)[1:-1] * law.r_eps
        assert np.allclose(exit_time_cdf(law, t), w_cdf(t / law.r_eps), atol=1e-10)

    def test_cdf_endpoints(self):
        law = ExitLaw(0.3)
        assert exit_time_cdf(law, 0.0) == 0.0
        assert exit_time_cdf(law, law.r_eps) == 1.0
        assert exit_time_cdf(law, -1.0) == 0.0

    def test_pdf_integrates_to_cdf(self):
        law = ExitLaw(0.1)
        t = 0.4 * law.r_eps
        val, _ = integrate.quad(lambda s: exit_time_pdf(law, s), 0, t, limit=200)
        assert val == pytest.approx(exit_time_cdf(law, t), abs=1e-8)

    @given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_cdf_monotone(self, a, b):
        law = ExitLaw(0.1)
        lo, hi = sorted((a, b))
        assert exit_time_cdf(law, lo * law.r_eps) <= exit_time_cdf(law, hi * law.r_eps) + 1e-12

    def test_mean_exit_time(self):
        law = ExitLaw(0.2)
        mean = law.r_eps * loggamma_moment(EXIT_SPEC, 1)
        assert mean == pytest.approx(math.e * 0.04 * 3 ** -1.5, rel=1e-14)

    def test_bad_epsilon(self):
        with pytest.raises(ValueError):
            ExitLaw(0.0)


@pytest.fixture(scope="module")
def w_million():
    return sample_w(RngStream(2024, 0), 1_000_000)


class TestInvariants:
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_moments_within_five_se(self, w_million, k):
        wk = w_million ** k
        se = wk.std(ddof=1) / math.sqrt(len(wk))
        assert abs(wk.mean() - (1 + 2 * k) ** -1.5) < 5 * se

    @pytest.mark.parametrize("alpha,beta", [(1.0, 1.0), (1.5, 2.0), (2.0, 3.0)])
    def test_pdf_normalized(self, alpha, beta):
        spec = LogGammaSpec(alpha, beta)
        assert loggamma_integral(spec, lambda t: 1.0) == pytest.approx(1.0, abs=1e-8)
        # direct t-space route
        val, _ = integrate.quad(lambda t: loggamma_pdf(spec, t), 0, 1, points=[1e-8, 1e-4, 1e-2], limit=400)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_uniform_mean(self):
        assert loggamma_moment(LogGammaSpec(1.0, 1.0), 1) == 0.5

    def test_w_and_gamma_routes_agree(self):
        from epsstrong.stats import ks_two_sample

        w = sample_w(RngStream(31, 0), 100_000)
        a = sample_gamma32(RngStream(31, 1), 100_000)
        assert ks_two_sample(w, np.exp(1.0 - a) / math.e) < 0.01

    def test_cdf_at_empirical_median(self, w_million):
        law = ExitLaw(0.1)
        m = float(np.median(w_million))
        assert exit_time_cdf(law, law.r_eps * m) == pytest.approx(0.5, abs=0.002)

    def test_cdf_monotone_on_grid(self):
        law = ExitLaw(0.1)
        v = exit_time_cdf(law, np.linspace(0.0, law.r_eps, 1000))
        assert np.all(np.diff(v) >= -1e-12)

    def test_bound_at_lambda_100(self):
        assert loggamma_laplace(EXIT_SPEC, 100.0) <= laplace_bound_omega(1.5, 2.0, 4.0) * 100 ** -0.25
