import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from compound_dp.dp_sampling import (DirichletPrior, Empirical, Exponential, Gamma, Gaussian, PhaseTypeBase,
                                     polya_urn_batch, urn_renewal_counts)
from compound_dp.errors import CapabilityError, DomainError, ResourceError
from compound_dp.partitions import enumerate_partitions, ewens_log_probs
from compound_dp.phase_type import PhaseType, ph_convolve
from compound_dp.sums import (VARIANCE_LAW_CAP, compound_moments, counting_distribution, counting_pmf,
                              gaussian_sn_cdf, gaussian_sn_pdf, mgf_sn, mgf_sn_recursive, moments_sn,
                              passage_probs, ph_sum_chain, sn_cdf, sn_mixture, sn_mixture_gaussian,
                              sn_mixture_phasetype, sn_phase_type)

from conftest import dkw_radius, ecdf_deviation, ks_distance

TWO_PHASE = PhaseType([0.3, 0.7], [[-3.0, 1.0], [0.5, -1.0]])


def urn_sums_sample(base, alpha, n, size, seed):
    values, _ = polya_urn_batch(DirichletPrior(alpha, base), n, size, np.random.default_rng(seed))
    return values.sum(axis=1)


def mixture_moment(mix, k):
    """Raw moment k of a Gaussian partition mixture, from each component's moments."""
    out = 0.0
    for w, c in zip(mix.weights, mix.components):
        m, v = c.mean, c.variance
        out += w * {1: m, 2: m * m + v, 3: m ** 3 + 3 * m * v}[k]
    return out


# --- Gaussian mixtures ----------------------------------------------------------


def test_gaussian_n1():
    mix = sn_mixture_gaussian(1, 2.0, 0.3, 1.5)
    assert len(mix.components) == 1 and mix.weights[0] == pytest.approx(1.0)
    assert (mix.components[0].mean, mix.components[0].variance) == (0.3, 1.5)


def test_gaussian_n2_alpha1():
    mix = sn_mixture_gaussian(2, 1.0, 0.7, 2.0)
    got = sorted((c.variance, w) for c, w in zip(mix.components, mix.weights))
    assert got[0][0] == pytest.approx(4.0) and got[0][1] == pytest.approx(0.5)
    assert got[1][0] == pytest.approx(8.0) and got[1][1] == pytest.approx(0.5)
    assert all(c.mean == pytest.approx(1.4) for c in mix.components)
    assert float(sn_cdf(mix, 1.4)) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("n", [3, 7, 12])
def test_mixture_invariants(n):
    mix = sn_mixture_gaussian(n, 0.8, -1.0, 0.5)
    assert len(mix.components) == len(enumerate_partitions(n))
    assert abs(np.logaddexp.reduce(mix.log_weights)) < 1e-10
    for p, c in zip(mix.partitions, mix.components):
        assert c.mean == pytest.approx(-n) and c.variance == pytest.approx(0.5 * p.sum_sq_sizes)


def test_cdf_limits_and_monotone():
    mix = sn_mixture_gaussian(5, 0.4, 1.0, 1.0)
    s = np.linspace(-60, 70, 400)
    F = sn_cdf(mix, s)
    assert F[0] < 1e-12 and F[-1] > 1 - 1e-12
    assert np.all(np.diff(F) >= 0)


def test_gaussian_mixture_matches_urn_ks():
    x = urn_sums_sample(Gaussian(0.2, 1.3), 0.7, 5, 10 ** 6, 1)
    mix = sn_mixture_gaussian(5, 0.7, 0.2, 1.3)
    assert ks_distance(x, mix.cdf) < 0.002


@pytest.mark.parametrize("n", [1, 4, 9, 15])
@pytest.mark.parametrize("alpha", [0.2, 1.0, 6.0])
def test_variance_law_route_matches_mixture(n, alpha):
    mix = sn_mixture_gaussian(n, alpha, 0.5, 2.0)
    s = np.linspace(-20, 25, 37)
    assert np.max(np.abs(gaussian_sn_cdf(n, alpha, 0.5, 2.0, s) - mix.cdf(s))) < 1e-12
    assert np.max(np.abs(gaussian_sn_pdf(n, alpha, 0.5, 2.0, s) - mix.pdf(s))) < 1e-12


# --- phase-type mixtures ------------------------------------------------------


def test_phasetype_n1_is_base():
    mix = sn_mixture_phasetype(1, 1.0, TWO_PHASE)
    u = np.linspace(0, 8, 17)
    assert np.allclose(mix.pdf(u), TWO_PHASE.pdf(u), atol=1e-14)


def test_phasetype_iid_limit_is_erlang():
    mix = sn_mixture_phasetype(2, 1e9, PhaseType.exponential(1.5))
    top = int(np.argmax(mix.weights))
    assert mix.weights[top] > 0.999
    u = np.linspace(0, 6, 13)
    erl = PhaseType.erlang(2, 1.5)
    assert np.allclose(mix.components[top].pdf(u), erl.pdf(u), atol=1e-12)


def test_phasetype_mixture_matches_urn_ks():
    x = urn_sums_sample(PhaseTypeBase(TWO_PHASE), 1.0, 4, 10 ** 6, 2)
    mix = sn_mixture_phasetype(4, 1.0, TWO_PHASE)
    assert ks_distance(x, mix.cdf) < 0.005


@pytest.mark.parametrize("alpha", [0.3, 1.0, 5.0])
def test_chain_route_matches_mixture(alpha):
    chain = ph_sum_chain(TWO_PHASE, alpha, 6)
    u = np.linspace(0.01, 30, 25)
    F = chain.cdf(u)
    f = chain.pdf(u)
    for n in range(1, 7):
        mix = sn_mixture_phasetype(n, alpha, TWO_PHASE)
        assert np.max(np.abs(F[:, n - 1] - mix.cdf(u))) < 1e-9
        assert np.max(np.abs(f[:, n - 1] - mix.pdf(u))) < 1e-9
        assert np.max(np.abs(sn_phase_type(n, alpha, TWO_PHASE).cdf(u) - mix.cdf(u))) < 1e-9


def test_chain_points_in_any_order():
    chain = ph_sum_chain(TWO_PHASE, 0.8, 4)
    u = np.linspace(-1, 20, 43)
    shuffled = np.random.default_rng(0).permutation(u.size)
    assert np.allclose(chain.cdf(u)[shuffled], chain.cdf(u[shuffled]), rtol=0, atol=1e-13)
    assert np.allclose(chain.pdf(u)[shuffled], chain.pdf(u[shuffled]), rtol=0, atol=1e-13)
    assert np.all(chain.cdf(u[u <= 0]) == 0.0)


def test_variance_law_cap():
    with pytest.raises(ResourceError, match="max_n"):
        gaussian_sn_cdf(VARIANCE_LAW_CAP + 1, 1.0, 0.0, 1.0, 0.0)


def test_dispatch():
    assert sn_mixture(3, 1.0, Gaussian(0, 1)).base_kind == "gaussian"
    assert sn_mixture(3, 1.0, Gamma(2.0, 1.0)).base_kind == "phase_type"
    with pytest.raises(CapabilityError):
        sn_mixture(3, 1.0, Gamma(2.5, 1.0))


# --- limits and truncation ----------------------------------------------------


@pytest.mark.parametrize("n", [2, 4, 6])
def test_large_alpha_collapses_to_iid(n):
    mix = sn_mixture_gaussian(n, 1e6, 0.0, 1.0)
    top = int(np.argmax(mix.weights))
    assert mix.weights[top] > 0.999
    assert mix.partitions[top].v[0] == n


@pytest.mark.parametrize("n", [2, 5])
def test_small_alpha_collapses_to_scaled_single_draw(n):
    mix = sn_mixture_gaussian(n, 1e-8, 1.0, 1.0)
    s = np.linspace(-15, 20, 50)
    scaled = stats.norm.cdf(s, loc=n, scale=n)
    assert np.max(np.abs(mix.cdf(s) - scaled)) < 1e-6


def test_truncation_error_bounded_by_discarded_mass():
    full = sn_mixture_gaussian(10, 0.6, 0.0, 1.0)
    for kw in ({"epsilon": 1e-3}, {"top_k": 8}):
        cut = sn_mixture_gaussian(10, 0.6, 0.0, 1.0, **kw)
        assert cut.discarded_mass > 0
        s = np.linspace(-40, 40, 201)
        assert np.max(np.abs(full.cdf(s) - cut.cdf(s))) <= cut.discarded_mass + 1e-15


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 12), log_alpha=st.floats(-3, 3), s=st.floats(-30, 30))
def test_weights_sum_to_one_and_cdf_in_range(n, log_alpha, s):
    mix = sn_mixture_gaussian(n, 10 ** log_alpha, 0.1, 1.0)
    assert abs(mix.weights.sum() - 1) < 1e-10
    assert 0.0 <= float(mix.cdf(s)) <= 1.0


def test_mixture_serializes():
    d = sn_mixture_gaussian(3, 1.0, 0.0, 1.0).to_dict()
    assert len(d["components"]) == 3 and sum(c["weight"] for c in d["components"]) == pytest.approx(1.0)


# --- counting law ----------------------------------------------------------------


def test_counting_n0_is_base_survival():
    prior = DirichletPrior(0.7, Exponential(1.3))
    assert counting_pmf(prior, 0.9, 0) == pytest.approx(math.exp(-1.3 * 0.9), rel=1e-12)


def test_counting_pmf_telescopes():
    prior = DirichletPrior(1.0, Exponential(2.0))
    law = counting_distribution(prior, 1.5, max_n=40)
    cum = np.cumsum(law.pmf)
    assert np.all(np.diff(cum) >= 0) and np.all(law.pmf >= 0)
    assert cum[-1] + law.tail_mass == pytest.approx(1.0, abs=1e-12)
    F = passage_probs(prior, 1.5, 41)
    assert np.allclose(law.pmf[1:], F[:-1] - F[1:], atol=1e-15)


def test_counting_matches_simulation():
    prior = DirichletPrior(1.0, Exponential(1.8))
    size = 10 ** 6
    counts = urn_renewal_counts(prior, 1.0, size, np.random.default_rng(8))
    law = counting_distribution(prior, 1.0, max_n=30)
    freq = np.bincount(counts, minlength=31)[:31] / size
    se = np.sqrt(law.pmf * (1 - law.pmf) / size)
    mask = law.pmf > 1e-5
    assert np.all(np.abs(freq[mask] - law.pmf[mask]) < 4 * se[mask])


def test_counting_deterministic_times():
    law = counting_distribution(DirichletPrior(2.0, Empirical([1.0], [1.0])), 3.5, max_n=10)
    assert law.pmf[3] == 1.0 and law.pmf.sum() == 1.0


def test_counting_monte_carlo_fallback():
    law = counting_distribution(DirichletPrior(1.0, Gamma(1.5, 2.0)), 1.0, max_n=20, mc_paths=20_000,
                                rng=np.random.default_rng(0))
    assert law.method == "monte_carlo" and law.se is not None
    assert law.pmf.sum() + law.tail_mass == pytest.approx(1.0)


def test_iid_limit_counting_is_poisson():
    law = counting_distribution(DirichletPrior(1e9, Exponential(2.0)), 1.5, max_n=30)
    assert np.allclose(law.pmf, stats.poisson.pmf(np.arange(31), 3.0), atol=1e-7)


# --- moments and MGF -------------------------------------------------------------


def test_mgf_at_zero():
    for n in (1, 4, 9):
        for a in (0.3, 2.0):
            assert mgf_sn(n, a, Gaussian(0.4, 1.1).mgf, 0.0) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("n,alpha", [(3, 0.5), (6, 1.0), (10, 4.0)])
def test_gaussian_mgf_mixture_form(n, alpha):
    mu, s2 = 0.3, 0.8
    logw = ewens_log_probs(n, alpha)
    for t in (-0.4, 0.1, 0.25):
        direct = sum(math.exp(lw + t * n * mu + 0.5 * t * t * s2 * v.sum_sq_sizes)
                     for lw, v in zip(logw, enumerate_partitions(n)))
        got = mgf_sn(n, alpha, Gaussian(mu, s2).mgf, t)
        assert got == pytest.approx(direct, rel=1e-10)
        assert mgf_sn_recursive(n, alpha, Gaussian(mu, s2).mgf, t) == pytest.approx(direct, rel=1e-10)


@pytest.mark.parametrize("n,alpha,base", [(4, 0.7, Gaussian(0.5, 1.0)), (6, 2.0, Exponential(3.0)),
                                          (3, 1.0, Gamma(2.0, 4.0))])
def test_moments_match_mgf_derivatives(n, alpha, base):
    h = 1e-4
    M = lambda t: mgf_sn_recursive(n, alpha, base.mgf, t)
    m0, mp, mm = M(0.0), M(h), M(-h)
    mp2, mm2 = M(2 * h), M(-2 * h)
    d1 = (mp - mm) / (2 * h)
    d2 = (mp - 2 * m0 + mm) / h ** 2
    d3 = (mp2 - 2 * mp + 2 * mm - mm2) / (2 * h ** 3)
    want = moments_sn(n, alpha, *(base.moment(k) for k in (1, 2, 3)))
    for got, w in zip((d1, d2, d3), want):
        assert got == pytest.approx(w, rel=1e-4)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 8])
@pytest.mark.parametrize("alpha", [0.2, 1.0, 3.0])
def test_moments_match_exact_mixture(n, alpha):
    mu, s2 = 0.6, 1.7
    mix = sn_mixture_gaussian(n, alpha, mu, s2)
    g = Gaussian(mu, s2)
    want = [mixture_moment(mix, k) for k in (1, 2, 3)]
    assert moments_sn(n, alpha, g.moment(1), g.moment(2), g.moment(3)) == pytest.approx(want, rel=1e-12)


def test_moment_examples():
    assert moments_sn(7, 0.4, 1.3, 5.0, 2.0)[0] == pytest.approx(7 * 1.3)
    assert moments_sn(2, 1.0, 0.0, 1.0, 0.0)[1] == pytest.approx(3.0)
    for n in (1, 3, 6):
        assert moments_sn(n, 0.9, 0.0, 2.0, 0.0)[2] == 0.0


def test_moments_match_monte_carlo():
    base, alpha, n = Exponential(1.5), 0.8, 5
    x = urn_sums_sample(base, alpha, n, 400_000, 4)
    want = moments_sn(n, alpha, *(base.moment(k) for k in (1, 2, 3)))
    for k in (1, 2, 3):
        xk = x ** k
        assert abs(xk.mean() - want[k - 1]) < 3 * xk.std() / math.sqrt(x.size)


def test_compound_moments_with_constant_count():
    assert compound_moments((4, 16, 64), 1.3, 0.2, 1.0, 0.5) == pytest.approx(moments_sn(4, 1.3, 0.2, 1.0, 0.5))


def test_divergent_mgf_names_offending_index():
    with pytest.raises(DomainError, match=r"j = 2"):
        mgf_sn(3, 1.0, Exponential(1.0).mgf, 0.6)
    with pytest.raises(DomainError):
        mgf_sn_recursive(3, 1.0, Exponential(1.0).mgf, 0.6)


def test_dkw_helper_value():
    assert dkw_radius(10 ** 6) == pytest.approx(1.6276e-3, rel=1e-4)


def test_gaussian_cdf_against_urn_dkw():
    n, alpha, mu, s2 = 8, 1.0, 0.3, 1.0
    x = urn_sums_sample(Gaussian(mu, s2), alpha, n, 200_000, 5)
    s = np.linspace(-10, 12, 200)
    assert ecdf_deviation(x, s, gaussian_sn_cdf(n, alpha, mu, s2, s)) < dkw_radius(x.size)


def test_ph_convolution_agrees_for_two_singletons():
    # alpha -> infinity, n = 2: the all-singletons block is the plain convolution
    mix = sn_mixture_phasetype(2, 1e9, TWO_PHASE)
    conv = ph_convolve(TWO_PHASE, TWO_PHASE)
    u = np.linspace(0, 10, 21)
    assert np.max(np.abs(mix.pdf(u) - conv.pdf(u))) < 1e-8
