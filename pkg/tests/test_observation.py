import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from epifit.data_io import SyntheticSpec, generate_synthetic
from epifit.model import AGE_GROUPS, SirdParams, default_init, simulate_trajectory
from epifit.observation import (
    PARAM_NAMES, ClusterPosterior, Gamma, ObservationPanel, PriorSpec, ReportingParams, Uniform, load_prior_spec,
    log_gamma_density, log_likelihood, log_posterior, log_prior, normal_logpdf, pack, parse_prior_spec,
    poisson_logpmf, unpack,
)

TRUE = {a: SirdParams(*v) for a, v in zip(AGE_GROUPS, [(7.5, 5.5, 0.5), (6.5, 5.5, 0.1), (5.5, 3.1, 0.8)])}
REPORT = ReportingParams(1.0, 1.0, 1.0, 0.01)


@pytest.fixture(scope="module")
def one_cluster_panel():
    spec = SyntheticSpec(n_states=4, n_clusters=1, seed=3, true_params={(1, a): p for a, p in TRUE.items()})
    panel, _, _ = generate_synthetic(spec)
    return panel


def _trajs(panel, params):
    out = {}
    for age in AGE_GROUPS:
        t = simulate_trajectory(default_init(), params[age], panel.n_years, panel.start_year)
        for r in panel.regions:
            out[(r, age)] = t
    return out


def test_gamma_density_values():
    assert log_gamma_density(0.01, 1, 100) == pytest.approx(3.605170185988091, abs=1e-9)
    assert log_gamma_density(1.0, 1, 1) == pytest.approx(-1.0, abs=1e-15)
    # 2 ln 0.2 - lnG(2) + ln 10 - 2, evaluated exactly
    assert log_gamma_density(10.0, 2, 0.2) == pytest.approx(-2.916290731874155, abs=1e-12)
    assert log_gamma_density(10.0, 2, 0.2) == pytest.approx(stats.gamma(2, scale=5).logpdf(10.0), abs=1e-12)
    with pytest.raises(ValueError):
        log_gamma_density(0.0, 1, 1)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-6, 1e3), st.floats(0.1, 20), st.floats(0.01, 200))
def test_gamma_density_matches_scipy(x, shape, rate):
    assert log_gamma_density(x, shape, rate) == pytest.approx(
        stats.gamma(shape, scale=1 / rate).logpdf(x), rel=1e-9, abs=1e-9
    )


def test_poisson_and_normal_values():
    assert float(poisson_logpmf(3, 2.5)) == pytest.approx(-1.5428872736055896, abs=1e-9)
    assert float(normal_logpdf(0.3, 0.3, 0.1)) == pytest.approx(1.3836465597893728, abs=1e-9)
    # floored mean: zero count against a zero flow stays finite
    assert float(poisson_logpmf(0, 0.0)) == pytest.approx(-1e-12, abs=1e-15)
    assert np.isfinite(poisson_logpmf(4, 0.0))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-3, 1e6))
def test_poisson_matches_scipy(k, mean):
    assert float(poisson_logpmf(k, mean)) == pytest.approx(stats.poisson(mean).logpmf(k), rel=1e-9, abs=1e-9)


def test_prior_support():
    spec = PriorSpec()
    assert Uniform(0, 5).logpdf(2.3) == pytest.approx(-math.log(5), abs=1e-15)
    assert log_prior(TRUE, ReportingParams(1.0, 1.0, 2.5, 0.01), spec) == -math.inf
    assert log_prior({**TRUE, AGE_GROUPS[0]: SirdParams(0.0, 1.0, 0.1)}, REPORT, spec) == -math.inf
    parts = sum(d.logpdf(v) for d, v in zip(spec.vector(), pack(TRUE, REPORT)))
    assert log_prior(TRUE, REPORT, spec) == pytest.approx(parts, abs=1e-12)


def test_pack_round_trip():
    params, rep = unpack(pack(TRUE, REPORT))
    assert params == TRUE and rep == REPORT
    assert PARAM_NAMES[0] == "beta_juvenile" and PARAM_NAMES[-1] == "sigma_prev"
    assert len(PARAM_NAMES) == 13


def test_prior_spec_file(tmp_path):
    spec = parse_prior_spec(["# comment", "beta = gamma 3 0.5", "rho_death = uniform 0.1 3"])
    assert spec.beta == Gamma(3, 0.5) and spec.rho_death == Uniform(0.1, 3)
    assert spec.gamma == PriorSpec().gamma
    path = tmp_path / "priors.txt"
    path.write_text("\n".join(PriorSpec().to_lines()))
    assert load_prior_spec(path) == PriorSpec()
    for bad in (["beta gamma 1 2"], ["kappa = gamma 1 2"], ["beta = cauchy 0 1"], ["beta = gamma 1"],
                ["beta = uniform 2 1"]):
        with pytest.raises(ValueError):
            parse_prior_spec(bad)


def test_empty_panel_likelihood():
    empty = ObservationPanel((), 1990, np.zeros((0, 3, 5)), np.zeros((0, 3, 5)), np.zeros((0, 3, 5)))
    assert log_likelihood(empty, {}, REPORT) == 0.0


def test_likelihood_additive_over_regions(one_cluster_panel):
    panel = one_cluster_panel
    trajs = _trajs(panel, TRUE)
    whole = log_likelihood(panel, trajs, REPORT)
    halves = sum(log_likelihood(panel.subset(part), trajs, REPORT)
                 for part in (panel.regions[:1], panel.regions[1:]))
    assert whole == pytest.approx(halves, rel=1e-13)


def test_likelihood_matches_scipy_terms(one_cluster_panel):
    panel = one_cluster_panel.subset(one_cluster_panel.regions[:1])
    trajs = _trajs(panel, TRUE)
    rep = ReportingParams(1.2, 0.9, 1.1, 0.02)
    expected = 0.0
    for age in AGE_GROUPS:
        t, k = trajs[(panel.regions[0], age)], int(age)
        expected += stats.poisson(np.maximum(1.2 * t.new_inf * 1e5, 1e-12)).logpmf(panel.incidence[0, k]).sum()
        expected += stats.norm(0.9 * t.i[:-1], 0.02).logpdf(panel.prevalence[0, k]).sum()
        expected += stats.poisson(np.maximum(1.1 * t.new_death * 1e5, 1e-12)).logpmf(panel.deaths[0, k]).sum()
    assert log_likelihood(panel, trajs, rep) == pytest.approx(expected, rel=1e-10)


def test_likelihood_dimension_errors(one_cluster_panel):
    panel = one_cluster_panel
    trajs = _trajs(panel, TRUE)
    with pytest.raises(ValueError):
        log_likelihood(panel, {k: v for k, v in trajs.items() if k[0] != panel.regions[0]}, REPORT)
    short = {k: simulate_trajectory(default_init(), TRUE[k[1]], 5, panel.start_year) for k in trajs}
    with pytest.raises(ValueError):
        log_likelihood(panel, short, REPORT)


def test_posterior_is_prior_plus_likelihood(one_cluster_panel):
    panel = one_cluster_panel
    spec = PriorSpec()
    total = log_posterior(panel, TRUE, REPORT, spec)
    assert total == pytest.approx(log_prior(TRUE, REPORT, spec) + log_likelihood(panel, _trajs(panel, TRUE), REPORT),
                                  abs=1e-12 * abs(total))
    assert log_posterior(panel, TRUE, ReportingParams(1, 1, 3.0, 0.01), spec) == -math.inf


def test_posterior_penalises_too_small_sigma(one_cluster_panel):
    panel = one_cluster_panel
    spec = PriorSpec()
    values = [log_posterior(panel, TRUE, ReportingParams(1, 1, 1, s), spec) for s in (0.004, 0.002, 0.001)]
    assert values[0] > values[1] > values[2]


def test_cluster_posterior_matches_reference(one_cluster_panel):
    panel = one_cluster_panel
    post = ClusterPosterior(panel)
    for rep in (REPORT, ReportingParams(1.3, 0.7, 0.8, 0.05)):
        theta = pack(TRUE, rep)
        assert post(theta) == pytest.approx(log_posterior(panel, TRUE, rep, PriorSpec()), rel=1e-11)
    bad = pack(TRUE, REPORT)
    bad[11] = 2.5
    assert post(bad) == -math.inf

