import math
import warnings

import numpy as np
import pytest
from scipy import stats

from epifit.data_io import SyntheticSpec, generate_synthetic, true_params_table
from epifit.inference import (
    ChainTrace, ConvergenceWarning, McmcConfig, SamplerInitError, fit_cluster, gelman_rubin, init_from_prior,
    laplace_covariance, run_chain, summarize, write_diagnostics_csv, write_draws_csv, write_summary_csv,
)
from epifit.model import AGE_GROUPS, DegenerateError
from epifit.observation import PARAM_NAMES, ClusterPosterior, ObservationPanel, PriorSpec


def normal_logpdf(x):
    return -0.5 * x[0] ** 2


def _trace(*columns, names=None):
    draws = np.column_stack(columns).astype(float)
    names = names or tuple(f"x{j}" for j in range(draws.shape[1]))
    return ChainTrace(tuple(names), draws, 0.3, 0)


def test_config_defaults_and_validation():
    c = McmcConfig()
    assert (c.n_chains, c.adapt_iters, c.burnin_iters, c.sample_iters, c.thin) == (3, 1000, 2000, 10000, 3)
    assert c.target_acceptance == 0.234 and c.n_retained == 3333
    f = McmcConfig.fast(4)
    assert (f.n_chains, f.adapt_iters, f.burnin_iters, f.sample_iters, f.thin, f.seed) == (2, 500, 500, 2000, 1, 4)
    for bad in ({"thin": 0}, {"n_chains": 0}, {"target_acceptance": 1.0}, {"seed": -1}):
        with pytest.raises(ValueError):
            McmcConfig(**bad)


def test_sampler_normal_target():
    config = McmcConfig(n_chains=1, adapt_iters=1000, burnin_iters=1000, sample_iters=100_000, thin=10, seed=1)
    trace = run_chain(normal_logpdf, [0.5], config)
    x = trace.draws[:, 0]
    assert len(x) == 10_000
    assert abs(x.mean()) < 0.1
    assert abs(x.var() - 1) < 0.15
    assert stats.kstest(x, "norm").statistic < 0.02


def test_sampler_determinism_and_seed_isolation():
    config = McmcConfig(n_chains=1, adapt_iters=50, burnin_iters=50, sample_iters=300, thin=1, seed=9)
    a = run_chain(normal_logpdf, [0.0], config, chain_index=0)
    assert a == run_chain(normal_logpdf, [0.0], config, chain_index=0)
    b = run_chain(normal_logpdf, [0.0], config, chain_index=1)
    assert not np.array_equal(a.draws, b.draws)


def test_thinning_count():
    config = McmcConfig(n_chains=1, adapt_iters=10, burnin_iters=10, sample_iters=100, thin=7)
    assert run_chain(normal_logpdf, [0.0], config).draws.shape == (14, 1)


def test_logit_support_preserved():
    config = McmcConfig(n_chains=1, adapt_iters=200, burnin_iters=200, sample_iters=5000, thin=1, seed=3)
    trace = run_chain(lambda x: 0.0 if 0 < x[0] < 1 else -math.inf, [0.5], config, bounds=[(0.0, 1.0)])
    x = trace.draws[:, 0]
    assert np.all((x > 0) & (x < 1))
    assert abs(x.mean() - 0.5) < 0.05


def test_log_scale_support_preserved():
    config = McmcConfig(n_chains=1, adapt_iters=300, burnin_iters=300, sample_iters=20000, thin=2, seed=3)
    # Gamma(3, 1) target on the positive half line
    trace = run_chain(lambda x: 2 * math.log(x[0]) - x[0] if x[0] > 0 else -math.inf, [1.0], config,
                      bounds=[(0.0, math.inf)])
    x = trace.draws[:, 0]
    assert np.all(x > 0)
    assert x.mean() == pytest.approx(3.0, abs=0.2)


def test_joint_moves_keep_target():
    cov = np.array([[1.0, 0.95], [0.95, 1.0]])
    prec = np.linalg.inv(cov)
    config = McmcConfig(n_chains=1, adapt_iters=1000, burnin_iters=500, sample_iters=20000, thin=2, seed=5)
    trace = run_chain(lambda x: -0.5 * np.asarray(x) @ prec @ np.asarray(x), [0.0, 0.0], config, joint_moves=2)
    emp = np.cov(trace.draws.T)
    assert np.abs(emp - cov).max() < 0.15


def test_init_errors():
    config = McmcConfig(n_chains=1, adapt_iters=5, burnin_iters=5, sample_iters=5, thin=1)
    with pytest.raises(SamplerInitError):
        run_chain(lambda x: -math.inf, [0.5], config)
    with pytest.raises(SamplerInitError):
        run_chain(lambda x: -math.inf, None, config, init_sampler=lambda rng: [rng.random()])
    with pytest.raises(SamplerInitError):
        run_chain(lambda x: 0.0, [1.0], config, bounds=[(0.0, 1.0)])


def test_init_from_prior():
    spec = PriorSpec()
    draws = np.array([init_from_prior(spec, s) for s in range(1000)])
    assert np.array_equal(init_from_prior(spec, 7), init_from_prior(spec, 7))
    assert all(math.isfinite(d.logpdf(v)) for row in draws[:50] for d, v in zip(spec.vector(), row))
    assert abs(draws[:, 2].mean() - 0.01) < 0.003


def test_gelman_rubin_oracle():
    r = gelman_rubin([_trace([1, 2]), _trace([3, 4])])
    assert r["x0"] == pytest.approx(2.1213203, abs=1e-6)
    assert gelman_rubin([_trace([5, 5, 5]), _trace([5, 5, 5])])["x0"] == 1.0
    same = np.random.default_rng(0).normal(size=500)
    assert gelman_rubin([_trace(same), _trace(same)])["x0"] <= 1.0 + 1e-12
    with pytest.raises(DegenerateError):
        gelman_rubin([_trace([1, 1]), _trace([2, 2])])
    with pytest.raises(ValueError):
        gelman_rubin([_trace([1, 2])])


def test_gelman_rubin_independent_chains():
    config = McmcConfig(n_chains=2, adapt_iters=500, burnin_iters=500, sample_iters=10000, thin=1, seed=2)
    traces = [run_chain(normal_logpdf, [0.0], config, chain_index=c) for c in range(2)]
    assert gelman_rubin(traces)["x0"] < 1.05


def test_summarize_examples():
    s = summarize([_trace([1, 2, 3])])
    assert s["x0"].median == 2 and s["x0"].mean == 2 and math.isnan(s["x0"].r_hat)
    const = _trace(*([[v] * 4 for v in (4.57, 2.89, 0.034)]), names=("beta_adult", "gamma_adult", "mu_adult"))
    r0 = summarize([const])["R0_adult"]
    assert (r0.mean, r0.median, r0.q025, r0.q975) == pytest.approx((1.5629275,) * 4, abs=1e-6)
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=200), rng.normal(size=200)
    row = summarize([_trace(a), _trace(b)])["x0"]
    assert row.q025 <= row.median <= row.q975 and not math.isnan(row.r_hat)
    assert row.median == np.quantile(np.concatenate([a, b]), 0.5)
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_quantiles_linear():
    x = np.arange(1.0, 41.0)
    row = summarize([_trace(x)])["x0"]
    assert row.q025 == pytest.approx(np.quantile(x, 0.025)) == pytest.approx(1.975)
    assert row.q975 == pytest.approx(39.025)


@pytest.fixture(scope="module")
def one_cluster():
    truth = {(1, a): true_params_table()[(3, a)] for a in AGE_GROUPS}
    panel, _, _ = generate_synthetic(SyntheticSpec(n_states=4, n_clusters=1, true_params=truth, seed=21))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        fit = fit_cluster(panel, PriorSpec(), McmcConfig.fast(3))
    return panel, truth, fit


def test_fit_cluster_recovers_beta(one_cluster):
    _, truth, fit = one_cluster
    covered = sum(fit.summary[f"beta_{a.label}"].covers(truth[(1, a)].beta) for a in AGE_GROUPS)
    assert covered >= 2
    assert set(fit.r_hat) == set(PARAM_NAMES)
    assert fit.summary.n_chains == 2 and fit.summary.n_draws == 4000
    assert {"R0_juvenile", "tau_prev"} <= set(fit.summary.rows)
    spec = PriorSpec()
    for t in fit.traces:
        for d, col in zip(spec.vector(), t.draws.T):
            lo, hi = d.bounds
            assert np.all((col > lo) & (col < hi))


def test_fit_cluster_deterministic(one_cluster):
    panel, _, fit = one_cluster
    config = McmcConfig(n_chains=2, adapt_iters=100, burnin_iters=50, sample_iters=100, thin=1, seed=3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        a = fit_cluster(panel, PriorSpec(), config)
        b = fit_cluster(panel, PriorSpec(), config)
    assert a.traces == b.traces and a.summary == b.summary


def test_fit_cluster_single_chain_has_no_rhat(one_cluster):
    panel, _, _ = one_cluster
    config = McmcConfig(n_chains=1, adapt_iters=50, burnin_iters=20, sample_iters=50, thin=1)
    fit = fit_cluster(panel, PriorSpec(), config)
    assert all(math.isnan(v) for v in fit.r_hat.values())
    assert not fit.converged


def test_laplace_covariance_is_positive_definite(one_cluster):
    panel, _, fit = one_cluster
    cov = laplace_covariance(ClusterPosterior(panel), fit.start)
    assert np.allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_all_zero_panel_shrinks_mu():
    zeros = np.zeros((2, 3, 32))
    panel = ObservationPanel(("a", "b"), 1990, zeros, zeros, zeros)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        fit = fit_cluster(panel, PriorSpec(), McmcConfig.fast(0))
    for age in AGE_GROUPS:
        assert fit.summary[f"mu_{age.label}"].mean < 0.01


def test_fit_cluster_rejects_bad_input():
    empty = ObservationPanel((), 1990, np.zeros((0, 3, 2)), np.zeros((0, 3, 2)), np.zeros((0, 3, 2)))
    with pytest.raises(ValueError):
        fit_cluster(empty)


def test_csv_exports(one_cluster, tmp_path):
    _, _, fit = one_cluster
    fits = {1: fit}
    write_summary_csv(tmp_path / "s.csv", fits)
    write_draws_csv(tmp_path / "d.csv", fits)
    write_diagnostics_csv(tmp_path / "g.csv", fits)
    summary = (tmp_path / "s.csv").read_text().splitlines()
    assert summary[0].startswith("cluster,age_group,beta,gamma,mu,R0,beta_median,beta_q2.5,beta_q97.5,beta_r_hat")
    assert len(summary) == 4
    draws = (tmp_path / "d.csv").read_text().splitlines()
    assert draws[0] == "cluster,chain,draw," + ",".join(PARAM_NAMES)
    assert len(draws) == 1 + 4000
    assert "rhat_warning" in (tmp_path / "g.csv").read_text().splitlines()[0]
