"""Bayesian fit of one cluster with the adaptive Metropolis sampler.

Uses the shortened configuration; expect 10-20 seconds.
Run with ``python3 demos/04_fit_one_cluster.py``.
"""
from epifit import McmcConfig, SyntheticSpec, fit_cluster, generate_synthetic, true_params_table
from epifit.model import AGE_GROUPS

truth = {(1, a): true_params_table()[(2, a)] for a in AGE_GROUPS}
panel, _, _ = generate_synthetic(SyntheticSpec(n_states=4, n_clusters=1, true_params=truth, seed=8))

fit = fit_cluster(panel, config=McmcConfig.fast(seed=8))
print(f"{fit.summary.n_chains} chains, {fit.summary.n_draws} retained draws, converged: {fit.converged}")
print("\nparameter         true     mean      2.5%     97.5%   r_hat")
for age in AGE_GROUPS:
    p = truth[(1, age)]
    for name, value in (("beta", p.beta), ("gamma", p.gamma), ("mu", p.mu)):
        row = fit.summary[f"{name}_{age.label}"]
        print(f"{name + '_' + age.label:<15} {value:7.3f} {row.mean:8.3f} {row.q025:9.3f} {row.q975:9.3f} "
              f"{row.r_hat:7.3f}")

for age in AGE_GROUPS:
    row = fit.summary[f"R0_{age.label}"]
    print(f"R0 {age.label:<9} median {row.median:.3f}  [{row.q025:.3f}, {row.q975:.3f}]")
