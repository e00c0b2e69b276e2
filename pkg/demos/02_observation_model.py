"""Priors, the three-stream likelihood and the cluster posterior.

Run with ``python3 demos/02_observation_model.py``.
"""
import numpy as np

from epifit import PriorSpec, ReportingParams, SyntheticSpec, generate_synthetic, true_params_table
from epifit.model import AGE_GROUPS
from epifit.observation import ClusterPosterior, log_gamma_density, pack, poisson_logpmf

spec = PriorSpec()
print("prior components:")
for name, dist in zip(("beta_j", "gamma_j", "mu_j"), spec.vector()[:3]):
    print(f"  {name:<8} {dist}")

# closed-form densities used throughout
print("\nPoisson log-pmf (3; 2.5):", float(poisson_logpmf(3, 2.5)))
print("Gamma log-density (0.01; shape 1, rate 100):", log_gamma_density(0.01, 1, 100))

# A one-cluster panel generated from cluster 3's true rates
truth = {(1, a): true_params_table()[(3, a)] for a in AGE_GROUPS}
panel, _, _ = generate_synthetic(SyntheticSpec(n_states=4, n_clusters=1, true_params=truth, seed=3))
post = ClusterPosterior(panel, spec)

reporting = ReportingParams(rho_inc=1.0, rho_prev=1.0, rho_death=1.0, sigma_prev=0.05)
theta_true = pack({a: truth[(1, a)] for a in AGE_GROUPS}, reporting)
print("\nlog-posterior at the generating values:", round(post(theta_true), 3))

# scaling beta away from the truth lowers the density
for factor in (0.5, 0.8, 1.0, 1.25, 2.0):
    theta = theta_true.copy()
    theta[0:9:3] *= factor
    print(f"  beta x {factor:<4}: {post(theta):12.3f}")
