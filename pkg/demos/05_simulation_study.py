"""One replicate of the full simulation study.

Generates ten regions in three clusters, clusters them, fits each cluster
and checks how often the 95% intervals cover the true rates.  Takes about
half a minute with the shortened sampler settings.
Run with ``python3 demos/05_simulation_study.py``.
"""
from epifit import McmcConfig, SyntheticSpec, run_simulation_study

result = run_simulation_study(seed=1, config=McmcConfig.fast(seed=1), synthetic=SyntheticSpec(seed=1))
print(result.summary_text())
print(f"beta covered in {result.beta_coverage}/9 cells; "
      f"R-hat < 1.1 for {result.rhat_pass_fraction():.0%} of parameters")
