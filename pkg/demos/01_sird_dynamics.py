"""Discrete SIRD dynamics, R0 and the continuous age-structured system.

Run with ``python3 demos/01_sird_dynamics.py``.
"""
import numpy as np

from epifit import (
    AgeGroup, CompartmentState, HollingMixing, SirdParams, default_init, discrete_step, holling_force_of_infection,
    integrate_continuous, r0, simulate_trajectory, true_params_table,
)
from epifit.model import ContinuousState

# One step from the default initial condition. Every number can be checked by hand.
state = default_init()
params = SirdParams(beta=2.0, gamma=0.5, mu=0.1)
nxt, flows = discrete_step(state, params)
print("start:", state.as_tuple())
print("after one year:", nxt.as_tuple(), "flows:", flows)
print("mass after step:", nxt.total)

# Annual trajectories for the nine simulation-study parameter sets
table = true_params_table()
print("\ncluster age        R0    peak i  peak year  clamped")
for (c, age), p in sorted(table.items()):
    traj = simulate_trajectory(default_init(), p, steps=32)
    k = int(np.argmax(traj.i))
    print(f"{c:>7} {age.label:<9} {r0(p):6.3f} {traj.i[k]:8.4f} {traj.years[k]:>10} {bool(traj.clamped.any())!s:>8}")

# Large rates drive i below zero within a year; the floor is applied and flagged
harsh, _ = discrete_step(CompartmentState(0.5, 0.5, 0.0, 0.0), SirdParams(1.0, 2.0, 0.5))
print("\nclamped step:", harsh.as_tuple(), "flag:", harsh.clamped)

# Holling-type saturation: with alpha = 0 the force is the mass-action sum
rng = np.random.default_rng(0)
beta = rng.uniform(0, 5, (3, 3))
x = np.array([0.02, 0.05, 0.01])
for alpha in (0.0, 10.0, 100.0):
    mix = HollingMixing(beta, np.full((3, 3), alpha))
    print(f"alpha={alpha:>5}: lambda_adult = {holling_force_of_infection(x, mix, AgeGroup.ADULT):.5f}")

# Continuous three-group system with RK4; living population shrinks only through deaths
state0 = ContinuousState([[9_000, 100, 0, 0], [50_000, 500, 0, 0], [20_000, 50, 0, 0]])
series = integrate_continuous(state0, HollingMixing(beta / 1e4, np.full((3, 3), 1e-3)),
                              gammas=[0.5, 0.4, 0.3], mus=[0.001, 0.002, 0.02], t_span=10.0, dt=0.01)
total = series.values.sum(axis=(1, 2))
print(f"\nRK4 over 10 years: total count drift {abs(total[-1] - total[0]):.2e}, "
      f"deaths {series.values[-1, :, 3].round(1)}")
