"""Deterministic SIRD dynamics.

Two views of the same epidemic are provided:

* an annual discrete-time update on population fractions with bilinear
  incidence, which is the model the inference layer fits, and
* a continuous age-structured ODE system with Holling-type saturating
  incidence, integrated with a fixed-step classical Runge-Kutta scheme, for
  trajectory studies.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np


class AgeGroup(enum.IntEnum):
    JUVENILE = 0
    ADULT = 1
    OLD = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> "AgeGroup":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown age group {text!r}") from None


AGE_GROUPS = tuple(AgeGroup)


class DegenerateError(ValueError):
    """A quantity is undefined because a denominator vanished."""


@dataclass(frozen=True)
class SirdParams:
    """Per-year transmission, recovery and disease mortality rates."""

    beta: float
    gamma: float
    mu: float

    def __post_init__(self):
        for name in ("beta", "gamma", "mu"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class CompartmentState:
    s: float
    i: float
    r: float
    d: float
    # set when a max(., 0) clamp fired on the step that produced this state
    clamped: bool = False

    @property
    def total(self) -> float:
        return self.s + self.i + self.r + self.d

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.s, self.i, self.r, self.d)

    def check(self, tol: float = 1e-9) -> None:
        """Raise if the fractions are outside [0, 1] or do not sum to one."""
        for name, v in zip("sird", self.as_tuple()):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if abs(self.total - 1.0) > tol:
            raise ValueError(f"fractions sum to {self.total}, expected 1")


@dataclass(frozen=True)
class StepFlows:
    new_inf: float
    new_rec: float
    new_death: float


def default_init() -> CompartmentState:
    return CompartmentState(0.97, 0.02, 0.01, 0.0)


def discrete_step(state: CompartmentState, params: SirdParams) -> tuple[CompartmentState, StepFlows]:
    """Advance one year of the discrete SIRD update.

    Susceptible and infected fractions are floored at zero; when a floor is
    active the returned state carries ``clamped=True`` and mass is no
    longer conserved.
    """
    s, i, r, d = state.as_tuple()
    new_inf = params.beta * s * i
    new_rec = params.gamma * i
    new_death = params.mu * i
    s_raw = s - new_inf
    i_raw = i + new_inf - new_rec - new_death
    clamped = s_raw < 0.0 or i_raw < 0.0
    nxt = CompartmentState(
        max(s_raw, 0.0), max(i_raw, 0.0), r + new_rec, d + new_death, clamped
    )
    return nxt, StepFlows(new_inf, new_rec, new_death)


class Trajectory:
    """Annual states (``T + 1`` rows) and the flows between them (``T`` rows).

    ``states`` columns are (s, i, r, d); ``flows`` columns are
    (new_inf, new_rec, new_death).  Row ``t`` of ``flows`` moves
    ``states[t]`` to ``states[t + 1]``.
    """

    def __init__(self, start_year: int, states: np.ndarray, flows: np.ndarray, clamped: np.ndarray):
        states = np.asarray(states, dtype=float)
        flows = np.asarray(flows, dtype=float)
        clamped = np.asarray(clamped, dtype=bool)
        if states.shape[0] != flows.shape[0] + 1 or clamped.shape[0] != states.shape[0]:
            raise ValueError("states must have exactly one more row than flows")
        for a in (states, flows, clamped):
            a.setflags(write=False)
        self.start_year = int(start_year)
        self.states = states
        self.flows = flows
        self.clamped = clamped

    def __len__(self) -> int:
        return self.flows.shape[0]

    @property
    def years(self) -> np.ndarray:
        return self.start_year + np.arange(self.states.shape[0])

    s = property(lambda self: self.states[:, 0])
    i = property(lambda self: self.states[:, 1])
    r = property(lambda self: self.states[:, 2])
    d = property(lambda self: self.states[:, 3])
    new_inf = property(lambda self: self.flows[:, 0])
    new_rec = property(lambda self: self.flows[:, 1])
    new_death = property(lambda self: self.flows[:, 2])

    def state(self, t: int) -> CompartmentState:
        return CompartmentState(*map(float, self.states[t]), clamped=bool(self.clamped[t]))

    def step_flows(self, t: int) -> StepFlows:
        return StepFlows(*map(float, self.flows[t]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            write_trajectory_rows(csv.writer(fh, lineterminator="\n"), self, header=True)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory_rows(writer, traj: Trajectory, header: bool = True, prefix: Sequence[str] = ()) -> None:
    if header:
        writer.writerow(
            [*prefix, "year", "s", "i", "r", "d", "new_inf", "new_rec", "new_death", "clamped"]
        )
    n = len(traj)
    for t in range(n + 1):
        flows = [_fmt(v) for v in traj.flows[t]] if t < n else ["", "", ""]
        writer.writerow(
            [*prefix, int(traj.years[t]), *(_fmt(v) for v in traj.states[t]), *flows, int(traj.clamped[t])]
        )


def run_discrete(s: float, i: float, r: float, d: float, beta: float, gamma: float, mu: float, steps: int):
    """Plain-float inner loop shared by :func:`simulate_trajectory` and the
    likelihood.  Returns ``(states, flows, clamped)`` as nested lists."""
    states = [(s, i, r, d)]
    flows = []
    clamped = [False]
    for _ in range(steps):
        ni = beta * s * i
        nr = gamma * i
        nd = mu * i
        s_raw = s - ni
        i_raw = i + ni - nr - nd
        clamped.append(s_raw < 0.0 or i_raw < 0.0)
        s = s_raw if s_raw > 0.0 else 0.0
        i = i_raw if i_raw > 0.0 else 0.0
        r += nr
        d += nd
        states.append((s, i, r, d))
        flows.append((ni, nr, nd))
    return states, flows, clamped


def run_discrete_batch(beta, gamma, mu, steps: int, init: CompartmentState | None = None):
    """Vectorised update over many parameter triples at once.

    Returns ``(i, new_inf, new_death)``, each of shape ``(steps, n)``, where
    row ``t`` holds the infected fraction before step ``t`` and the flows of
    that step.
    """
    beta, gamma, mu = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (beta, gamma, mu)))
    s0, i0, _, _ = (init or default_init()).as_tuple()
    s = np.full(beta.shape, s0)
    i = np.full(beta.shape, i0)
    i_out = np.empty((steps,) + beta.shape)
    inf_out = np.empty_like(i_out)
    death_out = np.empty_like(i_out)
    for t in range(steps):
        ni = beta * s * i
        nd = mu * i
        i_out[t] = i
        inf_out[t] = ni
        death_out[t] = nd
        s = np.maximum(s - ni, 0.0)
        i = np.maximum(i + ni - gamma * i - nd, 0.0)
    return i_out, inf_out, death_out


def simulate_trajectory(init: CompartmentState, params: SirdParams, steps: int, start_year: int = 1990) -> Trajectory:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    init.check()
    states, flows, clamped = run_discrete(*init.as_tuple(), params.beta, params.gamma, params.mu, steps)
    return Trajectory(start_year, np.array(states), np.array(flows), np.array(clamped))


def r0(params: SirdParams) -> float:
    removal = params.gamma + params.mu
    if removal <= 0:
        raise DegenerateError("R0 undefined: gamma + mu = 0")
    return params.beta / removal


# -- continuous, age-structured system ------------------------------------


@dataclass(frozen=True)
class HollingMixing:
    """Transmission intensities ``beta[k, k']`` from source group ``k'`` to
    target group ``k`` and saturation constants ``alpha[k, k']``."""

    beta: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        b = np.array(self.beta, dtype=float)
        a = np.array(self.alpha, dtype=float)
        if b.shape != (3, 3) or a.shape != (3, 3):
            raise ValueError("mixing matrices must be 3x3")
        if (b < 0).any() or (a < 0).any():
            raise ValueError("mixing entries must be nonnegative")
        b.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "alpha", a)


def holling_force_of_infection(infected_fractions, mixing: HollingMixing, target: AgeGroup) -> float:
    x = np.asarray(infected_fractions, dtype=float)
    if x.shape != (3,) or (x < 0).any() or (x > 1).any():
        raise ValueError("infected fractions must be three values in [0, 1]")
    k = int(target)
    return float(np.sum(mixing.beta[k] * x / (1.0 + mixing.alpha[k] * x)))


class ContinuousState:
    """Counts per age group, stored as a (3, 4) array of (S, I, R, D)."""

    def __init__(self, values):
        v = np.array(values, dtype=float)
        if v.shape != (3, 4):
            raise ValueError("continuous state must have shape (3, 4)")
        if (v < 0).any():
            raise ValueError("compartments must be nonnegative")
        self.values = v

    @classmethod
    def from_groups(cls, groups: Mapping[AgeGroup, Sequence[float]]) -> "ContinuousState":
        return cls([groups[g] for g in AGE_GROUPS])

    @property
    def living(self) -> np.ndarray:
        return self.values[:, :3].sum(axis=1)


def _derivs(y: np.ndarray, beta_m, alpha_m, gammas, mus) -> np.ndarray:
    S, I = y[:, 0], y[:, 1]
    N = y[:, 0] + y[:, 1] + y[:, 2]
    if (N <= 0).any():
        raise DegenerateError("living population N_k is zero for some group")
    x = I / N
    lam = (beta_m * x / (1.0 + alpha_m * x)).sum(axis=1)
    inf = lam * S
    out = np.empty_like(y)
    out[:, 0] = -inf
    out[:, 1] = inf - (gammas + mus) * I
    out[:, 2] = gammas * I
    out[:, 3] = mus * I
    return out


def continuous_derivatives(state: ContinuousState, mixing: HollingMixing, gammas, mus) -> np.ndarray:
    """Time derivatives of all twelve compartments, shape (3, 4)."""
    return _derivs(
        state.values, mixing.beta, mixing.alpha,
        np.asarray(gammas, dtype=float), np.asarray(mus, dtype=float),
    )


@dataclass(frozen=True)
class ContinuousSeries:
    times: np.ndarray
    values: np.ndarray  # (n_steps + 1, 3, 4)
    clamped: bool

    def state(self, index: int) -> ContinuousState:
        return ContinuousState(self.values[index])


def integrate_continuous(state0: ContinuousState, mixing: HollingMixing, gammas, mus,
                         t_span: float, dt: float) -> ContinuousSeries:
    """Classical RK4 with a constant step.

    The number of steps is ``ceil(t_span / dt)`` and the step is shrunk
    uniformly so that the grid ends exactly at ``t_span``.  Negative
    compartments (possible only for very coarse steps) are reset to zero and
    reported through ``clamped``.
    """
    if not (dt > 0 and t_span > 0):
        raise ValueError("dt and t_span must be positive")
    if dt > t_span:
        raise ValueError(f"step {dt} exceeds span {t_span}")
    n = max(1, math.ceil(t_span / dt - 1e-9))
    h = t_span / n
    g = np.asarray(gammas, dtype=float)
    m = np.asarray(mus, dtype=float)
    b, a = mixing.beta, mixing.alpha
    out = np.empty((n + 1, 3, 4))
    y = state0.values.copy()
    out[0] = y
    clamped = False
    for step in range(n):
        k1 = _derivs(y, b, a, g, m)
        k2 = _derivs(y + 0.5 * h * k1, b, a, g, m)
        k3 = _derivs(y + 0.5 * h * k2, b, a, g, m)
        k4 = _derivs(y + h * k3, b, a, g, m)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (y < 0).any():
            clamped = True
            y = np.maximum(y, 0.0)
        out[step + 1] = y
    return ContinuousSeries(np.linspace(0.0, t_span, n + 1), out, clamped)
