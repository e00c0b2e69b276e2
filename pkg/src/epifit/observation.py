"""Priors, the three-stream observation likelihood and the log-posterior.

Unit convention: count streams (incidence, deaths) are per ``scale``
persons (100,000 by default) and model flows, which are population
fractions, are multiplied by ``scale`` before they enter a Poisson mean.
Prevalence stays a fraction on both sides.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .model import (
    AGE_GROUPS, AgeGroup, SirdParams, Trajectory, default_init, run_discrete, run_discrete_batch, simulate_trajectory,
)

DEFAULT_SCALE = 100_000.0
POISSON_FLOOR = 1e-12
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# -- panel ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationPanel:
    """Region x age-group x year observations.

    ``incidence`` and ``deaths`` are counts per ``per`` persons, prevalence
    is a fraction.  All three arrays have shape ``(n_regions, 3, n_years)``
    with the age axis ordered juvenile, adult, old.
    """

    regions: tuple[str, ...]
    start_year: int
    incidence: np.ndarray
    prevalence: np.ndarray
    deaths: np.ndarray
    per: float = DEFAULT_SCALE
    clusters: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(str(r) for r in self.regions))
        shape = None
        for name in ("incidence", "prevalence", "deaths"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 3 or arr.shape[1] != 3:
                raise ValueError(f"{name} must have shape (regions, 3, years)")
            if shape is not None and arr.shape != shape:
                raise ValueError("stream shapes disagree")
            shape = arr.shape
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if shape[0] != len(self.regions):
            raise ValueError("region count does not match data")
        if len(set(self.regions)) != len(self.regions):
            raise ValueError("duplicate region identifiers")
        if not self.per > 0:
            raise ValueError("per must be positive")
        if self.clusters is not None:
            cl = tuple(int(c) for c in self.clusters)
            if len(cl) != len(self.regions):
                raise ValueError("one cluster label per region required")
            object.__setattr__(self, "clusters", cl)

    @property
    def n_regions(self) -> int:
        return len(self.regions)

    @property
    def n_years(self) -> int:
        return self.incidence.shape[2]

    @property
    def years(self) -> np.ndarray:
        return self.start_year + np.arange(self.n_years)

    def subset(self, regions: Sequence[str]) -> "ObservationPanel":
        idx = [self.regions.index(r) for r in regions]
        return ObservationPanel(
            tuple(regions), self.start_year,
            self.incidence[idx], self.prevalence[idx], self.deaths[idx], self.per,
            None if self.clusters is None else tuple(self.clusters[i] for i in idx),
        )

    def with_clusters(self, labels) -> "ObservationPanel":
        return ObservationPanel(
            self.regions, self.start_year, self.incidence, self.prevalence, self.deaths, self.per, tuple(labels)
        )

    def cluster_members(self) -> dict[int, list[str]]:
        if self.clusters is None:
            raise ValueError("panel carries no cluster assignment")
        out: dict[int, list[str]] = {}
        for region, c in zip(self.regions, self.clusters):
            out.setdefault(c, []).append(region)
        return dict(sorted(out.items()))

    def __eq__(self, other):
        if not isinstance(other, ObservationPanel):
            return NotImplemented
        return (
            self.regions == other.regions
            and self.start_year == other.start_year
            and self.per == other.per
            and self.clusters == other.clusters
            and all(
                np.array_equal(getattr(self, n), getattr(other, n))
                for n in ("incidence", "prevalence", "deaths")
            )
        )


# -- priors ---------------------------------------------------------------


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("Gamma shape and rate must be positive")

    bounds = property(lambda self: (0.0, math.inf))

    def logpdf(self, x: float) -> float:
        if not x > 0 or math.isinf(x):
            return -math.inf
        return log_gamma_density(x, self.shape, self.rate)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.gamma(self.shape, 1.0 / self.rate))


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("Uniform bounds must be ordered")

    bounds = property(lambda self: (self.low, self.high))

    def logpdf(self, x: float) -> float:
        if self.low <= x <= self.high:
            return -math.log(self.high - self.low)
        return -math.inf

    def sample(self, rng: np.random.Generator) -> float:
        # open interval so that logit-scale proposals start from a finite point
        while True:
            x = float(rng.uniform(self.low, self.high))
            if self.low < x < self.high:
                return x


@dataclass(frozen=True)
class PriorSpec:
    beta: Gamma | Uniform = Gamma(2.0, 0.2)
    gamma: Gamma | Uniform = Gamma(2.0, 1.0)
    mu: Gamma | Uniform = Gamma(1.0, 100.0)
    rho_inc: Gamma | Uniform = Uniform(0.0, 5.0)
    rho_prev: Gamma | Uniform = Uniform(0.0, 5.0)
    rho_death: Gamma | Uniform = Uniform(0.5, 2.0)
    sigma_prev: Gamma | Uniform = Uniform(0.001, 0.5)

    def vector(self) -> list[Gamma | Uniform]:
        """Prior per entry of the parameter vector (see ``PARAM_NAMES``)."""
        per_age = [self.beta, self.gamma, self.mu] * len(AGE_GROUPS)
        return per_age + [self.rho_inc, self.rho_prev, self.rho_death, self.sigma_prev]

    def to_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            d = getattr(self, f.name)
            if isinstance(d, Gamma):
                out.append(f"{f.name} = gamma {d.shape!r} {d.rate!r}")
            else:
                out.append(f"{f.name} = uniform {d.low!r} {d.high!r}")
        return out


def parse_prior_spec(lines: Sequence[str]) -> PriorSpec:
    """Build a :class:`PriorSpec` from ``name = family p1 p2`` lines.

    Unmentioned parameters keep their defaults; ``#`` starts a comment.
    """
    known = {f.name for f in fields(PriorSpec)}
    kwargs = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'name = family a b'")
        name, rhs = (part.strip() for part in line.split("=", 1))
        if name not in known:
            raise ValueError(f"line {lineno}: unknown parameter {name!r}")
        parts = rhs.split()
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected a family and two numbers")
        family, a, b = parts[0].lower(), float(parts[1]), float(parts[2])
        if family == "gamma":
            kwargs[name] = Gamma(a, b)
        elif family == "uniform":
            kwargs[name] = Uniform(a, b)
        else:
            raise ValueError(f"line {lineno}: unknown family {family!r}")
    return PriorSpec(**kwargs)


def load_prior_spec(path) -> PriorSpec:
    with open(path) as fh:
        return parse_prior_spec(fh.read().splitlines())


# -- parameter vector layout ----------------------------------------------

SIRD_FIELDS = ("beta", "gamma", "mu")
REPORTING_FIELDS = ("rho_inc", "rho_prev", "rho_death", "sigma_prev")
PARAM_NAMES = tuple(
    f"{p}_{age.label}" for age in AGE_GROUPS for p in SIRD_FIELDS
) + REPORTING_FIELDS


@dataclass(frozen=True)
class ReportingParams:
    rho_inc: float
    rho_prev: float
    rho_death: float
    sigma_prev: float


def pack(params: Mapping[AgeGroup, SirdParams], reporting: ReportingParams) -> np.ndarray:
    vals = []
    for age in AGE_GROUPS:
        p = params[age]
        vals += [p.beta, p.gamma, p.mu]
    vals += [getattr(reporting, f) for f in REPORTING_FIELDS]
    return np.array(vals, dtype=float)


def unpack(theta) -> tuple[dict[AgeGroup, SirdParams], ReportingParams]:
    theta = [float(v) for v in theta]
    params = {age: SirdParams(*theta[3 * k: 3 * k + 3]) for k, age in enumerate(AGE_GROUPS)}
    return params, ReportingParams(*theta[9:13])


# -- densities ------------------------------------------------------------


def log_gamma_density(x: float, shape: float, rate: float) -> float:
    """Gamma log-density in the (shape, rate) parameterisation."""
    if not x > 0:
        raise ValueError(f"Gamma density needs x > 0, got {x}")
    return shape * math.log(rate) - math.lgamma(shape) + (shape - 1.0) * math.log(x) - rate * x


def poisson_logpmf(k, mean):
    """Poisson log-pmf with the mean floored at ``POISSON_FLOOR``."""
    k = np.asarray(k, dtype=float)
    m = np.maximum(np.asarray(mean, dtype=float), POISSON_FLOOR)
    return k * np.log(m) - m - gammaln(k + 1.0)


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, dtype=float) - mean) / sd
    return -0.5 * z * z - math.log(sd) - _HALF_LOG_2PI


def log_prior_vector(theta, spec: PriorSpec) -> float:
    total = 0.0
    for x, dist in zip(theta, spec.vector()):
        lp = dist.logpdf(float(x))
        if lp == -math.inf:
            return -math.inf
        total += lp
    return total


def log_prior(params: Mapping[AgeGroup, SirdParams], reporting: ReportingParams, spec: PriorSpec) -> float:
    """Sum of independent prior log-densities; ``-inf`` outside the support."""
    return log_prior_vector(pack(params, reporting), spec)


def _stream_loglik(panel_slice, flows_inf, prev, flows_death, reporting: ReportingParams, scale: float) -> float:
    inc, pv, de = panel_slice
    ll = poisson_logpmf(inc, reporting.rho_inc * flows_inf * scale).sum()
    ll += normal_logpdf(pv, reporting.rho_prev * prev, reporting.sigma_prev).sum()
    ll += poisson_logpmf(de, reporting.rho_death * flows_death * scale).sum()
    return float(ll)


def log_likelihood(panel: ObservationPanel, trajectories: Mapping[tuple[str, AgeGroup], Trajectory],
                   reporting: ReportingParams, scale: float | None = None) -> float:
    """Joint log-likelihood of incidence, prevalence and death streams.

    ``trajectories`` maps ``(region, age)`` to a trajectory whose flows cover
    every panel year; observation year ``t`` is compared with ``states[t]``
    (prevalence) and ``flows[t]`` (incidence, deaths).
    """
    scale = panel.per if scale is None else scale
    years = panel.years
    total = 0.0
    for m, region in enumerate(panel.regions):
        for age in AGE_GROUPS:
            try:
                traj = trajectories[(region, age)]
            except KeyError:
                raise ValueError(f"no trajectory for region {region!r}, age {age.label}") from None
            lo = panel.start_year - traj.start_year
            if lo < 0 or lo + panel.n_years > len(traj):
                raise ValueError(
                    f"trajectory for {region!r}/{age.label} does not cover years {years[0]}-{years[-1]}"
                )
            sl = slice(lo, lo + panel.n_years)
            k = int(age)
            total += _stream_loglik(
                (panel.incidence[m, k], panel.prevalence[m, k], panel.deaths[m, k]),
                traj.new_inf[sl], traj.i[sl], traj.new_death[sl], reporting, scale,
            )
    return total


def log_posterior(panel: ObservationPanel, params: Mapping[AgeGroup, SirdParams], reporting: ReportingParams,
                  spec: PriorSpec, scale: float | None = None) -> float:
    """Prior plus likelihood, with every region of ``panel`` sharing ``params``."""
    lp = log_prior(params, reporting, spec)
    if lp == -math.inf:
        return lp
    trajs = {}
    for age in AGE_GROUPS:
        traj = simulate_trajectory(default_init(), params[age], panel.n_years, panel.start_year)
        for region in panel.regions:
            trajs[(region, age)] = traj
    return lp + log_likelihood(panel, trajs, reporting, scale)


class ClusterPosterior:
    """Log-posterior over the 13-entry parameter vector for one cluster.

    Regions of the cluster are exchangeable replicates of one parameter set,
    so the likelihood is evaluated through per-(age, year) sufficient
    statistics.  Trajectories are memoised per age group, which makes
    one-coordinate-at-a-time updates cheap.  Equal to :func:`log_posterior`
    up to floating-point summation order.
    """

    def __init__(self, panel: ObservationPanel, spec: PriorSpec = PriorSpec(), scale: float | None = None):
        if panel.n_regions == 0:
            raise ValueError("cluster panel is empty")
        self.spec = spec
        self.priors = spec.vector()
        self.scale = float(panel.per if scale is None else scale)
        self.n_years = panel.n_years
        self.n = float(panel.n_regions)
        self.inc_sum = panel.incidence.sum(axis=0)
        self.death_sum = panel.deaths.sum(axis=0)
        self.count_const = float(gammaln(panel.incidence + 1.0).sum() + gammaln(panel.deaths + 1.0).sum())
        self.prev_mean = panel.prevalence.mean(axis=0)
        self.prev_ss_age = ((panel.prevalence - self.prev_mean) ** 2).sum(axis=(0, 2))
        self.prev_ss = float(self.prev_ss_age.sum())
        self.init = default_init().as_tuple()
        self._cache: list[dict] = [{} for _ in AGE_GROUPS]

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = [{} for _ in AGE_GROUPS]
        return state

    def _age_series(self, k: int, beta: float, gamma: float, mu: float):
        cache = self._cache[k]
        key = (beta, gamma, mu)
        hit = cache.get(key)
        if hit is None:
            states, flows, _ = run_discrete(*self.init, beta, gamma, mu, self.n_years)
            f = np.array(flows)
            hit = (f[:, 0], np.array(states[:-1])[:, 1], f[:, 2])
            if len(cache) >= 4:
                cache.clear()
            cache[key] = hit
        return hit

    def log_prior(self, theta) -> float:
        total = 0.0
        for x, dist in zip(theta, self.priors):
            lp = dist.logpdf(x)
            if lp == -math.inf:
                return lp
            total += lp
        return total

    def log_likelihood(self, theta) -> float:
        rho_inc, rho_prev, rho_death, sigma = theta[9], theta[10], theta[11], theta[12]
        inc_m = np.empty((3, self.n_years))
        death_m = np.empty((3, self.n_years))
        prev_m = np.empty((3, self.n_years))
        for k in range(3):
            ni, ii, nd = self._age_series(k, theta[3 * k], theta[3 * k + 1], theta[3 * k + 2])
            inc_m[k] = ni
            prev_m[k] = ii
            death_m[k] = nd
        n = self.n
        lam_i = np.maximum(rho_inc * self.scale * inc_m, POISSON_FLOOR)
        lam_d = np.maximum(rho_death * self.scale * death_m, POISSON_FLOOR)
        ll = float((self.inc_sum * np.log(lam_i)).sum() - n * lam_i.sum())
        ll += float((self.death_sum * np.log(lam_d)).sum() - n * lam_d.sum())
        ll -= self.count_const
        resid = self.prev_mean - rho_prev * prev_m
        sq = self.prev_ss + n * float((resid * resid).sum())
        n_cells = n * prev_m.size
        ll += -0.5 * sq / (sigma * sigma) - n_cells * (math.log(sigma) + _HALF_LOG_2PI)
        return ll

    def __call__(self, theta) -> float:
        theta = [float(v) for v in theta]
        lp = self.log_prior(theta)
        if lp == -math.inf:
            return lp
        return lp + self.log_likelihood(theta)

    def age_profile(self, k: int, beta, gamma, mu) -> np.ndarray:
        """Profile log-posterior of age group ``k`` over arrays of rate triples.

        The reporting factors and prevalence sd are replaced by their
        conditional maximisers for this age group alone (closed form, clipped
        to the prior support); the rates' own prior terms are included.
        Used to locate a starting point, not for sampling.
        """
        i, inc, death = run_discrete_batch(beta, gamma, mu, self.n_years)
        n = self.n
        out = np.zeros(i.shape[1:])
        for j, (flows, ysum) in enumerate(((inc, self.inc_sum[k]), (death, self.death_sum[k]))):
            dist = self.priors[9 if j == 0 else 11]
            lam = flows * self.scale
            tot = lam.sum(axis=0)
            with np.errstate(divide="ignore", invalid="ignore"):
                rho = ysum.sum() / (n * tot)
            rho = _clip_to(np.nan_to_num(rho, nan=1.0, posinf=1.0), dist)
            m = np.maximum(rho * lam, POISSON_FLOOR)
            out += (ysum[:, None] * np.log(m)).sum(axis=0) - n * m.sum(axis=0)
        ybar = self.prev_mean[k][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            rho_p = (ybar * i).sum(axis=0) / (i * i).sum(axis=0)
        rho_p = _clip_to(np.nan_to_num(rho_p, nan=1.0, posinf=1.0), self.priors[10])
        resid = ybar - rho_p * i
        cells = n * self.n_years
        var = (self.prev_ss_age[k] + n * (resid * resid).sum(axis=0)) / cells
        sd = _clip_to(np.sqrt(var), self.priors[12])
        out += -0.5 * (self.prev_ss_age[k] + n * (resid * resid).sum(axis=0)) / sd ** 2 - cells * np.log(sd)
        for x, dist in zip((beta, gamma, mu), self.priors[3 * k: 3 * k + 3]):
            out = out + np.vectorize(dist.logpdf, otypes=[float])(np.broadcast_to(x, out.shape))
        return out


def _clip_to(x, dist):
    lo, hi = dist.bounds
    eps = 1e-9
    lo_c = lo + eps * max(1.0, abs(lo))
    hi_c = hi - eps * max(1.0, abs(hi)) if math.isfinite(hi) else np.inf
    return np.clip(x, lo_c, hi_c)
