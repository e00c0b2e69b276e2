"""Adaptive random-walk Metropolis, convergence diagnostics and posterior summaries."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import AGE_GROUPS, DegenerateError
from .observation import PARAM_NAMES, ClusterPosterior, ObservationPanel, PriorSpec

log = logging.getLogger(__name__)

RHAT_THRESHOLD = 1.1
MAX_INIT_TRIES = 1000
# joint-covariance moves per component-wise sweep in fit_cluster
JOINT_MOVES = 5


class SamplerInitError(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 3
    adapt_iters: int = 1000
    burnin_iters: int = 2000
    sample_iters: int = 10000
    thin: int = 3
    seed: int = 0
    target_acceptance: float = 0.234

    def __post_init__(self):
        for name in ("n_chains", "adapt_iters", "burnin_iters", "sample_iters", "thin"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @classmethod
    def fast(cls, seed: int = 0) -> "McmcConfig":
        """Short profile for CI and the simulation study."""
        return cls(n_chains=2, adapt_iters=500, burnin_iters=500, sample_iters=2000, thin=1, seed=seed)

    @property
    def n_retained(self) -> int:
        return self.sample_iters // self.thin


@dataclass(frozen=True, eq=False)
class ChainTrace:
    names: tuple[str, ...]
    draws: np.ndarray
    acceptance_rate: float
    seed: int
    chain_index: int = 0

    def __eq__(self, other):
        if not isinstance(other, ChainTrace):
            return NotImplemented
        return (
            self.names == other.names
            and self.seed == other.seed
            and self.chain_index == other.chain_index
            and self.acceptance_rate == other.acceptance_rate
            and np.array_equal(self.draws, other.draws)
        )


# -- transforms -----------------------------------------------------------
# 0: identity, 1: log (lower bound only), 2: logit (both bounds)


def _transform_kinds(bounds):
    kinds = []
    for lo, hi in bounds:
        if math.isinf(lo) and math.isinf(hi):
            kinds.append((0, 0.0, 0.0))
        elif math.isinf(hi):
            kinds.append((1, lo, 0.0))
        elif math.isinf(lo):
            raise ValueError("upper-bounded-only parameters are not supported")
        else:
            kinds.append((2, lo, hi))
    return kinds


def _to_free(x, kind):
    t, lo, hi = kind
    if t == 0:
        return x
    if t == 1:
        return math.log(max(x - lo, 1e-300))
    # points on a bound (e.g. an optimiser's boundary mode) map to a large finite value
    u = min(max((x - lo) / (hi - lo), 1e-15), 1.0 - 1e-15)
    return math.log(u) - math.log1p(-u)


def _from_free(z, kind):
    """Map back to the natural scale; also return log|dx/dz|."""
    t, lo, hi = kind
    if t == 0:
        return z, 0.0
    if t == 1:
        # overflow maps to +inf, which every prior rejects
        return (lo + math.exp(z) if z < 709.0 else math.inf), z
    width = hi - lo
    if z >= 0:
        e = math.exp(-z)
        u = 1.0 / (1.0 + e)
        log_jac = -z - 2.0 * math.log1p(e)
    else:
        e = math.exp(z)
        u = e / (1.0 + e)
        log_jac = z - 2.0 * math.log1p(e)
    return lo + width * u, log_jac + math.log(width)


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(chain_index)])


def run_chain(logpost: Callable[[list], float], init, config: McmcConfig, chain_index: int = 0,
              bounds: Sequence[tuple[float, float]] | None = None,
              init_sampler: Callable[[np.random.Generator], Sequence[float]] | None = None,
              names: Sequence[str] | None = None, joint_moves: int = 0,
              proposal_cov=None) -> ChainTrace:
    """Run one component-wise adaptive random-walk Metropolis chain.

    Each coordinate is proposed on an unconstrained scale (log for
    half-bounded, logit for interval-bounded parameters) with the Jacobian
    included in the acceptance ratio.  Per-coordinate proposal scales are
    tuned by Robbins-Monro toward ``config.target_acceptance`` during the
    adaptation phase only, then frozen.  The burn-in phase is discarded and
    the sampling phase is thinned.

    With ``joint_moves > 0`` every sweep is followed by that many moves of
    all coordinates together, drawn from a Gaussian whose covariance is the
    empirical covariance of the second half of the adaptation phase (scaled
    by a factor tuned to the same acceptance target).  This lets the chain
    travel along correlated ridges that single-coordinate moves cross
    slowly.  Both kernels leave the target invariant once frozen.
    ``proposal_cov`` (on the unconstrained scale) seeds the joint moves
    before that estimate is available and sets the initial per-coordinate
    scales.

    If ``init`` is None, ``init_sampler`` is called with the chain's
    generator until it yields a point of finite log-posterior.
    """
    rng = chain_rng(config.seed, chain_index)
    if init is None:
        if init_sampler is None:
            raise SamplerInitError("no initial point and no init_sampler")
        for _ in range(MAX_INIT_TRIES):
            x = [float(v) for v in init_sampler(rng)]
            lp = logpost(x)
            if math.isfinite(lp):
                break
        else:
            raise SamplerInitError(f"log-posterior was -inf for {MAX_INIT_TRIES} consecutive prior draws")
    else:
        x = [float(v) for v in init]
        lp = logpost(x)
        if not math.isfinite(lp):
            raise SamplerInitError("initial point has non-finite log-posterior")
    dim = len(x)
    if bounds is None:
        bounds = [(-math.inf, math.inf)] * dim
    kinds = _transform_kinds(bounds)
    if len(kinds) != dim:
        raise ValueError("bounds length does not match the parameter vector")
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(dim))

    z = []
    log_jac = []
    for xj, kind in zip(x, kinds):
        t, lo, hi = kind
        if (t >= 1 and not xj > lo) or (t == 2 and not xj < hi):
            raise SamplerInitError("initial point lies on or outside a bound")
        zj = _to_free(xj, kind)
        z.append(zj)
        log_jac.append(_from_free(zj, kind)[1])

    chol = None
    if proposal_cov is not None:
        proposal_cov = np.asarray(proposal_cov, dtype=float)
        if proposal_cov.shape != (dim, dim):
            raise ValueError("proposal_cov shape does not match the parameter vector")
        chol = np.linalg.cholesky(proposal_cov)
        log_scale = [0.5 * math.log(v) for v in np.diag(proposal_cov)]
    else:
        # transformed coordinates start at sd 0.1, untransformed at sd 1
        log_scale = [math.log(0.1) if k[0] else 0.0 for k in kinds]
    target = config.target_acceptance
    n_total = config.adapt_iters + config.burnin_iters + config.sample_iters
    sample_start = config.adapt_iters + config.burnin_iters
    retained = np.empty((config.n_retained, dim))
    n_kept = 0
    accepted = 0
    n_proposed = 0

    # running moments of z over the second half of adaptation
    learn_from = config.adapt_iters // 2
    min_learn = max(2 * dim, 20)
    n_seen = 0
    mean_z = np.zeros(dim)
    m2_z = np.zeros((dim, dim))
    joint_log_scale = math.log(2.38 / math.sqrt(dim))

    for it in range(n_total):
        adapting = it < config.adapt_iters
        sampling = it >= sample_start
        gain = 1.0 / (it + 1) ** 0.6
        noise = rng.standard_normal(dim)
        log_u = np.log(rng.random(dim))
        for j in range(dim):
            z_new = z[j] + math.exp(log_scale[j]) * noise[j]
            x_new, lj_new = _from_free(z_new, kinds[j])
            old = x[j]
            x[j] = x_new
            lp_new = logpost(x)
            log_ratio = (lp_new + lj_new) - (lp + log_jac[j])
            ok = log_ratio >= 0 or log_u[j] < log_ratio
            if ok and math.isfinite(lp_new):
                z[j] = z_new
                lp = lp_new
                log_jac[j] = lj_new
            else:
                x[j] = old
                ok = False
            if adapting:
                log_scale[j] += gain * ((1.0 if ok else 0.0) - target)
            elif sampling:
                accepted += ok
                n_proposed += 1

        if joint_moves:
            if adapting and it >= learn_from:
                n_seen += 1
                zv = np.asarray(z)
                delta = zv - mean_z
                mean_z += delta / n_seen
                m2_z += np.outer(delta, zv - mean_z)
                if n_seen >= min_learn:
                    cov = m2_z / (n_seen - 1)
                    try:
                        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(dim))
                    except np.linalg.LinAlgError:
                        pass
            for _ in range(joint_moves if chol is not None else 0):
                step = math.exp(joint_log_scale) * (chol @ rng.standard_normal(dim))
                z_prop = [zj + dz for zj, dz in zip(z, step)]
                mapped = [_from_free(zj, kind) for zj, kind in zip(z_prop, kinds)]
                x_prop = [m[0] for m in mapped]
                lj_prop = [m[1] for m in mapped]
                lp_new = logpost(x_prop)
                log_ratio = (lp_new + sum(lj_prop)) - (lp + sum(log_jac))
                ok = math.isfinite(lp_new) and (log_ratio >= 0 or math.log(rng.random()) < log_ratio)
                if ok:
                    z, x, log_jac, lp = z_prop, x_prop, lj_prop, lp_new
                if adapting:
                    joint_log_scale += gain * ((1.0 if ok else 0.0) - target)
                elif sampling:
                    accepted += ok
                    n_proposed += 1

        if sampling and (it - sample_start + 1) % config.thin == 0:
            retained[n_kept] = x
            n_kept += 1

    rate = accepted / n_proposed
    retained.setflags(write=False)
    return ChainTrace(names, retained, rate, config.seed, chain_index)


def init_from_prior(spec: PriorSpec, seed) -> np.ndarray:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.array([d.sample(rng) for d in spec.vector()])


# -- diagnostics ----------------------------------------------------------


def _psrf(chains: np.ndarray) -> float:
    """Potential scale reduction for an (m chains, n draws) array."""
    m, n = chains.shape
    if m < 2 or n < 2:
        raise ValueError("need at least two chains of at least two draws")
    if np.all(chains == chains.flat[0]):
        return 1.0
    means = chains.mean(axis=1)
    W = chains.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        raise DegenerateError("within-chain variance is zero but chain means differ")
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def gelman_rubin(traces: Sequence[ChainTrace]) -> dict[str, float]:
    """Gelman-Rubin (1992) potential scale reduction factor per parameter,
    computed on the retained draws without chain splitting."""
    if len(traces) < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    names = traces[0].names
    lengths = {t.draws.shape[0] for t in traces}
    if len(lengths) != 1:
        raise ValueError("chains must have equal retained lengths")
    stacked = np.stack([t.draws for t in traces])  # (m, n, p)
    return {name: _psrf(stacked[:, :, j]) for j, name in enumerate(names)}


# -- summaries ------------------------------------------------------------


@dataclass(frozen=True)
class ParamSummary:
    mean: float
    median: float
    q025: float
    q975: float
    r_hat: float = math.nan

    def covers(self, value: float) -> bool:
        return self.q025 <= value <= self.q975


@dataclass(frozen=True)
class PosteriorSummary:
    rows: dict[str, ParamSummary]
    n_draws: int
    n_chains: int

    def __getitem__(self, name: str) -> ParamSummary:
        return self.rows[name]

    @property
    def converged(self) -> bool:
        vals = [r.r_hat for r in self.rows.values() if not math.isnan(r.r_hat)]
        return bool(vals) and max(vals) < RHAT_THRESHOLD


def _derived_columns(names: Sequence[str], draws: np.ndarray) -> dict[str, np.ndarray]:
    idx = {n: j for j, n in enumerate(names)}
    out = {}
    for age in AGE_GROUPS:
        keys = [f"{p}_{age.label}" for p in ("beta", "gamma", "mu")]
        if all(k in idx for k in keys):
            b, g, m = (draws[..., idx[k]] for k in keys)
            with np.errstate(divide="ignore", invalid="ignore"):
                out[f"R0_{age.label}"] = b / (g + m)
    if "sigma_prev" in idx:
        out["tau_prev"] = 1.0 / draws[..., idx["sigma_prev"]] ** 2
    return out


def summarize(traces: Sequence[ChainTrace]) -> PosteriorSummary:
    """Pool retained draws across chains into medians, means, 95% intervals
    and (with two or more chains) R-hat.  R0 per age group and the
    prevalence precision are computed per draw before summarising."""
    if not traces or any(t.draws.shape[0] == 0 for t in traces):
        raise ValueError("cannot summarise an empty trace")
    names = traces[0].names
    stacked = np.stack([t.draws for t in traces])  # (m, n, p)
    columns = {name: stacked[:, :, j] for j, name in enumerate(names)}
    columns.update(_derived_columns(names, stacked))
    rows = {}
    for name, col in columns.items():
        flat = col.reshape(-1)
        q025, med, q975 = np.quantile(flat, [0.025, 0.5, 0.975])
        r_hat = math.nan
        if len(traces) >= 2 and col.shape[1] >= 2 and np.isfinite(col).all():
            try:
                r_hat = _psrf(col)
            except DegenerateError:
                r_hat = math.inf
        rows[name] = ParamSummary(float(flat.mean()), float(med), float(q025), float(q975), r_hat)
    return PosteriorSummary(rows, stacked.shape[1] * stacked.shape[0], len(traces))


# -- per-cluster fitting --------------------------------------------------


@dataclass
class ClusterFit:
    summary: PosteriorSummary
    traces: list[ChainTrace]
    converged: bool
    r_hat: dict[str, float] = field(default_factory=dict)
    start: np.ndarray | None = None


_GRID_BETA = np.logspace(-1.3, 1.7, 31)
_GRID_GAMMA = np.logspace(-2.0, 1.5, 29)
_GRID_MU = np.logspace(-4.0, 0.7, 20)


def find_mode(post: ClusterPosterior, n_polish: int = 5, n_refine: int = 4) -> np.ndarray:
    """Locate a high-posterior starting point for :func:`fit_cluster`.

    The discrete-map posterior is too rugged for optimisers started at prior
    draws, so the search is staged: for each age group a log-spaced grid
    over (beta, gamma, mu) is scored with the reporting factors profiled
    out, the best grid points are polished by Nelder-Mead, the shared
    reporting parameters are then optimised with the rates held fixed, and
    finally all coordinates are polished together, last along the
    eigenvectors of the local Hessian.  The returned point maximises the
    density on the unconstrained scale, so it lies strictly inside every
    bound.  Deterministic.
    """
    from scipy.optimize import minimize

    kinds = _transform_kinds([d.bounds for d in post.priors])
    B, G, M = (a.ravel() for a in np.meshgrid(_GRID_BETA, _GRID_GAMMA, _GRID_MU, indexing="ij"))
    theta: list[float] = []
    for k in range(len(AGE_GROUPS)):
        score = post.age_profile(k, B, G, M)
        best = None
        for idx in np.argsort(score)[::-1][:n_polish]:

            def neg(zk, k=k):
                v = float(post.age_profile(k, *(np.exp(zk[j:j + 1]) for j in range(3)))[0])
                return -v if math.isfinite(v) else 1e300

            res = minimize(neg, np.log([B[idx], G[idx], M[idx]]), method="Nelder-Mead",
                           options={"xatol": 1e-8, "fatol": 1e-8, "maxfev": 2000})
            if best is None or res.fun < best.fun:
                best = res
        theta += [float(v) for v in np.exp(best.x)]

    def neg_full(z):
        x = [_from_free(zj, kind)[0] for zj, kind in zip(z, kinds)]
        v = post(x)
        return -v if math.isfinite(v) else 1e300

    reporting0 = []
    for d in post.priors[9:]:
        lo, hi = d.bounds
        mid = 1.0 if lo < 1.0 < hi else (lo + hi) / 2 if math.isfinite(hi) else lo + 1.0
        reporting0.append(mid if d is not post.priors[12] else min(max(0.05, lo * 2), (lo + hi) / 2))
    z = np.array([_to_free(v, kind) for v, kind in zip(theta + reporting0, kinds)])
    res = minimize(lambda zr: neg_full(np.concatenate([z[:9], zr])), z[9:], method="Nelder-Mead",
                   options={"maxfev": 2000})
    z[9:] = res.x
    res = minimize(neg_full, z, method="Powell", options={"maxfev": 5000})
    if res.fun <= neg_full(z):
        z = res.x
    # the rate ridges are narrow and diagonal; polish along curvature axes
    neg_free = _neg_free_density(post, kinds)
    z = np.array([_to_free(_from_free(zj, kind)[0], kind) for zj, kind in zip(z, kinds)])
    z = np.minimum(z, _Z_CAP)
    for _ in range(n_refine):
        w, vecs = _curvature_axes(neg_free, z)
        res = minimize(neg_free, z, method="Powell",
                       options={"direc": (vecs / np.sqrt(w)).T, "maxfev": 3000, "xtol": 1e-6, "ftol": 1e-12})
        if not res.fun < neg_free(z) - 1e-6:
            break
        z = res.x
    return np.array([_from_free(zj, kind)[0] for zj, kind in zip(z, kinds)])


# logit/log coordinates beyond this are clipped before curvature refinement
_Z_CAP = 3.0


def _neg_free_density(post, kinds):
    """Negative log-density on the unconstrained scale (Jacobian included)."""

    def f(z):
        mapped = [_from_free(zj, kind) for zj, kind in zip(z, kinds)]
        v = post([m[0] for m in mapped]) + sum(m[1] for m in mapped)
        return -v if math.isfinite(v) else 1e300

    return f


def _hessian(f, z, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian."""
    z = np.asarray(z, dtype=float)
    d = len(z)
    H = np.empty((d, d))
    eye = np.eye(d) * h
    for i in range(d):
        for j in range(i, d):
            H[i, j] = H[j, i] = (
                f(z + eye[i] + eye[j]) - f(z + eye[i] - eye[j]) - f(z - eye[i] + eye[j]) + f(z - eye[i] - eye[j])
            ) / (4 * h * h)
    return H


def _curvature_axes(f, z):
    """Eigen-decomposition of the Hessian with eigenvalues floored to keep it
    positive definite."""
    H = _hessian(f, z)
    if not np.all(np.isfinite(H)):
        return np.ones(len(z)), np.eye(len(z))
    w, vecs = np.linalg.eigh(H)
    floor = max(1e-8 * np.abs(w).max(), 1e-8)
    return np.maximum(w, floor), vecs


def laplace_covariance(post: ClusterPosterior, mode) -> np.ndarray:
    """Inverse Hessian of the unconstrained log-density at ``mode``."""
    kinds = _transform_kinds([d.bounds for d in post.priors])
    z = np.array([_to_free(v, kind) for v, kind in zip(mode, kinds)])
    w, vecs = _curvature_axes(_neg_free_density(post, kinds), z)
    return (vecs / w) @ vecs.T


def _chain_job(args):
    logpost, config, index, bounds, spec, start, cov, dispersion = args
    if start is None:
        return run_chain(
            logpost, None, config, index, bounds=bounds,
            init_sampler=lambda rng: init_from_prior(spec, rng), names=PARAM_NAMES, joint_moves=JOINT_MOVES,
        )
    # chain-specific start drawn from the widened Laplace approximation
    kinds = _transform_kinds(bounds)
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng([int(config.seed), int(index), 1])
    z0 = np.array([_to_free(v, k) for v, k in zip(start, kinds)])
    z = z0 + dispersion * (chol @ rng.standard_normal(len(z0)))
    init = [_from_free(zj, k)[0] for zj, k in zip(z, kinds)]
    if not math.isfinite(logpost(init)):
        init = list(start)
    return run_chain(logpost, init, config, index, bounds=bounds, names=PARAM_NAMES, joint_moves=JOINT_MOVES,
                     proposal_cov=cov)


def fit_cluster(panel: ObservationPanel, spec: PriorSpec = PriorSpec(), config: McmcConfig = McmcConfig(),
                threads: int = 1, scale: float | None = None, init: str = "mode",
                dispersion: float = 1.0) -> ClusterFit:
    """Fit one shared parameter set to every region of ``panel``.

    ``init="mode"`` locates the posterior mode with :func:`find_mode`, takes
    the Laplace covariance there, and starts chain ``c`` from a draw of that
    Gaussian with its sd multiplied by ``dispersion``; the covariance also
    seeds the joint proposals.  ``init="prior"`` starts each chain from a
    prior draw.  Chain ``c`` is seeded by ``(config.seed, c)``, so results
    do not depend on ``threads``.
    """
    if panel.n_regions == 0:
        raise ValueError("cannot fit an empty panel")
    if init not in ("mode", "prior"):
        raise ValueError(f"unknown init strategy {init!r}")
    post = ClusterPosterior(panel, spec, scale)
    bounds = [d.bounds for d in spec.vector()]
    start = cov = None
    if init == "mode":
        start = find_mode(post)
        cov = laplace_covariance(post, start)
    jobs = [(post, config, c, bounds, spec, start, cov, dispersion) for c in range(config.n_chains)]
    if threads > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(threads, config.n_chains)) as pool:
            traces = list(pool.map(_chain_job, jobs))
    else:
        traces = [_chain_job(j) for j in jobs]
    summary = summarize(traces)
    r_hat = {n: summary[n].r_hat for n in PARAM_NAMES}
    converged = summary.converged
    if config.n_chains >= 2 and not converged:
        worst = max(r_hat, key=lambda n: r_hat[n])
        warnings.warn(
            f"R-hat >= {RHAT_THRESHOLD} (worst {worst} = {r_hat[worst]:.3f})", ConvergenceWarning, stacklevel=2
        )
    return ClusterFit(summary, traces, converged, r_hat, start)


# -- export ---------------------------------------------------------------


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "NA"
    return format(float(x), ".17g")


def write_draws_csv(path, fits: dict[int, ClusterFit]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "chain", "draw", *PARAM_NAMES])
        for cluster, fit in fits.items():
            for trace in fit.traces:
                for k, row in enumerate(trace.draws):
                    w.writerow([cluster, trace.chain_index, k, *map(_fmt, row)])


def write_summary_csv(path, fits: dict[int, ClusterFit]) -> None:
    """Table-3 layout (posterior means) extended with medians, 95% CrIs and R-hat."""
    stats = ("median", "q2.5", "q97.5", "r_hat")
    head = ["cluster", "age_group", "beta", "gamma", "mu", "R0"]
    for p in ("beta", "gamma", "mu", "R0"):
        head += [f"{p}_{s}" for s in stats]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for cluster, fit in fits.items():
            s = fit.summary
            for age in AGE_GROUPS:
                keys = [f"{p}_{age.label}" for p in ("beta", "gamma", "mu", "R0")]
                row = [cluster, age.label, *(_fmt(s[k].mean) for k in keys)]
                for k in keys:
                    r = s[k]
                    row += [_fmt(r.median), _fmt(r.q025), _fmt(r.q975), _fmt(r.r_hat)]
                w.writerow(row)


def write_diagnostics_csv(path, fits: dict[int, ClusterFit]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "parameter", "mean", "median", "q2.5", "q97.5", "r_hat", "rhat_warning"])
        for cluster, fit in fits.items():
            for name, r in fit.summary.rows.items():
                warn = "" if math.isnan(r.r_hat) else int(r.r_hat >= RHAT_THRESHOLD)
                w.writerow([cluster, name, _fmt(r.mean), _fmt(r.median), _fmt(r.q025), _fmt(r.q975),
                            _fmt(r.r_hat), warn])
            for t in fit.traces:
                w.writerow([cluster, f"acceptance_chain{t.chain_index}", _fmt(t.acceptance_rate),
                            "", "", "", "", ""])
