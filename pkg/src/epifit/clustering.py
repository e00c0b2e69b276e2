"""Regional features, K-means, K-selection criteria and the adjusted Rand index."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .model import AGE_GROUPS, DegenerateError
from .observation import ObservationPanel

MAX_ITER = 300
DEFAULT_RESTARTS = 20


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    regions: tuple[str, ...]
    features: np.ndarray
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


def standardize(x: np.ndarray) -> np.ndarray:
    """Column z-scores (population sd); constant columns become zero."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    centred = x - mean
    sd = np.sqrt((centred ** 2).mean(axis=0))
    scale = np.where(sd > 1e-12 * np.maximum(np.abs(mean), 1.0), sd, np.inf)
    return centred / scale


def extract_features(panel: ObservationPanel, standardized: bool = True) -> FeatureMatrix:
    """Time-mean incidence, prevalence and deaths per age group: nine columns."""
    if panel.n_regions == 0 or panel.n_years == 0:
        raise ValueError("cannot extract features from an empty panel")
    cols, names = [], []
    for age in AGE_GROUPS:
        k = int(age)
        for stream in ("incidence", "prevalence", "deaths"):
            cols.append(getattr(panel, stream)[:, k, :].mean(axis=1))
            names.append(f"{stream}_{age.label}")
    x = np.column_stack(cols)
    if standardized:
        x = standardize(x)
    return FeatureMatrix(panel.regions, x, tuple(names))


def as_features(points) -> FeatureMatrix:
    """Wrap raw coordinates (no standardisation) for use with the scoring functions."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return FeatureMatrix(tuple(str(i) for i in range(len(x))), x, tuple(f"x{j}" for j in range(x.shape[1])))


# -- K-means --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray  # labels in 1..k
    wcss: float
    n_iterations: int
    seed: int
    wcss_history: tuple[float, ...] = ()


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centres = [x[rng.integers(n)]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def _lloyd(x: np.ndarray, centres: np.ndarray):
    k = centres.shape[0]
    labels = None
    history = []
    it = 0
    for it in range(1, MAX_ITER + 1):
        d = _sq_dists(x, centres)
        new = d.argmin(axis=1)
        # repair empty clusters: move the centre onto the point farthest from its own centre
        for j in range(k):
            if not (new == j).any():
                own = d[np.arange(len(x)), new]
                far = int(own.argmax())
                centres[j] = x[far]
                d = _sq_dists(x, centres)
                new = d.argmin(axis=1)
        history.append(float(d[np.arange(len(x)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centres[j] = members.mean(axis=0)
        history.append(float(((x - centres[labels]) ** 2).sum()))
    wcss = float(((x - centres[labels]) ** 2).sum())
    return centres, labels, wcss, it, history


def kmeans(x: FeatureMatrix, k: int, seed: int = 0, n_restarts: int = DEFAULT_RESTARTS) -> ClusterModel:
    """Best-of-restarts Lloyd K-means with k-means++ seeding.

    Restart ``r`` draws from the generator seeded by ``(seed, r)``.
    """
    pts = x.features
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    best = None
    for r in range(n_restarts):
        rng = np.random.default_rng([int(seed), r])
        centres, labels, wcss, iters, hist = _lloyd(pts, _kmeans_pp(pts, k, rng).astype(float))
        if len(np.unique(labels)) < k:
            continue
        if best is None or wcss < best[2] - 1e-12:
            best = (centres, labels, wcss, iters, hist)
    if best is None:
        # only possible with duplicate points fewer than k distinct
        raise DegenerateError(f"could not form {k} nonempty clusters")
    centres, labels, wcss, iters, hist = best
    return ClusterModel(k, centres, labels + 1, wcss, iters, seed, tuple(hist))


def wcss_of(x: FeatureMatrix, assignments) -> float:
    pts = x.features
    labels = np.asarray(assignments)
    return float(sum(((pts[labels == c] - pts[labels == c].mean(axis=0)) ** 2).sum() for c in np.unique(labels)))


# -- criteria -------------------------------------------------------------


def silhouette_samples(x: FeatureMatrix, assignments) -> np.ndarray:
    pts = x.features
    labels = np.asarray(assignments)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least two clusters")
    dist = np.sqrt(_sq_dists(pts, pts))
    out = np.zeros(len(pts))
    for i in range(len(pts)):
        own = labels == labels[i]
        if own.sum() == 1:
            continue
        a = dist[i, own].sum() / (own.sum() - 1)
        b = min(dist[i, labels == c].mean() for c in uniq if c != labels[i])
        m = max(a, b)
        out[i] = 0.0 if m == 0 else (b - a) / m
    return out


def silhouette(x: FeatureMatrix, assignments) -> float:
    return float(silhouette_samples(x, assignments).mean())


def aic_bic(model: ClusterModel, x: FeatureMatrix) -> tuple[float, float]:
    """Information criteria of a spherical Gaussian mixture with one shared
    variance WCSS / (n d) and ``k d + 1`` free parameters."""
    n, d = x.n, x.d
    if model.wcss <= 0:
        raise DegenerateError("AIC/BIC undefined for zero WCSS")
    var = model.wcss / (n * d)
    loglik = -(n * d / 2.0) * (math.log(2 * math.pi * var) + 1.0)
    p = model.k * d + 1
    return -2 * loglik + 2 * p, -2 * loglik + p * math.log(n)


@dataclass(frozen=True)
class KRow:
    k: int
    wcss: float
    silhouette: float
    aic: float
    bic: float


@dataclass(frozen=True)
class KSelectionReport:
    rows: tuple[KRow, ...]
    recommended_k: int
    rationale: str
    models: dict

    def row(self, k: int) -> KRow:
        return next(r for r in self.rows if r.k == k)

    def best_by(self, criterion: str) -> int:
        if criterion == "silhouette":
            return max(self.rows, key=lambda r: r.silhouette).k
        if criterion in ("aic", "bic"):
            return min(self.rows, key=lambda r: getattr(r, criterion)).k
        raise ValueError(criterion)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["K", "silhouette", "AIC", "BIC", "WCSS"])
            for r in self.rows:
                w.writerow([r.k, *(format(v, ".17g") for v in (r.silhouette, r.aic, r.bic, r.wcss))])


def elbow_k(ks: Sequence[int], wcss: Sequence[float]) -> int:
    """K with the largest second difference of WCSS over interior points."""
    best, best_val = None, -math.inf
    for j in range(1, len(ks) - 1):
        val = wcss[j - 1] - 2 * wcss[j] + wcss[j + 1]
        if val > best_val:
            best, best_val = ks[j], val
    return best


def select_k(x: FeatureMatrix, k_range: Sequence[int] = range(2, 7), seed: int = 0,
             n_restarts: int = DEFAULT_RESTARTS) -> KSelectionReport:
    """Score each candidate K; the recommendation is the WCSS elbow and is
    advisory only."""
    ks = sorted(k_range)
    if not ks or ks[0] < 2 or ks[-1] > x.n - 1:
        raise ValueError(f"k_range must lie within [2, {x.n - 1}]")
    models = {k: kmeans(x, k, seed, n_restarts) for k in ks}
    rows = []
    for k in ks:
        m = models[k]
        aic, bic = aic_bic(m, x)
        rows.append(KRow(k, m.wcss, silhouette(x, m.assignments), aic, bic))
    # neighbours on both sides so every K in the range can be an elbow
    ext_k = [ks[0] - 1] + ks + ([ks[-1] + 1] if ks[-1] + 1 <= x.n else [])
    ext_w = [kmeans(x, ks[0] - 1, seed, n_restarts).wcss] + [models[k].wcss for k in ks]
    if len(ext_k) > len(ext_w):
        ext_w.append(kmeans(x, ext_k[-1], seed, n_restarts).wcss)
    rec = elbow_k(ext_k, ext_w)
    report_tmp = KSelectionReport(tuple(rows), rec, "", models)
    rationale = (
        f"elbow (max WCSS second difference) at K={rec}; "
        f"silhouette prefers K={report_tmp.best_by('silhouette')}, "
        f"AIC K={report_tmp.best_by('aic')}, BIC K={report_tmp.best_by('bic')}. "
        "Advisory only: confirm or override with --k."
    )
    return KSelectionReport(tuple(rows), rec, rationale, models)


def write_assignments(path, regions: Sequence[str], labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "cluster"])
        for region, c in zip(regions, labels):
            w.writerow([region, int(c)])


# -- agreement ------------------------------------------------------------


def contingency(labels_a, labels_b) -> np.ndarray:
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((len(ua), len(ub)), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Hubert-Arabie adjusted Rand index from the pair-counting contingency table."""
    if len(labels_a) != len(labels_b):
        raise ValueError("label vectors differ in length")
    n = len(labels_a)
    if n < 2:
        raise ValueError("need at least two items")
    table = contingency(labels_a, labels_b)
    index = sum(comb(int(v), 2) for v in table.flat)
    sum_a = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sum_b = sum(comb(int(v), 2) for v in table.sum(axis=0))
    expected = sum_a * sum_b / comb(n, 2)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        same = table.shape[0] == table.shape[1] and np.count_nonzero(table) == table.shape[0]
        return 1.0 if same else 0.0
    return float((index - expected) / (max_index - expected))
