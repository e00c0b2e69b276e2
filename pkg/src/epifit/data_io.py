"""Panel ingestion from CSV, population scaling and synthetic panels."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .model import AGE_GROUPS, AgeGroup, SirdParams, default_init, simulate_trajectory
from .observation import DEFAULT_SCALE, ObservationPanel

log = logging.getLogger(__name__)

COLUMNS = ("region", "year", "age_group", "incidence", "prevalence", "deaths")
STREAMS = ("incidence", "prevalence", "deaths")


class SchemaError(ValueError):
    pass


class PanelValidationError(ValueError):
    """Raised with every offending row collected in ``problems``."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid panel:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RawRecord:
    region: str
    year: int
    age_group: AgeGroup
    incidence: float
    prevalence: float
    deaths: float


def _parse_row(lineno: int, row: Mapping[str, str], problems: list[str]) -> RawRecord | None:
    where = f"line {lineno}"
    bad = []
    region = (row.get("region") or "").strip()
    if not region:
        bad.append("empty region")
    try:
        year = int(float(row["year"]))
        if not 1800 <= year <= 2200:
            bad.append(f"year {year} outside [1800, 2200]")
    except (TypeError, ValueError):
        year = None
        bad.append(f"unparseable year {row.get('year')!r}")
    try:
        age = AgeGroup.parse(row.get("age_group") or "")
    except ValueError:
        age = None
        bad.append(f"unknown age group {row.get('age_group')!r}")
    values = {}
    for name in STREAMS:
        try:
            v = float(row[name])
        except (TypeError, ValueError):
            bad.append(f"unparseable {name} {row.get(name)!r}")
            continue
        if not math.isfinite(v):
            bad.append(f"non-finite {name}")
        elif v < 0:
            bad.append(f"negative {name} {v}")
        values[name] = v
    if bad:
        problems.append(f"{where} ({region or '?'}): " + "; ".join(bad))
        return None
    return RawRecord(region, year, age, values["incidence"], values["prevalence"], values["deaths"])


def load_csv(path, per: float = DEFAULT_SCALE) -> ObservationPanel:
    """Read a panel with header ``region,year,age_group,incidence,prevalence,deaths``.

    Counts are taken to be per ``per`` persons and rounded to the nearest
    integer.  Prevalence values above 1 are read as per-100,000 and divided
    down to a fraction.  Every problem in the file is reported at once.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in COLUMNS if c not in header]
        extra = [c for c in header if c not in COLUMNS]
        if missing or extra:
            raise SchemaError(
                f"{path}: expected columns {','.join(COLUMNS)}; missing {missing or 'none'}, unexpected {extra or 'none'}"
            )
        reader.fieldnames = header
        problems: list[str] = []
        records: list[tuple[int, RawRecord]] = []
        for lineno, row in enumerate(reader, start=2):
            rec = _parse_row(lineno, row, problems)
            if rec is not None:
                records.append((lineno, rec))

    cells: dict[tuple[str, int, AgeGroup], RawRecord] = {}
    regions: list[str] = []
    for lineno, rec in records:
        key = (rec.region, rec.year, rec.age_group)
        if key in cells:
            problems.append(f"line {lineno} ({rec.region}): duplicate cell year {rec.year}, {rec.age_group.label}")
            continue
        cells[key] = rec
        if rec.region not in regions:
            regions.append(rec.region)
    if not cells and not problems:
        problems.append("no data rows")
    years = sorted({y for _, y, _ in cells})
    if years:
        expected = list(range(years[0], years[-1] + 1))
        gaps = sorted(set(expected) - set(years))
        if gaps:
            problems.append(f"year gaps: {gaps}")
        for region in regions:
            for y in expected:
                for age in AGE_GROUPS:
                    if (region, y, age) not in cells and y not in gaps:
                        problems.append(f"missing cell: {region}, {y}, {age.label}")
    if problems:
        raise PanelValidationError(problems)

    shape = (len(regions), 3, len(years))
    arrays = {name: np.zeros(shape) for name in STREAMS}
    y0 = years[0]
    n_rescaled = 0
    for (region, y, age), rec in cells.items():
        idx = (regions.index(region), int(age), y - y0)
        arrays["incidence"][idx] = round(rec.incidence)
        arrays["deaths"][idx] = round(rec.deaths)
        prev = rec.prevalence
        if prev > 1.0:
            prev /= DEFAULT_SCALE
            n_rescaled += 1
        arrays["prevalence"][idx] = prev
    if n_rescaled:
        log.info("%d prevalence values > 1 read as per-100,000 and converted to fractions", n_rescaled)
    return ObservationPanel(tuple(regions), y0, arrays["incidence"], arrays["prevalence"], arrays["deaths"], per)


def write_csv(panel: ObservationPanel, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for m, region in enumerate(panel.regions):
            for t, year in enumerate(panel.years):
                for age in AGE_GROUPS:
                    k = int(age)
                    w.writerow([
                        region, int(year), age.label,
                        format(panel.incidence[m, k, t], ".17g"),
                        format(panel.prevalence[m, k, t], ".17g"),
                        format(panel.deaths[m, k, t], ".17g"),
                    ])


def _snap(x: np.ndarray) -> np.ndarray:
    # undo the few-ulp error of a rescale whose exact result is integral
    r = np.rint(x)
    return np.where(np.abs(x - r) <= 1e-12 * np.maximum(np.abs(r), 1.0), r, x)


def scale_population(panel: ObservationPanel, p: float = DEFAULT_SCALE) -> ObservationPanel:
    """Re-express the count streams per ``p`` persons."""
    if not p > 0:
        raise ValueError(f"population scale must be positive, got {p}")
    if p == panel.per:
        return panel
    inc = _snap(panel.incidence * p / panel.per)
    deaths = _snap(panel.deaths * p / panel.per)
    return ObservationPanel(panel.regions, panel.start_year, inc, panel.prevalence, deaths, p, panel.clusters)


# -- labels ---------------------------------------------------------------


def write_labels(path, regions: Sequence[str], labels: Sequence[int], column: str = "true_cluster") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", column])
        for region, c in zip(regions, labels):
            w.writerow([region, int(c)])


def read_labels(path) -> dict[str, int]:
    """Read a two-column ``region,<label>`` file (assignments or truth)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 2 or rows[0][0].strip() != "region":
        raise SchemaError(f"{path}: expected header 'region,<label column>'")
    out = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            out[row[0].strip()] = int(row[1])
        except (IndexError, ValueError):
            raise SchemaError(f"{path}: bad label on line {lineno}") from None
    return out


# -- synthetic study ------------------------------------------------------

_TABLE4 = {
    (1, AgeGroup.ADULT): (6.5, 5.5, 0.1),
    (1, AgeGroup.JUVENILE): (7.5, 5.5, 0.5),
    (1, AgeGroup.OLD): (5.5, 3.1, 0.8),
    (2, AgeGroup.ADULT): (2.4, 0.6, 0.005),
    (2, AgeGroup.JUVENILE): (13.0, 9.1, 1.5),
    (2, AgeGroup.OLD): (13.0, 8.05, 2.6),
    (3, AgeGroup.ADULT): (4.5, 2.9, 0.03),
    (3, AgeGroup.JUVENILE): (8.9, 7.7, 0.5),
    (3, AgeGroup.OLD): (6.6, 5.5, 0.09),
}


def true_params_table() -> dict[tuple[int, AgeGroup], SirdParams]:
    """Ground-truth rates of the three-cluster simulation study."""
    return {key: SirdParams(*v) for key, v in _TABLE4.items()}


PARAM_COLUMNS = ("cluster", "age_group", "beta", "gamma", "mu")


def write_params_csv(path, table: Mapping[tuple[int, AgeGroup], SirdParams]) -> None:
    """Write a ``cluster,age_group,beta,gamma,mu`` parameter table."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARAM_COLUMNS)
        for (c, age), p in sorted(table.items()):
            w.writerow([c, age.label, *(format(v, ".17g") for v in (p.beta, p.gamma, p.mu))])


def read_params_csv(path) -> dict[tuple[int, AgeGroup], SirdParams]:
    """Read a parameter table; extra columns (such as an R0 column) are ignored."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PARAM_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        table, problems = {}, []
        for lineno, row in enumerate(reader, start=2):
            try:
                key = (int(row["cluster"]), AgeGroup.parse(row["age_group"]))
                table[key] = SirdParams(*(float(row[c]) for c in ("beta", "gamma", "mu")))
            except (TypeError, ValueError) as exc:
                problems.append(f"line {lineno}: {exc}")
    if problems:
        raise PanelValidationError(problems)
    if not table:
        raise SchemaError(f"{path}: no parameter rows")
    return table


@dataclass(frozen=True)
class SyntheticSpec:
    n_states: int = 10
    t_years: int = 32
    n_clusters: int = 3
    true_params: Mapping[tuple[int, AgeGroup], SirdParams] | None = None
    seed: int = 0
    cluster_assignment: Sequence[int] | None = None
    start_year: int = 1990
    scale: float = DEFAULT_SCALE
    prevalence_sd: float = 0.01
    # streams that receive noise; the others are emitted at their expectation
    noisy: frozenset = field(default_factory=lambda: frozenset(STREAMS))
    # Poisson(cumulative death fraction) without scaling, instead of
    # Poisson(per-step death flow x scale)
    strict_literal_deaths: bool = False

    def __post_init__(self):
        if self.n_states < 1 or self.t_years < 1 or self.n_clusters < 1:
            raise ValueError("n_states, t_years and n_clusters must be >= 1")
        if self.n_clusters > self.n_states:
            raise ValueError("more clusters than states")
        if self.cluster_assignment is not None:
            labels = list(self.cluster_assignment)
            if len(labels) != self.n_states or not set(labels) <= set(range(1, self.n_clusters + 1)):
                raise ValueError("cluster_assignment must give a label in 1..n_clusters per state")
        unknown = set(self.noisy) - set(STREAMS)
        if unknown:
            raise ValueError(f"unknown noisy streams {sorted(unknown)}")

    def params(self) -> dict[tuple[int, AgeGroup], SirdParams]:
        table = true_params_table() if self.true_params is None else dict(self.true_params)
        need = {(c, a) for c in range(1, self.n_clusters + 1) for a in AGE_GROUPS}
        if not need <= set(table):
            raise ValueError("true_params must cover every (cluster, age group)")
        return table


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()):
    """Simulate a noisy panel.

    Returns ``(panel, true_labels, true_params)``; ``true_labels[m]`` is the
    1-based cluster of region ``m``.
    """
    rng = np.random.default_rng(spec.seed)
    table = spec.params()
    K, n = spec.n_clusters, spec.n_states
    if spec.cluster_assignment is not None:
        labels = np.asarray(spec.cluster_assignment, dtype=int)
    else:
        base = np.concatenate([np.arange(1, K + 1), rng.integers(1, K + 1, size=n - K)])
        labels = rng.permutation(base)

    trajs = {
        key: simulate_trajectory(default_init(), p, spec.t_years, spec.start_year) for key, p in table.items()
    }
    shape = (n, 3, spec.t_years)
    inc = np.empty(shape)
    prev = np.empty(shape)
    deaths = np.empty(shape)
    for m in range(n):
        for age in AGE_GROUPS:
            k = int(age)
            traj = trajs[(int(labels[m]), age)]
            lam_inc = traj.new_inf * spec.scale
            if spec.strict_literal_deaths:
                lam_death = traj.d[:-1]
            else:
                lam_death = traj.new_death * spec.scale
            i_t = traj.i[:-1]
            inc[m, k] = rng.poisson(lam_inc) if "incidence" in spec.noisy else np.rint(lam_inc)
            if "prevalence" in spec.noisy:
                prev[m, k] = np.maximum(rng.normal(i_t, spec.prevalence_sd), 0.0)
            else:
                prev[m, k] = i_t
            deaths[m, k] = rng.poisson(lam_death) if "deaths" in spec.noisy else np.rint(lam_death)
    regions = tuple(f"state_{m + 1:02d}" for m in range(n))
    panel = ObservationPanel(regions, spec.start_year, inc, prev, deaths, spec.scale)
    return panel, labels, table
