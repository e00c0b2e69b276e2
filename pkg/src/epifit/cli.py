"""Command-line entry point: ``epifit {simulate,cluster,fit,validate,report}``.

Option precedence is flag > ``--config`` file > ``EPIFIT_SEED`` (seed only) >
built-in default.  Every command echoes its fully resolved options to
``run_config.txt`` in the output directory; passing that file back through
``--config`` repeats the run.

Exit codes: 0 success, 2 input error, 3 missing K decision, 4 inference failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .clustering import adjusted_rand_index, extract_features, kmeans, select_k, write_assignments
from .data_io import (
    PanelValidationError, SchemaError, SyntheticSpec, generate_synthetic, load_csv, read_labels, read_params_csv,
    true_params_table, write_csv, write_labels, write_params_csv,
)
from .inference import (
    RHAT_THRESHOLD, McmcConfig, SamplerInitError, write_diagnostics_csv, write_draws_csv, write_summary_csv,
)
from .model import AGE_GROUPS, CompartmentState, DegenerateError, SirdParams, default_init, simulate_trajectory
from .model import write_trajectory_rows
from .observation import PriorSpec, load_prior_spec
from .pipeline import fit_clusters, run_simulation_study

log = logging.getLogger("epifit")

EXIT_OK, EXIT_INPUT, EXIT_NEED_K, EXIT_INFERENCE = 0, 2, 3, 4
CONFIG_NAME = "run_config.txt"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _k_range(text: str) -> range:
    try:
        a, b = (int(x) for x in str(text).split(":"))
    except ValueError:
        raise ValueError(f"--k-range expects A:B, got {text!r}") from None
    if a > b:
        raise ValueError(f"--k-range {text}: A must not exceed B")
    return range(a, b + 1)


# name -> (converter, default, help); every key is valid in a config file
OPTIONS = {
    "input": (str, None, "panel CSV (region,year,age_group,incidence,prevalence,deaths)"),
    "output_dir": (str, ".", "directory for all outputs"),
    "seed": (int, None, "random seed (falls back to $EPIFIT_SEED, then 0)"),
    "k": (int, None, "number of clusters"),
    "k_range": (str, "2:6", "candidate K values as A:B"),
    "chains": (int, None, "MCMC chains"),
    "adapt": (int, None, "adaptation iterations"),
    "burnin": (int, None, "burn-in iterations"),
    "samples": (int, None, "sampling iterations"),
    "thin": (int, None, "thinning interval"),
    "threads": (int, 1, "worker processes for MCMC chains"),
    "fast": (_bool, False, "short MCMC profile: 2 chains, 500/500/2000, thin 1"),
    "config": (str, None, "flat key = value file of option defaults"),
    "strict_literal_noise": (_bool, False, "synthetic deaths drawn as Poisson(cumulative dead fraction), unscaled"),
    "params": (str, None, "parameter CSV with cluster,age_group,beta,gamma,mu"),
    "years": (int, 32, "number of yearly steps"),
    "beta": (float, None, "single-trajectory transmission rate"),
    "gamma": (float, None, "single-trajectory recovery rate"),
    "mu": (float, None, "single-trajectory mortality rate"),
    "init": (str, None, "initial state s,i,r,d (default 0.97,0.02,0.01,0)"),
    "synthetic": (_bool, False, "also write a synthetic panel and its true labels"),
    "n_states": (int, 10, "regions in a synthetic panel"),
    "assignments": (str, None, "region,cluster CSV (default <output-dir>/assignments.csv)"),
    "truth": (str, None, "region,true_cluster CSV used to score assignments"),
    "prior_config": (str, None, "prior specification file"),
    "restarts": (int, 20, "k-means restarts"),
    "n_seeds": (int, 1, "consecutive seeds to run in validate"),
}

COMMAND_OPTIONS = {
    "simulate": ("params", "years", "beta", "gamma", "mu", "init", "synthetic", "n_states", "strict_literal_noise"),
    "cluster": ("input", "k", "k_range", "truth", "restarts"),
    "fit": ("input", "assignments", "prior_config", "chains", "adapt", "burnin", "samples", "thin", "threads", "fast"),
    "validate": ("k", "k_range", "n_states", "years", "strict_literal_noise", "prior_config", "chains", "adapt",
                 "burnin", "samples", "thin", "threads", "fast", "restarts", "n_seeds"),
    "report": (),
}
COMMON = ("output_dir", "seed", "config")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epifit", description="Cluster-based Bayesian SIRD modelling.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "forward-simulate SIRD trajectories (and optionally a synthetic panel)",
        "cluster": "score K and assign regions to clusters",
        "fit": "fit each cluster by MCMC",
        "validate": "end-to-end simulation study against known truth",
        "report": "merge cluster and fit outputs into one summary",
    }
    for cmd, names in COMMAND_OPTIONS.items():
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd])
        for name in COMMON + names:
            conv, default, text = OPTIONS[name]
            flag = "--" + name.replace("_", "-")
            if conv is _bool:
                p.add_argument(flag, action="store_const", const=True, default=argparse.SUPPRESS, help=text)
            else:
                if default is not None:
                    text = f"{text} (default {default})"
                p.add_argument(flag, type=conv, default=argparse.SUPPRESS, help=text)
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTIONS or key == "config":
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: unknown option {key!r}")
        try:
            out[key] = OPTIONS[key][0](value)
        except ValueError as exc:
            raise CliError(EXIT_INPUT, f"{path}:{lineno}: {exc}") from None
    return out


def resolve(command: str, flags: dict, env=None) -> dict:
    """Merge defaults, config file, environment and flags for one command."""
    env = os.environ if env is None else env
    keys = COMMON + COMMAND_OPTIONS[command]
    opts = {k: OPTIONS[k][1] for k in keys if k != "config"}
    file_opts = read_config_file(flags["config"]) if flags.get("config") else {}
    # keys meant for other commands are tolerated so one file can serve several
    opts.update({k: v for k, v in file_opts.items() if k in opts})
    opts.update({k: v for k, v in flags.items() if k in opts})
    if opts["seed"] is None:
        text = env.get("EPIFIT_SEED")
        try:
            opts["seed"] = int(text) if text not in (None, "") else 0
        except ValueError:
            raise CliError(EXIT_INPUT, f"EPIFIT_SEED is not an integer: {text!r}") from None
    if opts["seed"] < 0:
        raise CliError(EXIT_INPUT, "--seed must be nonnegative")
    return opts


def write_run_config(command: str, opts: dict, out: Path) -> None:
    lines = [f"# epifit {command}: resolved options"]
    lines += [f"{k} = {v}" for k, v in sorted(opts.items()) if v is not None]
    (out / CONFIG_NAME).write_text("\n".join(lines) + "\n")


def mcmc_config(opts: dict) -> McmcConfig:
    base = McmcConfig.fast(opts["seed"]) if opts["fast"] else McmcConfig(seed=opts["seed"])
    over = {field: opts[key] for key, field in (("chains", "n_chains"), ("adapt", "adapt_iters"),
                                                ("burnin", "burnin_iters"), ("samples", "sample_iters"),
                                                ("thin", "thin")) if opts[key] is not None}
    try:
        return replace(base, **over)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None


def _prior(opts: dict) -> PriorSpec:
    return load_prior_spec(opts["prior_config"]) if opts.get("prior_config") else PriorSpec()


def _load_panel(path):
    if not path:
        raise CliError(EXIT_INPUT, "--input is required")
    return load_csv(path)


# -- commands -------------------------------------------------------------


def _parse_init(text) -> CompartmentState:
    if text is None:
        return default_init()
    try:
        vals = [float(x) for x in str(text).split(",")]
    except ValueError:
        raise ValueError(f"--init expects four numbers, got {text!r}") from None
    if len(vals) != 4:
        raise ValueError(f"--init expects four numbers, got {text!r}")
    state = CompartmentState(*vals)
    state.check()
    return state


def cmd_simulate(opts: dict, out: Path) -> int:
    single = [opts[k] for k in ("beta", "gamma", "mu")]
    if opts["params"] and any(v is not None for v in single):
        raise CliError(EXIT_INPUT, "give either --params or --beta/--gamma/--mu, not both")
    if any(v is not None for v in single):
        if any(v is None for v in single):
            raise CliError(EXIT_INPUT, "--beta, --gamma and --mu must be given together")
        table = {(1, a): SirdParams(*single) for a in AGE_GROUPS}
    elif opts["params"]:
        table = read_params_csv(opts["params"])
    else:
        table = true_params_table()
    if opts["years"] < 1:
        raise CliError(EXIT_INPUT, "--years must be >= 1")
    init = _parse_init(opts["init"])
    with open(out / "trajectories_long.csv", "w", newline="") as long_fh:
        long_w = csv.writer(long_fh, lineterminator="\n")
        first = True
        for (c, age), p in sorted(table.items()):
            traj = simulate_trajectory(init, p, opts["years"])
            traj.to_csv(out / f"trajectory_cluster{c}_{age.label}.csv")
            if first:
                long_w.writerow(["cluster", "age_group", "year", "s", "i", "r", "d",
                                 "new_inf", "new_rec", "new_death", "clamped"])
                first = False
            write_trajectory_rows(long_w, traj, header=False, prefix=(str(c), age.label))
    write_params_csv(out / "params.csv", table)
    n_files = len(table)
    if opts["synthetic"]:
        clusters = sorted({c for c, _ in table})
        if clusters != list(range(1, len(clusters) + 1)):
            raise CliError(EXIT_INPUT, "synthetic panels need clusters numbered 1..K")
        spec = SyntheticSpec(n_states=opts["n_states"], t_years=opts["years"], n_clusters=len(clusters),
                             true_params=table, seed=opts["seed"],
                             strict_literal_deaths=opts["strict_literal_noise"])
        panel, labels, _ = generate_synthetic(spec)
        write_csv(panel, out / "panel.csv")
        write_labels(out / "true_labels.csv", panel.regions, labels)
        print(f"wrote synthetic panel of {panel.n_regions} regions to {out / 'panel.csv'}")
    print(f"wrote {n_files} trajectory files and trajectories_long.csv to {out}")
    return EXIT_OK


def cmd_cluster(opts: dict, out: Path) -> int:
    panel = _load_panel(opts["input"])
    feats = extract_features(panel)
    try:
        ks = _k_range(opts["k_range"])
        report = select_k(feats, ks, opts["seed"], opts["restarts"])
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    report.to_csv(out / "k_selection.csv")
    print(f"{'K':>3} {'silhouette':>11} {'AIC':>12} {'BIC':>12} {'WCSS':>12}")
    for r in report.rows:
        print(f"{r.k:>3} {r.silhouette:11.4f} {r.aic:12.3f} {r.bic:12.3f} {r.wcss:12.4f}")
    print(f"recommended K = {report.recommended_k}: {report.rationale}")
    if opts["k"] is None:
        print("no --k given: rerun with --k to write cluster assignments", file=sys.stderr)
        return EXIT_NEED_K
    k = opts["k"]
    if not 1 <= k <= panel.n_regions:
        raise CliError(EXIT_INPUT, f"--k {k} outside [1, {panel.n_regions}]")
    model = report.models.get(k) or kmeans(feats, k, opts["seed"], opts["restarts"])
    write_assignments(out / "assignments.csv", panel.regions, model.assignments)
    print(f"wrote assignments for K={k} (WCSS {model.wcss:.4f})")
    if opts["truth"]:
        truth = read_labels(opts["truth"])
        missing = [r for r in panel.regions if r not in truth]
        if missing:
            raise CliError(EXIT_INPUT, f"{opts['truth']}: no label for {missing[0]}")
        ari = adjusted_rand_index([truth[r] for r in panel.regions], model.assignments)
        (out / "ari.txt").write_text(f"ARI = {ari:.17g}\n")
        print(f"ARI against {opts['truth']}: {ari:.4f}")
    return EXIT_OK


def cmd_fit(opts: dict, out: Path) -> int:
    panel = _load_panel(opts["input"])
    path = Path(opts["assignments"]) if opts["assignments"] else out / "assignments.csv"
    if not path.exists():
        raise CliError(EXIT_INPUT, f"assignments file not found: {path} (run 'epifit cluster --k K' first)")
    labels = read_labels(path)
    missing = [r for r in panel.regions if r not in labels]
    if missing:
        raise CliError(EXIT_INPUT, f"{path}: no cluster for region {missing[0]}")
    config = mcmc_config(opts)
    panel = panel.with_clusters([labels[r] for r in panel.regions])
    fits = fit_clusters(panel, _prior(opts), config, opts["threads"])
    write_summary_csv(out / "posterior_summary.csv", fits)
    write_draws_csv(out / "draws.csv", fits)
    write_diagnostics_csv(out / "diagnostics.csv", fits)
    for cluster, fit in fits.items():
        finite = {n: v for n, v in fit.r_hat.items() if not math.isnan(v)}
        if finite and max(finite.values()) >= RHAT_THRESHOLD:
            worst = max(finite, key=finite.get)
            print(f"warning: cluster {cluster} R-hat >= {RHAT_THRESHOLD} ({worst} = {finite[worst]:.3f})",
                  file=sys.stderr)
    print(f"fitted {len(fits)} clusters; wrote posterior_summary.csv, draws.csv, diagnostics.csv to {out}")
    return EXIT_OK


def cmd_validate(opts: dict, out: Path) -> int:
    config = mcmc_config(opts)
    try:
        ks = _k_range(opts["k_range"])
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None
    if opts["n_seeds"] < 1:
        raise CliError(EXIT_INPUT, "--n-seeds must be >= 1")
    rows = []
    for seed in range(opts["seed"], opts["seed"] + opts["n_seeds"]):
        dest = out if opts["n_seeds"] == 1 else out / f"seed_{seed}"
        dest.mkdir(parents=True, exist_ok=True)
        synth = SyntheticSpec(n_states=opts["n_states"], t_years=opts["years"], seed=seed,
                              strict_literal_deaths=opts["strict_literal_noise"])
        result = run_simulation_study(seed, replace(config, seed=seed), synth, opts["k"], ks, _prior(opts),
                                      opts["threads"], opts["restarts"])
        result.write_table(dest / "validation_table.csv")
        (dest / "validation_summary.txt").write_text(result.summary_text())
        write_assignments(dest / "assignments.csv", result.panel.regions, result.est_labels)
        if result.k_report is not None:
            result.k_report.to_csv(dest / "k_selection.csv")
        rows.append((seed, result.ari, result.beta_coverage, result.rhat_pass_fraction()))
        print(f"seed {seed}: ARI {result.ari:.4f}, beta covered {result.beta_coverage}/9, "
              f"R-hat < 1.1 for {result.rhat_pass_fraction():.1%} of parameters")
    with open(out / "validation_seeds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "ari", "beta_covered", "rhat_pass_fraction"])
        for seed, ari, cov, frac in rows:
            w.writerow([seed, format(ari, ".17g"), cov, "NA" if math.isnan(frac) else format(frac, ".17g")])
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(opts: dict, out: Path) -> int:
    need = [out / "assignments.csv", out / "posterior_summary.csv"]
    for path in need:
        if not path.exists():
            raise CliError(EXIT_INPUT, f"missing input for report: {path}")
    labels = read_labels(need[0])
    summary = _read_csv(need[1])
    members: dict[int, list[str]] = {}
    for region, c in labels.items():
        members.setdefault(c, []).append(region)
    lines = ["epifit report", "", "cluster membership:"]
    for c in sorted(members):
        lines.append(f"  cluster {c} ({len(members[c])} regions): {', '.join(members[c])}")
    kpath = out / "k_selection.csv"
    if kpath.exists():
        lines += ["", "K selection:", f"  {'K':>3} {'silhouette':>11} {'AIC':>12} {'BIC':>12} {'WCSS':>12}"]
        for r in _read_csv(kpath):
            lines.append(f"  {int(r['K']):>3} {float(r['silhouette']):11.4f} {float(r['AIC']):12.3f} "
                         f"{float(r['BIC']):12.3f} {float(r['WCSS']):12.4f}")
    lines += ["", "posterior means (R0 > 1 marked *):",
              f"  {'cluster':>7} {'age':>9} {'beta':>9} {'gamma':>9} {'mu':>9} {'R0':>8}  R0 95% CrI"]
    bundle = []
    for r in summary:
        r0 = float(r["R0"])
        flag = "*" if r0 > 1 else " "
        lines.append(f"  {r['cluster']:>7} {r['age_group']:>9} {float(r['beta']):9.4f} {float(r['gamma']):9.4f} "
                     f"{float(r['mu']):9.5f} {r0:8.3f}{flag} [{float(r['R0_q2.5']):.3f}, {float(r['R0_q97.5']):.3f}]")
        bundle.append([r["cluster"], r["age_group"], len(members.get(int(r["cluster"]), [])), r["beta"], r["gamma"],
                       r["mu"], r["R0"], r["R0_q2.5"], r["R0_q97.5"], int(r0 > 1)])
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "age_group", "n_regions", "beta", "gamma", "mu", "R0", "R0_q2.5", "R0_q97.5",
                    "R0_above_1"])
        w.writerows(bundle)
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "cluster": cmd_cluster, "fit": cmd_fit, "validate": cmd_validate,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    try:
        opts = resolve(args.command, flags)
        out = Path(opts["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        write_run_config(args.command, opts, out)
        return COMMANDS[args.command](opts, out)
    except CliError as exc:
        print(f"epifit: {exc}", file=sys.stderr)
        return exc.code
    except SamplerInitError as exc:
        print(f"epifit: inference failed: {exc}", file=sys.stderr)
        return EXIT_INFERENCE
    except (SchemaError, PanelValidationError, FileNotFoundError, DegenerateError, ValueError) as exc:
        print(f"epifit: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
