import csv
import subprocess
import sys

import numpy as np
import pytest

from epifit import cli
from epifit.inference import SamplerInitError

FAST_FIT = ["--fast", "--adapt", "100", "--burnin", "50", "--samples", "100"]


def run(*args):
    return cli.main([str(a) for a in args])


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def synthetic_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--synthetic", "--seed", 4, "--output-dir", out) == 0
    return out


def test_simulate_table4_files(synthetic_dir):
    files = sorted(p.name for p in synthetic_dir.glob("trajectory_cluster*.csv"))
    assert len(files) == 9
    long_rows = read_rows(synthetic_dir / "trajectories_long.csv")
    assert len(long_rows) == 9 * 33
    assert (synthetic_dir / "panel.csv").exists() and (synthetic_dir / "true_labels.csv").exists()


def test_simulate_peak_order(synthetic_dir):
    def peak(name):
        i = np.array([float(r["i"]) for r in read_rows(synthetic_dir / name)])
        return int(np.argmax(i)), float(i.max())

    t2, h2 = peak("trajectory_cluster2_juvenile.csv")
    t3, h3 = peak("trajectory_cluster3_juvenile.csv")
    assert t2 <= t3 and h2 > h3


def test_simulate_from_params_file(tmp_path):
    params = tmp_path / "p.csv"
    params.write_text("cluster,age_group,beta,gamma,mu\n1,adult,0,1,0.1\n")
    assert run("simulate", "--params", params, "--years", 10, "--output-dir", tmp_path / "o") == 0
    rows = read_rows(tmp_path / "o" / "trajectory_cluster1_adult.csv")
    assert len(rows) == 11
    # beta = 0 means no new infections
    assert all(float(r["new_inf"]) == 0 for r in rows[:-1])


def test_simulate_invalid_params(tmp_path, capsys):
    assert run("simulate", "--beta", -1, "--gamma", 1, "--mu", 0, "--output-dir", tmp_path) == 2
    assert run("simulate", "--beta", 1, "--output-dir", tmp_path) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("cluster,age,beta\n")
    assert run("simulate", "--params", bad, "--output-dir", tmp_path) == 2
    assert run("simulate", "--init", "0.5,0.5", "--output-dir", tmp_path) == 2


def test_cluster_needs_k(synthetic_dir, tmp_path):
    out = tmp_path / "c"
    assert run("cluster", "--input", synthetic_dir / "panel.csv", "--output-dir", out) == 3
    assert len(read_rows(out / "k_selection.csv")) == 5
    assert not (out / "assignments.csv").exists()


def test_cluster_with_k_scores_truth(synthetic_dir, tmp_path):
    out = tmp_path / "c"
    code = run("cluster", "--input", synthetic_dir / "panel.csv", "--output-dir", out, "--k", 3,
               "--k-range", "2:4", "--truth", synthetic_dir / "true_labels.csv")
    assert code == 0
    assert len(read_rows(out / "k_selection.csv")) == 3
    assert len(read_rows(out / "assignments.csv")) == 10
    ari = float((out / "ari.txt").read_text().split("=")[1])
    assert ari >= 0.5


def test_cluster_input_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("region,year\nA,2000\n")
    assert run("cluster", "--input", bad, "--output-dir", tmp_path, "--k", 2) == 2
    assert run("cluster", "--input", tmp_path / "missing.csv", "--output-dir", tmp_path) == 2
    assert run("cluster", "--output-dir", tmp_path) == 2


def test_cluster_fit_report_flow(synthetic_dir, tmp_path):
    out = tmp_path / "flow"
    panel = synthetic_dir / "panel.csv"
    assert run("report", "--output-dir", out) == 2
    assert run("fit", "--input", panel, "--output-dir", out, *FAST_FIT) == 2
    assert run("cluster", "--input", panel, "--output-dir", out, "--k", 3) == 0
    assert run("report", "--output-dir", out) == 2
    assert run("fit", "--input", panel, "--output-dir", out, *FAST_FIT) == 0
    summary = read_rows(out / "posterior_summary.csv")
    assert len(summary) == 9
    assert {"R0", "beta_q2.5", "beta_r_hat"} <= set(summary[0])
    assert read_rows(out / "diagnostics.csv")[0]["rhat_warning"] in ("0", "1")
    assert run("report", "--output-dir", out) == 0
    text = (out / "report.txt").read_text()
    for c in (1, 2, 3):
        assert f"cluster {c} (" in text
    first = (out / "report.csv").read_bytes()
    assert run("report", "--output-dir", out) == 0
    assert (out / "report.csv").read_bytes() == first


def test_fit_single_chain_marks_rhat_unavailable(synthetic_dir, tmp_path):
    out = tmp_path / "one"
    panel = synthetic_dir / "panel.csv"
    assert run("cluster", "--input", panel, "--output-dir", out, "--k", 2) == 0
    assert run("fit", "--input", panel, "--output-dir", out, *FAST_FIT, "--chains", 1) == 0
    assert all(r["beta_r_hat"] == "NA" for r in read_rows(out / "posterior_summary.csv"))


def test_fit_inference_failure_exit_code(synthetic_dir, tmp_path, monkeypatch):
    out = tmp_path / "fail"
    panel = synthetic_dir / "panel.csv"
    assert run("cluster", "--input", panel, "--output-dir", out, "--k", 2) == 0

    def boom(*args, **kwargs):
        raise SamplerInitError("no finite starting point")

    monkeypatch.setattr(cli, "fit_clusters", boom)
    assert run("fit", "--input", panel, "--output-dir", out, *FAST_FIT) == 4


def test_config_precedence_and_echo(tmp_path, monkeypatch):
    conf = tmp_path / "run.txt"
    conf.write_text("# defaults\nyears = 5\nseed = 11\nk = 3  # ignored by simulate\n")
    out = tmp_path / "o"
    assert run("simulate", "--config", conf, "--years", 7, "--output-dir", out) == 0
    echo = (out / "run_config.txt").read_text()
    assert "years = 7" in echo and "seed = 11" in echo
    # the echo reproduces the run
    again = tmp_path / "again"
    assert run("simulate", "--config", out / "run_config.txt", "--output-dir", again) == 0
    assert (again / "trajectories_long.csv").read_bytes() == (out / "trajectories_long.csv").read_bytes()
    monkeypatch.setenv("EPIFIT_SEED", "23")
    assert run("simulate", "--output-dir", tmp_path / "env") == 0
    assert "seed = 23" in (tmp_path / "env" / "run_config.txt").read_text()
    monkeypatch.setenv("EPIFIT_SEED", "x")
    assert run("simulate", "--output-dir", tmp_path / "env2") == 2
    conf.write_text("colour = blue\n")
    assert run("simulate", "--config", conf, "--output-dir", out) == 2


def test_resolve_precedence():
    opts = cli.resolve("fit", {"chains": 5}, env={"EPIFIT_SEED": "8"})
    assert opts["chains"] == 5 and opts["seed"] == 8 and opts["threads"] == 1
    assert cli.mcmc_config({**opts, "fast": True}).n_chains == 5
    assert cli.mcmc_config(cli.resolve("fit", {"fast": True}, env={})).sample_iters == 2000


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "epifit.cli", "simulate", "--output-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "9 trajectory files" in proc.stdout
