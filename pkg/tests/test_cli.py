import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from odedbn.cli import main
from odedbn.oracle import models_dir

LORENZ = str(models_dir() / "lorenz.model")
LOTKA = str(models_dir() / "lotka.model")


@pytest.fixture
def run(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)

    return invoke


def test_compile_lorenz(run, tmp_path):
    r = run("compile", LORENZ, "-o", "g")
    assert r.exit_code == 0
    assert "10 nodes (3 state, 3 delta, 3 parameter, 1 observed)" in r.output
    first = (tmp_path / "g" / "lorenz.dot").read_bytes()
    run("compile", LORENZ, "-o", "g")
    assert (tmp_path / "g" / "lorenz.dot").read_bytes() == first


def test_compile_malformed(run, tmp_path):
    (tmp_path / "bad.model").write_text("model bad\nstate X = 1\ndX/dt = X +\n")
    r = run("compile", tmp_path / "bad.model")
    assert r.exit_code == 2
    assert "bad.model:3:" in r.output


def test_compile_invalid_model(run, tmp_path):
    (tmp_path / "bad.model").write_text("model bad\nstate X = 1\ndX/dt = q*X\n")
    r = run("compile", tmp_path / "bad.model")
    assert r.exit_code == 2
    assert "UnboundSymbol" in r.output


def write_cfg(path, **kw):
    base = dict(model=LOTKA, particles=300, t_end=2, run_in_end=0.5, seed=5, output="out")
    base.update(kw)
    path.write_text("# run\n" + "".join(f"{k} = {v}\n" for k, v in base.items()))
    return path


def test_infer_outputs(run, tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg")
    r = run("infer", cfg)
    assert r.exit_code == 0, r.output
    out = tmp_path / "out"
    lines = (out / "summaries.csv").read_text().splitlines()
    assert lines[0] == (
        "time,S_mean,S_std,W_mean,W_std,alpha_mean,alpha_std,beta_mean,beta_std,"
        "gamma_mean,gamma_std,delta_mean,delta_std,ess"
    )
    assert len(lines) == 1 + 9
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"rmse", "mae", "wall_time"} <= metrics.keys()
    plot = (out / "plot_S.csv").read_text().splitlines()
    assert plot[0] == "time,mean,lower,upper,evidence"
    assert plot[3].split(",")[-1] != ""  # t=0.5 carries evidence
    assert plot[2].split(",")[-1] == ""
    assert (out / "plot_W.csv").exists()


def test_flags_override_config(run, tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg")
    r = run("infer", cfg, "--t-end", 0, "-o", "single")
    assert r.exit_code == 0
    assert len((tmp_path / "single" / "summaries.csv").read_text().splitlines()) == 2


def test_infer_is_deterministic_across_workers(run, tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg")
    run("infer", cfg, "-o", "a")
    run("infer", cfg, "-o", "b", "--workers", 3)
    a = (tmp_path / "a" / "summaries.csv").read_bytes()
    assert a == (tmp_path / "b" / "summaries.csv").read_bytes()
    run("infer", cfg, "-o", "c", "--seed", 6)
    assert a != (tmp_path / "c" / "summaries.csv").read_bytes()


def test_infer_with_reference_and_explicit_evidence(run, tmp_path):
    r = run("benchmark", "lotka", "--particles", 500, "-o", "bench")
    assert r.exit_code == 0
    bench = tmp_path / "bench"
    r = run(
        "infer", "--model", LOTKA, "--t-end", 2, "--particles", 500, "--run-in-end", 0.5,
        "--evidence", f"S:{bench / 'lotka_S.csv'}", "--reference", bench / "reference.csv", "-o", "again",
    )
    assert r.exit_code == 0, r.output
    m1 = json.loads((bench / "metrics.json").read_text())
    m2 = json.loads((tmp_path / "again" / "metrics.json").read_text())
    assert m1["rmse"] == m2["rmse"] and m1["mae"] == m2["mae"]


def test_infer_adaptive_reports_step_counts(run, tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg", model=LORENZ, mode="adaptive", report_interval=0.05, tolerance=0.1, t_end=0.5, particles=100)
    r = run("infer", cfg)
    assert r.exit_code == 0, r.output
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics["accepted"] > 0 and "rejected" in metrics
    assert len((tmp_path / "out" / "summaries.csv").read_text().splitlines()) == 1 + 11


def test_inference_abort_flushes_summaries(run, tmp_path):
    (tmp_path / "boom.model").write_text("model boom\nstate X = 2\ndX/dt = exp(X)\n")
    cfg = write_cfg(tmp_path / "run.cfg", model="boom.model", t_end=10, run_in_end=0)
    r = run("infer", cfg)
    assert r.exit_code == 3
    assert "NumericOverflow" in r.output
    rows = (tmp_path / "out" / "summaries.csv").read_text().splitlines()[1:]
    assert [float(row.split(",")[0]) for row in rows] == [0.0, 1.0, 2.0]


@pytest.mark.parametrize(
    "text, message",
    [
        ("model = x.model\nt_end = 1\nbogus = 3\n", "expected one of"),
        ("model = {lotka}\n", "t_end"),
        ("t_end = 1\n", "no model"),
        ("model = {lotka}\nt_end = 1\nmode = adaptive\n", "report_interval"),
        ("model = {lotka}\nt_end = one\n", "one"),
        ("model = {lotka}\nt_end = 1\nevidence = S\n", "STATE:path"),
    ],
)
def test_config_errors(run, tmp_path, text, message):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text.format(lotka=LOTKA))
    r = run("infer", cfg)
    assert r.exit_code == 2
    assert message in r.output


def test_missing_model_file(run, tmp_path):
    cfg = write_cfg(tmp_path / "run.cfg", model="nope.model")
    assert run("infer", cfg).exit_code == 2


def test_benchmark_unknown_case(run):
    r = run("benchmark", "nope")
    assert r.exit_code == 2
    for name in ("lorenz", "lotka", "pif45", "stc"):
        assert name in r.output


def test_benchmark_outputs(run, tmp_path):
    r = run("benchmark", "pif45", "--particles", 200, "--seed", 1)
    assert r.exit_code == 0
    out = Path(tmp_path / "benchmark-pif45")
    for f in ("reference.csv", "pif45_PIF45.csv", "summaries.csv", "metrics.json", "plot_PIF45.csv"):
        assert (out / f).exists(), f
    assert "published rmse=0.07" in r.output
