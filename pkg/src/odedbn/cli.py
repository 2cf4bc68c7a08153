"""Command-line entry point: ``odedbn compile | infer | benchmark``.

Exit codes: 0 on success, 2 for bad input (files, config, model), 3 when
inference aborts.  ``summaries.csv`` has the columns ``time``, then
``<name>_mean,<name>_std`` for every state followed by every parameter
(declaration order), then ``ess``.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import click

from . import __version__
from .adaptive import run_adaptive
from .compiler import compile_model, export_dot
from .engine import AdaptiveStep, FixedStep, InferenceConfig, InferenceError, StepSummary, run_fixed
from .evidence import TIME_TOL, EvidenceError, EvidenceStream, Mode, load_csv
from .model import InvalidModel, OdeModel
from .modelfile import ModelFileError, load_model
from .oracle import CASES, NoOverlap, ReferenceTrajectory, compute_metrics, generate_benchmark

__all__ = ["RunConfig", "ConfigError", "read_config", "run_inference", "main"]

EXIT_INPUT = 2
EXIT_INFERENCE = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: Path
    evidence: list[tuple[str, Path, Mode]] = field(default_factory=list)
    mode: str = "fixed"
    step: float | None = None  # default: the model's natural step
    report_interval: float | None = None
    tolerance: float | None = None
    particles: int = 1000
    seed: int = 0
    t_start: float = 0.0
    t_end: float | None = None
    run_in_end: float | None = None
    workers: int = 1
    resample_threshold: float | None = None
    reference: Path | None = None
    target: str | None = None
    output: Path = Path("out")


_FLOAT_KEYS = {"step", "report_interval", "tolerance", "t_start", "t_end", "run_in_end", "resample_threshold"}
_INT_KEYS = {"particles", "seed", "workers"}
_PATH_KEYS = {"model", "reference", "output"}
_KEYS = _FLOAT_KEYS | _INT_KEYS | _PATH_KEYS | {"evidence", "mode", "target"}


def parse_evidence_spec(text: str, base: Path = Path(".")) -> tuple[str, Path, Mode]:
    """``STATE:path[:continuous|instantaneous]``"""
    parts = text.strip().split(":")
    if len(parts) == 3 and parts[2] in {m.value for m in Mode}:
        mode = Mode(parts[2])
        parts = parts[:2]
    else:
        mode = Mode.INSTANTANEOUS
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise ConfigError(f"evidence must look like STATE:path[:mode], got {text!r}")
    return parts[0], base / parts[1], mode


def read_config(path: Path | None, overrides: dict[str, object]) -> RunConfig:
    """Merge a ``key = value`` file with flag overrides (flags win).

    Relative paths in the file are taken relative to the file itself.
    """
    raw: dict[str, object] = {}
    base = Path(".")
    if path is not None:
        base = path.parent
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for lineno, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in _KEYS:
                raise ConfigError(f"{path}:{lineno}: expected one of {', '.join(sorted(_KEYS))} as 'key = value'")
            if key == "evidence":
                raw[key] = [parse_evidence_spec(v, base) for v in value.split(",") if v.strip()]
            elif key in _PATH_KEYS:
                raw[key] = base / value
            else:
                raw[key] = value
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        if key == "evidence":
            raw[key] = [parse_evidence_spec(v) for v in value]
        else:
            raw[key] = value
    if "model" not in raw:
        raise ConfigError("no model given (config key 'model' or --model)")
    try:
        for key in _FLOAT_KEYS & raw.keys():
            raw[key] = float(raw[key])
        for key in _INT_KEYS & raw.keys():
            raw[key] = int(raw[key])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for key in _PATH_KEYS & raw.keys():
        raw[key] = Path(raw[key])
    cfg = RunConfig(**raw)
    if cfg.mode not in ("fixed", "adaptive"):
        raise ConfigError(f"mode must be 'fixed' or 'adaptive', got {cfg.mode!r}")
    if cfg.mode == "adaptive" and (cfg.report_interval is None or cfg.tolerance is None):
        raise ConfigError("adaptive mode needs report_interval and tolerance")
    if cfg.t_end is None:
        raise ConfigError("t_end is required")
    return cfg


# ---- output ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


class SummaryWriter:
    """Streams summaries to CSV as they arrive, so an abort leaves every good row on disk."""

    def __init__(self, path: Path, names: Sequence[str]):
        self.names = tuple(names)
        self.rows: list[StepSummary] = []
        self._fh = open(path, "w", encoding="utf-8", newline="")
        cols = ["time"] + [f"{n}_{k}" for n in self.names for k in ("mean", "std")] + ["ess"]
        self._fh.write(",".join(cols) + "\n")

    def __call__(self, s: StepSummary) -> None:
        vals = [s.time]
        for n in self.names:
            vals += [s.mean_of(n), s.std_of(n)]
        vals.append(s.ess)
        self._fh.write(",".join(_fmt(v) for v in vals) + "\n")
        self._fh.flush()
        self.rows.append(s)

    def close(self) -> None:
        self._fh.close()


def write_plot_data(out_dir: Path, m: OdeModel, summaries: Sequence[StepSummary], evidence: Sequence[EvidenceStream]) -> list[Path]:
    """One ``plot_<state>.csv`` per state: time, mean, mean-std, mean+std, evidence.

    Rows cover the summary times and the evidence points; cells with nothing
    to show are left blank.
    """
    paths = []
    for name in m.state_names:
        rows: list[list] = [[s.time, s, None] for s in summaries]
        for e in (e for e in evidence if e.target == name):
            for t, v in e.points:
                for row in rows:
                    if abs(row[0] - t) <= TIME_TOL:
                        row[2] = v
                        break
                else:
                    rows.append([t, None, v])
        rows.sort(key=lambda r: r[0])
        p = out_dir / f"plot_{name}.csv"
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write("time,mean,lower,upper,evidence\n")
            for t, s, v in rows:
                cells = [_fmt(t)]
                if s is None:
                    cells += ["", "", ""]
                else:
                    mu, sd = s.mean_of(name), s.std_of(name)
                    cells += [_fmt(mu), _fmt(mu - sd), _fmt(mu + sd)]
                cells.append("" if v is None else _fmt(v))
                fh.write(",".join(cells) + "\n")
        paths.append(p)
    return paths


# ---- orchestration ----------------------------------------------------------

@dataclass
class RunResult:
    summaries: list[StepSummary]
    metrics: dict[str, object]
    error: InferenceError | None = None


def run_inference(
    m: OdeModel,
    icfg: InferenceConfig,
    evidence: Sequence[EvidenceStream],
    out_dir: Path,
    reference: ReferenceTrajectory | None = None,
    target: str | None = None,
) -> RunResult:
    """Run filtering and write summaries.csv, metrics.json and plot files into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    writer = SummaryWriter(out_dir / "summaries.csv", m.state_names + m.param_names)
    metrics: dict[str, object] = {}
    error = None
    t0 = time.perf_counter()
    try:
        if isinstance(icfg.mode, FixedStep):
            run_fixed(m, icfg, evidence, on_summary=writer)
            metrics["steps"] = max(len(writer.rows) - 1, 0)
        else:
            run = run_adaptive(m, icfg, evidence, on_summary=writer)
            metrics["accepted"] = run.accepted
            metrics["rejected"] = run.rejected
    except InferenceError as exc:
        error = exc
        metrics["error"] = f"{type(exc).__name__}: {exc}"
    finally:
        writer.close()
    metrics["wall_time"] = time.perf_counter() - t0
    metrics["rmse"] = metrics["mae"] = None
    if reference is not None and target is not None and writer.rows:
        try:
            rmse, mae = compute_metrics(writer.rows, reference, target, icfg.run_in_end)
            metrics["rmse"], metrics["mae"] = rmse, mae
        except NoOverlap:
            pass
    metrics = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in metrics.items()}
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_plot_data(out_dir, m, writer.rows, evidence)
    return RunResult(writer.rows, metrics, error)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_model_or_exit(path: Path) -> OdeModel:
    try:
        return load_model(path)
    except ModelFileError as exc:
        _fail(EXIT_INPUT, str(exc))


@click.group()
@click.version_option(__version__, prog_name="odedbn")
def main() -> None:
    """Compile ODE models to dynamic Bayesian networks and run particle filtering."""


@main.command("compile")
@click.argument("model_path", type=click.Path(path_type=Path))
@click.option("-o", "--output", "out_dir", type=click.Path(path_type=Path), default=Path("."), show_default=True, help="Directory for <name>.dot")
def cmd_compile(model_path: Path, out_dir: Path) -> None:
    """Validate MODEL_PATH, write its two-slice DOT graph and print node counts."""
    m = _load_model_or_exit(model_path)
    try:
        g = compile_model(m)
    except InvalidModel as exc:
        for d in exc.diagnostics:
            click.echo(f"{model_path}: {d}", err=True)
        sys.exit(EXIT_INPUT)
    out_dir.mkdir(parents=True, exist_ok=True)
    dot = out_dir / f"{g.name}.dot"
    dot.write_text(export_dot(g), encoding="utf-8")
    click.echo(g.report())
    click.echo(f"{len(g.intra_arcs)} intra-slice arcs, {len(g.inter_arcs)} inter-slice arcs")
    click.echo(f"wrote {dot}")


def _inference_config(cfg: RunConfig, m: OdeModel) -> InferenceConfig:
    if cfg.mode == "fixed":
        mode = FixedStep(cfg.step if cfg.step is not None else m.natural_step)
    else:
        mode = AdaptiveStep(cfg.report_interval, cfg.tolerance, h_init=cfg.step)
    return InferenceConfig(
        mode, cfg.particles, cfg.t_start, cfg.t_end, seed=cfg.seed,
        run_in_end=cfg.run_in_end, workers=cfg.workers, resample_threshold=cfg.resample_threshold,
    )


def _report(result: RunResult, out_dir: Path) -> None:
    shown = {k: v for k, v in result.metrics.items() if k != "error"}
    click.echo(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in sorted(shown.items())))
    click.echo(f"results in {out_dir}")
    if result.error is not None:
        last = result.summaries[-1].time if result.summaries else None
        _fail(EXIT_INFERENCE, f"inference aborted ({result.metrics['error']}); last good summary at t={last}")


@main.command("infer")
@click.argument("config", required=False, type=click.Path(path_type=Path))
@click.option("--model", type=click.Path(path_type=Path), help="Model file")
@click.option("--evidence", multiple=True, help="STATE:path[:mode]; repeatable; replaces the model's own evidence")
@click.option("--mode", type=click.Choice(["fixed", "adaptive"]))
@click.option("--step", type=float, help="Fixed step (default: model's natural step); initial step for adaptive")
@click.option("--report-interval", type=float)
@click.option("--tolerance", type=float)
@click.option("--particles", type=int)
@click.option("--seed", type=int)
@click.option("--t-start", type=float)
@click.option("--t-end", type=float)
@click.option("--run-in-end", type=float)
@click.option("--workers", type=int)
@click.option("--resample-threshold", type=float, help="Resample only when ESS < threshold*N")
@click.option("--reference", type=click.Path(path_type=Path), help="Reference CSV (time plus one column per state) for RMSE/MAE")
@click.option("--target", help="State scored against the reference")
@click.option("-o", "--output", type=click.Path(path_type=Path))
def cmd_infer(config: Path | None, **flags) -> None:
    """Run particle filtering as described by CONFIG (key = value lines) and/or flags."""
    try:
        cfg = read_config(config, flags)
    except ConfigError as exc:
        _fail(EXIT_INPUT, str(exc))
    m = _load_model_or_exit(cfg.model)
    try:
        compile_model(m)
        if cfg.evidence:
            evidence = [load_csv(p, target=t, mode=mode) for t, p, mode in cfg.evidence]
        else:
            evidence = m.evidence()
        icfg = _inference_config(cfg, m)
        reference = ReferenceTrajectory.from_csv(cfg.reference) if cfg.reference else None
    except InvalidModel as exc:
        _fail(EXIT_INPUT, "\n".join(str(d) for d in exc.diagnostics))
    except (OSError, EvidenceError, ValueError) as exc:
        _fail(EXIT_INPUT, str(exc))
    target = cfg.target
    if reference is not None and target is None and len(m.observations) == 1:
        target = m.observations[0].observed_state
    result = run_inference(m, icfg, evidence, cfg.output, reference, target)
    _report(result, cfg.output)


@main.command("benchmark")
@click.argument("case", type=click.Choice(sorted(CASES)))
@click.option("--particles", type=int, help="Default: the published sample count")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("-o", "--output", type=click.Path(path_type=Path), help="Default: ./benchmark-<case>")
def cmd_benchmark(case: str, particles: int | None, seed: int, workers: int, output: Path | None) -> None:
    """Generate reference data for CASE, run inference with its published settings, score it."""
    c = CASES[case]
    out_dir = output if output is not None else Path(f"benchmark-{case}")
    ref, evidence = generate_benchmark(c, out_dir)
    m = c.model()
    icfg = InferenceConfig(
        c.mode, particles if particles is not None else c.n_particles, c.t_start, c.t_end,
        seed=seed, run_in_end=c.run_in_end, workers=workers,
    )
    result = run_inference(m, icfg, evidence, out_dir, ref, c.target)
    click.echo(f"{case}: published rmse={c.reported[0]} mae={c.reported[1]} (N={c.n_particles})")
    _report(result, out_dir)


if __name__ == "__main__":  # pragma: no cover
    main()
