"""Deterministic reference solutions, error metrics and the benchmark cases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .engine import AdaptiveStep, FixedStep, StepSummary
from .evidence import TIME_TOL, EvidenceStream, Mode, value_at, write_csv
from .expr import ExprError, eval_expr
from .model import OdeModel
from .modelfile import load_model

__all__ = [
    "NonFinite",
    "NoOverlap",
    "ReferenceTrajectory",
    "BenchmarkCase",
    "CASES",
    "models_dir",
    "rk4_reference",
    "euler_reference",
    "compute_metrics",
    "reference_grid",
    "generate_benchmark",
]


class NonFinite(ArithmeticError):
    pass


class NoOverlap(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceTrajectory:
    names: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray  # (len(times), len(names))

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def at(self, t: float, name: str) -> float:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_TOL:
            raise KeyError(t)
        return float(self.values[i, self.names.index(name)])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(("time",) + self.names) + "\n")
            for t, row in zip(self.times, self.values):
                fh.write(",".join([repr(float(t))] + [repr(float(v)) for v in row]) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ReferenceTrajectory":
        with open(path, encoding="utf-8") as fh:
            names = tuple(fh.readline().strip().split(",")[1:])
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(names, data[:, 0].copy(), data[:, 1:].copy())


def _as_param_env(m: OdeModel, params) -> dict[str, float]:
    if isinstance(params, Mapping):
        return {p: float(params[p]) for p in m.param_names}
    params = list(params)
    if len(params) != len(m.params):
        raise ValueError(f"expected {len(m.params)} parameter values, got {len(params)}")
    return dict(zip(m.param_names, map(float, params)))


def _as_state(m: OdeModel, x0) -> list[float]:
    if isinstance(x0, Mapping):
        return [float(x0[s]) for s in m.state_names]
    x0 = [float(v) for v in x0]
    if len(x0) != len(m.states):
        raise ValueError(f"expected {len(m.states)} initial values, got {len(x0)}")
    return x0


def _rhs(m: OdeModel, env: dict[str, float], x: Sequence[float], t: float) -> list[float]:
    for name, v in zip(m.state_names, x):
        env[name] = v
    for inp in m.inputs:
        v = value_at(inp.intended_series, t)
        if v is None:
            raise NonFinite(f"input {inp.name} has no value at t={t!r}")
        env[inp.name] = v
    try:
        return [eval_expr(s.rhs, env) for s in m.states]
    except ExprError as exc:
        raise NonFinite(f"right-hand side failed at t={t!r}: {exc}") from None


def _check_finite(x, t):
    if not all(math.isfinite(v) for v in x):
        raise NonFinite(f"trajectory is not finite at t={t!r}")


def rk4_reference(m: OdeModel, params, x0, times: Sequence[float], h_ref: float, t0: float | None = None) -> ReferenceTrajectory:
    """Classical fourth-order Runge-Kutta at internal step ``h_ref``.

    Integration starts at ``t0`` (default ``times[0]``); steps are shortened
    to land exactly on each requested time.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    env = _as_param_env(m, params)
    x = _as_state(m, x0)
    t = float(times[0] if t0 is None else t0)
    if times[0] < t - TIME_TOL:
        raise ValueError("requested times precede the start time")
    out = np.empty((len(times), len(x)))
    for i, target in enumerate(times):
        anchor, j = t, 0
        while t < target - TIME_TOL:
            t_next = anchor + (j + 1) * h_ref
            if t_next > target - TIME_TOL:
                t_next = target
            h = t_next - t
            k1 = _rhs(m, env, x, t)
            k2 = _rhs(m, env, [xi + 0.5 * h * ki for xi, ki in zip(x, k1)], t + 0.5 * h)
            k3 = _rhs(m, env, [xi + 0.5 * h * ki for xi, ki in zip(x, k2)], t + 0.5 * h)
            k4 = _rhs(m, env, [xi + h * ki for xi, ki in zip(x, k3)], t + h)
            x = [xi + h / 6.0 * (a + 2 * b + 2 * c + d) for xi, a, b, c, d in zip(x, k1, k2, k3, k4)]
            _check_finite(x, t_next)
            t = t_next
            j += 1
        out[i] = x
    return ReferenceTrajectory(tuple(m.state_names), times.copy(), out)


def euler_reference(m: OdeModel, params, x0, h: float, n_steps: int, t0: float = 0.0) -> ReferenceTrajectory:
    """Plain forward Euler, ``n_steps`` steps of size ``h`` from ``t0``."""
    env = _as_param_env(m, params)
    x = _as_state(m, x0)
    times = np.empty(n_steps + 1)
    out = np.empty((n_steps + 1, len(x)))
    times[0], out[0] = t0, x
    for k in range(n_steps):
        t = t0 + k * h
        d = _rhs(m, env, x, t)
        x = [xi + h * di for xi, di in zip(x, d)]
        _check_finite(x, t + h)
        times[k + 1] = t0 + (k + 1) * h
        out[k + 1] = x
    return ReferenceTrajectory(tuple(m.state_names), times, out)


def compute_metrics(
    predicted: Sequence[StepSummary],
    reference: ReferenceTrajectory,
    target: str,
    run_in_end: float | None = None,
) -> tuple[float, float]:
    """RMSE and MAE of predicted means against the reference after the run-in."""
    start = -math.inf if run_in_end is None else run_in_end - TIME_TOL
    col = reference.column(target)
    errors = []
    for s in predicted:
        if s.time < start:
            continue
        i = int(np.argmin(np.abs(reference.times - s.time)))
        if abs(reference.times[i] - s.time) <= TIME_TOL:
            errors.append(s.mean_of(target) - col[i])
    if not errors:
        raise NoOverlap(f"no shared times at or after {run_in_end!r}")
    e = np.asarray(errors)
    return float(np.sqrt(np.mean(e * e))), float(np.mean(np.abs(e)))


def models_dir() -> Path:
    return Path(str(resources.files("odedbn") / "models"))


@dataclass(frozen=True)
class BenchmarkCase:
    name: str
    model_file: str
    benchmark_params: Mapping[str, float]
    benchmark_x0: Mapping[str, float]
    target: str
    evidence_times: tuple[float, ...]
    mode: FixedStep | AdaptiveStep
    t_start: float
    t_end: float
    run_in_end: float
    reported: tuple[float, float]  # (RMSE, MAE) as published for 100 000 particles
    n_particles: int = 100_000
    notes: str = field(default="", compare=False)

    def model(self) -> OdeModel:
        return load_model(models_dir() / self.model_file)

    def evidence_file(self) -> str:
        return f"{self.name}_{self.target}.csv"


def _lorenz_times() -> tuple[float, ...]:
    return (0.35, 0.4) + tuple(round(0.5 + 0.1 * k, 10) for k in range(46))


CASES: dict[str, BenchmarkCase] = {
    "pif45": BenchmarkCase(
        name="pif45",
        model_file="pif45.model",
        benchmark_params={"s": 1.0, "k_d": 0.46, "d": 1.0},
        benchmark_x0={"PIF45": 0.386},
        target="PIF45",
        evidence_times=(4.0, 8.0, 12.0, 16.0, 20.0, 24.0),
        mode=FixedStep(1.0),
        t_start=0.0,
        t_end=24.0,
        run_in_end=4.0,
        reported=(0.070, 0.0353),
        notes="right-hand side is a stand-in; TOC1 is a recorded periodic trace",
    ),
    "lotka": BenchmarkCase(
        name="lotka",
        model_file="lotka.model",
        benchmark_params={"alpha": 2.0, "beta": 1.0, "gamma": 4.0, "delta": 1.0},
        benchmark_x0={"S": 5.0, "W": 3.0},
        target="S",
        evidence_times=(0.5, 1.0, 1.5, 2.0),
        mode=FixedStep(0.25),
        t_start=0.0,
        t_end=2.0,
        run_in_end=0.5,
        reported=(0.287, 0.137),
    ),
    "stc": BenchmarkCase(
        name="stc",
        model_file="stc.model",
        benchmark_params={"k1": 0.07, "k2": 0.6, "k3": 0.05, "k4": 0.3, "km": 0.017, "V": 0.3},
        benchmark_x0={"S": 1.0, "Sd": 0.0, "R": 1.0, "RS": 0.0, "Rpp": 0.0},
        target="Rpp",
        evidence_times=(0.0, 1.0, 2.0, 4.0, 5.0, 7.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0),
        mode=FixedStep(1.0),
        t_start=0.0,
        t_end=100.0,
        run_in_end=0.0,
        reported=(0.0085, 0.0053),
        notes="km and V transcribed as tabulated (0.017 and 0.3)",
    ),
    "lorenz": BenchmarkCase(
        name="lorenz",
        model_file="lorenz.model",
        benchmark_params={"a": -8.0 / 3.0, "b": -10.0, "c": 28.0},
        benchmark_x0={"X": 1.0, "Y": 1.0, "Z": 1.0},
        target="X",
        evidence_times=_lorenz_times(),
        mode=AdaptiveStep(report_interval=0.05, tolerance=0.1),
        t_start=0.0,
        t_end=5.0,
        run_in_end=0.35,
        reported=(0.250, 0.176),
    ),
}


def reference_grid(case: BenchmarkCase, natural_step: float) -> list[float]:
    """Times at which the reference is sampled: the inference grid plus evidence times."""
    step = case.mode.h if isinstance(case.mode, FixedStep) else case.mode.report_interval
    n = int(math.floor((case.t_end - case.t_start) / step + TIME_TOL))
    ts = {round(case.t_start + k * step, 12) for k in range(n + 1)}
    ts.update(case.evidence_times)
    ts.add(case.t_end)
    out: list[float] = []
    for t in sorted(ts):
        if not out or t - out[-1] > TIME_TOL:
            out.append(t)
    return out


def generate_benchmark(case: BenchmarkCase, out_dir=None, h_ref: float | None = None) -> tuple[ReferenceTrajectory, list[EvidenceStream]]:
    """Reference trajectory at benchmark settings plus noiseless evidence.

    The reference integrates at a tenth of the model's natural step unless
    ``h_ref`` is given.  With ``out_dir`` set, writes ``reference.csv`` and the
    evidence CSV there.
    """
    m = case.model()
    h_ref = h_ref if h_ref is not None else m.natural_step / 10
    grid = reference_grid(case, m.natural_step)
    ref = rk4_reference(m, case.benchmark_params, case.benchmark_x0, grid, h_ref, t0=case.t_start)
    col = ref.column(case.target)
    points = [(t, float(col[int(np.argmin(np.abs(ref.times - t)))])) for t in case.evidence_times]
    stream = EvidenceStream.from_points(case.target, Mode.INSTANTANEOUS, points)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ref.to_csv(out_dir / "reference.csv")
        write_csv(out_dir / case.evidence_file(), points)
    return ref, [stream]
