"""Adaptive-time particle filtering.

Each proposed slice is taken on a copy of the ensemble.  The local error
of the Euler step is estimated from the ensemble-mean delta nodes at both
ends of the slice, ``(h/2) * max_k |mean(dX_k)(t+h) - mean(dX_k)(t)|``,
i.e. ``h^2/2 * |x''|`` with ``x''`` taken as a difference quotient of the
deltas.  Accepted slices are committed; rejected ones are discarded and
retried with a smaller step.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dist import RngStream
from .engine import (
    _RESAMPLE,
    _STEP,
    AdaptiveStep,
    InferenceConfig,
    InferenceError,
    ParticleEnsemble,
    StepSummary,
    _advance,
    _deltas,
    _maybe_resample,
    _plan,
    _stops,
    init_ensemble,
    observations_at,
    summarize,
    weigh,
)
from .evidence import TIME_TOL, EvidenceStream
from .model import OdeModel

__all__ = [
    "EPS",
    "StepUnderflow",
    "Decision",
    "StepController",
    "StepRecord",
    "AdaptiveRun",
    "estimate_local_error",
    "propose_step",
    "report_times",
    "run_adaptive",
]

EPS = 1e-12


class StepUnderflow(InferenceError):
    pass


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"


@dataclass(frozen=True)
class StepController:
    tolerance: float
    h_current: float
    h_min: float
    h_max: float
    safety: float = 0.9
    grow_cap: float = 5.0
    shrink_cap: float = 0.2

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not 0 < self.h_min <= self.h_max:
            raise ValueError("need 0 < h_min <= h_max")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if not self.shrink_cap < 1 < self.grow_cap:
            raise ValueError("need shrink_cap < 1 < grow_cap")


def estimate_local_error(prev_deltas, new_deltas, h: float) -> float:
    """Euler local truncation error from mean deltas at both ends of a slice."""
    prev = np.atleast_1d(np.asarray(prev_deltas, dtype=float))
    new = np.atleast_1d(np.asarray(new_deltas, dtype=float))
    if prev.size == 0:
        return 0.0
    return float(h / 2 * np.max(np.abs(new - prev)))


def propose_step(ctrl: StepController, err: float) -> tuple[Decision, float]:
    """Accept iff ``err <= tolerance``; next step scales by sqrt(tol/err)."""
    if not err >= 0:
        raise ValueError(f"error estimate must be >= 0, got {err!r}")
    h = ctrl.h_current
    factor = ctrl.safety * math.sqrt(ctrl.tolerance / max(err, EPS))
    factor = min(max(factor, ctrl.shrink_cap), ctrl.grow_cap)
    h_next = h * factor
    if err <= ctrl.tolerance:
        return Decision.ACCEPT, min(max(h_next, ctrl.h_min), ctrl.h_max)
    if h_next < ctrl.h_min:
        if h <= ctrl.h_min:
            raise StepUnderflow(f"step rejected at h={h!r} (error {err!r} > tolerance {ctrl.tolerance!r}) and h_min reached")
        h_next = ctrl.h_min
    return Decision.REJECT, min(h_next, ctrl.h_max)


@dataclass(frozen=True)
class StepRecord:
    t: float
    h: float
    error: float
    decision: Decision


@dataclass
class AdaptiveRun:
    summaries: list[StepSummary] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    # slice times reached by committed steps, start excluded
    committed_times: list[float] = field(default_factory=list)

    @property
    def committed(self) -> list[StepRecord]:
        return [s for s in self.steps if s.decision is Decision.ACCEPT]

    @property
    def accepted(self) -> int:
        return len(self.committed)

    @property
    def rejected(self) -> int:
        return len(self.steps) - self.accepted


def _mean_deltas(ens: ParticleEnsemble, deltas: np.ndarray) -> np.ndarray:
    live = np.isfinite(ens.log_weights) & np.isfinite(deltas).all(axis=1)
    if not live.any():
        return np.full(deltas.shape[1], np.nan)
    lw = ens.log_weights[live]
    w = np.exp(lw - lw.max())
    return (w / w.sum()) @ deltas[live]


def report_times(t_start: float, t_end: float, interval: float) -> list[float]:
    n = int(math.floor((t_end - t_start) / interval + TIME_TOL))
    ts = [t_start + j * interval for j in range(1, n + 1)]
    if not ts or t_end - ts[-1] > TIME_TOL:
        ts.append(t_end)
    return ts


def run_adaptive(
    m: OdeModel,
    cfg: InferenceConfig,
    evidence: Sequence[EvidenceStream] | None = None,
    rng: RngStream | None = None,
    on_summary: Callable[[StepSummary], None] | None = None,
) -> AdaptiveRun:
    """Adaptive-time filtering; summaries are recorded at the report times."""
    mode = cfg.mode
    if not isinstance(mode, AdaptiveStep):
        raise ValueError("run_adaptive needs an AdaptiveStep mode")
    evidence = m.evidence() if evidence is None else list(evidence)
    plan = _plan(m)
    rng = rng if rng is not None else RngStream(cfg.seed)
    ri = mode.report_interval
    h_min = mode.h_min if mode.h_min is not None else 1e-6 * ri
    h_max = mode.h_max if mode.h_max is not None else ri
    h0 = mode.h_init if mode.h_init is not None else m.natural_step
    ctrl = StepController(
        mode.tolerance, min(max(h0, h_min), h_max), h_min, h_max,
        mode.safety, mode.grow_cap, mode.shrink_cap,
    )
    run = AdaptiveRun()

    def record(ens):
        s = summarize(ens)
        run.summaries.append(s)
        if on_summary is not None:
            on_summary(s)

    reports = report_times(cfg.t_start, cfg.t_end, ri) if cfg.t_end > cfg.t_start else []
    is_report = lambda t: any(abs(t - r) <= TIME_TOL for r in reports)

    ens = init_ensemble(m, cfg, rng, plan=plan)
    resamples = 0
    obs = observations_at(m, evidence, ens.time)
    if obs:
        ens = _maybe_resample(weigh(ens, m, obs), cfg, rng.derive(_RESAMPLE, resamples))
    record(ens)

    attempt = 0
    for stop in _stops(m, cfg, evidence, extra=reports):
        while ens.time < stop - TIME_TOL:
            gap = stop - ens.time
            h_try = min(ctrl.h_current, gap)
            lands = gap - h_try <= TIME_TOL
            if lands:
                h_try = gap
            attempt += 1
            tentative, d_start = _advance(ens, plan, h_try, rng.derive(_STEP, attempt), cfg.workers)
            d_end = _deltas(plan, tentative.states, tentative.params, tentative.inputs)
            err = estimate_local_error(
                _mean_deltas(tentative, d_start), _mean_deltas(tentative, d_end), h_try
            )
            if math.isnan(err):
                err = math.inf
            decision, h_next = propose_step(replace(ctrl, h_current=min(max(h_try, h_min), h_max)), err)
            run.steps.append(StepRecord(ens.time, h_try, err, decision))
            if decision is Decision.ACCEPT:
                tentative.time = stop if lands else ens.time + h_try
                ens = tentative
                run.committed_times.append(ens.time)
                if lands and h_try < ctrl.h_current:
                    # a step cut short to hit a stop says nothing against the old size
                    h_next = max(h_next, ctrl.h_current)
            ctrl = replace(ctrl, h_current=h_next)
        obs = observations_at(m, evidence, ens.time)
        if obs:
            resamples += 1
            ens = _maybe_resample(weigh(ens, m, obs), cfg, rng.derive(_RESAMPLE, resamples))
        if is_report(ens.time):
            record(ens)
    return run
