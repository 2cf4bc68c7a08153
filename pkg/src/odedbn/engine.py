"""Fixed-step particle filtering over a compiled ODE network.

The ensemble is stored column-wise (one array per node kind).  Random draws
are taken per block of ``BLOCK_SIZE`` particles from a stream derived from
(seed, purpose, step, block), so results do not depend on how many worker
threads process the blocks.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np

from . import dist
from .compiler import DbnGraph, NodeKind, compile_model
from .dist import RngStream
from .evidence import TIME_TOL, EvidenceStream, event_times, value_at
from .expr import eval_array
from .model import OdeModel

__all__ = [
    "BLOCK_SIZE",
    "InferenceError",
    "NumericOverflow",
    "AllWeightsDegenerate",
    "Particle",
    "ParticleEnsemble",
    "StepSummary",
    "FixedStep",
    "AdaptiveStep",
    "InferenceConfig",
    "init_ensemble",
    "step",
    "weigh",
    "observations_at",
    "resample_systematic",
    "systematic_indices",
    "effective_sample_size",
    "summarize",
    "run_fixed",
]

BLOCK_SIZE = 8192

# stream purposes under the master seed
_INIT, _STEP, _RESAMPLE = 0, 1, 2

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class InferenceError(RuntimeError):
    pass


class NumericOverflow(InferenceError):
    pass


class AllWeightsDegenerate(InferenceError):
    pass


@dataclass(frozen=True)
class Particle:
    state: tuple[float, ...]
    params: tuple[float, ...]
    inputs: tuple[float, ...]
    log_weight: float


@dataclass
class ParticleEnsemble:
    states: np.ndarray  # (N, n_states)
    params: np.ndarray  # (N, n_params)
    inputs: np.ndarray  # (N, n_inputs)
    log_weights: np.ndarray  # (N,)
    time: float
    state_names: tuple[str, ...] = ()
    param_names: tuple[str, ...] = ()
    input_names: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.log_weights)

    def particle(self, i: int) -> Particle:
        return Particle(
            tuple(self.states[i].tolist()),
            tuple(self.params[i].tolist()),
            tuple(self.inputs[i].tolist()),
            float(self.log_weights[i]),
        )

    def copy(self) -> "ParticleEnsemble":
        return replace(
            self,
            states=self.states.copy(),
            params=self.params.copy(),
            inputs=self.inputs.copy(),
            log_weights=self.log_weights.copy(),
        )

    def take(self, idx: np.ndarray) -> "ParticleEnsemble":
        return replace(
            self,
            states=self.states[idx],
            params=self.params[idx],
            inputs=self.inputs[idx],
            log_weights=self.log_weights[idx],
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.states, self.params, self.inputs, self.log_weights):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(repr(self.time).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class StepSummary:
    time: float
    names: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    ess: float

    def mean_of(self, name: str) -> float:
        return self.mean[self.names.index(name)]

    def std_of(self, name: str) -> float:
        return self.std[self.names.index(name)]


@dataclass(frozen=True)
class FixedStep:
    h: float


@dataclass(frozen=True)
class AdaptiveStep:
    report_interval: float
    tolerance: float
    safety: float = 0.9
    shrink_cap: float = 0.2
    grow_cap: float = 5.0
    h_min: float | None = None  # default 1e-6 * report_interval
    h_max: float | None = None  # default report_interval
    h_init: float | None = None  # default: the model's natural step


@dataclass(frozen=True)
class InferenceConfig:
    mode: FixedStep | AdaptiveStep
    n_particles: int
    t_start: float
    t_end: float
    seed: int = 0
    run_in_end: float | None = None
    workers: int = 1
    # resample only when ESS < threshold * N; None resamples at every step
    resample_threshold: float | None = None

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if isinstance(self.mode, FixedStep) and not self.mode.h > 0:
            raise ValueError("step size must be > 0")
        if isinstance(self.mode, AdaptiveStep):
            if not self.mode.tolerance > 0:
                raise ValueError("tolerance must be > 0")
            if not self.mode.report_interval > 0:
                raise ValueError("report interval must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class _Plan:
    """Everything the per-particle kernels need, pulled from the compiled graph."""

    state_names: tuple[str, ...]
    rhs: tuple
    param_names: tuple[str, ...]
    param_sigma_t: tuple[float, ...]
    param_bounds: tuple[tuple[float, float], ...]
    param_priors: tuple
    input_names: tuple[str, ...]
    input_series: tuple[EvidenceStream, ...]
    input_sigma: tuple[float, ...]
    init_mean: tuple[float, ...]
    init_sigma: tuple[float, ...]
    obs_sigma: Mapping[str, float] = field(default_factory=dict)


def _plan(m: OdeModel) -> _Plan:
    return _plan_from_graph(m, compile_model(m))


def _plan_from_graph(m: OdeModel, g: DbnGraph) -> _Plan:
    deltas = {n.name: n.payload for n in g.of_kind(NodeKind.DELTA)}
    return _Plan(
        state_names=tuple(m.state_names),
        rhs=tuple(deltas[s] for s in m.state_names),
        param_names=tuple(m.param_names),
        param_sigma_t=tuple(p.transition_sigma for p in m.params),
        param_bounds=tuple(p.bounds for p in m.params),
        param_priors=tuple(p.prior for p in m.params),
        input_names=tuple(m.input_names),
        input_series=tuple(i.intended_series for i in m.inputs),
        input_sigma=tuple(i.input_sigma for i in m.inputs),
        init_mean=tuple(s.initial_mean for s in m.states),
        init_sigma=tuple(s.initial_sigma for s in m.states),
        obs_sigma={o.observed_state: o.obs_sigma for o in m.observations},
    )


@lru_cache(maxsize=None)
def _executor(workers: int) -> ThreadPoolExecutor:
    return ThreadPoolExecutor(max_workers=workers, thread_name_prefix="odedbn")


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + BLOCK_SIZE, n)) for lo in range(0, n, BLOCK_SIZE)]


def _for_blocks(fn: Callable[[int, int, int], None], n: int, workers: int) -> None:
    blocks = _blocks(n)
    if workers <= 1 or len(blocks) <= 1:
        for b, (lo, hi) in enumerate(blocks):
            fn(b, lo, hi)
        return
    futures = [_executor(workers).submit(fn, b, lo, hi) for b, (lo, hi) in enumerate(blocks)]
    for f in futures:
        f.result()


def _gauss(mean, sigma: float, gen: np.random.Generator, n: int) -> np.ndarray:
    if sigma == 0:
        return np.broadcast_to(np.asarray(mean, dtype=float), (n,)).copy()
    return mean + sigma * gen.standard_normal(n)


def _intended(series: EvidenceStream, t: float) -> float:
    v = value_at(series, t)
    return math.nan if v is None else v


def init_ensemble(m: OdeModel, cfg: InferenceConfig, rng: RngStream | None = None, *, plan: _Plan | None = None) -> ParticleEnsemble:
    """Draw N particles from the initial-slice distributions, equally weighted."""
    plan = plan or _plan(m)
    rng = rng if rng is not None else RngStream(cfg.seed)
    n = cfg.n_particles
    states = np.empty((n, len(plan.state_names)))
    params = np.empty((n, len(plan.param_names)))
    inputs = np.empty((n, len(plan.input_names)))
    intended = [_intended(s, cfg.t_start) for s in plan.input_series]

    def fill(b, lo, hi):
        gen = rng.derive(_INIT, b).generator()
        k = hi - lo
        for j, (mu, sd) in enumerate(zip(plan.init_mean, plan.init_sigma)):
            states[lo:hi, j] = _gauss(mu, sd, gen, k)
        for j, prior in enumerate(plan.param_priors):
            params[lo:hi, j] = dist.sample(prior, gen, size=k)
        for j, (v, sd) in enumerate(zip(intended, plan.input_sigma)):
            inputs[lo:hi, j] = _gauss(v, sd, gen, k)

    _for_blocks(fill, n, cfg.workers)
    return ParticleEnsemble(
        states, params, inputs, np.zeros(n), float(cfg.t_start),
        plan.state_names, plan.param_names, plan.input_names,
    )


def _env(plan: _Plan, states, params, inputs) -> dict[str, np.ndarray]:
    env = {name: states[:, j] for j, name in enumerate(plan.state_names)}
    env.update({name: params[:, j] for j, name in enumerate(plan.param_names)})
    env.update({name: inputs[:, j] for j, name in enumerate(plan.input_names)})
    return env


def _deltas(plan: _Plan, states, params, inputs) -> np.ndarray:
    n = states.shape[0]
    env = _env(plan, states, params, inputs)
    out = np.empty((n, len(plan.rhs)))
    for k, rhs in enumerate(plan.rhs):
        out[:, k] = eval_array(rhs, env, size=n)
    return out


def _advance(ens: ParticleEnsemble, plan: _Plan, h: float, rng: RngStream, workers: int = 1):
    """One Euler slice.  Returns the new ensemble and the deltas it used."""
    n = ens.n
    states = np.empty_like(ens.states)
    params = np.empty_like(ens.params)
    inputs = np.empty_like(ens.inputs)
    deltas = np.empty_like(ens.states)
    logw = ens.log_weights.copy()
    intended = [_intended(s, ens.time) for s in plan.input_series]

    def kernel(b, lo, hi):
        gen = rng.derive(b).generator()
        k = hi - lo
        for j, sd in enumerate(plan.param_sigma_t):
            prev = ens.params[lo:hi, j]
            lo_b, hi_b = plan.param_bounds[j]
            if sd == 0:
                params[lo:hi, j] = prev
            elif math.isinf(lo_b) and math.isinf(hi_b):
                params[lo:hi, j] = prev + sd * gen.standard_normal(k)
            else:
                params[lo:hi, j] = dist.truncnorm_rvs(prev, sd, lo_b, hi_b, gen)
        for j, sd in enumerate(plan.input_sigma):
            v = intended[j]
            if math.isnan(v):
                inputs[lo:hi, j] = ens.inputs[lo:hi, j]
            else:
                inputs[lo:hi, j] = _gauss(v, sd, gen, k)
        x = ens.states[lo:hi]
        d = _deltas(plan, x, params[lo:hi], inputs[lo:hi])
        deltas[lo:hi] = d
        with np.errstate(all="ignore"):
            states[lo:hi] = x + h * d
        bad = ~np.isfinite(states[lo:hi]).all(axis=1)
        logw[lo:hi][bad] = -np.inf

    _for_blocks(kernel, n, workers)
    if not np.isfinite(logw).any():
        raise NumericOverflow(f"every particle became non-finite at t={ens.time + h!r}")
    out = replace(ens, states=states, params=params, inputs=inputs, log_weights=logw, time=ens.time + h)
    return out, deltas


def step(ensemble: ParticleEnsemble, m: OdeModel, h: float, rng: RngStream, workers: int = 1, *, plan: _Plan | None = None) -> ParticleEnsemble:
    """Advance every particle one Euler slice of length ``h``.

    Parameters move first (Gaussian around their previous value), true
    inputs are redrawn around the intended input, then the deltas are
    evaluated at the slice start and the states updated.  Weights are left
    alone except for particles that became non-finite (set to -inf).
    """
    if h < 0:
        raise ValueError("step size must be >= 0")
    out, _ = _advance(ensemble, plan or _plan(m), h, rng, workers)
    return out


def observations_at(m: OdeModel, evidence: Sequence[EvidenceStream], t: float) -> dict[str, float]:
    """Evidence values for observed states at time ``t``."""
    observed = {o.observed_state for o in m.observations}
    out = {}
    for s in evidence:
        if s.target in observed:
            v = value_at(s, t)
            if v is not None:
                out[s.target] = v
    return out


def _log_lik(x: np.ndarray, y: float, sigma: float) -> np.ndarray:
    with np.errstate(all="ignore"):
        z = (y - x) / sigma
        ll = -0.5 * z * z - math.log(sigma) - _HALF_LOG_2PI
    return np.where(np.isfinite(ll), ll, -np.inf)


def weigh(ensemble: ParticleEnsemble, m: OdeModel, observations: Mapping[str, float]) -> ParticleEnsemble:
    """Add the Gaussian observation log-likelihood to every particle."""
    if not observations:
        return ensemble
    sigmas = {o.observed_state: o.obs_sigma for o in m.observations}
    logw = ensemble.log_weights.copy()
    for name, y in observations.items():
        if name not in sigmas:
            raise KeyError(f"{name!r} is not an observed state of the model")
        x = ensemble.states[:, ensemble.state_names.index(name)]
        logw += _log_lik(x, y, sigmas[name])
    logw[np.isnan(logw)] = -np.inf
    return replace(ensemble, log_weights=logw)


def _unnormalised(log_weights: np.ndarray) -> np.ndarray:
    top = np.max(log_weights)
    if not np.isfinite(top):
        raise AllWeightsDegenerate("all particle weights are zero")
    return np.exp(log_weights - top)


def effective_sample_size(log_weights: np.ndarray) -> float:
    u = _unnormalised(log_weights)
    return float(u.sum() ** 2 / np.dot(u, u))


def systematic_indices(weights: np.ndarray, u: float) -> np.ndarray:
    """Ancestor indices for systematic resampling with offset ``u`` in [0, 1)."""
    n = len(weights)
    c = np.cumsum(weights)
    c /= c[-1]
    c[-1] = 1.0
    positions = (u + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, positions, side="right"), n - 1)


def resample_systematic(ensemble: ParticleEnsemble, rng: RngStream) -> ParticleEnsemble:
    """Systematic resampling; all weights equal afterwards."""
    w = _unnormalised(ensemble.log_weights)
    u = rng.generator().random()
    out = ensemble.take(systematic_indices(w, u))
    out.log_weights = np.zeros(ensemble.n)
    return out


def summarize(ensemble: ParticleEnsemble) -> StepSummary:
    """Weighted mean and standard deviation of every state and parameter."""
    u = _unnormalised(ensemble.log_weights)
    live = u > 0
    w = u[live] / u[live].sum()
    cols = np.hstack([ensemble.states, ensemble.params])[live]
    # centre on the heaviest particle so identical particles give exact means
    ref = cols[np.argmax(w)]
    with np.errstate(over="ignore", invalid="ignore"):
        mean = ref + w @ (cols - ref)
        var = w @ (cols - mean) ** 2
    ess = float(u.sum() ** 2 / np.dot(u, u))
    return StepSummary(
        float(ensemble.time),
        ensemble.state_names + ensemble.param_names,
        tuple(mean.tolist()),
        tuple(np.sqrt(np.maximum(var, 0.0)).tolist()),
        ess,
    )


def _maybe_resample(ens: ParticleEnsemble, cfg: InferenceConfig, rng: RngStream) -> ParticleEnsemble:
    if cfg.resample_threshold is not None:
        if effective_sample_size(ens.log_weights) >= cfg.resample_threshold * ens.n:
            return ens
    return resample_systematic(ens, rng)


def _stops(m: OdeModel, cfg: InferenceConfig, evidence: Sequence[EvidenceStream], extra=()) -> list[float]:
    observed = {o.observed_state for o in m.observations}
    streams = [s for s in evidence if s.target in observed]
    ts = event_times(streams, (cfg.t_start, cfg.t_end)) + [cfg.t_end] + list(extra)
    out: list[float] = []
    for t in sorted(t for t in ts if t > cfg.t_start + TIME_TOL):
        if not out or t - out[-1] > TIME_TOL:
            out.append(t)
    return out


def run_fixed(
    m: OdeModel,
    cfg: InferenceConfig,
    evidence: Sequence[EvidenceStream] | None = None,
    rng: RngStream | None = None,
    on_summary: Callable[[StepSummary], None] | None = None,
) -> list[StepSummary]:
    """Fixed-step filtering from ``t_start`` to ``t_end``.

    Every slice: step, weigh against any evidence at the new time, resample,
    summarise.  Steps are shortened where needed to land on evidence times.
    ``evidence`` defaults to the streams attached to the model's observations.
    """
    if not isinstance(cfg.mode, FixedStep):
        raise ValueError("run_fixed needs a FixedStep mode")
    evidence = m.evidence() if evidence is None else list(evidence)
    plan = _plan(m)
    rng = rng if rng is not None else RngStream(cfg.seed)
    h = cfg.mode.h
    summaries: list[StepSummary] = []

    def record(ens):
        s = summarize(ens)
        summaries.append(s)
        if on_summary is not None:
            on_summary(s)

    ens = init_ensemble(m, cfg, rng, plan=plan)
    ens = weigh(ens, m, observations_at(m, evidence, ens.time))
    k = 0
    ens = _maybe_resample(ens, cfg, rng.derive(_RESAMPLE, k))
    record(ens)

    anchor, j = cfg.t_start, 0
    for stop in _stops(m, cfg, evidence):
        while ens.time < stop - TIME_TOL:
            t_next = anchor + (j + 1) * h
            if t_next > stop + TIME_TOL:
                h_used, t_next = stop - ens.time, stop
            else:
                h_used = h
            if abs(t_next - stop) <= TIME_TOL:
                t_next = stop
            k += 1
            ens, _ = _advance(ens, plan, h_used, rng.derive(_STEP, k), cfg.workers)
            ens.time = t_next
            j += 1
            if t_next == stop:
                anchor, j = stop, 0
            ens = weigh(ens, m, observations_at(m, evidence, ens.time))
            ens = _maybe_resample(ens, cfg, rng.derive(_RESAMPLE, k))
            record(ens)
    return summaries
