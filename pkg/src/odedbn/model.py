"""ODE model description: states, parameters, inputs and observations."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import dist
from .dist import DistributionSpec
from .evidence import EvidenceStream, value_at
from .expr import ExprError, ExprNode, eval_expr, free_symbols, is_identifier

__all__ = [
    "StateVar",
    "ParameterSpec",
    "InputSpec",
    "ObservationSpec",
    "OdeModel",
    "Diagnostic",
    "InvalidModel",
    "validate_model",
    "prior_means",
]


@dataclass(frozen=True)
class StateVar:
    name: str
    rhs: ExprNode | None
    initial_mean: float
    initial_sigma: float = 0.0


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    prior: DistributionSpec
    transition_sigma: float = 0.0

    @property
    def bounds(self) -> tuple[float, float]:
        """Support of the prior; parameter transitions stay inside it."""
        if isinstance(self.prior, (dist.Uniform, dist.TruncatedGaussian)):
            return self.prior.lo, self.prior.hi
        return -float("inf"), float("inf")


@dataclass(frozen=True)
class InputSpec:
    name: str
    intended_series: EvidenceStream | None
    input_sigma: float = 0.0


@dataclass(frozen=True)
class ObservationSpec:
    observed_state: str
    obs_sigma: float
    evidence: EvidenceStream | None = None


@dataclass(frozen=True)
class OdeModel:
    name: str
    states: tuple[StateVar, ...]
    params: tuple[ParameterSpec, ...] = ()
    inputs: tuple[InputSpec, ...] = ()
    observations: tuple[ObservationSpec, ...] = ()
    natural_step: float = 1.0

    @property
    def state_names(self) -> list[str]:
        return [s.name for s in self.states]

    @property
    def param_names(self) -> list[str]:
        return [p.name for p in self.params]

    @property
    def input_names(self) -> list[str]:
        return [i.name for i in self.inputs]

    def state(self, name: str) -> StateVar:
        for s in self.states:
            if s.name == name:
                return s
        raise KeyError(name)

    def evidence(self) -> list[EvidenceStream]:
        """Evidence streams attached to the observations."""
        return [o.evidence for o in self.observations if o.evidence is not None]


@dataclass(frozen=True)
class Diagnostic:
    code: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"{self.location}: {self.code}: {self.message}"


class InvalidModel(ValueError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("\n".join(str(d) for d in diagnostics))


def prior_means(m: OdeModel) -> dict[str, float]:
    return {p.name: dist.mean_of(p.prior) for p in m.params}


def validate_model(m: OdeModel) -> list[Diagnostic]:
    """Check every model invariant; an empty list means the model is usable."""
    diags: list[Diagnostic] = []

    def add(code, loc, msg):
        diags.append(Diagnostic(code, loc, msg))

    if not m.states:
        add("EmptyModel", f"model {m.name}", "model declares no state variables")
    if not m.natural_step > 0:
        add("NonPositiveStep", f"model {m.name}", f"natural step must be > 0, got {m.natural_step}")

    seen: dict[str, str] = {}
    for kind, names in (("state", m.state_names), ("param", m.param_names), ("input", m.input_names)):
        for name in names:
            if not is_identifier(name):
                add("InvalidIdentifier", f"{kind} {name}", f"{name!r} is not an identifier")
            if name in seen:
                add("DuplicateName", f"{kind} {name}", f"{name!r} already declared as {seen[name]}")
            else:
                seen[name] = kind

    known = set(seen)
    for s in m.states:
        loc = f"state {s.name}"
        if s.rhs is None:
            add("MissingEquation", loc, f"no equation d{s.name}/dt given")
        else:
            for sym in sorted(free_symbols(s.rhs) - known):
                add("UnboundSymbol", loc, f"right-hand side uses undeclared symbol {sym!r}")
        if not s.initial_sigma >= 0:
            add("NegativeSigma", loc, f"initial sigma must be >= 0, got {s.initial_sigma}")

    for p in m.params:
        loc = f"param {p.name}"
        for problem in dist.spec_problems(p.prior):
            code = "NegativeSigma" if "sigma" in problem else "InvalidBounds"
            add(code, loc, problem)
        if not p.transition_sigma >= 0:
            add("NegativeSigma", loc, f"transition sigma must be >= 0, got {p.transition_sigma}")

    for i in m.inputs:
        loc = f"input {i.name}"
        if not i.input_sigma >= 0:
            add("NegativeSigma", loc, f"input sigma must be >= 0, got {i.input_sigma}")
        if i.intended_series is None or not i.intended_series.times:
            add("MissingInputSeries", loc, "input has no intended series")

    for o in m.observations:
        loc = f"observe {o.observed_state}"
        if o.observed_state not in m.state_names:
            add("UnknownObservedState", loc, f"{o.observed_state!r} is not a state variable")
        if not o.obs_sigma > 0:
            add("NonPositiveSigma", loc, f"observation sigma must be > 0, got {o.obs_sigma}")

    if not diags:
        diags.extend(_smoke(m))
    return diags


def _smoke(m: OdeModel) -> list[Diagnostic]:
    env = {s.name: s.initial_mean for s in m.states}
    env.update(prior_means(m))
    for i in m.inputs:
        env[i.name] = value_at(i.intended_series, i.intended_series.times[0])
    out = []
    for s in m.states:
        try:
            eval_expr(s.rhs, env)
        except ExprError as exc:
            out.append(Diagnostic("EvalFailure", f"state {s.name}", f"right-hand side fails at the initial state: {exc}"))
    return out
