"""Reader for the line-oriented model file format.

::

    # comment
    model lorenz
    step 0.01
    state X = 2 [~ sigma 0.5]
    param c ~ gauss(28, 1.12) transition 0.1
    param k ~ uniform(0, 1) transition 0.01
    param k ~ truncgauss(0.1, 0.1, 0, inf) transition 0.01
    input TOC1 from toc1.csv continuous sigma 0.01
    dX/dt = a*X + Y*Z
    observe X sigma 0.01 [evidence lorenz_X.csv instantaneous]

Numbers anywhere in the file may be constant expressions (``-8/3``).
Relative CSV paths are resolved against the model file's directory.
"""

from __future__ import annotations

import math
import re
from pathlib import Path

from . import dist
from .evidence import EvidenceError, Mode, load_csv
from .expr import ExprError, ExpressionSyntaxError, eval_expr, parse_expr
from .model import InputSpec, ObservationSpec, OdeModel, ParameterSpec, StateVar

__all__ = ["ModelFileError", "parse_model", "load_model"]

_CONSTANTS = {"inf": math.inf, "pi": math.pi}

_ID = r"[A-Za-z_][A-Za-z0-9_]*"
_RE_MODEL = re.compile(rf"model\s+(?P<name>\S+)\s*$")
_RE_STEP = re.compile(r"step\s+(?P<h>.+?)\s*$")
_RE_STATE = re.compile(rf"state\s+(?P<id>{_ID})\s*=\s*(?P<mean>[^~]+?)\s*(?:~\s*sigma\s+(?P<sigma>.+?))?\s*$")
_RE_PARAM = re.compile(
    rf"param\s+(?P<id>{_ID})\s*~\s*(?P<fam>uniform|truncgauss|gauss)\s*\((?P<args>[^)]*)\)\s*"
    r"(?:transition\s+(?P<st>.+?))?\s*$"
)
_RE_INPUT = re.compile(
    rf"input\s+(?P<id>{_ID})\s+from\s+(?P<path>\S+)\s*(?P<mode>continuous|instantaneous)?\s+sigma\s+(?P<sigma>.+?)\s*$"
)
_RE_EQN = re.compile(rf"d(?P<id>{_ID})\s*/\s*dt\s*=(?P<rhs>.*)$")
_RE_OBS = re.compile(
    rf"observe\s+(?P<id>{_ID})\s+sigma\s+(?P<sigma>\S+)"
    r"(?:\s+evidence\s+(?P<path>\S+)\s+(?P<mode>continuous|instantaneous))?\s*$"
)


class ModelFileError(ValueError):
    def __init__(self, source: str, line: int, column: int, message: str):
        self.source = source
        self.line = line
        self.column = column
        super().__init__(f"{source}:{line}:{column}: {message}")


def _number(text: str, source: str, line: int, col: int) -> float:
    try:
        return float(eval_expr(parse_expr(text), _CONSTANTS))
    except ExpressionSyntaxError as exc:
        raise ModelFileError(source, line, col + exc.position, f"bad number {text!r}") from None
    except ExprError as exc:
        raise ModelFileError(source, line, col, f"bad number {text!r}: {exc}") from None


def _split_args(text: str) -> list[str]:
    return [a.strip() for a in text.split(",")]


def parse_model(text: str, base_dir: Path | str = ".", source: str = "<model>") -> OdeModel:
    """Parse model file ``text``; evidence CSVs are loaded relative to ``base_dir``."""
    base_dir = Path(base_dir)
    name = None
    step = None
    states: dict[str, tuple[float, float]] = {}
    eqns: dict[str, object] = {}
    eqn_lines: dict[str, int] = {}
    params: list[ParameterSpec] = []
    inputs: list[InputSpec] = []
    obs: list[ObservationSpec] = []

    def load(path: str, target: str, mode: str, lineno: int, col: int):
        try:
            return load_csv(base_dir / path, target=target, mode=Mode(mode))
        except (OSError, EvidenceError) as exc:
            raise ModelFileError(source, lineno, col, f"cannot load evidence {path!r}: {exc}") from None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        stripped = line.lstrip()
        if not stripped:
            continue
        indent = len(line) - len(stripped)

        def num(s, group):
            return _number(s, source, lineno, indent + m.start(group) + 1)

        if m := _RE_MODEL.match(stripped):
            name = m["name"]
        elif m := _RE_STEP.match(stripped):
            step = num(m["h"], "h")
        elif m := _RE_STATE.match(stripped):
            sigma = num(m["sigma"], "sigma") if m["sigma"] else 0.0
            states[m["id"]] = (num(m["mean"], "mean"), sigma)
        elif m := _RE_PARAM.match(stripped):
            col = indent + m.start("args") + 1
            args = [_number(a, source, lineno, col) for a in _split_args(m["args"])]
            fam = m["fam"]
            want = {"uniform": 2, "gauss": 2, "truncgauss": 4}[fam]
            if len(args) != want:
                raise ModelFileError(source, lineno, col, f"{fam} takes {want} arguments, got {len(args)}")
            if fam == "uniform":
                prior = dist.Uniform(*args)
            elif fam == "gauss":
                prior = dist.LinearGaussian(*args)
            else:
                prior = dist.TruncatedGaussian(*args)
            st = num(m["st"], "st") if m["st"] else 0.0
            params.append(ParameterSpec(m["id"], prior, st))
        elif m := _RE_INPUT.match(stripped):
            mode = m["mode"] or "continuous"
            series = load(m["path"], m["id"], mode, lineno, indent + m.start("path") + 1)
            inputs.append(InputSpec(m["id"], series, num(m["sigma"], "sigma")))
        elif m := _RE_EQN.match(stripped):
            col = indent + m.start("rhs") + 1
            try:
                eqns[m["id"]] = parse_expr(m["rhs"])
                eqn_lines[m["id"]] = lineno
            except ExpressionSyntaxError as exc:
                raise ModelFileError(source, lineno, col + exc.position, str(exc)) from None
            except ExprError as exc:
                raise ModelFileError(source, lineno, col, str(exc)) from None
        elif m := _RE_OBS.match(stripped):
            series = None
            if m["path"]:
                series = load(m["path"], m["id"], m["mode"], lineno, indent + m.start("path") + 1)
            obs.append(ObservationSpec(m["id"], num(m["sigma"], "sigma"), series))
        else:
            raise ModelFileError(source, lineno, indent + 1, f"unrecognised line: {stripped!r}")

    for sid, lineno in eqn_lines.items():
        if sid not in states:
            raise ModelFileError(source, lineno, 1, f"equation d{sid}/dt has no matching 'state {sid} = ...' line")
    state_vars = tuple(
        StateVar(sid, eqns.get(sid), mean, sigma) for sid, (mean, sigma) in states.items()
    )
    return OdeModel(
        name=name or Path(source).stem,
        states=state_vars,
        params=tuple(params),
        inputs=tuple(inputs),
        observations=tuple(obs),
        natural_step=step if step is not None else 1.0,
    )


def load_model(path) -> OdeModel:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFileError(str(path), 0, 0, f"cannot read model file: {exc}") from None
    return parse_model(text, base_dir=path.parent, source=str(path))
