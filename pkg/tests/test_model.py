import math
from dataclasses import replace

import pytest

from odedbn import dist
from odedbn.evidence import Mode
from odedbn.expr import parse_expr
from odedbn.model import (
    InputSpec,
    ObservationSpec,
    OdeModel,
    ParameterSpec,
    StateVar,
    prior_means,
    validate_model,
)
from odedbn.modelfile import ModelFileError, load_model, parse_model
from odedbn.oracle import models_dir

SHIPPED = ["lorenz", "lotka", "stc", "pif45"]


def codes(m):
    return [d.code for d in validate_model(m)]


def simple(**kw):
    base = OdeModel(
        name="decay",
        states=(StateVar("X", parse_expr("-k*X"), 1.0),),
        params=(ParameterSpec("k", dist.LinearGaussian(0.5, 0.1), 0.01),),
        observations=(ObservationSpec("X", 0.01),),
    )
    return replace(base, **kw)


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_models_validate(name):
    assert validate_model(load_model(models_dir() / f"{name}.model")) == []


def test_lorenz_file_contents():
    m = load_model(models_dir() / "lorenz.model")
    assert m.state_names == ["X", "Y", "Z"]
    assert m.param_names == ["a", "b", "c"]
    assert m.natural_step == 0.01
    assert [s.initial_mean for s in m.states] == [2.0, 2.0, 2.0]
    a, b, c = m.params
    assert a.prior == dist.LinearGaussian(-8 / 3, 0.0) and a.transition_sigma == 0
    assert b.prior == dist.LinearGaussian(-10.0, 0.0)
    assert c.prior == dist.LinearGaussian(28.0, 1.12) and c.transition_sigma == 0.1
    assert m.observations[0].observed_state == "X" and m.observations[0].obs_sigma == 0.01
    assert m.observations[0].evidence.mode is Mode.INSTANTANEOUS


def test_valid_simple_model():
    assert validate_model(simple()) == []
    assert prior_means(simple()) == {"k": 0.5}


def test_unbound_symbol():
    m = simple(states=(StateVar("X", parse_expr("-k*X + q"), 1.0),))
    diags = validate_model(m)
    assert [d.code for d in diags] == ["UnboundSymbol"]
    assert "q" in diags[0].message and diags[0].location == "state X"


@pytest.mark.parametrize(
    "change, code",
    [
        (dict(params=(ParameterSpec("k", dist.LinearGaussian(0.5, 0.1), -0.1),)), "NegativeSigma"),
        (dict(params=(ParameterSpec("k", dist.Gaussian(0.5, -1), 0),)), "NegativeSigma"),
        (dict(params=(ParameterSpec("k", dist.Uniform(1, 0), 0),)), "InvalidBounds"),
        (dict(states=(StateVar("X", parse_expr("-k*X"), 1.0, -1),)), "NegativeSigma"),
        (dict(states=(StateVar("X", None, 1.0),)), "MissingEquation"),
        (dict(states=()), "EmptyModel"),
        (dict(natural_step=0), "NonPositiveStep"),
        (dict(observations=(ObservationSpec("Q", 0.1),)), "UnknownObservedState"),
        (dict(observations=(ObservationSpec("X", 0),)), "NonPositiveSigma"),
        (dict(params=(ParameterSpec("X", dist.Gaussian(0, 1), 0),)), "DuplicateName"),
        (dict(params=(ParameterSpec("2k", dist.Gaussian(0, 1), 0),)), "InvalidIdentifier"),
        (dict(inputs=(InputSpec("u", None, 0.1),)), "MissingInputSeries"),
    ],
)
def test_invariant_violations(change, code):
    assert code in codes(simple(**change))


def test_smoke_evaluation_failure():
    m = simple(states=(StateVar("X", parse_expr("ln(X - 1)"), 1.0),))
    assert codes(m) == ["EvalFailure"]


# ---- model file reader -----------------------------------------------------

def test_parse_full_grammar(tmp_path):
    (tmp_path / "u.csv").write_text("0,1\n5,2\n")
    (tmp_path / "obs.csv").write_text("time,value\n1,0.5\n")
    text = """
    # a comment
    model demo
    step 0.5
    state X = 1 ~ sigma 0.2   # trailing comment
    state Y = -8/3
    param k ~ uniform(0, 2) transition 0.01
    param m ~ truncgauss(0.1, 0.1, 0, inf)
    param g ~ gauss(2.2, 0.1) transition 0.05
    input u from u.csv continuous sigma 0.01
    dX/dt = -k*X + u
    dY / dt = m - g*Y
    observe X sigma 0.01 evidence obs.csv instantaneous
    observe Y sigma 0.1
    """
    m = parse_model(text, base_dir=tmp_path)
    assert m.name == "demo" and m.natural_step == 0.5
    assert m.states[0].initial_sigma == 0.2
    assert m.states[1].initial_mean == pytest.approx(-8 / 3)
    assert m.params[0].prior == dist.Uniform(0, 2)
    assert m.params[1].prior == dist.TruncatedGaussian(0.1, 0.1, 0, math.inf)
    assert m.params[1].transition_sigma == 0
    assert m.params[2].prior == dist.LinearGaussian(2.2, 0.1)
    assert m.inputs[0].intended_series.mode is Mode.CONTINUOUS
    assert m.inputs[0].intended_series.target == "u"
    assert m.observations[0].evidence.points == [(1.0, 0.5)]
    assert m.observations[1].evidence is None
    assert validate_model(m) == []


@pytest.mark.parametrize(
    "text, line",
    [
        ("model x\nstate X = 1\ndX/dt = X +\n", 3),
        ("model x\nstate X = 1\nfoo bar\n", 3),
        ("model x\nparam k ~ uniform(1)\n", 2),
        ("model x\ndX/dt = 1\n", 2),
        ("model x\nstate X = 1/\n", 2),
        ("model x\nobserve X sigma 0.1 evidence missing.csv instantaneous\n", 2),
    ],
)
def test_model_file_errors_point_at_line(tmp_path, text, line):
    with pytest.raises(ModelFileError) as info:
        parse_model(text, base_dir=tmp_path, source="m.model")
    assert info.value.line == line
    assert info.value.column >= 1
    assert str(info.value).startswith(f"m.model:{line}:")


def test_missing_file():
    with pytest.raises(ModelFileError):
        load_model("/nonexistent/x.model")
