import numpy as np
import pytest

from odedbn import dist
from odedbn.compiler import CyclicIntraSlice, NodeKind, _check_acyclic, compile_model, export_dot
from odedbn.expr import eval_expr, free_symbols, parse_expr
from odedbn.model import InvalidModel, OdeModel, StateVar
from odedbn.modelfile import load_model
from odedbn.oracle import models_dir


@pytest.fixture(scope="module")
def lorenz():
    return compile_model(load_model(models_dir() / "lorenz.model"))


def test_lorenz_structure(lorenz):
    c = lorenz.counts()
    assert len(lorenz.nodes) == 10
    assert (c[NodeKind.STATE], c[NodeKind.DELTA], c[NodeKind.PARAMETER], c[NodeKind.OBSERVED]) == (3, 3, 3, 1)
    assert lorenz.report() == "10 nodes (3 state, 3 delta, 3 parameter, 1 observed)"
    assert len(lorenz.inter_arcs) == 9
    assert lorenz.intra_parents("delta:X") == {"param:a", "state:X", "state:Y", "state:Z"}
    assert lorenz.intra_parents("delta:Y") == {"param:b", "state:Y", "state:Z"}
    assert lorenz.intra_parents("obs:X") == {"state:X"}
    for s in "XYZ":
        assert lorenz.inter_parents(f"state:{s}") == {f"state:{s}", f"delta:{s}"}
    for p in "abc":
        assert lorenz.inter_parents(f"param:{p}") == {f"param:{p}"}
    assert {n.label for n in lorenz.of_kind(NodeKind.DELTA)} == {"ΔX", "ΔY", "ΔZ"}


@pytest.mark.parametrize("name", ["lorenz", "lotka", "stc", "pif45"])
def test_graph_invariants(name):
    m = load_model(models_dir() / f"{name}.model")
    g = compile_model(m)
    assert len(g.nodes) == 2 * len(m.states) + len(m.params) + 2 * len(m.inputs) + len(m.observations)
    symbol_node = {n.name: n.id for n in g.nodes if n.kind in (NodeKind.STATE, NodeKind.PARAMETER, NodeKind.TRUE_INPUT)}
    for s in m.states:
        assert g.intra_parents(f"delta:{s.name}") == {symbol_node[x] for x in free_symbols(s.rhs)}
        assert g.node(f"delta:{s.name}").payload is s.rhs
    for i in m.inputs:
        assert g.intra_parents(f"input:{i.name}") == {f"intended:{i.name}"}
    for n in g.of_kind(NodeKind.OBSERVED):
        assert g.intra_parents(n.id) == {f"state:{n.name}"}
    assert compile_model(m) == g


def test_pif45_counts():
    g = compile_model(load_model(models_dir() / "pif45.model"))
    assert len(g.nodes) == 8
    assert g.node("input:TOC1").label == "TOC1" and g.node("intended:TOC1").label == "TOC1_intended"


def test_delta_payload_evaluates_like_source(lorenz):
    rng = np.random.default_rng(0)
    m = load_model(models_dir() / "lorenz.model")
    for _ in range(20):
        env = dict(zip("XYZabc", rng.normal(size=6) * 10))
        for s in m.states:
            assert eval_expr(lorenz.node(f"delta:{s.name}").payload, env) == eval_expr(s.rhs, env)


def test_invalid_model_rejected():
    with pytest.raises(InvalidModel):
        compile_model(OdeModel("empty", states=()))


def test_cycle_detection():
    from odedbn.compiler import DbnNode

    nodes = [DbnNode("a", NodeKind.DELTA, "a"), DbnNode("b", NodeKind.DELTA, "b")]
    with pytest.raises(CyclicIntraSlice):
        _check_acyclic(nodes, [("a", "b"), ("b", "a")])
    _check_acyclic(nodes, [("a", "b")])


def drawn_nodes(dot):
    return [line for line in dot.splitlines() if "[label=" in line]


def test_dot_export(lorenz):
    dot = export_dot(lorenz)
    assert len(drawn_nodes(dot)) == 20
    assert dot == export_dot(lorenz)
    assert '"param:c@0" -> "param:c@1" [style=dashed];' in dot
    # ordering: states, then deltas, then parameters, each by name
    first = [line.split('"')[1] for line in drawn_nodes(dot)[:10]]
    assert first == [
        "state:X@0", "state:Y@0", "state:Z@0",
        "delta:X@0", "delta:Y@0", "delta:Z@0",
        "param:a@0", "param:b@0", "param:c@0",
        "obs:X@0",
    ]


def test_dot_single_state():
    g = compile_model(OdeModel("one", states=(StateVar("X", parse_expr("1"), 0.0),)))
    assert len(drawn_nodes(export_dot(g))) == 4
