"""Compile an ODE model into a two-slice dynamic Bayesian network.

Each state ``X`` becomes a deterministic pair: a delta node holding the
right-hand side (parents: the symbols it mentions, same slice) and a state
node updated by forward Euler from itself and its delta in the previous
slice.  Parameters carry a self-arc across slices; observed nodes hang off
their state; true inputs hang off their intended input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .expr import free_symbols
from .model import InvalidModel, OdeModel, validate_model

__all__ = ["NodeKind", "DbnNode", "DbnGraph", "CyclicIntraSlice", "compile_model", "export_dot"]


class NodeKind(str, enum.Enum):
    STATE = "state"
    DELTA = "delta"
    PARAMETER = "parameter"
    TRUE_INPUT = "true input"
    INTENDED_INPUT = "intended input"
    OBSERVED = "observed"


# drawing / reporting order
_KIND_ORDER = list(NodeKind)
_ID_PREFIX = {
    NodeKind.STATE: "state",
    NodeKind.DELTA: "delta",
    NodeKind.PARAMETER: "param",
    NodeKind.TRUE_INPUT: "input",
    NodeKind.INTENDED_INPUT: "intended",
    NodeKind.OBSERVED: "obs",
}


class CyclicIntraSlice(ValueError):
    pass


@dataclass(frozen=True)
class DbnNode:
    id: str
    kind: NodeKind
    name: str
    payload: object = None  # ExprNode for deltas, prior for parameters, sigma otherwise

    @property
    def label(self) -> str:
        if self.kind is NodeKind.DELTA:
            return "Δ" + self.name
        if self.kind is NodeKind.INTENDED_INPUT:
            return self.name + "_intended"
        if self.kind is NodeKind.OBSERVED:
            return self.name + "_obs"
        return self.name


def node_id(kind: NodeKind, name: str) -> str:
    return f"{_ID_PREFIX[kind]}:{name}"


@dataclass(frozen=True)
class DbnGraph:
    name: str
    nodes: tuple[DbnNode, ...]
    intra_arcs: tuple[tuple[str, str], ...]
    inter_arcs: tuple[tuple[str, str], ...]

    def node(self, nid: str) -> DbnNode:
        for n in self.nodes:
            if n.id == nid:
                return n
        raise KeyError(nid)

    def of_kind(self, kind: NodeKind) -> list[DbnNode]:
        return [n for n in self.nodes if n.kind is kind]

    def intra_parents(self, nid: str) -> set[str]:
        return {a for a, b in self.intra_arcs if b == nid}

    def inter_parents(self, nid: str) -> set[str]:
        return {a for a, b in self.inter_arcs if b == nid}

    def counts(self) -> dict[NodeKind, int]:
        return {k: len(self.of_kind(k)) for k in _KIND_ORDER}

    def report(self) -> str:
        parts = []
        for kind, n in self.counts().items():
            if n:
                parts.append(f"{n} {kind.value}")
        return f"{len(self.nodes)} nodes ({', '.join(parts)})"


def _check_acyclic(nodes, arcs) -> None:
    children: dict[str, list[str]] = {n.id: [] for n in nodes}
    indeg = {n.id: 0 for n in nodes}
    for a, b in arcs:
        children[a].append(b)
        indeg[b] += 1
    ready = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while ready:
        n = ready.pop()
        seen += 1
        for c in children[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                ready.append(c)
    if seen != len(nodes):
        stuck = sorted(n for n, d in indeg.items() if d > 0)
        raise CyclicIntraSlice(f"intra-slice cycle through {', '.join(stuck)}")


def compile_model(m: OdeModel) -> DbnGraph:
    """Build the DBN for a valid model; raises InvalidModel otherwise."""
    diags = validate_model(m)
    if diags:
        raise InvalidModel(diags)

    nodes: list[DbnNode] = []
    intra: list[tuple[str, str]] = []
    inter: list[tuple[str, str]] = []

    symbol_node = {}
    for s in m.states:
        symbol_node[s.name] = node_id(NodeKind.STATE, s.name)
    for p in m.params:
        symbol_node[p.name] = node_id(NodeKind.PARAMETER, p.name)
    for i in m.inputs:
        symbol_node[i.name] = node_id(NodeKind.TRUE_INPUT, i.name)

    for s in m.states:
        sid = node_id(NodeKind.STATE, s.name)
        did = node_id(NodeKind.DELTA, s.name)
        nodes.append(DbnNode(sid, NodeKind.STATE, s.name, s.initial_sigma))
        nodes.append(DbnNode(did, NodeKind.DELTA, s.name, s.rhs))
        for sym in sorted(free_symbols(s.rhs)):
            intra.append((symbol_node[sym], did))
        inter.append((sid, sid))
        inter.append((did, sid))
    for p in m.params:
        pid = node_id(NodeKind.PARAMETER, p.name)
        nodes.append(DbnNode(pid, NodeKind.PARAMETER, p.name, p.prior))
        inter.append((pid, pid))
    for i in m.inputs:
        tid = node_id(NodeKind.TRUE_INPUT, i.name)
        iid = node_id(NodeKind.INTENDED_INPUT, i.name)
        nodes.append(DbnNode(tid, NodeKind.TRUE_INPUT, i.name, i.input_sigma))
        nodes.append(DbnNode(iid, NodeKind.INTENDED_INPUT, i.name, None))
        intra.append((iid, tid))
    for o in m.observations:
        oid = node_id(NodeKind.OBSERVED, o.observed_state)
        if any(n.id == oid for n in nodes):
            oid = f"{oid}#{sum(n.kind is NodeKind.OBSERVED for n in nodes)}"
        nodes.append(DbnNode(oid, NodeKind.OBSERVED, o.observed_state, o.obs_sigma))
        intra.append((node_id(NodeKind.STATE, o.observed_state), oid))

    _check_acyclic(nodes, intra)
    return DbnGraph(m.name, tuple(nodes), tuple(intra), tuple(inter))


def _sorted_nodes(g: DbnGraph) -> list[DbnNode]:
    return sorted(g.nodes, key=lambda n: (_KIND_ORDER.index(n.kind), n.name, n.id))


def _dot_id(nid: str, t: int) -> str:
    return '"' + nid.replace('"', '\\"') + f'@{t}"'


_STYLE = {
    NodeKind.STATE: "shape=ellipse",
    NodeKind.DELTA: "shape=box",
    NodeKind.PARAMETER: "shape=ellipse, style=dashed",
    NodeKind.TRUE_INPUT: "shape=ellipse",
    NodeKind.INTENDED_INPUT: "shape=ellipse, style=filled, fillcolor=gray",
    NodeKind.OBSERVED: "shape=ellipse, style=filled, fillcolor=black, fontcolor=white",
}


def export_dot(g: DbnGraph) -> str:
    """Two-slice unrolled DOT rendering; output is a pure function of ``g``."""
    order = _sorted_nodes(g)
    rank = {n.id: i for i, n in enumerate(order)}
    lines = [f'digraph "{g.name}" {{', "  rankdir=LR;"]
    for t in (0, 1):
        lines.append(f"  subgraph cluster_slice{t} {{")
        lines.append(f'    label="t{"+1" if t else ""}";')
        for n in order:
            lines.append(f'    {_dot_id(n.id, t)} [label="{n.label}", {_STYLE[n.kind]}];')
        lines.append("  }")
    intra = sorted(g.intra_arcs, key=lambda a: (rank[a[1]], rank[a[0]]))
    for t in (0, 1):
        for a, b in intra:
            lines.append(f"  {_dot_id(a, t)} -> {_dot_id(b, t)};")
    for a, b in sorted(g.inter_arcs, key=lambda a: (rank[a[1]], rank[a[0]])):
        style = " [style=dashed]" if a == b and g.node(a).kind is NodeKind.PARAMETER else ""
        lines.append(f"  {_dot_id(a, 0)} -> {_dot_id(b, 1)}{style};")
    lines.append("}")
    return "\n".join(lines) + "\n"
