"""Arithmetic expressions for ODE right-hand sides.

Grammar (lowest to highest binding)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := atom ('^' unary)?          # right-associative
    atom    := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'

Trees are immutable; evaluation is pure.  ``eval_expr`` works on Python
floats and raises on domain errors, ``eval_array`` works elementwise on numpy
arrays and lets IEEE semantics (nan/inf) through so that a particle filter can
cull the offending particles.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Constant",
    "Symbol",
    "Unary",
    "Binary",
    "Call",
    "ExprNode",
    "ExprError",
    "ExpressionSyntaxError",
    "UnknownFunction",
    "UnboundSymbol",
    "DomainError",
    "FUNCTIONS",
    "parse_expr",
    "unparse",
    "eval_expr",
    "eval_array",
    "free_symbols",
]


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Symbol:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # only "neg"
    child: "ExprNode"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div, pow
    left: "ExprNode"
    right: "ExprNode"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple["ExprNode", ...]


ExprNode = Union[Constant, Symbol, Unary, Binary, Call]


class ExprError(Exception):
    pass


class ExpressionSyntaxError(ExprError, ValueError):
    def __init__(self, position: int, expected: frozenset[str] | set[str], text: str = ""):
        self.position = position
        self.expected = frozenset(expected)
        self.text = text
        exp = ", ".join(sorted(self.expected))
        super().__init__(f"syntax error at position {position}: expected one of {{{exp}}}")


class UnknownFunction(ExprError, ValueError):
    def __init__(self, name: str, position: int | None = None):
        self.name = name
        self.position = position
        super().__init__(f"unknown function {name!r}")


class UnboundSymbol(ExprError, KeyError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(name)

    def __str__(self) -> str:
        return f"unbound symbol {self.name!r}"


class DomainError(ExprError, ArithmeticError):
    pass


# name -> (min arity, max arity); None means unbounded
FUNCTIONS: dict[str, tuple[int, int | None]] = {
    "exp": (1, 1),
    "ln": (1, 1),
    "sin": (1, 1),
    "cos": (1, 1),
    "sqrt": (1, 1),
    "abs": (1, 1),
    "min": (2, None),
    "max": (2, None),
}

_BINOPS = {"+": "add", "-": "sub", "*": "mul", "/": "div", "^": "pow"}
_OPCHARS = {v: k for k, v in _BINOPS.items()}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


@dataclass(frozen=True)
class _Token:
    kind: str  # num, ident, op, end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExpressionSyntaxError(pos, {"number", "identifier", "operator", "("}, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(_Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def fail(self, expected) -> ExpressionSyntaxError:
        return ExpressionSyntaxError(self.tok.pos, expected, self.text)

    def expect(self, text: str) -> None:
        if self.tok.kind != "op" or self.tok.text != text:
            raise self.fail({repr(text)})
        self.advance()

    def parse(self) -> ExprNode:
        node = self.expr()
        if self.tok.kind != "end":
            raise self.fail({"operator", "end of input"})
        return node

    def expr(self) -> ExprNode:
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = _BINOPS[self.advance().text]
            left = Binary(op, left, self.term())
        return left

    def term(self) -> ExprNode:
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = _BINOPS[self.advance().text]
            left = Binary(op, left, self.unary())
        return left

    def unary(self) -> ExprNode:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> ExprNode:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Constant(float(t.text))
        if t.kind == "ident":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            return Symbol(t.text)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        raise self.fail({"number", "identifier", "'('", "'-'"})

    def call(self, name: _Token) -> ExprNode:
        if name.text not in FUNCTIONS:
            raise UnknownFunction(name.text, name.pos)
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        lo, hi = FUNCTIONS[name.text]
        if len(args) < lo or (hi is not None and len(args) > hi):
            want = {"','"} if len(args) < lo else {"')'"}
            raise self.fail(want)
        self.expect(")")
        return Call(name.text, tuple(args))


def parse_expr(text: str) -> ExprNode:
    """Parse ``text`` into an expression tree.

    Raises ExpressionSyntaxError (with ``position`` and ``expected``) on
    malformed input and UnknownFunction for calls outside ``FUNCTIONS``.
    """
    return _Parser(text).parse()


# binding strength used by unparse
_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_ATOM = 5


def _prec(node: ExprNode) -> int:
    if isinstance(node, Binary):
        return _PREC[node.op]
    if isinstance(node, Unary):
        return _PREC["neg"]
    return _ATOM


def _wrap(node: ExprNode, parens: bool) -> str:
    s = unparse(node)
    return f"({s})" if parens else s


def unparse(node: ExprNode) -> str:
    """Render ``node`` as text that parses back to an equal tree."""
    if isinstance(node, Constant):
        if not math.isfinite(node.value) or node.value < 0 or math.copysign(1.0, node.value) < 0:
            raise ValueError(f"constant {node.value!r} has no literal form")
        return repr(float(node.value))
    if isinstance(node, Symbol):
        return node.name
    if isinstance(node, Unary):
        return "-" + _wrap(node.child, _prec(node.child) < _PREC["neg"])
    if isinstance(node, Call):
        return f"{node.fn}({', '.join(unparse(a) for a in node.args)})"
    p = _PREC[node.op]
    if node.op == "pow":
        left = _wrap(node.left, _prec(node.left) <= p)
        right = _wrap(node.right, _prec(node.right) < _PREC["neg"])
        return f"{left}^{right}"
    left = _wrap(node.left, _prec(node.left) < p)
    right = _wrap(node.right, _prec(node.right) <= p)
    return f"{left} {_OPCHARS[node.op]} {right}"


def free_symbols(node: ExprNode) -> frozenset[str]:
    """Names of all symbols occurring in ``node``."""
    out: set[str] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Symbol):
            out.add(n.name)
        elif isinstance(n, Unary):
            stack.append(n.child)
        elif isinstance(n, Binary):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.extend(n.args)
    return frozenset(out)


def is_identifier(name: str) -> bool:
    return bool(_IDENT_RE.match(name))


def _scalar_pow(a: float, b: float) -> float:
    if a == 0.0 and b < 0:
        raise DomainError("zero raised to a negative power")
    if a < 0 and not float(b).is_integer():
        raise DomainError("negative base with non-integer exponent")
    try:
        return math.pow(a, b)
    except OverflowError:
        return math.copysign(math.inf, a) if float(b).is_integer() and b % 2 else math.inf


def _scalar_call(fn: str, args: list[float]) -> float:
    if fn in ("min", "max"):
        return min(args) if fn == "min" else max(args)
    (x,) = args
    if fn == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return math.inf
    if fn == "ln":
        if x <= 0:
            raise DomainError(f"ln of non-positive value {x!r}")
        return math.log(x)
    if fn == "sqrt":
        if x < 0:
            raise DomainError(f"sqrt of negative value {x!r}")
        return math.sqrt(x)
    if fn in ("sin", "cos"):
        if math.isinf(x):
            raise DomainError(f"{fn} of infinite value")
        return math.sin(x) if fn == "sin" else math.cos(x)
    return abs(x)


def eval_expr(node: ExprNode, env: Mapping[str, float]) -> float:
    """Evaluate ``node`` in double precision with bindings from ``env``."""
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, Symbol):
        try:
            return float(env[node.name])
        except KeyError:
            raise UnboundSymbol(node.name) from None
    if isinstance(node, Unary):
        return -eval_expr(node.child, env)
    if isinstance(node, Call):
        return _scalar_call(node.fn, [eval_expr(a, env) for a in node.args])
    a = eval_expr(node.left, env)
    b = eval_expr(node.right, env)
    op = node.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0.0:
            raise DomainError("division by zero")
        return a / b
    return _scalar_pow(a, b)


_ARRAY_FUNCS = {
    "exp": np.exp,
    "ln": np.log,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
}

_ARRAY_BINOPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "pow": np.power,
}


def _eval_array(node: ExprNode, env: Mapping[str, np.ndarray | float]):
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, Symbol):
        try:
            return env[node.name]
        except KeyError:
            raise UnboundSymbol(node.name) from None
    if isinstance(node, Unary):
        return np.negative(_eval_array(node.child, env))
    if isinstance(node, Call):
        args = [_eval_array(a, env) for a in node.args]
        if node.fn == "min":
            out = args[0]
            for a in args[1:]:
                out = np.minimum(out, a)
            return out
        if node.fn == "max":
            out = args[0]
            for a in args[1:]:
                out = np.maximum(out, a)
            return out
        x = args[0]
        if node.fn == "ln":
            x = np.where(np.asarray(x) > 0, x, np.nan)
        return _ARRAY_FUNCS[node.fn](x)
    a = _eval_array(node.left, env)
    b = _eval_array(node.right, env)
    if node.op == "div":
        # exact zero divisor is a domain error, not +-inf
        return np.divide(a, np.where(np.asarray(b) == 0.0, np.nan, b))
    if node.op == "pow":
        a = np.asarray(a, dtype=float)
        return np.power(a, b)
    return _ARRAY_BINOPS[node.op](a, b)


def eval_array(node: ExprNode, env: Mapping[str, np.ndarray | float], size: int | None = None) -> np.ndarray:
    """Vectorised evaluation over arrays of bindings.

    Domain errors yield nan instead of raising.  If ``size`` is given the
    result is broadcast to that length (constant expressions otherwise stay
    scalar-shaped).
    """
    with np.errstate(all="ignore"):
        out = np.asarray(_eval_array(node, env), dtype=float)
    if size is not None and out.shape != (size,):
        out = np.broadcast_to(out, (size,)).copy()
    return out
