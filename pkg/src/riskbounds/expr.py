"""Scalar expressions of one variable ``x`` with named parameters.

Coefficient functions (drift, volatility, short rate) are written as text in
configuration files, e.g. ``"kappa*(theta - x)"`` or ``"v*x"``.  This module
parses such text into an immutable AST, evaluates it in double precision, and
compiles it to a flat postfix program that the numba kernels in
:mod:`riskbounds.odecore` and :mod:`riskbounds.mcverify` run without Python
callbacks.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := atom ('^' unary)?            # right associative
    atom    := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

``**`` is accepted as a synonym of ``^``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numba
import numpy as np

FUNCTIONS = ("exp", "log", "sqrt", "abs")


class ExprError(ValueError):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at offset {position}")
        self.position = position


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier {name!r} at offset {position}")
        self.name = name
        self.position = position


class ExprDomainError(ExprError, ArithmeticError):
    """Raised when evaluation leaves the real domain of an operation."""

    def __init__(self, message: str, node: "Node"):
        super().__init__(f"{message} in {to_source(node)}")
        self.node = node


# --------------------------------------------------------------------------- AST


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Param, BinOp, Neg, Call]


@dataclass(frozen=True)
class Expression:
    """A parsed expression together with the parameter names it may use."""

    ast: Node
    parameters: frozenset
    source: str = ""

    def __call__(self, x, bindings: Mapping[str, float] | None = None):
        return evaluate(self, x, bindings or {})

    def free_parameters(self) -> set[str]:
        return _collect_params(self.ast)

    def compile(self, bindings: Mapping[str, float] | None = None) -> "Program":
        return compile_program(self, bindings or {})

    def __str__(self) -> str:
        return to_source(self.ast)


def _collect_params(node: Node) -> set[str]:
    if isinstance(node, Param):
        return {node.name}
    if isinstance(node, BinOp):
        return _collect_params(node.left) | _collect_params(node.right)
    if isinstance(node, Neg):
        return _collect_params(node.operand)
    if isinstance(node, Call):
        return _collect_params(node.arg)
    return set()


# ------------------------------------------------------------------------ parser

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()])"
    r")"
)


@dataclass
class _Token:
    kind: str  # num, name, op, end
    text: str
    pos: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    pos = 0
    n = len(source)
    while pos < n:
        if source[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(source, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", pos)
        kind = m.lastgroup
        text = m.group(kind)
        start = m.start(kind)
        if kind == "op" and text == "**":
            text = "^"
        tokens.append(_Token(kind, text, start))
        pos = m.end()
    tokens.append(_Token("end", "", n))
    return tokens


class _Parser:
    def __init__(self, source: str, parameters: frozenset):
        self.source = source
        self.parameters = parameters
        self.tokens = _tokenize(source)
        self.i = 0

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> None:
        if self.tok.kind != "op" or self.tok.text != text:
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            raise ExprSyntaxError(f"expected {text!r}, found {found}", self.tok.pos)
        self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            raise ExprSyntaxError(f"unexpected {self.tok.text!r}", self.tok.pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        if self.tok.kind == "op" and self.tok.text == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Const(float(t.text))
        if t.kind == "name":
            self.advance()
            if t.text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(t.text, arg)
            if t.text == "x":
                return Var()
            if t.text in self.parameters:
                return Param(t.text)
            raise UnknownIdentifierError(t.text, t.pos)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "end":
            raise ExprSyntaxError("unexpected end of input", t.pos)
        raise ExprSyntaxError(f"unexpected {t.text!r}", t.pos)


def parse(source: str, parameters=()) -> Expression:
    """Parse ``source`` into an :class:`Expression`.

    Identifiers other than ``x``, the names in ``parameters`` and the function
    names ``exp``, ``log``, ``sqrt``, ``abs`` are rejected.
    """
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0)
    params = frozenset(parameters)
    if "x" in params:
        raise ExprError("'x' is reserved for the state variable")
    clash = params.intersection(FUNCTIONS)
    if clash:
        raise ExprError(f"parameter names shadow functions: {sorted(clash)}")
    return Expression(_Parser(source, params).parse(), params, source)


# ----------------------------------------------------------------- pretty print


def to_source(node: Node | Expression) -> str:
    """Fully parenthesised text that reparses to the same AST."""
    if isinstance(node, Expression):
        node = node.ast
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({to_source(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    raise TypeError(f"not an expression node: {node!r}")


# -------------------------------------------------------------------- evaluation


def evaluate(expr: Expression | Node, x, bindings: Mapping[str, float] | None = None):
    """Evaluate at a float or an array of points.

    Domain violations raise :class:`ExprDomainError` instead of producing NaN.
    """
    bindings = bindings or {}
    node = expr.ast if isinstance(expr, Expression) else expr
    if isinstance(expr, Expression):
        missing = expr.free_parameters() - set(bindings)
        if missing:
            raise ExprError(f"missing bindings for {sorted(missing)}")
    scalar = np.ndim(x) == 0
    xv = np.float64(x) if scalar else np.asarray(x, dtype=np.float64)
    with np.errstate(all="ignore"):
        out = _eval(node, xv, bindings)
    if scalar:
        return float(out)
    return np.broadcast_to(np.asarray(out, dtype=np.float64), np.shape(xv)).copy()


def _eval(node: Node, x, b: Mapping[str, float]):
    if isinstance(node, Const):
        return np.float64(node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Param):
        return np.float64(b[node.name])
    if isinstance(node, Neg):
        return -_eval(node.operand, x, b)
    if isinstance(node, Call):
        a = _eval(node.arg, x, b)
        if node.func == "exp":
            return np.exp(a)
        if node.func == "log":
            if np.any(a <= 0):
                raise ExprDomainError("log of non-positive value", node)
            return np.log(a)
        if node.func == "sqrt":
            if np.any(a < 0):
                raise ExprDomainError("sqrt of negative value", node)
            return np.sqrt(a)
        return np.abs(a)
    left = _eval(node.left, x, b)
    right = _eval(node.right, x, b)
    op = node.op
    if op == "+":
        return left + right
    if op == "-":
        return left - right
    if op == "*":
        return left * right
    if op == "/":
        if np.any(right == 0):
            raise ExprDomainError("division by zero", node)
        return left / right
    # power
    base, expo = np.broadcast_arrays(left, right)
    if np.any((base == 0) & (expo < 0)):
        raise ExprDomainError("zero raised to a negative power", node)
    if np.any((base < 0) & (expo != np.floor(expo))):
        raise ExprDomainError("negative base with non-integer exponent", node)
    return np.power(left, right)


# ----------------------------------------------------------- postfix programs

OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_NEG = range(8)
OP_EXP, OP_LOG, OP_SQRT, OP_ABS = range(8, 12)
_BINOPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_CALLS = {"exp": OP_EXP, "log": OP_LOG, "sqrt": OP_SQRT, "abs": OP_ABS}
STACK_SIZE = 64


@dataclass(frozen=True)
class Program:
    """Postfix form of an expression with parameters folded into constants."""

    ops: np.ndarray  # int64 opcodes
    values: np.ndarray  # float64 operand for OP_CONST, unused otherwise

    def __call__(self, x: float) -> float:
        stack = np.empty(STACK_SIZE)
        return run_program(self.ops, self.values, float(x), stack)


def compile_program(expr: Expression, bindings: Mapping[str, float]) -> Program:
    missing = expr.free_parameters() - set(bindings)
    if missing:
        raise ExprError(f"missing bindings for {sorted(missing)}")
    ops: list[int] = []
    vals: list[float] = []
    depth = _emit(expr.ast, bindings, ops, vals)
    if depth > STACK_SIZE:
        raise ExprError(f"expression too deeply nested ({depth} > {STACK_SIZE})")
    return Program(np.asarray(ops, dtype=np.int64), np.asarray(vals, dtype=np.float64))


def _emit(node: Node, b, ops: list, vals: list) -> int:
    """Append postfix code for ``node``; return the stack depth it needs."""
    if isinstance(node, Const):
        ops.append(OP_CONST)
        vals.append(node.value)
        return 1
    if isinstance(node, Param):
        ops.append(OP_CONST)
        vals.append(float(b[node.name]))
        return 1
    if isinstance(node, Var):
        ops.append(OP_VAR)
        vals.append(0.0)
        return 1
    if isinstance(node, Neg):
        d = _emit(node.operand, b, ops, vals)
        ops.append(OP_NEG)
        vals.append(0.0)
        return d
    if isinstance(node, Call):
        d = _emit(node.arg, b, ops, vals)
        ops.append(_CALLS[node.func])
        vals.append(0.0)
        return d
    d1 = _emit(node.left, b, ops, vals)
    d2 = _emit(node.right, b, ops, vals)
    ops.append(_BINOPS[node.op])
    vals.append(0.0)
    return max(d1, d2 + 1)


@numba.njit(cache=True)
def run_program(ops, values, x, stack):
    """Run a postfix program at ``x``; domain violations return NaN."""
    sp = 0
    for i in range(ops.shape[0]):
        op = ops[i]
        if op == OP_CONST:
            stack[sp] = values[i]
            sp += 1
        elif op == OP_VAR:
            stack[sp] = x
            sp += 1
        elif op == OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op >= OP_EXP:
            a = stack[sp - 1]
            if op == OP_EXP:
                stack[sp - 1] = math.exp(a)
            elif op == OP_LOG:
                stack[sp - 1] = math.log(a) if a > 0.0 else np.nan
            elif op == OP_SQRT:
                stack[sp - 1] = math.sqrt(a) if a >= 0.0 else np.nan
            else:
                stack[sp - 1] = abs(a)
        else:
            sp -= 1
            a = stack[sp - 1]
            b = stack[sp]
            if op == OP_ADD:
                stack[sp - 1] = a + b
            elif op == OP_SUB:
                stack[sp - 1] = a - b
            elif op == OP_MUL:
                stack[sp - 1] = a * b
            elif op == OP_DIV:
                stack[sp - 1] = a / b if b != 0.0 else np.nan
            else:
                if a == 0.0 and b < 0.0:
                    stack[sp - 1] = np.nan
                elif a < 0.0 and b != math.floor(b):
                    stack[sp - 1] = np.nan
                else:
                    stack[sp - 1] = a**b
    return stack[0]
