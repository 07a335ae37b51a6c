"""Evaluator for the Verilog-A subset written by :mod:`setml.vacodegen`.

Supported
---------
* ``parameter real NAME = expr;`` declarations (defaults, overridable)
* ``real a, b, ...;`` variable declarations
* an ``analog begin ... end`` block of ``name = expr;`` assignments and a
  single ``I(p, n) <+ expr;`` contribution
* expressions: numbers, identifiers, ``$abstime``, ``+ - * /``, unary minus,
  comparisons, ``&&``, ``||``, ``cond ? a : b`` and the functions
  ``exp``, ``tanh``, ``abs``, ``ln`` and ``pow``

Evaluation is elementwise over numpy arrays, so one run can cover a batch
of (t, LET, vd) points.  Anything else is rejected with
:class:`~setml.errors.VaParseError`.
"""

from __future__ import annotations

import re
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from setml.errors import VaParseError

Value = Any  # float or ndarray; numpy ufuncs handle both

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+|//[^\n]*|/\*.*?\*/|`[^\n]*)
    |(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?)
    |(?P<sys>\$[A-Za-z_]\w*)
    |(?P<ident>[A-Za-z_]\w*)
    |(?P<op><\+|<=|>=|==|!=|&&|\|\||[-+*/()?:;,<>=])
    """,
    re.VERBOSE | re.DOTALL,
)

_FUNCTIONS: dict[str, tuple[int, Callable[..., Value]]] = {
    "exp": (1, np.exp),
    "tanh": (1, np.tanh),
    "abs": (1, np.abs),
    "ln": (1, np.log),
    "pow": (2, np.power),
}

_BINARY: dict[str, Callable[[Value, Value], Value]] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
    "==": np.equal,
    "!=": np.not_equal,
    "&&": np.logical_and,
    "||": np.logical_or,
}

# binding power of each binary operator, loosest first
_PRECEDENCE = {
    "||": 1,
    "&&": 2,
    "==": 3,
    "!=": 3,
    "<": 4,
    "<=": 4,
    ">": 4,
    ">=": 4,
    "+": 5,
    "-": 5,
    "*": 6,
    "/": 6,
}


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    """Split *text* into tokens, dropping whitespace, comments and directives."""
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise VaParseError(f"Unexpected character {text[pos]!r} at offset {pos}.")
        kind = match.lastgroup or ""
        if kind != "ws":
            tokens.append(Token(kind, match.group(), pos))
        pos = match.end()
    return tokens


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------


class Expr:
    """Base of the expression tree."""

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        raise NotImplementedError


@dataclass(frozen=True)
class Num(Expr):
    value: float

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return self.value


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        try:
            return env[self.name]
        except KeyError:
            raise VaParseError(f"Unbound identifier {self.name!r}.") from None


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return np.negative(self.operand.evaluate(env))


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return _BINARY[self.op](self.left.evaluate(env), self.right.evaluate(env))


@dataclass(frozen=True)
class Call(Expr):
    name: str
    args: tuple[Expr, ...]

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        _, fn = _FUNCTIONS[self.name]
        return fn(*(a.evaluate(env) for a in self.args))


@dataclass(frozen=True)
class Cond(Expr):
    test: Expr
    then: Expr
    otherwise: Expr

    def evaluate(self, env: Mapping[str, Value]) -> Value:
        return np.where(
            self.test.evaluate(env),
            self.then.evaluate(env),
            self.otherwise.evaluate(env),
        )


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    """Recursive-descent parser over a token list."""

    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.text == text

    def advance(self) -> Token:
        tok = self.peek()
        if tok is None:
            raise VaParseError("Unexpected end of input.")
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        tok = self.advance()
        if tok.text != text:
            raise VaParseError(
                f"Expected {text!r} at offset {tok.pos}, got {tok.text!r}."
            )
        return tok

    def ident(self) -> str:
        tok = self.advance()
        if tok.kind != "ident":
            raise VaParseError(
                f"Expected identifier at offset {tok.pos}, got {tok.text!r}."
            )
        return tok.text

    # -- expressions -------------------------------------------------------

    def expression(self) -> Expr:
        test = self.binary(1)
        if not self.at("?"):
            return test
        self.advance()
        then = self.expression()
        self.expect(":")
        return Cond(test, then, self.expression())

    def binary(self, min_prec: int) -> Expr:
        left = self.unary()
        while True:
            tok = self.peek()
            prec = _PRECEDENCE.get(tok.text, 0) if tok is not None else 0
            if prec < min_prec or tok is None or tok.kind != "op":
                return left
            self.advance()
            left = Binary(tok.text, left, self.binary(prec + 1))

    def unary(self) -> Expr:
        if self.at("-"):
            self.advance()
            return Neg(self.unary())
        if self.at("+"):
            self.advance()
            return self.unary()
        return self.primary()

    def primary(self) -> Expr:
        tok = self.advance()
        if tok.kind == "num":
            return Num(float(tok.text))
        if tok.kind == "sys":
            return Var(tok.text)
        if tok.kind == "ident":
            if not self.at("("):
                return Var(tok.text)
            if tok.text not in _FUNCTIONS:
                raise VaParseError(
                    f"Unsupported function {tok.text!r} at offset {tok.pos}."
                )
            arity, _ = _FUNCTIONS[tok.text]
            self.advance()
            args = [self.expression()]
            while self.at(","):
                self.advance()
                args.append(self.expression())
            self.expect(")")
            if len(args) != arity:
                raise VaParseError(
                    f"{tok.text}() takes {arity} argument(s), got {len(args)}."
                )
            return Call(tok.text, tuple(args))
        if tok.text == "(":
            inner = self.expression()
            self.expect(")")
            return inner
        raise VaParseError(f"Unexpected {tok.text!r} at offset {tok.pos}.")


def parse_expression(text: str) -> Expr:
    """Parse a single expression."""
    parser = _Parser(tokenize(text))
    expr = parser.expression()
    if (tok := parser.peek()) is not None:
        raise VaParseError(f"Trailing input {tok.text!r} at offset {tok.pos}.")
    return expr


def evaluate(text: str, bindings: Mapping[str, Value] | None = None) -> Value:
    """Parse and evaluate one expression, e.g. ``evaluate("2*exp(0)") == 2.0``."""
    return _scalar(parse_expression(text).evaluate(dict(bindings or {})))


def _scalar(value: Value) -> Value:
    arr = np.asarray(value, dtype=np.float64)
    return float(arr) if arr.ndim == 0 else arr


# ---------------------------------------------------------------------------
# Modules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VaProgram:
    """A parsed module: parameter defaults, ordered assignments, contribution."""

    name: str
    ports: tuple[str, ...]
    parameters: dict[str, Expr]
    variables: frozenset[str]
    assignments: tuple[tuple[str, Expr], ...]
    contribution: Expr

    def run(
        self, abstime: ArrayLike, overrides: Mapping[str, ArrayLike] | None = None
    ) -> Value:
        """Evaluate the contributed current at *abstime*.

        *overrides* replaces parameter defaults; unknown names are rejected.
        """
        overrides = dict(overrides or {})
        unknown = set(overrides) - set(self.parameters)
        if unknown:
            raise VaParseError(f"Unknown parameter(s): {', '.join(sorted(unknown))}.")
        env: dict[str, Value] = {"$abstime": np.asarray(abstime, dtype=np.float64)}
        for name, default in self.parameters.items():
            if name in overrides:
                env[name] = np.asarray(overrides[name], dtype=np.float64)
            else:
                env[name] = default.evaluate(env)
        for name, expr in self.assignments:
            env[name] = expr.evaluate(env)
        return _scalar(self.contribution.evaluate(env))


def _names(p: _Parser, closing: str = ";") -> list[str]:
    names = [p.ident()]
    while p.at(","):
        p.advance()
        names.append(p.ident())
    p.expect(closing)
    return names


def _analog_block(
    p: _Parser, ports: tuple[str, ...], variables: set[str]
) -> tuple[list[tuple[str, Expr]], Expr]:
    p.expect("begin")
    assignments: list[tuple[str, Expr]] = []
    contribution: Expr | None = None
    while not p.at("end"):
        name = p.ident()
        if name == "I" and p.at("("):
            p.advance()
            branch = tuple(_names(p, ")"))
            p.expect("<+")
            if branch != ports[:2]:
                raise VaParseError(f"Contribution to unknown branch {branch}.")
            if contribution is not None:
                raise VaParseError("More than one current contribution.")
            contribution = p.expression()
        else:
            if name not in variables:
                raise VaParseError(f"Assignment to undeclared variable {name!r}.")
            p.expect("=")
            assignments.append((name, p.expression()))
        p.expect(";")
    p.expect("end")
    if contribution is None:
        raise VaParseError("Analog block has no I(p, n) contribution.")
    return assignments, contribution


def parse_module(text: str) -> VaProgram:
    """Parse one generated module."""
    p = _Parser(tokenize(text))
    p.expect("module")
    name = p.ident()
    p.expect("(")
    ports = tuple(_names(p, ")"))
    p.expect(";")

    parameters: dict[str, Expr] = {}
    variables: set[str] = set()
    analog: tuple[list[tuple[str, Expr]], Expr] | None = None
    while not p.at("endmodule"):
        keyword = p.ident()
        if keyword in ("inout", "electrical"):
            _names(p)
        elif keyword == "parameter":
            p.expect("real")
            pname = p.ident()
            p.expect("=")
            parameters[pname] = p.expression()
            p.expect(";")
        elif keyword == "real":
            variables.update(_names(p))
        elif keyword == "analog":
            if analog is not None:
                raise VaParseError("More than one analog block.")
            analog = _analog_block(p, ports, variables)
        else:
            raise VaParseError(f"Unsupported statement {keyword!r}.")
    p.expect("endmodule")
    if analog is None:
        raise VaParseError(f"Module {name!r} has no analog block.")
    assignments, contribution = analog
    return VaProgram(
        name=name,
        ports=ports,
        parameters=parameters,
        variables=frozenset(variables),
        assignments=tuple(assignments),
        contribution=contribution,
    )

