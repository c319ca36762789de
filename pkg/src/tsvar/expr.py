"""Arithmetic expression language for config-defined integrands.

Grammar (whitespace-insensitive):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := '-' factor | power
    power   := primary ('^' factor)?          # right-associative
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

'^' binds tighter than unary minus, so -x^2 is -(x^2) while 2^-3 is
admitted through the exponent's factor rule.  NAME is either a declared
variable or one of the functions sin, cos, exp, log, sqrt, abs.
Every variable must resolve against the declared environment at parse
time.  Nesting deeper than 256 levels is rejected with a located error.
"""

import math
import re
from dataclasses import dataclass

from .errors import EvalDomainError, TsvarError

FUNCTIONS = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}

MAX_DEPTH = 256


class ExprSyntaxError(TsvarError):
    def __init__(self, position: int, message: str):
        super().__init__(f"{message} (offset {position})")
        self.position = position
        self.reason = message


class UnknownIdentifier(TsvarError):
    def __init__(self, name: str, position: int):
        super().__init__(f"unknown identifier '{name}' (offset {position})")
        self.name = name
        self.position = position


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Num | Var | Neg | Bin | Call

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


def _tokenize(source: str):
    tokens = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(pos, f"unexpected character {source[pos]!r}")
        if m.lastgroup == "num":
            tokens.append(("num", m.group(), pos))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group(), pos))
        elif m.lastgroup == "op":
            tokens.append(("op", m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens, env):
        self.tokens = tokens
        self.pos = 0
        self.env = env
        self.depth = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, text, at = self.peek()
        if kind != "op" or text != op:
            raise ExprSyntaxError(at, f"expected '{op}'")
        return self.take()

    def _enter(self, at):
        self.depth += 1
        if self.depth > MAX_DEPTH:
            raise ExprSyntaxError(at, "expression nested too deeply")

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                node = Bin(text, node, self.parse_term())
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                node = Bin(text, node, self.parse_factor())
            else:
                return node

    def parse_factor(self):
        kind, text, at = self.peek()
        self._enter(at)
        try:
            if kind == "op" and text == "-":
                self.take()
                return Neg(self.parse_factor())
            return self.parse_power()
        finally:
            self.depth -= 1

    def parse_power(self):
        node = self.parse_primary()
        kind, text, at = self.peek()
        if kind == "op" and text == "^":
            self.take()
            self._enter(at)
            try:
                return Bin("^", node, self.parse_factor())
            finally:
                self.depth -= 1
        return node

    def parse_primary(self):
        kind, text, at = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.parse_expr()
                self.expect_op(")")
                return Call(text, arg)
            if text not in self.env:
                raise UnknownIdentifier(text, at)
            return Var(text)
        if kind == "op" and text == "(":
            self._enter(at)
            try:
                node = self.parse_expr()
            finally:
                self.depth -= 1
            self.expect_op(")")
            return node
        raise ExprSyntaxError(at, "expected a number, name, or '('")


def parse(source: str, env) -> Expr:
    """Parse source against the declared variable environment.

    Raises ExprSyntaxError or UnknownIdentifier with the character offset
    of the offending token.
    """
    parser = _Parser(_tokenize(source), frozenset(env))
    node = parser.parse_expr()
    kind, text, at = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(at, f"unexpected trailing input {text!r}")
    return node


def evaluate(e: Expr, bindings) -> float:
    """Evaluate with the given variable bindings.

    Division by zero, log/sqrt outside their domains, a negative base
    under a non-integer exponent, and overflowing math calls all raise
    EvalDomainError.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(bindings[e.name])
    if isinstance(e, Neg):
        return -evaluate(e.operand, bindings)
    if isinstance(e, Call):
        x = evaluate(e.arg, bindings)
        if e.fn == "log" and x <= 0.0:
            raise EvalDomainError(f"log of non-positive value {x}")
        if e.fn == "sqrt" and x < 0.0:
            raise EvalDomainError(f"sqrt of negative value {x}")
        try:
            return float(FUNCTIONS[e.fn](x))
        except (OverflowError, ValueError) as err:
            raise EvalDomainError(f"{e.fn}({x}) left the real domain") from err
    a = evaluate(e.lhs, bindings)
    b = evaluate(e.rhs, bindings)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        if b == 0.0:
            raise EvalDomainError("division by zero")
        return a / b
    if e.op == "^":
        if a < 0.0 and b != math.floor(b):
            raise EvalDomainError(
                f"negative base {a} under non-integer exponent {b}")
        if a == 0.0 and b < 0.0:
            raise EvalDomainError("zero base under negative exponent")
        try:
            return float(a ** b)
        except OverflowError as err:
            raise EvalDomainError("power overflow") from err
    raise ValueError(f"unknown operator {e.op!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e: Expr) -> str:
    """Render with minimal parentheses; reparsing yields an equal tree."""
    return _render(e, 0)


def _render(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({_render(e.arg, 0)})"
    if isinstance(e, Neg):
        inner = _render(e.operand, _PREC["neg"])
        out = f"-{inner}"
        return f"({out})" if parent_prec > _PREC["neg"] else out
    prec = _PREC[e.op]
    if e.op == "^":
        # right-associative: parenthesize a left operand of equal precedence
        out = f"{_render(e.lhs, prec + 1)}^{_render(e.rhs, prec)}"
    else:
        out = f"{_render(e.lhs, prec)}{e.op}{_render(e.rhs, prec + 1)}"
    if parent_prec > prec:
        return f"({out})"
    return out
