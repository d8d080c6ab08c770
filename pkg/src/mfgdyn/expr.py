"""Expression language for population-dependent rates and rewards.

Expressions are small ASTs over numeric literals, distribution variables
``m1..mS``, named parameters, the arithmetic operators ``+ - * /``, unary
negation, and a fixed set of builtin functions:

    exp(x), ln(x), sqrt(x), min(x, y), max(x, y),
    slog(x, delta)   -- ln of the smoothed-positive part of x,
    dslog(x, delta)  -- derivative of slog in its first argument,
    sellte(a, b, x, y) -- x if a <= b else y (branch selector).

``slog(x, delta)`` is ln(f(x)) with f(y) = y^2/(2 delta) + delta/2 for
y <= delta and f(y) = y otherwise; f is C1 at y = delta (value delta,
slope 1 on both sides), so slog is continuously differentiable and stays
finite for any finite x as long as delta > 0.

``dslog`` and ``sellte`` exist so that symbolic differentiation is closed
over the language: derivatives of slog/min/max need a branch selector.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass


class ExprError(Exception):
    """Base class for expression-language failures."""


class ParseError(ExprError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class EvalError(ExprError):
    """Domain error during evaluation (ln/sqrt of a negative, zero divide)."""


# --- AST -----------------------------------------------------------------


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 1-based, m<index>


@dataclass(frozen=True)
class Param(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # one of + - * /
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Call(Expr):
    func: str
    args: tuple


#: builtin name -> arity
BUILTINS = {
    "exp": 1,
    "ln": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
    "slog": 2,
    "dslog": 2,
    "sellte": 4,
}

ZERO = Num(0.0)
ONE = Num(1.0)


# --- scalar builtins (shared by the AST walker and the python kernel) ----


def f_smooth(y, delta):
    """The C1 positive smoothing used by slog."""
    if y <= delta:
        if delta == 0.0:
            raise EvalError("slog with delta = 0 on the smoothed branch")
        return y * y / (2.0 * delta) + delta / 2.0
    return y


def slog_value(x, delta):
    f = f_smooth(x, delta)
    if f <= 0.0:
        raise EvalError(f"slog: smoothed argument {f} is not positive")
    return math.log(f)


def dslog_value(x, delta):
    if x <= delta:
        f = f_smooth(x, delta)
        if f == 0.0:
            raise EvalError("dslog: smoothed argument is zero")
        return (x / delta) / f
    return 1.0 / x


# --- tokenizer / parser --------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<sym>[-+*/(),]))"
)

_VAR_RE = re.compile(r"^m([0-9]+)$")


def _tokenize(text):
    tokens = []
    pos = 0
    n = len(text)
    while pos < n:
        match = _TOKEN_RE.match(text, pos)
        if match is None or match.end() == pos:
            # only whitespace matched or nothing matched
            rest = text[pos:].lstrip()
            if not rest:
                break
            bad = n - len(rest)
            raise ParseError(f"unexpected character {text[bad]!r}", bad)
        kind = match.lastgroup
        tokens.append((kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    def __init__(self, tokens, state_count, params):
        self.tokens = tokens
        self.i = 0
        self.state_count = state_count
        self.params = params

    def peek(self):
        return self.tokens[self.i]

    def next(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_sym(self, sym):
        kind, value, pos = self.next()
        if kind != "sym" or value != sym:
            raise ParseError(f"expected {sym!r}", pos)

    def parse_expr(self):
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "sym" and value in "+-":
                self.next()
                rhs = self.parse_term()
                node = Bin(value, node, rhs)
            else:
                return node

    def parse_term(self):
        node = self.parse_factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "sym" and value in "*/":
                self.next()
                rhs = self.parse_factor()
                node = Bin(value, node, rhs)
            else:
                return node

    def parse_factor(self):
        kind, value, pos = self.next()
        if kind == "num":
            return Num(float(value))
        if kind == "sym" and value == "-":
            arg = self.parse_factor()
            if isinstance(arg, Num):
                return Num(-arg.value)
            return Neg(arg)
        if kind == "sym" and value == "(":
            node = self.parse_expr()
            self.expect_sym(")")
            return node
        if kind == "ident":
            nkind, nvalue, _ = self.peek()
            if nkind == "sym" and nvalue == "(":
                return self.parse_call(value, pos)
            return self.resolve_ident(value, pos)
        raise ParseError(f"unexpected token {value!r}" if value else "unexpected end of input", pos)

    def parse_call(self, name, pos):
        arity = BUILTINS.get(name)
        if arity is None:
            raise ParseError(f"unknown function {name!r}", pos)
        self.expect_sym("(")
        args = [self.parse_expr()]
        while True:
            kind, value, _ = self.peek()
            if kind == "sym" and value == ",":
                self.next()
                args.append(self.parse_expr())
            else:
                break
        self.expect_sym(")")
        if len(args) != arity:
            raise ParseError(
                f"{name} takes {arity} argument(s), got {len(args)}", pos
            )
        return Call(name, tuple(args))

    def resolve_ident(self, name, pos):
        var = _VAR_RE.match(name)
        if var:
            index = int(var.group(1))
            if not 1 <= index <= self.state_count:
                raise ParseError(
                    f"variable {name} out of range 1..{self.state_count}", pos
                )
            return Var(index)
        if name in self.params:
            return Param(name)
        raise ParseError(f"unknown identifier {name!r}", pos)


def parse_expr(text, state_count, params=()):
    """Parse ``text`` into an AST; constants are folded.

    ``params`` is the set of declared parameter names.  Raises
    :class:`ParseError` with a position on bad input.
    """
    parser = _Parser(_tokenize(text), state_count, frozenset(params))
    node = parser.parse_expr()
    kind, value, pos = parser.peek()
    if kind != "end":
        raise ParseError(f"unexpected trailing token {value!r}", pos)
    return constant_fold(node)


# --- evaluation ----------------------------------------------------------


def eval_expr(expr, m, params=None):
    """Evaluate ``expr`` at distribution ``m`` (sequence, 0-based storage).

    This is the plain AST walker.  Hot paths compile expressions to tapes
    (see :mod:`mfgdyn.tape`); the walker doubles as the reference both
    kernel backends are tested against.
    """
    params = params or {}
    return _eval(expr, m, params)


def _eval(e, m, params):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(m[e.index - 1])
    if isinstance(e, Param):
        try:
            return float(params[e.name])
        except KeyError:
            raise EvalError(f"parameter {e.name!r} has no value") from None
    if isinstance(e, Neg):
        return -_eval(e.arg, m, params)
    if isinstance(e, Bin):
        a = _eval(e.left, m, params)
        b = _eval(e.right, m, params)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise EvalError("division by zero")
        return a / b
    if isinstance(e, Call):
        args = [_eval(a, m, params) for a in e.args]
        return _apply(e.func, args)
    raise TypeError(f"not an expression node: {e!r}")


def _apply(func, args):
    if func == "exp":
        try:
            return math.exp(args[0])
        except OverflowError:
            return math.inf
    if func == "ln":
        if args[0] <= 0.0:
            raise EvalError(f"ln of non-positive value {args[0]}")
        return math.log(args[0])
    if func == "sqrt":
        if args[0] < 0.0:
            raise EvalError(f"sqrt of negative value {args[0]}")
        return math.sqrt(args[0])
    if func == "min":
        return min(args[0], args[1])
    if func == "max":
        return max(args[0], args[1])
    if func == "slog":
        return slog_value(args[0], args[1])
    if func == "dslog":
        return dslog_value(args[0], args[1])
    if func == "sellte":
        return args[2] if args[0] <= args[1] else args[3]
    raise EvalError(f"unknown function {func!r}")


# --- smart constructors and folding --------------------------------------


def _is_num(e, value=None):
    return isinstance(e, Num) and (value is None or e.value == value)


def add(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    return Bin("+", a, b)


def sub(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    return Bin("-", a, b)


def mul(a, b):
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    return Bin("*", a, b)


def div(a, b):
    if _is_num(a, 0.0):
        return ZERO
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b) and b.value != 0.0:
        return Num(a.value / b.value)
    return Bin("/", a, b)


def neg(a):
    if _is_num(a):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def constant_fold(e):
    """Evaluate constant subtrees; anything that would raise is kept as-is."""
    if isinstance(e, (Num, Var, Param)):
        return e
    if isinstance(e, Neg):
        return neg(constant_fold(e.arg))
    if isinstance(e, Bin):
        left = constant_fold(e.left)
        right = constant_fold(e.right)
        if isinstance(left, Num) and isinstance(right, Num):
            try:
                return Num(_eval(Bin(e.op, left, right), (), {}))
            except EvalError:
                pass
        return Bin(e.op, left, right)
    if isinstance(e, Call):
        args = tuple(constant_fold(a) for a in e.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return Num(_apply(e.func, [a.value for a in args]))
            except EvalError:
                pass
        return Call(e.func, args)
    raise TypeError(f"not an expression node: {e!r}")


# --- symbolic differentiation --------------------------------------------


def diff_expr(e, k):
    """Symbolic partial derivative of ``e`` with respect to m_k (1-based).

    min/max differentiate along the active branch (ties go to the first
    argument); slog differentiates piecewise and is continuous across its
    joint.  Total on well-formed input.
    """
    if isinstance(e, (Num, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.index == k else ZERO
    if isinstance(e, Neg):
        return neg(diff_expr(e.arg, k))
    if isinstance(e, Bin):
        da = diff_expr(e.left, k)
        db = diff_expr(e.right, k)
        if e.op == "+":
            return add(da, db)
        if e.op == "-":
            return sub(da, db)
        if e.op == "*":
            return add(mul(da, e.right), mul(e.left, db))
        return sub(div(da, e.right), div(mul(e.left, db), mul(e.right, e.right)))
    if isinstance(e, Call):
        return _diff_call(e, k)
    raise TypeError(f"not an expression node: {e!r}")


def _diff_call(e, k):
    args = e.args
    if e.func == "exp":
        return mul(e, diff_expr(args[0], k))
    if e.func == "ln":
        return div(diff_expr(args[0], k), args[0])
    if e.func == "sqrt":
        return div(diff_expr(args[0], k), mul(Num(2.0), e))
    if e.func == "min":
        return Call("sellte", (args[0], args[1], diff_expr(args[0], k), diff_expr(args[1], k)))
    if e.func == "max":
        return Call("sellte", (args[1], args[0], diff_expr(args[0], k), diff_expr(args[1], k)))
    if e.func == "sellte":
        return Call("sellte", (args[0], args[1], diff_expr(args[2], k), diff_expr(args[3], k)))
    if e.func == "slog":
        x, delta = args
        dx = diff_expr(x, k)
        ddelta = diff_expr(delta, k)
        if _is_num(ddelta, 0.0):
            return mul(Call("dslog", (x, delta)), dx)
        return diff_expr(_lower_slog(x, delta), k)
    if e.func == "dslog":
        return diff_expr(_lower_dslog(*args), k)
    raise EvalError(f"unknown function {e.func!r}")


def _smooth_expr(x, delta):
    # y^2/(2 delta) + delta/2, the below-joint branch of f
    return add(div(mul(x, x), mul(Num(2.0), delta)), div(delta, Num(2.0)))


def _lower_slog(x, delta):
    # slog as an explicit branch selector, for differentiation only
    return Call("sellte", (x, delta, Call("ln", (_smooth_expr(x, delta),)), Call("ln", (x,))))


def _lower_dslog(x, delta):
    below = div(div(x, delta), _smooth_expr(x, delta))
    return Call("sellte", (x, delta, below, div(ONE, x)))


# --- pretty printer -------------------------------------------------------

_PREC = {"+": 10, "-": 10, "*": 20, "/": 20}


def to_text(e):
    """Render ``e`` in the input grammar; parse(to_text(e)) == e."""
    return _render(e, 0)


def _render(e, parent_prec):
    if isinstance(e, Num):
        text = repr(e.value)
        if text.endswith(".0"):
            text = text[:-2]
        return text if e.value >= 0 or parent_prec == 0 else f"({text})"
    if isinstance(e, Var):
        return f"m{e.index}"
    if isinstance(e, Param):
        return e.name
    if isinstance(e, Neg):
        inner = _render(e.arg, 30)
        text = f"-{inner}"
        return text if parent_prec < 30 else f"({text})"
    if isinstance(e, Bin):
        prec = _PREC[e.op]
        left = _render(e.left, prec)
        right = _render(e.right, prec + 1)
        text = f"{left} {e.op} {right}"
        return text if prec >= parent_prec else f"({text})"
    if isinstance(e, Call):
        args = ", ".join(_render(a, 0) for a in e.args)
        return f"{e.func}({args})"
    raise TypeError(f"not an expression node: {e!r}")


def variables_of(e):
    """Set of 1-based distribution-variable indices occurring in ``e``."""
    out = set()
    _collect_vars(e, out)
    return out


def _collect_vars(e, out):
    if isinstance(e, Var):
        out.add(e.index)
    elif isinstance(e, Neg):
        _collect_vars(e.arg, out)
    elif isinstance(e, Bin):
        _collect_vars(e.left, out)
        _collect_vars(e.right, out)
    elif isinstance(e, Call):
        for a in e.args:
            _collect_vars(a, out)
