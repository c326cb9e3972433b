"""Arithmetic expressions: parsing, evaluation, symbolic differentiation.

Expressions are immutable trees built from five node types. The grammar is::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

so ``^`` binds tightest and is right-associative, and ``-q^2`` means ``-(q^2)``.
There is no implicit multiplication. ``pi`` is a predefined constant.

Besides the tree-walking :func:`evaluate`, expressions can be compiled into
plain Python callables (:func:`compile_scalar`) for integrator inner loops and
into numpy-vectorised callables (:func:`compile_vector`) for grid sweeps.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprSyntaxError",
    "UnboundVariableError",
    "ExprDomainError",
    "FUNCTIONS",
    "parse",
    "render",
    "evaluate",
    "diff",
    "gradient",
    "variables_of",
    "compile_scalar",
    "compile_vector",
]

FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "abs")
TWO_PI = 2.0 * math.pi


class ExprSyntaxError(ValueError):
    """Raised for malformed expression text; ``offset`` is a byte offset."""

    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnboundVariableError(KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unbound variable {self.name!r}"


class ExprDomainError(ArithmeticError):
    """Evaluation left the real domain.

    ``kind`` is one of ``"domain"`` (log/sqrt/pow of an invalid argument),
    ``"division_by_zero"`` or ``"overflow"`` (non-finite result).
    """

    def __init__(self, kind: str, subexpr: "Expr | None", detail: str = ""):
        where = f" in {render(subexpr)!r}" if subexpr is not None else ""
        super().__init__(f"{kind}{where}" + (f": {detail}" if detail else ""))
        self.kind = kind
        self.subexpr = subexpr
        self.detail = detail


# --------------------------------------------------------------------------
# nodes


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __str__(self) -> str:
        return render(self)


@dataclass(frozen=True, slots=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, slots=True)
class BinOp(Expr):
    op: str  # one of + - * / ^
    left: Expr
    right: Expr


@dataclass(frozen=True, slots=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)

# --------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(
                f"unexpected character {text[pos]!r}", _byte_offset(text, pos), text
            )
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def take(self) -> tuple[str, str, int]:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message: str, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, _byte_offset(self.text, tok[2]), self.text)

    def expect(self, value: str) -> None:
        tok = self.peek()
        if tok[0] != "op" or tok[1] != value:
            self.fail(f"expected {value!r}")
        self.take()

    def parse(self) -> Expr:
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected token {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        tok = self.peek()
        kind, value, _ = tok
        if kind == "num":
            self.take()
            return Const(float(value))
        if kind == "name":
            self.take()
            nxt = self.peek()
            if nxt[0] == "op" and nxt[1] == "(":
                if value not in FUNCTIONS:
                    self.fail(f"unknown function {value!r}", tok)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(value, arg)
            if value == "pi":
                return Const(math.pi)
            if nxt[0] in ("num", "name"):
                self.fail("missing operator", nxt)
            return Var(value)
        if kind == "op" and value == "(":
            self.take()
            e = self.expr()
            self.expect(")")
            return e
        if kind == "end":
            self.fail("unexpected end of input")
        self.fail(f"unexpected token {value!r}")


def parse(text: str) -> Expr:
    """Parse ``text`` into an expression tree."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0, text)
    return _Parser(text).parse()


# --------------------------------------------------------------------------
# rendering

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _render_const(v: float) -> str:
    v = float(v)
    if v.is_integer() and abs(v) < 1e15 and math.copysign(1.0, v) > 0:
        return str(int(v))
    s = repr(v)
    return f"({s})" if s.startswith("-") else s


def render(e: Expr) -> str:
    """Render ``e`` as text that parses back to an equivalent tree."""
    if isinstance(e, Const):
        return _render_const(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({render(e.arg)})"
    if isinstance(e, Neg):
        inner = render(e.arg)
        if isinstance(e.arg, BinOp) and e.arg.op in _PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        if e.op == "^":
            base = render(e.left)
            if isinstance(e.left, (BinOp, Neg)):
                base = f"({base})"
            expo = render(e.right)
            if isinstance(e.right, BinOp) and e.right.op in _PREC:
                expo = f"({expo})"
            return f"{base}^{expo}"
        p = _PREC[e.op]
        left = render(e.left)
        if isinstance(e.left, BinOp) and e.left.op in _PREC and _PREC[e.left.op] < p:
            left = f"({left})"
        right = render(e.right)
        # left-associative operators need parentheses on equal precedence too
        if isinstance(e.right, BinOp) and e.right.op in _PREC and _PREC[e.right.op] <= p:
            right = f"({right})"
        return f"{left} {e.op} {right}"
    raise TypeError(f"not an expression node: {e!r}")


# --------------------------------------------------------------------------
# evaluation


def _pow(a: float, b: float) -> float:
    if b == int(b) and abs(b) < 2**31:
        return a ** int(b)
    if a < 0:
        raise ValueError("negative base with non-integer exponent")
    return a**b


_MATH = {
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": abs,
}


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` with real arithmetic.

    Raises :class:`UnboundVariableError` for a missing binding and
    :class:`ExprDomainError` naming the offending subexpression for invalid
    arguments or non-finite results.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnboundVariableError(e.name) from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, bindings)
    if isinstance(e, Call):
        x = evaluate(e.arg, bindings)
        if e.func == "log" and x <= 0:
            raise ExprDomainError("domain", e, f"log of {x!r}")
        if e.func == "sqrt" and x < 0:
            raise ExprDomainError("domain", e, f"sqrt of {x!r}")
        try:
            value = _MATH[e.func](x)
        except OverflowError:
            raise ExprDomainError("overflow", e) from None
        except ValueError as exc:
            raise ExprDomainError("domain", e, str(exc)) from None
        return _finite(value, e)
    if isinstance(e, BinOp):
        a = evaluate(e.left, bindings)
        b = evaluate(e.right, bindings)
        op = e.op
        if op == "+":
            value = a + b
        elif op == "-":
            value = a - b
        elif op == "*":
            value = a * b
        elif op == "/":
            if b == 0:
                raise ExprDomainError("division_by_zero", e)
            value = a / b
        else:
            try:
                value = _pow(a, b)
            except ZeroDivisionError:
                raise ExprDomainError("division_by_zero", e) from None
            except OverflowError:
                raise ExprDomainError("overflow", e) from None
            except ValueError as exc:
                raise ExprDomainError("domain", e, str(exc)) from None
        return _finite(value, e)
    raise TypeError(f"not an expression node: {e!r}")


def _finite(value: float, e: Expr) -> float:
    if not math.isfinite(value):
        raise ExprDomainError("overflow", e, "non-finite result")
    return value


def variables_of(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Neg, Call)):
        return variables_of(e.arg)
    return variables_of(e.left) | variables_of(e.right)


def substitute(e: Expr, values: Mapping[str, float]) -> Expr:
    """Replace the named variables by constants (used to inline parameters)."""
    if isinstance(e, Var):
        return Const(float(values[e.name])) if e.name in values else e
    if isinstance(e, Const):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, values))
    if isinstance(e, Call):
        return Call(e.func, substitute(e.arg, values))
    return BinOp(e.op, substitute(e.left, values), substitute(e.right, values))


# --------------------------------------------------------------------------
# differentiation


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def _add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.arg)
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0.0):
        return ZERO
    if _is(b, 1.0):
        return a
    return BinOp("/", a, b)


def _powc(a: Expr, c: float) -> Expr:
    if c == 0.0:
        return ONE
    if c == 1.0:
        return a
    return BinOp("^", a, Const(c))


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``.

    Trivial identities (``0*x``, ``1*x``, ``x+0``, constant arithmetic) are
    folded as the tree is built; no further simplification is attempted.
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return _neg(diff(e.arg, var))
    if isinstance(e, Call):
        du = diff(e.arg, var)
        if _is(du, 0.0):
            return ZERO
        u = e.arg
        f = e.func
        if f == "sin":
            outer = Call("cos", u)
        elif f == "cos":
            outer = _neg(Call("sin", u))
        elif f == "tan":
            outer = _add(ONE, _powc(Call("tan", u), 2.0))
        elif f == "exp":
            outer = e
        elif f == "log":
            return _div(du, u)
        elif f == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        elif f == "abs":
            outer = _div(u, e)
        else:  # pragma: no cover - parser rejects unknown functions
            raise ValueError(f)
        return _mul(outer, du)
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        da, db = diff(a, var), diff(b, var)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if e.op == "/":
            if _is(db, 0.0):
                return _div(da, b)
            return _div(_sub(_mul(da, b), _mul(a, db)), _powc(b, 2.0))
        # power
        if isinstance(b, Const):
            return _mul(_mul(b, _powc(a, b.value - 1.0)), da)
        if _is(da, 0.0):
            # d(c^w) = c^w * log(c) * w'
            return _mul(_mul(e, Call("log", a)), db)
        return _mul(e, _add(_mul(db, Call("log", a)), _div(_mul(b, da), a)))
    raise TypeError(f"not an expression node: {e!r}")


def gradient(e: Expr, variables: Sequence[str]) -> list[Expr]:
    return [diff(e, v) for v in variables]


# --------------------------------------------------------------------------
# compilation


def codegen(e: Expr, env: Mapping[str, str], np_mode: bool = False) -> str:
    """Python source for ``e``; ``env`` maps variable names to source names.

    Scalar code expects ``_m_<func>`` and ``_pow`` in its namespace (see
    :data:`KERNEL_NAMESPACE`).
    """
    return _codegen(e, env, np_mode)


def _codegen(e: Expr, env: Mapping[str, str], np_mode: bool) -> str:
    if isinstance(e, Const):
        return repr(float(e.value)) if math.copysign(1.0, e.value) > 0 else f"({e.value!r})"
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg, env, np_mode)})"
    if isinstance(e, Call):
        prefix = "_np." if np_mode else "_m_"
        func = "absolute" if (np_mode and e.func == "abs") else e.func
        return f"{prefix}{func}({_codegen(e.arg, env, np_mode)})"
    a = _codegen(e.left, env, np_mode)
    b = _codegen(e.right, env, np_mode)
    if e.op == "^":
        if isinstance(e.right, Const) and e.right.value == int(e.right.value):
            n = int(e.right.value)
            if np_mode:
                return f"({a} ** {float(n)!r})"
            return f"({a} ** {n})"
        return f"_pow({a}, {b})"
    return f"({a} {e.op} {b})"


def _npow(a, b):
    return np.power(a, b)


KERNEL_NAMESPACE = {"_pow": _pow, **{f"_m_{name}": fn for name, fn in _MATH.items()}}


def _build(exprs: Sequence[Expr], variables: Sequence[str], periodic, np_mode: bool):
    env = {name: f"x{i}" for i, name in enumerate(variables)}
    missing = set().union(*(variables_of(e) for e in exprs)) - set(env) if exprs else set()
    if missing:
        raise UnboundVariableError(sorted(missing)[0])
    lines = ["def _f(x):"]
    for i in range(len(variables)):
        if periodic is not None and periodic[i]:
            mod = "_np.mod" if np_mode else "_fmod"
            lines.append(f"    x{i} = {mod}(x[{i}], {TWO_PI!r})")
        else:
            lines.append(f"    x{i} = x[{i}]")
    body = ", ".join(_codegen(e, env, np_mode) for e in exprs)
    lines.append(f"    return ({body}{',' if len(exprs) == 1 else ''})")
    namespace = {"_np": np, "_pow": _npow if np_mode else _pow, "_fmod": _py_mod}
    for name, fn in _MATH.items():
        namespace[f"_m_{name}"] = fn
    exec("\n".join(lines), namespace)  # noqa: S102 - source generated from a parsed tree
    return namespace["_f"]


def _py_mod(a: float, m: float) -> float:
    return a % m


def compile_scalar(
    exprs: Sequence[Expr],
    variables: Sequence[str],
    periodic: Sequence[bool] | None = None,
) -> Callable[[Sequence[float]], tuple]:
    """Compile expressions into ``f(x) -> tuple`` over plain floats.

    The compiled path raises the built-in ``ValueError``/``ZeroDivisionError``/
    ``OverflowError`` on failure, or may return a non-finite float; callers
    that need a located :class:`ExprDomainError` should use :func:`checked`.
    """
    return _build(list(exprs), list(variables), periodic, np_mode=False)


def compile_vector(
    exprs: Sequence[Expr],
    variables: Sequence[str],
    periodic: Sequence[bool] | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Compile expressions for columnar evaluation.

    The returned callable takes an array of shape ``(d, ...)`` and returns an
    array of shape ``(len(exprs), ...)``. Invalid points come back as NaN or
    inf; callers treat non-finite entries as undefined.
    """
    raw = _build(list(exprs), list(variables), periodic, np_mode=True)

    def f(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = raw(x)
            return np.stack([np.broadcast_to(np.asarray(v, dtype=float), x.shape[1:]) for v in out])

    return f


def checked(
    exprs: Sequence[Expr],
    variables: Sequence[str],
    periodic: Sequence[bool] | None = None,
) -> Callable[[Sequence[float]], tuple]:
    """Like :func:`compile_scalar` but failures raise a located ExprDomainError."""
    fast = compile_scalar(exprs, variables, periodic)
    exprs = list(exprs)
    variables = list(variables)

    def slow(x):
        b = {}
        for i, name in enumerate(variables):
            xi = float(x[i])
            if periodic is not None and periodic[i]:
                xi = xi % TWO_PI
            b[name] = xi
        return tuple(evaluate(e, b) for e in exprs)

    def f(x):
        try:
            out = fast(x)
        except (ValueError, ZeroDivisionError, OverflowError):
            return slow(x)
        for v in out:
            if not math.isfinite(v):
                return slow(x)
        return out

    return f


def parse_many(texts: Iterable[str]) -> list[Expr]:
    return [parse(t) for t in texts]
