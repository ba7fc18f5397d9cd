"""Scalar expressions in two variables with exact first derivatives.

Expressions are immutable ASTs over two named variables (``x``/``y`` by
default, ``u``/``v`` for surface patches), numeric literals, the operators
``+ - * / ^`` (``^`` right-associative), unary minus, and the functions
``sqrt, sin, cos, exp, log, atan2, abs`` plus the internal helper ``sign``
(emitted by differentiation of ``abs``).  ``pi`` is a predefined constant.

Derivatives come in two forms: :func:`eval_grad` runs forward-mode
accumulation and is exact up to rounding, and :func:`diff` returns the
derivative as a new expression (used for nested second derivatives).
Non-smooth points of ``abs``/``sqrt`` raise :class:`NonDifferentiable`
when a derivative is requested within ``SMOOTH_TOL`` of the kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

__all__ = [
    "Expr", "Num", "Var", "Neg", "Add", "Sub", "Mul", "Div", "Pow", "Call",
    "ExprError", "ParseError", "DomainError", "NonDifferentiable",
    "parse", "to_source", "eval_expr", "eval_grad", "diff",
    "compile_value", "compile_value_vec",
    "add", "sub", "mul", "div", "neg", "powi", "call", "num", "var",
    "SMOOTH_TOL",
]

# |argument| at or below this counts as the singular locus of abs/sqrt.
SMOOTH_TOL = 1e-12

FUNCTION_ARITY = {
    "sqrt": 1, "sin": 1, "cos": 1, "exp": 1, "log": 1, "abs": 1,
    "sign": 1, "atan2": 2,
}

CONSTANTS = {"pi": math.pi}


class ExprError(Exception):
    """Base class for expression errors."""


class ParseError(ExprError):
    def __init__(self, message: str, offset: int, expected: str | None = None):
        self.offset = offset
        self.expected = expected
        full = f"{message} at offset {offset}"
        if expected:
            full += f" (expected {expected})"
        super().__init__(full)


class DomainError(ExprError):
    """Evaluation left the real domain (sqrt of negative, log of nonpositive,
    division by zero, non-integer power of a nonpositive base, overflow)."""

    def __init__(self, message: str, subexpr: "Expr | None" = None):
        self.subexpr = subexpr
        if subexpr is not None:
            message = f"{message} in `{to_source(subexpr)}`"
        super().__init__(message)


class NonDifferentiable(ExprError):
    """Derivative requested at a non-smooth point of abs/sqrt."""

    def __init__(self, subexpr: "Expr", at):
        self.subexpr = subexpr
        self.at = at
        super().__init__(
            f"`{to_source(subexpr)}` is not differentiable at {at} "
            f"(argument within {SMOOTH_TOL} of the singular locus)")


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base node.  Instances are immutable and safe to share across threads."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_source(self)

    # arithmetic sugar used when assembling expressions programmatically
    def __add__(self, other):
        return add(self, _as_expr(other))

    def __radd__(self, other):
        return add(_as_expr(other), self)

    def __sub__(self, other):
        return sub(self, _as_expr(other))

    def __rsub__(self, other):
        return sub(_as_expr(other), self)

    def __mul__(self, other):
        return mul(self, _as_expr(other))

    def __rmul__(self, other):
        return mul(_as_expr(other), self)

    def __truediv__(self, other):
        return div(self, _as_expr(other))

    def __rtruediv__(self, other):
        return div(_as_expr(other), self)

    def __neg__(self):
        return neg(self)


@dataclass(frozen=True, slots=True)
class Num(Expr):
    value: float


@dataclass(frozen=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expr):
    a: Expr


@dataclass(frozen=True, slots=True)
class Add(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True, slots=True)
class Sub(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True, slots=True)
class Mul(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True, slots=True)
class Div(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True, slots=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True, slots=True)
class Call(Expr):
    fn: str
    args: tuple


def _as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, float, Fraction)):
        return Num(float(v))
    raise TypeError(f"cannot coerce {type(v).__name__} to Expr")


# Folding constructors.  Used by diff() and by programmatic assembly so that
# derivative trees stay compact; parse() builds nodes directly.

def num(v) -> Num:
    return Num(float(v))


def var(name: str) -> Var:
    return Var(name)


def add(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and a.value == 0.0:
        return b
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return Add(a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if isinstance(b, Num) and b.value == 0.0:
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value - b.value)
    if isinstance(a, Num) and a.value == 0.0:
        return neg(b)
    return Sub(a, b)


def neg(a: Expr) -> Expr:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def mul(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num):
        if a.value == 0.0:
            return Num(0.0)
        if a.value == 1.0:
            return b
        if a.value == -1.0:
            return neg(b)
        if isinstance(b, Num):
            return Num(a.value * b.value)
    if isinstance(b, Num):
        if b.value == 0.0:
            return Num(0.0)
        if b.value == 1.0:
            return a
        if b.value == -1.0:
            return neg(a)
    return Mul(a, b)


def div(a: Expr, b: Expr) -> Expr:
    if isinstance(a, Num) and a.value == 0.0:
        return Num(0.0)
    if isinstance(b, Num) and b.value == 1.0:
        return a
    return Div(a, b)


def powi(base: Expr, n: int) -> Expr:
    """Integer power as an expression."""
    if n == 0:
        return Num(1.0)
    if n == 1:
        return base
    return Pow(base, Num(float(n)))


def call(fn: str, *args: Expr) -> Expr:
    if fn not in FUNCTION_ARITY:
        raise ValueError(f"unknown function {fn!r}")
    if len(args) != FUNCTION_ARITY[fn]:
        raise ValueError(f"{fn} takes {FUNCTION_ARITY[fn]} argument(s)")
    return Call(fn, tuple(args))


def sqrt(a: Expr) -> Expr:
    return Call("sqrt", (a,))


# ---------------------------------------------------------------------------
# Tokenizer / parser


_OPERATOR_CHARS = "+-*/^(),"


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def _tokenize(source: str):
    """Yield (kind, text, byte_offset) triples; kind in
    NUM, IDENT, OP, END."""
    i, n = 0, len(source)
    while i < n:
        c = source[i]
        if c.isspace():
            i += 1
            continue
        start = i
        if c.isdigit() or (c == "." and i + 1 < n and source[i + 1].isdigit()):
            i += 1
            while i < n and source[i].isdigit():
                i += 1
            if i < n and source[i] == ".":
                i += 1
                while i < n and source[i].isdigit():
                    i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j + 1
                    while i < n and source[i].isdigit():
                        i += 1
            yield ("NUM", source[start:i], _byte_offset(source, start))
        elif c.isalpha() or c == "_":
            i += 1
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            yield ("IDENT", source[start:i], _byte_offset(source, start))
        elif c in _OPERATOR_CHARS:
            i += 1
            yield ("OP", c, _byte_offset(source, start))
        else:
            raise ParseError(f"unexpected character {c!r}",
                             _byte_offset(source, i))
    yield ("END", "", _byte_offset(source, n))


class _Parser:
    def __init__(self, source: str, variables):
        self.tokens = list(_tokenize(source))
        self.pos = 0
        self.variables = tuple(variables)

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, text: str):
        kind, t, off = self.peek()
        if kind != "OP" or t != text:
            raise ParseError(f"unexpected token {t or 'end of input'!r}", off,
                             expected=repr(text))
        return self.advance()

    def parse(self) -> Expr:
        e = self.expr()
        kind, t, off = self.peek()
        if kind != "END":
            raise ParseError(f"unexpected token {t!r}", off,
                             expected="end of input")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            kind, t, off = self.peek()
            if kind == "OP" and t in "+-":
                self.advance()
                rhs = self.term()
                e = Add(e, rhs) if t == "+" else Sub(e, rhs)
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            kind, t, off = self.peek()
            if kind == "OP" and t in "*/":
                self.advance()
                rhs = self.unary()
                e = Mul(e, rhs) if t == "*" else Div(e, rhs)
            else:
                return e

    def unary(self) -> Expr:
        kind, t, off = self.peek()
        if kind == "OP" and t == "-":
            self.advance()
            return Neg(self.unary())
        if kind == "OP" and t == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        kind, t, off = self.peek()
        if kind == "OP" and t == "^":
            self.advance()
            return Pow(base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, t, off = self.advance()
        if kind == "NUM":
            return Num(float(t))
        if kind == "IDENT":
            k2, t2, _ = self.peek()
            if k2 == "OP" and t2 == "(":
                if t not in FUNCTION_ARITY:
                    raise ParseError(f"unknown function {t!r}", off)
                self.advance()
                args = [self.expr()]
                while True:
                    k3, t3, off3 = self.peek()
                    if k3 == "OP" and t3 == ",":
                        self.advance()
                        args.append(self.expr())
                    else:
                        break
                self.expect_op(")")
                if len(args) != FUNCTION_ARITY[t]:
                    raise ParseError(
                        f"{t} takes {FUNCTION_ARITY[t]} argument(s), "
                        f"got {len(args)}", off)
                return Call(t, tuple(args))
            if t in self.variables:
                return Var(t)
            if t in CONSTANTS:
                return Num(CONSTANTS[t])
            raise ParseError(f"unknown identifier {t!r}", off)
        if kind == "OP" and t == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token {t or 'end of input'!r}", off,
                         expected="a number, variable, function or '('")


def parse(source: str, variables=("x", "y")) -> Expr:
    """Parse ``source`` into an Expr over the two declared variables.

    Raises ParseError (with the byte offset of the offending token) on
    malformed input or unknown identifiers.
    """
    return _Parser(source, variables).parse()


# ---------------------------------------------------------------------------
# Printer


_PREC = {"add": 1, "mul": 2, "neg": 2, "pow": 3, "atom": 4}


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _print(e: Expr, parent_prec: int) -> str:
    if isinstance(e, Num):
        s = _fmt_num(e.value)
        if e.value < 0 and parent_prec > _PREC["add"]:
            return f"({s})"
        return s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + _print(e.a, _PREC["neg"] + 1)
        return f"({s})" if parent_prec > _PREC["neg"] else s
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        s = (_print(e.a, _PREC["add"]) + f" {op} "
             + _print(e.b, _PREC["add"] + 1))
        return f"({s})" if parent_prec > _PREC["add"] else s
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        s = _print(e.a, _PREC["mul"]) + op + _print(e.b, _PREC["mul"] + 1)
        return f"({s})" if parent_prec > _PREC["mul"] else s
    if isinstance(e, Pow):
        s = (_print(e.base, _PREC["pow"] + 1) + "^"
             + _print(e.exponent, _PREC["pow"]))
        return f"({s})" if parent_prec > _PREC["pow"] else s
    if isinstance(e, Call):
        return e.fn + "(" + ", ".join(_print(a, 0) for a in e.args) + ")"
    raise TypeError(f"not an Expr: {e!r}")


def to_source(e: Expr) -> str:
    """Canonical text form; ``parse(to_source(e))`` evaluates like ``e``."""
    return _print(e, 0)


# ---------------------------------------------------------------------------
# Evaluation


def _sign(t: float) -> float:
    if t > 0.0:
        return 1.0
    if t < 0.0:
        return -1.0
    return 0.0


def eval_expr(e: Expr, x: float, y: float, variables=("x", "y")) -> float:
    """Evaluate at (x, y); raises DomainError outside the real domain."""
    env = {variables[0]: float(x), variables[1]: float(y)}
    v = _eval(e, env)
    if not math.isfinite(v):
        raise DomainError("evaluation is not finite", e)
    return v


def _eval(e: Expr, env) -> float:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise DomainError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        return -_eval(e.a, env)
    if isinstance(e, Add):
        return _eval(e.a, env) + _eval(e.b, env)
    if isinstance(e, Sub):
        return _eval(e.a, env) - _eval(e.b, env)
    if isinstance(e, Mul):
        return _eval(e.a, env) * _eval(e.b, env)
    if isinstance(e, Div):
        denom = _eval(e.b, env)
        if denom == 0.0:
            raise DomainError("division by zero", e)
        return _eval(e.a, env) / denom
    if isinstance(e, Pow):
        return _pow_value(e, _eval(e.base, env), _eval(e.exponent, env))
    if isinstance(e, Call):
        args = [_eval(a, env) for a in e.args]
        return _call_value(e, args)
    raise TypeError(f"not an Expr: {e!r}")


def _pow_value(node: Pow, base: float, expo: float) -> float:
    if expo == round(expo):
        n = int(round(expo))
        if base == 0.0 and n < 0:
            raise DomainError("zero base with negative exponent", node)
        try:
            return float(base ** n)
        except OverflowError:
            raise DomainError("overflow", node) from None
    if base <= 0.0:
        raise DomainError("non-integer power of a nonpositive base", node)
    try:
        return math.exp(expo * math.log(base))
    except OverflowError:
        raise DomainError("overflow", node) from None


def _call_value(node: Call, args) -> float:
    fn = node.fn
    try:
        if fn == "sqrt":
            if args[0] < 0.0:
                raise DomainError("sqrt of a negative value", node)
            return math.sqrt(args[0])
        if fn == "sin":
            return math.sin(args[0])
        if fn == "cos":
            return math.cos(args[0])
        if fn == "exp":
            return math.exp(args[0])
        if fn == "log":
            if args[0] <= 0.0:
                raise DomainError("log of a nonpositive value", node)
            return math.log(args[0])
        if fn == "abs":
            return abs(args[0])
        if fn == "sign":
            return _sign(args[0])
        if fn == "atan2":
            return math.atan2(args[0], args[1])
    except OverflowError:
        raise DomainError("overflow", node) from None
    raise TypeError(f"unknown function {fn!r}")


def eval_grad(e: Expr, x: float, y: float, variables=("x", "y")):
    """Evaluate value and both partial derivatives at (x, y).

    Forward-mode accumulation; exact up to floating-point rounding.
    Raises NonDifferentiable when a derivative is requested within
    SMOOTH_TOL of a kink of abs/sqrt, DomainError outside the domain.
    """
    env = {variables[0]: (float(x), 1.0, 0.0),
           variables[1]: (float(y), 0.0, 1.0)}
    v, dx, dy = _fwd(e, env)
    if not (math.isfinite(v) and math.isfinite(dx) and math.isfinite(dy)):
        raise DomainError("evaluation is not finite", e)
    return (v, dx, dy)


def _fwd(e: Expr, env):
    if isinstance(e, Num):
        return (e.value, 0.0, 0.0)
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise DomainError(f"unbound variable {e.name!r}", e) from None
    if isinstance(e, Neg):
        v, dx, dy = _fwd(e.a, env)
        return (-v, -dx, -dy)
    if isinstance(e, Add):
        va, dxa, dya = _fwd(e.a, env)
        vb, dxb, dyb = _fwd(e.b, env)
        return (va + vb, dxa + dxb, dya + dyb)
    if isinstance(e, Sub):
        va, dxa, dya = _fwd(e.a, env)
        vb, dxb, dyb = _fwd(e.b, env)
        return (va - vb, dxa - dxb, dya - dyb)
    if isinstance(e, Mul):
        va, dxa, dya = _fwd(e.a, env)
        vb, dxb, dyb = _fwd(e.b, env)
        return (va * vb, dxa * vb + va * dxb, dya * vb + va * dyb)
    if isinstance(e, Div):
        va, dxa, dya = _fwd(e.a, env)
        vb, dxb, dyb = _fwd(e.b, env)
        if vb == 0.0:
            raise DomainError("division by zero", e)
        v = va / vb
        return (v, (dxa - v * dxb) / vb, (dya - v * dyb) / vb)
    if isinstance(e, Pow):
        return _fwd_pow(e, env)
    if isinstance(e, Call):
        return _fwd_call(e, env)
    raise TypeError(f"not an Expr: {e!r}")


def _fwd_pow(e: Pow, env):
    vb, dxb, dyb = _fwd(e.base, env)
    ve, dxe, dye = _fwd(e.exponent, env)
    if dxe == 0.0 and dye == 0.0:
        # constant exponent
        if ve == round(ve):
            n = int(round(ve))
            if n == 0:
                return (1.0, 0.0, 0.0)
            if vb == 0.0 and n < 0:
                raise DomainError("zero base with negative exponent", e)
            try:
                v = float(vb ** n)
                dfac = n * float(vb ** (n - 1)) if vb != 0.0 else (
                    float(n) if n == 1 else 0.0)
            except OverflowError:
                raise DomainError("overflow", e) from None
            return (v, dfac * dxb, dfac * dyb)
        if vb <= SMOOTH_TOL:
            if abs(vb) <= SMOOTH_TOL and _has_var(e.base):
                raise NonDifferentiable(e, _point_of(env))
            raise DomainError("non-integer power of a nonpositive base", e)
        v = math.exp(ve * math.log(vb))
        dfac = ve * v / vb
        return (v, dfac * dxb, dfac * dyb)
    if vb <= 0.0:
        raise DomainError("non-integer power of a nonpositive base", e)
    lv = math.log(vb)
    v = math.exp(ve * lv)
    return (v,
            v * (dxe * lv + ve * dxb / vb),
            v * (dye * lv + ve * dyb / vb))


def _point_of(env):
    vals = [t[0] for t in env.values()]
    return tuple(vals)


def _has_var(e: Expr) -> bool:
    if isinstance(e, Var):
        return True
    if isinstance(e, Num):
        return False
    if isinstance(e, Neg):
        return _has_var(e.a)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return _has_var(e.a) or _has_var(e.b)
    if isinstance(e, Pow):
        return _has_var(e.base) or _has_var(e.exponent)
    if isinstance(e, Call):
        return any(_has_var(a) for a in e.args)
    return False


def _fwd_call(e: Call, env):
    fn = e.fn
    if fn == "atan2":
        vy, dxy, dyy = _fwd(e.args[0], env)
        vx, dxx, dyx = _fwd(e.args[1], env)
        r2 = vx * vx + vy * vy
        if r2 == 0.0:
            raise DomainError("atan2 derivative at the origin", e)
        v = math.atan2(vy, vx)
        return (v,
                (vx * dxy - vy * dxx) / r2,
                (vx * dyy - vy * dyx) / r2)
    va, dxa, dya = _fwd(e.args[0], env)
    live = _has_var(e.args[0])
    try:
        if fn == "sqrt":
            if va < -SMOOTH_TOL:
                raise DomainError("sqrt of a negative value", e)
            if va <= SMOOTH_TOL:
                if live:
                    raise NonDifferentiable(e, _point_of(env))
                if va < 0.0:
                    raise DomainError("sqrt of a negative value", e)
                return (math.sqrt(va), 0.0, 0.0)
            v = math.sqrt(va)
            dfac = 0.5 / v
            return (v, dfac * dxa, dfac * dya)
        if fn == "sin":
            c = math.cos(va)
            return (math.sin(va), c * dxa, c * dya)
        if fn == "cos":
            s = -math.sin(va)
            return (math.cos(va), s * dxa, s * dya)
        if fn == "exp":
            v = math.exp(va)
            return (v, v * dxa, v * dya)
        if fn == "log":
            if va <= 0.0:
                raise DomainError("log of a nonpositive value", e)
            return (math.log(va), dxa / va, dya / va)
        if fn == "abs":
            if abs(va) <= SMOOTH_TOL and live:
                raise NonDifferentiable(e, _point_of(env))
            s = _sign(va)
            return (abs(va), s * dxa, s * dya)
        if fn == "sign":
            return (_sign(va), 0.0, 0.0)
    except OverflowError:
        raise DomainError("overflow", e) from None
    raise TypeError(f"unknown function {fn!r}")


# ---------------------------------------------------------------------------
# Differentiation (AST level)


def diff(e: Expr, wrt: str) -> Expr:
    """Derivative of ``e`` with respect to the variable named ``wrt``.

    The result is again an Expr.  At kinks of abs the derivative uses the
    internal ``sign`` function; sqrt/log derivatives raise DomainError when
    later evaluated at their singular locus.
    """
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0 if e.name == wrt else 0.0)
    if isinstance(e, Neg):
        return neg(diff(e.a, wrt))
    if isinstance(e, Add):
        return add(diff(e.a, wrt), diff(e.b, wrt))
    if isinstance(e, Sub):
        return sub(diff(e.a, wrt), diff(e.b, wrt))
    if isinstance(e, Mul):
        return add(mul(diff(e.a, wrt), e.b), mul(e.a, diff(e.b, wrt)))
    if isinstance(e, Div):
        # (a/b)' = a'/b - a b'/b^2
        da, db = diff(e.a, wrt), diff(e.b, wrt)
        if isinstance(db, Num) and db.value == 0.0:
            return div(da, e.b)
        return div(sub(mul(da, e.b), mul(e.a, db)), Pow(e.b, Num(2.0)))
    if isinstance(e, Pow):
        db = diff(e.base, wrt)
        de = diff(e.exponent, wrt)
        if isinstance(de, Num) and de.value == 0.0:
            # c * u^(c-1) * u'
            if isinstance(e.exponent, Num):
                c = e.exponent.value
                return mul(mul(Num(c), Pow(e.base, Num(c - 1.0))), db)
            return mul(mul(e.exponent,
                           Pow(e.base, sub(e.exponent, Num(1.0)))), db)
        # u^v * (v' log u + v u'/u)
        return mul(e, add(mul(de, Call("log", (e.base,))),
                          mul(e.exponent, div(db, e.base))))
    if isinstance(e, Call):
        return _diff_call(e, wrt)
    raise TypeError(f"not an Expr: {e!r}")


def _diff_call(e: Call, wrt: str) -> Expr:
    fn = e.fn
    if fn == "atan2":
        a, b = e.args  # atan2(a, b), d = (b a' - a b') / (a^2 + b^2)
        da, db = diff(a, wrt), diff(b, wrt)
        denom = add(Pow(a, Num(2.0)), Pow(b, Num(2.0)))
        return div(sub(mul(b, da), mul(a, db)), denom)
    u = e.args[0]
    du = diff(u, wrt)
    if isinstance(du, Num) and du.value == 0.0:
        return Num(0.0)
    if fn == "sqrt":
        return div(du, mul(Num(2.0), Call("sqrt", (u,))))
    if fn == "sin":
        return mul(Call("cos", (u,)), du)
    if fn == "cos":
        return neg(mul(Call("sin", (u,)), du))
    if fn == "exp":
        return mul(Call("exp", (u,)), du)
    if fn == "log":
        return div(du, u)
    if fn == "abs":
        return mul(Call("sign", (u,)), du)
    if fn == "sign":
        return Num(0.0)
    raise TypeError(f"unknown function {fn!r}")


# ---------------------------------------------------------------------------
# Compilation to fast callables


def _codegen(e: Expr, prec: int) -> str:
    if isinstance(e, Num):
        s = repr(e.value)
        return f"({s})" if e.value < 0 and prec > 1 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        s = "-" + _codegen(e.a, 3)
        return f"({s})" if prec > 2 else s
    if isinstance(e, (Add, Sub)):
        op = "+" if isinstance(e, Add) else "-"
        s = _codegen(e.a, 1) + op + _codegen(e.b, 2)
        return f"({s})" if prec > 1 else s
    if isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        s = _codegen(e.a, 2) + op + _codegen(e.b, 3)
        return f"({s})" if prec > 2 else s
    if isinstance(e, Pow):
        expo = e.exponent
        if isinstance(expo, Num) and expo.value == round(expo.value):
            s = _codegen(e.base, 4) + "**" + _codegen(expo, 5)
            return f"({s})" if prec > 3 else s
        return f"_pow({_codegen(e.base, 0)}, {_codegen(expo, 0)})"
    if isinstance(e, Call):
        return e.fn + "(" + ",".join(_codegen(a, 0) for a in e.args) + ")"
    raise TypeError(f"not an Expr: {e!r}")


def _scalar_namespace():
    def _pow(b, c):
        if b <= 0.0:
            raise DomainError("non-integer power of a nonpositive base")
        return math.exp(c * math.log(b))

    return {
        "sqrt": math.sqrt, "sin": math.sin, "cos": math.cos,
        "exp": math.exp, "log": math.log, "abs": abs, "sign": _sign,
        "atan2": math.atan2, "_pow": _pow,
    }


def _vector_namespace():
    import numpy as np

    def _pow(b, c):
        return np.exp(c * np.log(b))

    return {
        "sqrt": np.sqrt, "sin": np.sin, "cos": np.cos,
        "exp": np.exp, "log": np.log, "abs": np.abs, "sign": np.sign,
        "atan2": np.arctan2, "_pow": _pow,
    }


def _compile(e: Expr, variables, namespace):
    src = f"def _f({variables[0]}, {variables[1]}):\n    return " \
          + _codegen(e, 0)
    ns = dict(namespace)
    exec(compile(src, "<expr>", "exec"), ns)
    return ns["_f"]


def compile_value(e: Expr, variables=("x", "y")):
    """Compile to a fast scalar callable f(x, y) -> float.

    Exceptions from math functions (ValueError, ZeroDivisionError,
    OverflowError) propagate raw; callers on hot paths convert them.
    """
    return _compile(e, variables, _scalar_namespace())


def compile_value_vec(e: Expr, variables=("x", "y")):
    """Compile to a numpy-vectorized callable f(X, Y) -> array."""
    return _compile(e, variables, _vector_namespace())
