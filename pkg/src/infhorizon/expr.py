"""A small expression language with forward-mode differentiation.

Grammar (EBNF)::

    expr   = term , { ("+" | "-") , term } ;
    term   = unary , { ("*" | "/") , unary } ;
    unary  = "-" , unary | power ;
    power  = atom , [ ("^" | "**") , unary ] ;
    atom   = number | name | func , "(" , expr , ")" | "(" , expr , ")" ;
    func   = "sin" | "cos" | "exp" | "ln" | "sqrt" ;
    name   = "t" | "x" | "v" | "p" | "x" digits | "u" digits ;

``+ - * /`` associate to the left, ``^`` to the right, and ``-a^b`` means
``-(a^b)``.  Expressions can be evaluated on floats, on :class:`Dual`
numbers (nested duals give second derivatives), or compiled into vectorised
numpy functions.
"""
import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifierError

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt")
NAME_RE = re.compile(r"^(t|x|v|p|x\d+|u\d+)$")

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


class Expr:
    """Base class of the syntax tree."""

    prec = 5

    def __str__(self):
        return to_string(self)

    def variables(self):
        out = set()
        _collect(self, out)
        return out


@dataclass(frozen=True)
class Num(Expr):
    value: float

    @property
    def prec(self):
        return _PREC["neg"] if self.value < 0 or (self.value == 0 and math.copysign(1, self.value) < 0) else 5


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    prec = _PREC["neg"]


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return _PREC[self.op]


def _collect(e, out):
    if isinstance(e, Var):
        out.add(e.name)
    elif isinstance(e, (Neg, Call)):
        _collect(e.arg, out)
    elif isinstance(e, BinOp):
        _collect(e.left, out)
        _collect(e.right, out)


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(r"(?:(\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|([A-Za-z_]\w*)|(\*\*|[-+*/^()]))")


def _tokenize(text):
    tokens = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text):
            break
        m = _TOKEN.match(text, pos)
        offset = len(text[:pos].encode())
        if not m:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, offset)
        kind = ("num", "name", "op")[m.lastindex - 1]
        tokens.append((kind, m.group(m.lastindex), offset))
        pos = m.end()
    tokens.append(("end", "", len(text.encode())))
    return tokens


class _Parser:
    def __init__(self, text, variables):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, val, off = self.take()
        if val != value or kind != "op":
            raise ExprSyntaxError(f"expected {value!r}, found {val or 'end of input'!r}", self.text, off)

    def parse(self):
        e = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", self.text, off)
        return e

    def expr(self):
        e = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.term())
        return e

    def term(self):
        e = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            e = BinOp(op, e, self.unary())
        return e

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] in ("^", "**"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, val, off = self.take()
        if kind == "num":
            return Num(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            if self.peek()[:2] == ("op", "("):
                raise UnknownIdentifierError(f"unknown function {val!r} at offset {off}")
            ok = val in self.variables if self.variables is not None else bool(NAME_RE.match(val))
            if not ok:
                raise UnknownIdentifierError(f"unknown identifier {val!r} at offset {off}")
            return Var(val)
        if (kind, val) == ("op", "("):
            e = self.expr()
            self.expect(")")
            return e
        raise ExprSyntaxError(f"unexpected {val or 'end of input'!r}", self.text, off)


def parse_expr(text, variables=None):
    """Parse ``text`` into an :class:`Expr`.

    ``variables`` optionally restricts the allowed identifiers; by default any
    of ``t, x, v, p, x<n>, u<n>`` is accepted.
    """
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", text or "", 0)
    return _Parser(text, None if variables is None else set(variables)).parse()


# ---------------------------------------------------------------- printing

def _fmt_num(v):
    v = abs(v)
    if v == int(v) and v < 1e15:
        return str(int(v))
    return repr(v)


def to_string(e):
    """Print ``e`` so that :func:`parse_expr` rebuilds the same tree."""
    if isinstance(e, Num):
        s = _fmt_num(e.value)
        return "-" + s if e.value < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.arg)})"
    if isinstance(e, Neg):
        inner = to_string(e.arg)
        if e.arg.prec < _PREC["neg"]:
            inner = f"({inner})"
        return "-" + inner
    p = e.prec
    left, right = to_string(e.left), to_string(e.right)
    if e.op == "^":
        if e.left.prec <= p:
            left = f"({left})"
        if e.right.prec < _PREC["neg"]:
            right = f"({right})"
    else:
        if e.left.prec < p:
            left = f"({left})"
        if e.right.prec <= p:
            right = f"({right})"
    return f"{left} {e.op} {right}" if e.op in "+-" else f"{left}{e.op}{right}"


# ---------------------------------------------------------------- dual numbers

class Dual:
    """Forward-mode dual number ``val + sum_i eps[i] e_i``.

    ``val`` and the entries of ``eps`` may themselves be duals, which gives
    exact second derivatives (forward over forward).
    """

    __slots__ = ("val", "eps")

    def __init__(self, val, eps):
        self.val = val
        self.eps = tuple(eps)

    def __repr__(self):
        return f"Dual({self.val!r}, {self.eps!r})"

    def _lift(self, other):
        if isinstance(other, Dual):
            return other
        return Dual(other, (0.0,) * len(self.eps))

    def __add__(self, other):
        o = self._lift(other)
        return Dual(self.val + o.val, [a + b for a, b in zip(self.eps, o.eps)])

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, [-a for a in self.eps])

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return Dual(self.val * o.val, [self.val * b + a * o.val for a, b in zip(self.eps, o.eps)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        if _real(o.val) == 0:
            raise DomainError("division by zero")
        inv = 1.0 / o.val
        val = self.val * inv
        return Dual(val, [(a - val * b) * inv for a, b in zip(self.eps, o.eps)])

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def chain(self, fval, dval):
        return Dual(fval, [dval * a for a in self.eps])


def _real(x):
    while isinstance(x, Dual):
        x = x.val
    return x


def _sin(x):
    if isinstance(x, Dual):
        return x.chain(_sin(x.val), _cos(x.val))
    return math.sin(x)


def _cos(x):
    if isinstance(x, Dual):
        return x.chain(_cos(x.val), -_sin(x.val))
    return math.cos(x)


def _exp(x):
    if isinstance(x, Dual):
        e = _exp(x.val)
        return x.chain(e, e)
    return math.exp(x)


def _ln(x):
    if _real(x) <= 0:
        raise DomainError(f"ln of non-positive value {_real(x)!r}")
    if isinstance(x, Dual):
        return x.chain(_ln(x.val), 1.0 / x.val)
    return math.log(x)


def _sqrt(x):
    r = _real(x)
    if r < 0:
        raise DomainError(f"sqrt of negative value {r!r}")
    if isinstance(x, Dual):
        if r == 0:
            raise DomainError("sqrt is not differentiable at 0")
        s = _sqrt(x.val)
        return x.chain(s, 0.5 / s)
    return math.sqrt(x)


def _div(a, b):
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        if b == 0:
            raise DomainError("division by zero")
        return a / b
    if isinstance(a, Dual):
        return a / b
    return Dual(a, (0.0,) * len(b.eps)) / b


def _is_int(v):
    return float(v).is_integer()


def _pow(a, b):
    if not isinstance(b, Dual) and _is_int(b):
        n = int(b)
        if n == 0:
            return 1.0 if not isinstance(a, Dual) else a.chain(1.0, 0.0)
        if n < 0 and _real(a) == 0:
            raise DomainError("zero raised to a negative power")
        if isinstance(a, Dual):
            return a.chain(_pow(a.val, n), n * _pow(a.val, n - 1))
        return float(a) ** n
    base = _real(a)
    if base < 0:
        raise DomainError("negative base with non-integer exponent")
    if base == 0:
        if isinstance(a, Dual) or isinstance(b, Dual):
            raise DomainError("pow is not differentiable at a zero base")
        if b <= 0:
            raise DomainError("zero raised to a non-positive power")
        return 0.0
    if isinstance(a, Dual) or isinstance(b, Dual):
        return _exp(b * _ln(a))
    return math.pow(a, b)


_FN = {"sin": _sin, "cos": _cos, "exp": _exp, "ln": _ln, "sqrt": _sqrt}


def evaluate(e, bindings):
    """Evaluate ``e`` with variables taken from ``bindings`` (floats or duals)."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return bindings[e.name]
        except KeyError:
            raise UnknownIdentifierError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, bindings)
    if isinstance(e, Call):
        return _FN[e.fn](evaluate(e.arg, bindings))
    a = evaluate(e.left, bindings)
    b = evaluate(e.right, bindings)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return _div(a, b)
    return _pow(a, b)


@dataclass(frozen=True)
class DualValue:
    value: float
    partials: np.ndarray


def eval_dual(e, bindings, wrt):
    """Value of ``e`` and its partials with respect to the names in ``wrt``."""
    n = len(wrt)
    seeded = {k: float(v) for k, v in bindings.items()}
    for i, name in enumerate(wrt):
        if name not in seeded:
            raise UnknownIdentifierError(f"variable {name!r} is not bound")
        seeded[name] = Dual(seeded[name], [1.0 if j == i else 0.0 for j in range(n)])
    out = evaluate(e, seeded)
    if isinstance(out, Dual):
        return DualValue(float(out.val), np.array(out.eps, dtype=float))
    return DualValue(float(out), np.zeros(n))


def eval_hessian(e, bindings, wrt):
    """Value, gradient and Hessian of ``e`` by forward-over-forward duals."""
    n = len(wrt)
    seeded = {k: float(v) for k, v in bindings.items()}
    zero = [0.0] * n
    for i, name in enumerate(wrt):
        inner = Dual(seeded[name], [1.0 if j == i else 0.0 for j in range(n)])
        seeded[name] = Dual(inner, [Dual(1.0 if j == i else 0.0, zero) for j in range(n)])
    out = evaluate(e, seeded)
    if not isinstance(out, Dual):
        return float(out), np.zeros(n), np.zeros((n, n))
    val = out.val
    value = float(_real(val))
    grad = np.array([float(_real(g)) for g in out.eps])
    hess = np.zeros((n, n))
    for i, g in enumerate(out.eps):
        if isinstance(g, Dual):
            hess[i] = [float(_real(h)) for h in g.eps]
    return value, grad, hess


# ---------------------------------------------------------------- symbolic derivative + compilation

ZERO = Num(0.0)
ONE = Num(1.0)


def _is_num(e, v=None):
    return isinstance(e, Num) and (v is None or e.value == v)


def add(a, b):
    if _is_num(a, 0.0):
        return b
    if _is_num(b, 0.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def sub(a, b):
    if _is_num(b, 0.0):
        return a
    if _is_num(a, 0.0):
        return neg(b)
    if _is_num(a) and _is_num(b):
        return Num(a.value - b.value)
    return BinOp("-", a, b)


def mul(a, b):
    if _is_num(a, 0.0) or _is_num(b, 0.0):
        return ZERO
    if _is_num(a, 1.0):
        return b
    if _is_num(b, 1.0):
        return a
    if _is_num(a) and _is_num(b):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def div(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(a, 0.0) and not _is_num(b, 0.0):
        return ZERO
    return BinOp("/", a, b)


def neg(a):
    if _is_num(a):
        return Num(-a.value) if a.value != 0 else ZERO
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def power(a, b):
    if _is_num(b, 1.0):
        return a
    if _is_num(b, 0.0):
        return ONE
    return BinOp("^", a, b)


def diff(e, var):
    """Symbolic partial derivative of ``e`` with respect to ``var``.

    Used to build the compiled Jacobians of model systems; ``eval_dual``
    remains the reference it is tested against.
    """
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(diff(e.arg, var))
    if isinstance(e, Call):
        da = diff(e.arg, var)
        if _is_num(da, 0.0):
            return ZERO
        a = e.arg
        outer = {
            "sin": lambda: Call("cos", a),
            "cos": lambda: neg(Call("sin", a)),
            "exp": lambda: e,
            "ln": lambda: div(ONE, a),
            "sqrt": lambda: div(Num(0.5), e),
        }[e.fn]()
        return mul(outer, da)
    a, b = e.left, e.right
    da, db = diff(a, var), diff(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, Num(2.0)))
    if _is_num(db, 0.0):
        if _is_num(da, 0.0):
            return ZERO
        if isinstance(b, Num):
            return mul(mul(b, power(a, Num(b.value - 1.0))), da)
        return mul(mul(b, power(a, sub(b, ONE))), da)
    # general a^b
    return mul(e, add(mul(db, Call("ln", a)), div(mul(b, da), a)))


def _np_ln(a):
    if np.any(np.asarray(a) <= 0):
        raise DomainError("ln of non-positive value")
    return np.log(a)


def _np_sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise DomainError("sqrt of negative value")
    return np.sqrt(a)


def _np_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise DomainError("division by zero")
    return a / b


def _np_pow(a, b):
    if np.ndim(b) == 0 and float(b).is_integer():
        if b < 0 and np.any(np.asarray(a) == 0):
            raise DomainError("zero raised to a negative power")
        return a ** b
    if np.any(np.asarray(a) < 0):
        raise DomainError("negative base with non-integer exponent")
    return np.power(a, b)


_NP_NS = {"_sin": np.sin, "_cos": np.cos, "_exp": np.exp, "_ln": _np_ln, "_sqrt": _np_sqrt,
          "_div": _np_div, "_pow": _np_pow}


def _source(e):
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_source(e.arg)})"
    if isinstance(e, Call):
        return f"_{e.fn}({_source(e.arg)})"
    a, b = _source(e.left), _source(e.right)
    if e.op in "+-*":
        return f"({a} {e.op} {b})"
    if e.op == "/":
        return f"_div({a}, {b})"
    return f"_pow({a}, {b})"


def compile_expr(e, args):
    """Compile ``e`` into ``fn(*args)`` that accepts floats or numpy arrays.

    Domain violations raise :class:`DomainError` instead of yielding NaN.
    """
    free = e.variables() - set(args)
    if free:
        raise UnknownIdentifierError(f"unbound variables {sorted(free)}")
    src = f"def _fn({', '.join(args)}):\n    return {_source(e)}\n"
    ns = dict(_NP_NS)
    exec(compile(src, "<expr>", "exec"), ns)
    fn = ns["_fn"]
    fn.source = src
    return fn


def compile_many(exprs, args):
    """Compile several expressions into one function returning a tuple."""
    free = set().union(*(e.variables() for e in exprs)) - set(args)
    if free:
        raise UnknownIdentifierError(f"unbound variables {sorted(free)}")
    body = ", ".join(_source(e) for e in exprs)
    src = f"def _fn({', '.join(args)}):\n    return ({body},)\n"
    ns = dict(_NP_NS)
    exec(compile(src, "<expr>", "exec"), ns)
    fn = ns["_fn"]
    fn.source = src
    return fn


def substitute(e, mapping):
    """Replace variables by expressions (``mapping`` maps names to Expr)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Num):
        return e
    if isinstance(e, Neg):
        return Neg(substitute(e.arg, mapping))
    if isinstance(e, Call):
        return Call(e.fn, substitute(e.arg, mapping))
    return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
