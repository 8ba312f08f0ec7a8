"""Expression trees for manufactured solutions.

Supports evaluation on numpy arrays, exact symbolic differentiation,
random generation from the train/test symbol banks, range scaling, and
a text grammar:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ('^' integer)?
    base   := number | 'x' | 'y' | 'pi' | func '(' expr ')' | '(' expr ')'
    func   := sin | cos | exp | sqrt | log

There is no unary minus; negated subtrees are written as (0 - e).
"""

import math
from typing import NamedTuple

import numpy as np


class ParseError(ValueError):
    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DegenerateExpressionError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# tree nodes

class Expr:
    def __call__(self, x, y):
        return self.eval(x, y)


class Const(Expr):
    def __init__(self, value):
        self.value = float(value)

    def eval(self, x, y):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        if shape == ():
            return self.value
        return np.full(shape, self.value)

    def diff(self, var):
        return Const(0.0)


class Pi(Expr):
    """The constant pi, kept symbolic so it serializes as 'pi'."""

    def eval(self, x, y):
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        if shape == ():
            return math.pi
        return np.full(shape, math.pi)

    def diff(self, var):
        return Const(0.0)


class Var(Expr):
    def __init__(self, name):
        assert name in ("x", "y")
        self.name = name

    def eval(self, x, y):
        v = x if self.name == "x" else y
        shape = np.broadcast_shapes(np.shape(x), np.shape(y))
        if shape == ():
            return float(v)
        return np.broadcast_to(np.asarray(v, dtype=np.float64), shape)

    def diff(self, var):
        return Const(1.0 if var == self.name else 0.0)


class Bin(Expr):
    def __init__(self, op, left, right):
        assert op in "+-*/"
        self.op = op
        self.left = left
        self.right = right

    def eval(self, x, y):
        a = self.left.eval(x, y)
        b = self.right.eval(x, y)
        if self.op == "+":
            return a + b
        if self.op == "-":
            return a - b
        if self.op == "*":
            return a * b
        return a / b

    def diff(self, var):
        da, db = self.left.diff(var), self.right.diff(var)
        if self.op == "+":
            return add(da, db)
        if self.op == "-":
            return sub(da, db)
        if self.op == "*":
            return add(mul(da, self.right), mul(self.left, db))
        # quotient rule: (a'b - ab') / b^2
        return div(sub(mul(da, self.right), mul(self.left, db)), IntPow(self.right, 2))


class IntPow(Expr):
    """base ^ k with integer k >= 0."""

    def __init__(self, base, k):
        self.base = base
        self.k = int(k)

    def eval(self, x, y):
        return self.base.eval(x, y) ** self.k

    def diff(self, var):
        if self.k == 0:
            return Const(0.0)
        return mul(mul(Const(float(self.k)), int_pow(self.base, self.k - 1)), self.base.diff(var))


_FUNCS = {
    "sin": (np.sin, lambda a: Fun("cos", a)),
    "cos": (np.cos, lambda a: mul(Const(-1.0), Fun("sin", a))),
    "exp": (np.exp, lambda a: Fun("exp", a)),
    "sqrt": (np.sqrt, lambda a: div(Const(0.5), Fun("sqrt", a))),
    "log": (np.log, lambda a: div(Const(1.0), a)),
}


class Fun(Expr):
    def __init__(self, name, arg):
        assert name in _FUNCS
        self.name = name
        self.arg = arg

    def eval(self, x, y):
        return _FUNCS[self.name][0](self.arg.eval(x, y))

    def diff(self, var):
        outer = _FUNCS[self.name][1](self.arg)
        return mul(outer, self.arg.diff(var))


# ---------------------------------------------------------------------------
# folding constructors

def _const_of(e):
    if isinstance(e, Const):
        return e.value
    return None


def add(a, b):
    ca, cb = _const_of(a), _const_of(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0.0:
        return b
    if cb == 0.0:
        return a
    return Bin("+", a, b)


def sub(a, b):
    ca, cb = _const_of(a), _const_of(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0.0:
        return a
    return Bin("-", a, b)


def mul(a, b):
    ca, cb = _const_of(a), _const_of(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0.0 or cb == 0.0:
        return Const(0.0)
    if ca == 1.0:
        return b
    if cb == 1.0:
        return a
    return Bin("*", a, b)


def div(a, b):
    ca, cb = _const_of(a), _const_of(b)
    if ca is not None and cb is not None and cb != 0.0:
        return Const(ca / cb)
    if ca == 0.0:
        return Const(0.0)
    if cb == 1.0:
        return a
    return Bin("/", a, b)


def int_pow(base, k):
    if k == 0:
        return Const(1.0)
    if k == 1:
        return base
    c = _const_of(base)
    if c is not None:
        return Const(c ** int(k))
    return IntPow(base, k)


def differentiate(e, var):
    """Exact partial derivative of e with respect to 'x' or 'y'."""
    if var not in ("x", "y"):
        raise ValueError(f"var must be 'x' or 'y', got {var!r}")
    return e.diff(var)


def laplacian(u):
    return add(differentiate(differentiate(u, "x"), "x"),
               differentiate(differentiate(u, "y"), "y"))


def negate(e):
    return sub(Const(0.0), e)


# ---------------------------------------------------------------------------
# serialization

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _fmt_number(v):
    if v < 0:
        return "(0-" + _fmt_number(-v) + ")"
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def to_text(e):
    """Serialize an Expr in the module grammar; parse(to_text(e)) evaluates identically."""
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Pi):
        return "pi"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Fun):
        return f"{e.name}({to_text(e.arg)})"
    if isinstance(e, IntPow):
        base = to_text(e.base)
        if not isinstance(e.base, (Const, Pi, Var, Fun)):
            base = f"({base})"
        return f"{base}^{e.k}"
    if isinstance(e, Bin):
        p = _PREC[e.op]
        left = to_text(e.left)
        if isinstance(e.left, Bin) and _PREC[e.left.op] < p:
            left = f"({left})"
        right = to_text(e.right)
        if isinstance(e.right, Bin) and _PREC[e.right.op] <= p:
            right = f"({right})"
        return f"{left}{e.op}{right}"
    raise TypeError(f"unknown node {type(e)}")


# ---------------------------------------------------------------------------
# parser

class _Scanner:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self):
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, ch):
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r}", self.pos)
        self.pos += 1


def parse_expr(text):
    """Parse an expression string into an Expr; raises ParseError with position."""
    s = _Scanner(text)
    e = _parse_sum(s)
    s.skip_ws()
    if s.pos != len(text):
        raise ParseError(f"unexpected {text[s.pos]!r}", s.pos)
    return e


def _parse_sum(s):
    e = _parse_term(s)
    while s.peek() in ("+", "-"):
        op = s.text[s.pos]
        s.pos += 1
        e = Bin(op, e, _parse_term(s))
    return e


def _parse_term(s):
    e = _parse_factor(s)
    while s.peek() in ("*", "/"):
        op = s.text[s.pos]
        s.pos += 1
        e = Bin(op, e, _parse_factor(s))
    return e


def _parse_factor(s):
    e = _parse_base(s)
    if s.peek() == "^":
        s.pos += 1
        s.skip_ws()
        start = s.pos
        if s.peek() == "-":
            s.pos += 1
        while s.pos < len(s.text) and s.text[s.pos].isdigit():
            s.pos += 1
        if s.pos == start or s.text[start:s.pos] == "-":
            raise ParseError("expected integer exponent", start)
        k = int(s.text[start:s.pos])
        if k < 0:
            raise ParseError("negative exponent not supported", start)
        e = IntPow(e, k)
    return e


def _scan_number(s):
    start = s.pos
    while s.pos < len(s.text) and s.text[s.pos].isdigit():
        s.pos += 1
    if s.pos < len(s.text) and s.text[s.pos] == ".":
        s.pos += 1
        while s.pos < len(s.text) and s.text[s.pos].isdigit():
            s.pos += 1
    if s.pos < len(s.text) and s.text[s.pos] in "eE":
        mark = s.pos
        s.pos += 1
        if s.pos < len(s.text) and s.text[s.pos] in "+-":
            s.pos += 1
        if s.pos < len(s.text) and s.text[s.pos].isdigit():
            while s.pos < len(s.text) and s.text[s.pos].isdigit():
                s.pos += 1
        else:
            s.pos = mark  # not an exponent, e.g. "2e" followed by junk
    return Const(float(s.text[start:s.pos]))


def _parse_base(s):
    ch = s.peek()
    if ch == "":
        raise ParseError("expected expression", s.pos)
    if ch.isdigit() or ch == ".":
        return _scan_number(s)
    if ch == "(":
        s.pos += 1
        e = _parse_sum(s)
        s.expect(")")
        return e
    if ch.isalpha():
        start = s.pos
        while s.pos < len(s.text) and s.text[s.pos].isalnum():
            s.pos += 1
        name = s.text[start:s.pos]
        if name == "x" or name == "y":
            return Var(name)
        if name == "pi":
            return Pi()
        if name in _FUNCS:
            s.expect("(")
            arg = _parse_sum(s)
            s.expect(")")
            return Fun(name, arg)
        raise ParseError(f"unknown identifier {name!r}", start)
    raise ParseError(f"unexpected {ch!r}", s.pos)


# ---------------------------------------------------------------------------
# symbol banks

class SymbolBank(NamedTuple):
    name: str
    entries: list
    bubbles: list


def _p(text):
    return parse_expr(text)


_TRAIN_TEXT = [
    "cos(pi*x)", "sin(pi*x)", "exp(x)", "sqrt(x+1)",
    "cos(pi*y)", "sin(pi*y)", "exp(y)", "sqrt(y+1)",
    "cos(pi*x*y)", "sin(pi*x*y)", "exp(x*y)", "sqrt(x*y+1)",
    "cos(pi*(x+y))", "sin(pi*(x+y))", "exp(x+y)", "sqrt(x+y+1)",
    "x^2", "y^2", "x^2*y^2", "x*y", "x*y^2", "x^2*y",
    "x^3", "y^3", "x^3*y", "x^3*y^2", "y^3*x", "y^3*x^2",
    "exp(x^2+y^2)", "sin(pi*(x^2+y^2))", "cos(pi*(x^2+y^2))",
]

_TEST_TEXT = [
    "cos(2*pi*x)", "sin(2*pi*x)", "exp(0-x)", "log(sin(pi*x)+1)",
    "cos(2*pi*y)", "sin(2*pi*y)", "exp(0-y)", "log(sin(pi*y)+1)",
    "log(sin(pi*x)*sin(pi*y^2)+1)", "log(sin(pi*x^2)*sin(pi*y)+1)",
    "cos(2*pi*x*y)", "sin(2*pi*x*y)", "x^4", "y^4",
]

_BUBBLE_TEXT = [
    "(x-x^2)*(y-y^2)",
    "(x^3-x^2)*(y^3-y^2)",
    "sin(pi*x)*sin(pi*y)",
    "sin(2*pi*x)*sin(2*pi*y)",
]


def symbol_bank(name):
    """The 'train' (31 entries) or 'test' (14 entries) bank with its 4 bubbles."""
    if name == "train":
        return SymbolBank("train", [_p(t) for t in _TRAIN_TEXT], [_p(t) for t in _BUBBLE_TEXT])
    if name == "test":
        return SymbolBank("test", [_p(t) for t in _TEST_TEXT], [_p(t) for t in _BUBBLE_TEXT])
    raise ValueError(f"unknown bank {name!r}")


# ---------------------------------------------------------------------------
# random generation and scaling

_PROBE = np.linspace(0.0, 1.0, 101)
_PX, _PY = np.meshgrid(_PROBE, _PROBE, indexing="ij")


def scale_to_unit_range(u):
    """Divide u by its max abs value on the 101x101 probe grid."""
    with np.errstate(all="ignore"):
        vals = u.eval(_PX, _PY)
    if not np.all(np.isfinite(vals)):
        raise DegenerateExpressionError("non-finite values on probe grid")
    s = float(np.max(np.abs(vals)))
    if s < 1e-12:
        raise DegenerateExpressionError(f"max abs value {s} below 1e-12")
    return mul(Const(1.0 / s), u)


def random_solution(rng, bank, max_attempts=100):
    """Random manufactured solution: bank symbols joined by {+,-,*}, times a bubble, scaled.

    Draw order is fixed for reproducibility: symbol count k in {1,2,3},
    then k symbol indices, then k-1 operator indices, then the bubble.
    """
    ops = "+-*"
    for _ in range(max_attempts):
        k = int(rng.integers(1, 4))
        syms = [bank.entries[int(rng.integers(0, len(bank.entries)))] for _ in range(k)]
        combo = syms[0]
        for j in range(1, k):
            combo = Bin(ops[int(rng.integers(0, 3))], combo, syms[j])
        bubble = bank.bubbles[int(rng.integers(0, len(bank.bubbles)))]
        u = Bin("*", combo, bubble)
        try:
            return scale_to_unit_range(u)
        except DegenerateExpressionError:
            continue
    raise GenerationError(f"no valid expression after {max_attempts} attempts")
