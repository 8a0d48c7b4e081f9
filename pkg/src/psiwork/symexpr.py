"""Expression trees for phase-space functions.

Expressions live on R^n_x x R^n_xi with 1-indexed variables ``x1..xn`` and
``xi1..xin``; ``i`` is the imaginary unit.  The grammar (documented in
docs/grammar.md) supports +, -, *, /, integer ^, exp, and three smooth
builtins whose flatness is exact rather than numerical:

* ``flatExp(t)``    = e^{-1/t^2} for t > 0, else 0,
* ``flatExpLin(t)`` = e^{-1/t}   for t > 0, else 0,
* ``cutoff(t, a, b)`` = flatExp(t-a) * flatExp(b-t), a bump supported on [a,b],
* ``normXiPrime``   = |xi'| = sqrt(xi2^2 + ... + xin^2).

All nodes are immutable and compare structurally; differentiation is exact
and closed on the node algebra (derivatives of the flat builtins are
represented by the internal ``flatAux`` family r(1/t) e^{-(1/t)^k}).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

__all__ = [
    "ExprError",
    "ExprSyntaxError",
    "DomainError",
    "Node",
    "Const",
    "Var",
    "NormXiPrime",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Exp",
    "Flat",
    "Cutoff",
    "parse_expression",
    "print_expression",
    "differentiate",
    "evaluate",
    "evaluate_real",
    "const",
    "var",
]


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DomainError(ExprError):
    pass


@dataclass(frozen=True)
class Node:
    def __add__(self, other):
        return _add(self, _as_node(other))

    def __radd__(self, other):
        return _add(_as_node(other), self)

    def __sub__(self, other):
        return _sub(self, _as_node(other))

    def __rsub__(self, other):
        return _sub(_as_node(other), self)

    def __mul__(self, other):
        return _mul(self, _as_node(other))

    def __rmul__(self, other):
        return _mul(_as_node(other), self)

    def __truediv__(self, other):
        return _div(self, _as_node(other))

    def __pow__(self, k):
        return _pow(self, int(k))

    def __neg__(self):
        return _neg(self)


@dataclass(frozen=True)
class Const(Node):
    value: complex


@dataclass(frozen=True)
class Var(Node):
    kind: str  # "x" or "xi"
    index: int  # 1-based


@dataclass(frozen=True)
class NormXiPrime(Node):
    pass


@dataclass(frozen=True)
class Neg(Node):
    a: Node


@dataclass(frozen=True)
class Add(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Sub(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Mul(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Div(Node):
    a: Node
    b: Node


@dataclass(frozen=True)
class Pow(Node):
    a: Node
    k: int


@dataclass(frozen=True)
class Exp(Node):
    a: Node


@dataclass(frozen=True)
class Flat(Node):
    """r(1/t) * e^{-(1/t)^power} for t > 0, identically 0 for t <= 0.

    ``coeffs`` are the coefficients of the polynomial r in s = 1/t, lowest
    degree first.  flatExp(t) is Flat(power=2, coeffs=(1,)), flatExpLin(t)
    is Flat(power=1, coeffs=(1,)).  The family is closed under d/dt, which
    keeps all derivatives of the flat builtins exactly zero at t <= 0.
    """

    power: int
    coeffs: Tuple[complex, ...]
    a: Node


@dataclass(frozen=True)
class Cutoff(Node):
    a: Node
    lo: float
    hi: float


def const(v) -> Const:
    return Const(complex(v))


def var(name: str) -> Var:
    if name.startswith("xi"):
        return Var("xi", int(name[2:]))
    if name.startswith("x"):
        return Var("x", int(name[1:]))
    raise ExprError(f"bad variable name {name!r}")


def _as_node(v) -> Node:
    if isinstance(v, Node):
        return v
    return Const(complex(v))


ZERO = Const(0j)
ONE = Const(1 + 0j)


def _is_const(n: Node, v=None) -> bool:
    if not isinstance(n, Const):
        return False
    return v is None or n.value == v


# Smart constructors keep derivative trees small.  They only fold constants
# and absorb 0/1; they never reassociate, so printed output stays canonical.

def _add(a: Node, b: Node) -> Node:
    if _is_const(a, 0):
        return b
    if _is_const(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def _sub(a: Node, b: Node) -> Node:
    if _is_const(b, 0):
        return a
    if _is_const(a, 0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def _neg(a: Node) -> Node:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def _mul(a: Node, b: Node) -> Node:
    if _is_const(a, 0) or _is_const(b, 0):
        return ZERO
    if _is_const(a, 1):
        return b
    if _is_const(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return Mul(a, b)


def _div(a: Node, b: Node) -> Node:
    if _is_const(a, 0):
        return ZERO
    if _is_const(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return Div(a, b)


def _pow(a: Node, k: int) -> Node:
    if k == 0:
        return ONE
    if k == 1:
        return a
    if isinstance(a, Const):
        return Const(a.value**k)
    return Pow(a, k)


# ---------------------------------------------------------------------------
# Parser


_BUILTIN_CALLS = {"exp", "flatExp", "flatExpLin", "cutoff", "flatAux"}


class _Parser:
    def __init__(self, src: str, n: int):
        self.src = src
        self.n = n
        self.pos = 0

    def error(self, msg: str):
        raise ExprSyntaxError(msg, self.pos)

    def skip_ws(self):
        while self.pos < len(self.src) and self.src[self.pos] in " \t\r\n":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.src[self.pos] if self.pos < len(self.src) else ""

    def expect(self, ch: str):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def parse(self) -> Node:
        if not self.src.strip():
            raise ExprSyntaxError("empty expression", 0)
        node = self.expr()
        self.skip_ws()
        if self.pos != len(self.src):
            self.error("unexpected trailing input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while True:
            ch = self.peek()
            if ch == "+":
                self.pos += 1
                node = _add(node, self.term())
            elif ch == "-":
                self.pos += 1
                node = _sub(node, self.term())
            else:
                return node

    def term(self) -> Node:
        node = self.factor()
        while True:
            ch = self.peek()
            if ch == "*":
                self.pos += 1
                node = _mul(node, self.factor())
            elif ch == "/":
                self.pos += 1
                node = _div(node, self.factor())
            else:
                return node

    def factor(self) -> Node:
        if self.peek() == "-":
            self.pos += 1
            return _neg(self.factor())
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek() == "^":
            self.pos += 1
            if self.peek() == "-":
                self.error("integer power must be non-negative (use / for reciprocals)")
            k = self.integer()
            return _pow(base, k)
        return base

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.src) and self.src[self.pos].isdigit():
            self.pos += 1
        if self.pos == start:
            self.error("expected integer")
        return int(self.src[start : self.pos])

    def number(self) -> float:
        self.skip_ws()
        start = self.pos
        s = self.src
        while self.pos < len(s) and (s[self.pos].isdigit() or s[self.pos] == "."):
            self.pos += 1
        if self.pos < len(s) and s[self.pos] in "eE":
            save = self.pos
            self.pos += 1
            if self.pos < len(s) and s[self.pos] in "+-":
                self.pos += 1
            if self.pos < len(s) and s[self.pos].isdigit():
                while self.pos < len(s) and s[self.pos].isdigit():
                    self.pos += 1
            else:
                self.pos = save
        if self.pos == start:
            self.error("expected number")
        return float(s[start : self.pos])

    def signed_number(self) -> float:
        if self.peek() == "-":
            self.pos += 1
            return -self.number()
        return self.number()

    def atom(self) -> Node:
        ch = self.peek()
        if ch == "(":
            self.pos += 1
            node = self.expr()
            self.expect(")")
            return node
        if ch.isdigit() or ch == ".":
            return Const(complex(self.number()))
        if ch.isalpha() or ch == "_":
            return self.identifier()
        self.error("expected expression")

    def identifier(self) -> Node:
        self.skip_ws()
        start = self.pos
        s = self.src
        while self.pos < len(s) and (s[self.pos].isalnum() or s[self.pos] == "_"):
            self.pos += 1
        name = s[start : self.pos]
        if name == "i":
            return Const(1j)
        if name == "normXiPrime":
            if self.n < 2:
                self.pos = start
                self.error("normXiPrime needs dimension >= 2")
            return NormXiPrime()
        if name in _BUILTIN_CALLS:
            return self.call(name, start)
        if name.startswith("xi") and name[2:].isdigit():
            idx = int(name[2:])
            if not 1 <= idx <= self.n:
                self.pos = start
                self.error(f"variable index out of range for dimension {self.n}")
            return Var("xi", idx)
        if name.startswith("x") and name[1:].isdigit():
            idx = int(name[1:])
            if not 1 <= idx <= self.n:
                self.pos = start
                self.error(f"variable index out of range for dimension {self.n}")
            return Var("x", idx)
        self.pos = start
        self.error(f"unknown identifier {name!r}")

    def call(self, name: str, start: int) -> Node:
        self.expect("(")
        arg = self.expr()
        if name == "exp":
            self.expect(")")
            return Exp(arg)
        if name == "flatExp":
            self.expect(")")
            return Flat(2, (1 + 0j,), arg)
        if name == "flatExpLin":
            self.expect(")")
            return Flat(1, (1 + 0j,), arg)
        if name == "cutoff":
            self.expect(",")
            lo = self.signed_number()
            self.expect(",")
            hi = self.signed_number()
            self.expect(")")
            if not hi > lo:
                self.pos = start
                self.error("cutoff requires a < b")
            return Cutoff(arg, lo, hi)
        if name == "flatAux":
            self.expect(",")
            power = self.integer()
            coeffs = []
            while self.peek() == ",":
                self.pos += 1
                re = self.signed_number()
                self.expect(":")
                im = self.signed_number()
                coeffs.append(complex(re, im))
            self.expect(")")
            if not coeffs:
                self.pos = start
                self.error("flatAux needs at least one coefficient")
            return Flat(power, tuple(coeffs), arg)
        raise AssertionError(name)


def parse_expression(src: str, dimension: int) -> Node:
    """Parse ``src`` over R^n x R^n.  Raises ExprSyntaxError with offset."""
    if dimension < 1:
        raise ExprError("dimension must be >= 1")
    return _Parser(src, dimension).parse()


# ---------------------------------------------------------------------------
# Printer (canonical; parse(print(ast)) reproduces the AST)


def _fmt_num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _print_const(v: complex) -> str:
    if v.imag == 0:
        if v.real < 0:
            return f"(-{_fmt_num(-v.real)})"
        return _fmt_num(v.real)
    if v.real == 0:
        if v.imag == 1:
            return "i"
        if v.imag < 0:
            return f"(-{_fmt_num(-v.imag)}*i)"
        return f"({_fmt_num(v.imag)}*i)"
    re = _fmt_sig(v.real)
    op = "+" if v.imag > 0 else "-"
    return f"({re} {op} {_fmt_num(abs(v.imag))}*i)"


def print_expression(node: Node) -> str:
    return _print(node)


def _paren(s: str) -> str:
    return f"({s})"


def _print(n: Node) -> str:
    if isinstance(n, Const):
        return _print_const(n.value)
    if isinstance(n, Var):
        return f"{n.kind}{n.index}"
    if isinstance(n, NormXiPrime):
        return "normXiPrime"
    if isinstance(n, Neg):
        return f"(-{_print(n.a)})"
    if isinstance(n, Add):
        return _paren(f"{_print(n.a)} + {_print(n.b)}")
    if isinstance(n, Sub):
        return _paren(f"{_print(n.a)} - {_print(n.b)}")
    if isinstance(n, Mul):
        return _paren(f"{_print(n.a)} * {_print(n.b)}")
    if isinstance(n, Div):
        return _paren(f"{_print(n.a)} / {_print(n.b)}")
    if isinstance(n, Pow):
        return _paren(f"{_print(n.a)} ^ {n.k}")
    if isinstance(n, Exp):
        return f"exp({_print(n.a)})"
    if isinstance(n, Flat):
        if n.power == 2 and n.coeffs == (1 + 0j,):
            return f"flatExp({_print(n.a)})"
        if n.power == 1 and n.coeffs == (1 + 0j,):
            return f"flatExpLin({_print(n.a)})"
        parts = ", ".join(f"{_fmt_sig(c.real)}:{_fmt_sig(c.imag)}" for c in n.coeffs)
        return f"flatAux({_print(n.a)}, {n.power}, {parts})"
    if isinstance(n, Cutoff):
        return f"cutoff({_print(n.a)}, {_fmt_sig(n.lo)}, {_fmt_sig(n.hi)})"
    raise TypeError(type(n))


def _fmt_sig(v: float) -> str:
    if v < 0:
        return f"-{_fmt_num(-v)}"
    return _fmt_num(v)


# ---------------------------------------------------------------------------
# Differentiation


def _var_key(v: Union[str, Var, Tuple[str, int]]) -> Tuple[str, int]:
    if isinstance(v, Var):
        return (v.kind, v.index)
    if isinstance(v, tuple):
        return (v[0], int(v[1]))
    vv = var(v)
    return (vv.kind, vv.index)


def _flat_deriv_poly(power: int, coeffs: Tuple[complex, ...]) -> Tuple[complex, ...]:
    # d/dt [r(s) e^{-s^power}] with s = 1/t equals
    # [-s^2 r'(s) + power * s^{power+1} r(s)] e^{-s^power}.
    deg = len(coeffs) - 1
    out = [0j] * (deg + power + 2)
    for j, c in enumerate(coeffs):
        if j >= 1:
            out[j + 1] -= j * c
        out[j + power + 1] += power * c
    while len(out) > 1 and out[-1] == 0:
        out.pop()
    return tuple(out)


def _flat_deriv(n: Flat) -> Node:
    return Flat(n.power, _flat_deriv_poly(n.power, n.coeffs), n.a)


_FLATEXP_D = _flat_deriv_poly(2, (1 + 0j,))  # 2 s^3


def differentiate(node: Node, varid) -> Node:
    """Exact symbolic derivative with respect to x<k> or xi<k>."""
    kind, index = _var_key(varid)
    return _diff(node, kind, index)


def _diff(n: Node, kind: str, index: int) -> Node:
    if isinstance(n, Const):
        return ZERO
    if isinstance(n, Var):
        return ONE if (n.kind, n.index) == (kind, index) else ZERO
    if isinstance(n, NormXiPrime):
        if kind == "xi" and index >= 2:
            return _div(Var("xi", index), NormXiPrime())
        return ZERO
    if isinstance(n, Neg):
        return _neg(_diff(n.a, kind, index))
    if isinstance(n, Add):
        return _add(_diff(n.a, kind, index), _diff(n.b, kind, index))
    if isinstance(n, Sub):
        return _sub(_diff(n.a, kind, index), _diff(n.b, kind, index))
    if isinstance(n, Mul):
        return _add(
            _mul(_diff(n.a, kind, index), n.b),
            _mul(n.a, _diff(n.b, kind, index)),
        )
    if isinstance(n, Div):
        da = _diff(n.a, kind, index)
        db = _diff(n.b, kind, index)
        return _sub(_div(da, n.b), _div(_mul(n.a, db), _pow(n.b, 2)))
    if isinstance(n, Pow):
        da = _diff(n.a, kind, index)
        return _mul(_mul(Const(complex(n.k)), _pow(n.a, n.k - 1)), da)
    if isinstance(n, Exp):
        return _mul(_diff(n.a, kind, index), n)
    if isinstance(n, Flat):
        da = _diff(n.a, kind, index)
        if _is_const(da, 0):
            return ZERO
        return _mul(_flat_deriv(n), da)
    if isinstance(n, Cutoff):
        da = _diff(n.a, kind, index)
        if _is_const(da, 0):
            return ZERO
        u_lo = _sub(n.a, Const(complex(n.lo)))
        u_hi = _sub(Const(complex(n.hi)), n.a)
        left = _mul(Flat(2, _FLATEXP_D, u_lo), Flat(2, (1 + 0j,), u_hi))
        right = _mul(Flat(2, (1 + 0j,), u_lo), Flat(2, _FLATEXP_D, u_hi))
        return _mul(_sub(left, right), da)
    raise TypeError(type(n))


def evaluate_real(node: Node, x, xi):
    """Evaluate a real-valued expression in extended precision.

    Coordinates may be scalars or numpy arrays (broadcast together).  Uses
    numpy longdouble so the flat builtins keep a nonzero sign much deeper
    into their tails than double precision allows; used by the sign-change
    detectors.  Raises DomainError if the tree contains a non-real constant.
    """
    xs = [np.asarray(v, dtype=np.longdouble) for v in x]
    xis = [np.asarray(v, dtype=np.longdouble) for v in xi]
    return _eval_real(node, xs, xis)


def _eval_real(n: Node, x, xi):
    if isinstance(n, Const):
        if n.value.imag != 0:
            raise DomainError("expression is not real-valued")
        return np.longdouble(n.value.real)
    if isinstance(n, Var):
        seq = x if n.kind == "x" else xi
        if n.index > len(seq):
            raise DomainError(f"variable {n.kind}{n.index} beyond point dimension")
        return seq[n.index - 1]
    if isinstance(n, NormXiPrime):
        if len(xi) < 2:
            raise DomainError("normXiPrime needs dimension >= 2")
        sq = sum(v * v for v in xi[1:])
        if np.any(sq == 0):
            raise DomainError("normXiPrime singular at xi' = 0")
        return np.sqrt(sq)
    if isinstance(n, Neg):
        return -_eval_real(n.a, x, xi)
    if isinstance(n, Add):
        return _eval_real(n.a, x, xi) + _eval_real(n.b, x, xi)
    if isinstance(n, Sub):
        return _eval_real(n.a, x, xi) - _eval_real(n.b, x, xi)
    if isinstance(n, Mul):
        return _eval_real(n.a, x, xi) * _eval_real(n.b, x, xi)
    if isinstance(n, Div):
        den = _eval_real(n.b, x, xi)
        if np.any(den == 0):
            raise DomainError("division by zero")
        return _eval_real(n.a, x, xi) / den
    if isinstance(n, Pow):
        return _eval_real(n.a, x, xi) ** n.k
    if isinstance(n, Exp):
        with np.errstate(under="ignore"):
            return np.exp(_eval_real(n.a, x, xi))
    if isinstance(n, Flat):
        for c in n.coeffs:
            if c.imag != 0:
                raise DomainError("expression is not real-valued")
        t = np.asarray(_eval_real(n.a, x, xi))
        pos = t > 0
        s = 1.0 / np.where(pos, t, np.longdouble(1.0))
        r = np.zeros_like(s)
        for c in reversed(n.coeffs):
            r = r * s + np.longdouble(c.real)
        with np.errstate(under="ignore"):
            val = r * np.exp(-(s**n.power))
        return np.where(pos, val, np.longdouble(0.0))
    if isinstance(n, Cutoff):
        t = np.asarray(_eval_real(n.a, x, xi))
        return _flat_real(t - n.lo) * _flat_real(n.hi - t)
    raise TypeError(type(n))


def _flat_real(t):
    t = np.asarray(t, dtype=np.longdouble)
    pos = t > 0
    s = 1.0 / np.where(pos, t, np.longdouble(1.0))
    with np.errstate(under="ignore"):
        val = np.exp(-(s * s))
    return np.where(pos, val, np.longdouble(0.0))


def conjugate(node: Node) -> Node:
    """Pointwise complex conjugate, assuming real variable values."""
    if isinstance(node, Const):
        return Const(node.value.conjugate())
    if isinstance(node, (Var, NormXiPrime)):
        return node
    if isinstance(node, Neg):
        return _neg(conjugate(node.a))
    if isinstance(node, Add):
        return _add(conjugate(node.a), conjugate(node.b))
    if isinstance(node, Sub):
        return _sub(conjugate(node.a), conjugate(node.b))
    if isinstance(node, Mul):
        return _mul(conjugate(node.a), conjugate(node.b))
    if isinstance(node, Div):
        return _div(conjugate(node.a), conjugate(node.b))
    if isinstance(node, Pow):
        return _pow(conjugate(node.a), node.k)
    if isinstance(node, Exp):
        return Exp(conjugate(node.a))
    if isinstance(node, Flat):
        return Flat(
            node.power,
            tuple(c.conjugate() for c in node.coeffs),
            conjugate(node.a),
        )
    if isinstance(node, Cutoff):
        return Cutoff(conjugate(node.a), node.lo, node.hi)
    raise TypeError(type(node))


# ---------------------------------------------------------------------------
# Evaluation


def evaluate(node: Node, x, xi):
    """Evaluate at x, xi (sequences of reals; entries may be numpy arrays).

    Returns a complex scalar (or complex numpy array when inputs are arrays).
    Raises DomainError when a declared singular set is hit at a scalar point
    (normXiPrime at xi' = 0, division by zero).
    """
    x = list(x)
    xi = list(xi)
    return _eval(node, x, xi)


def _flat_eval(power: int, coeffs, t):
    if isinstance(t, np.ndarray):
        t = t.astype(complex) if np.iscomplexobj(t) else t
        pos = np.real(t) > 0
        safe = np.where(pos, t, 1.0)
        s = 1.0 / safe
        r = np.zeros_like(s, dtype=complex)
        for c in reversed(coeffs):
            r = r * s + c
        val = r * np.exp(-(s**power))
        return np.where(pos, val, 0j)
    tr = t.real if isinstance(t, complex) else float(t)
    if tr <= 0:
        return 0j
    s = 1.0 / tr
    r = 0j
    for c in reversed(coeffs):
        r = r * s + c
    e = -(s**power)
    if e < -700:
        return 0j
    return complex(r * np.exp(e))


def _eval(n: Node, x, xi):
    if isinstance(n, Const):
        return n.value
    if isinstance(n, Var):
        seq = x if n.kind == "x" else xi
        if n.index > len(seq):
            raise DomainError(f"variable {n.kind}{n.index} beyond point dimension")
        v = seq[n.index - 1]
        return v if isinstance(v, np.ndarray) else complex(v)
    if isinstance(n, NormXiPrime):
        if len(xi) < 2:
            raise DomainError("normXiPrime needs dimension >= 2")
        sq = sum(np.real(v) ** 2 + np.imag(v) ** 2 for v in xi[1:])
        if not isinstance(sq, np.ndarray) and sq == 0:
            raise DomainError("normXiPrime singular at xi' = 0")
        return np.sqrt(sq) + 0j
    if isinstance(n, Neg):
        return -_eval(n.a, x, xi)
    if isinstance(n, Add):
        return _eval(n.a, x, xi) + _eval(n.b, x, xi)
    if isinstance(n, Sub):
        return _eval(n.a, x, xi) - _eval(n.b, x, xi)
    if isinstance(n, Mul):
        return _eval(n.a, x, xi) * _eval(n.b, x, xi)
    if isinstance(n, Div):
        num = _eval(n.a, x, xi)
        den = _eval(n.b, x, xi)
        if not isinstance(den, np.ndarray) and den == 0:
            raise DomainError("division by zero")
        return num / den
    if isinstance(n, Pow):
        return _eval(n.a, x, xi) ** n.k
    if isinstance(n, Exp):
        return np.exp(_eval(n.a, x, xi))
    if isinstance(n, Flat):
        t = _eval(n.a, x, xi)
        return _flat_eval(n.power, n.coeffs, t)
    if isinstance(n, Cutoff):
        t = _eval(n.a, x, xi)
        lo = _flat_eval(2, (1 + 0j,), t - n.lo)
        hi = _flat_eval(2, (1 + 0j,), n.hi - t)
        return lo * hi
    raise TypeError(type(n))
