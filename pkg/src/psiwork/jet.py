"""Dense truncated Taylor (jet) algebra at a phase-space point.

A Jet holds the derivative values d^alpha_x d^beta_xi f(base) for all
|alpha| + |beta| <= K, i.e. the coefficients of
(x-x0)^alpha (xi-xi0)^beta / (alpha! beta!).  The module provides the
Cauchy product (with a compiled kernel when available), the transversal
division recursion that produces a quotient jet g with q - p g flat at the
base point, homogeneous extension off the unit sphere, and the total
well-ordering on coefficient indices used to locate the first nonvanishing
coefficient of a graded family.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import symexpr

if os.environ.get("PSIWORK_FORCE_PY"):
    from . import _jetmul_py as _kernel
else:
    try:
        from . import _jetmul as _kernel  # type: ignore[attr-defined]
    except ImportError:
        from . import _jetmul_py as _kernel

KERNEL_IMPLEMENTATION = _kernel.IMPLEMENTATION

MAX_ORDER = 10
DEFAULT_ORDER = 6

__all__ = [
    "Jet",
    "OrderedIndex",
    "jet_of",
    "jet_add",
    "jet_sub",
    "jet_mul",
    "divide_by_factor",
    "homogenize",
    "HomogeneousExtension",
    "compare_indices",
    "first_nonvanishing",
    "KERNEL_IMPLEMENTATION",
    "JetError",
]


class JetError(ValueError):
    pass


@lru_cache(maxsize=None)
def index_list(nvars: int, order: int) -> Tuple[Tuple[int, ...], ...]:
    """All multi-indices of length nvars with total degree <= order, graded."""
    by_degree: List[List[Tuple[int, ...]]] = [[(0,) * nvars]]
    for _ in range(order):
        prev = by_degree[-1]
        seen = set()
        nxt = []
        for idx in prev:
            for pos in range(nvars):
                new = idx[:pos] + (idx[pos] + 1,) + idx[pos + 1 :]
                if new not in seen:
                    seen.add(new)
                    nxt.append(new)
        nxt.sort()
        by_degree.append(nxt)
    return tuple(i for level in by_degree for i in level)


@lru_cache(maxsize=None)
def index_positions(nvars: int, order: int) -> Dict[Tuple[int, ...], int]:
    return {idx: pos for pos, idx in enumerate(index_list(nvars, order))}


def _binom_product(gamma: Tuple[int, ...], delta: Tuple[int, ...]) -> int:
    out = 1
    for g, d in zip(gamma, delta):
        out *= math.comb(g, d)
    return out


@lru_cache(maxsize=None)
def leibniz_table(nvars: int, order: int):
    """Triples (i, j, k, c): (fg)^(gamma_k) += c * f^(delta_i) * g^(eps_j)."""
    idxs = index_list(nvars, order)
    pos = index_positions(nvars, order)
    ti, tj, tk, tc = [], [], [], []
    for k, gamma in enumerate(idxs):
        # enumerate delta <= gamma
        ranges = [range(g + 1) for g in gamma]
        stack = [(0, ())]
        while stack:
            depth, prefix = stack.pop()
            if depth == nvars:
                delta = prefix
                eps = tuple(g - d for g, d in zip(gamma, delta))
                ti.append(pos[delta])
                tj.append(pos[eps])
                tk.append(k)
                tc.append(float(_binom_product(gamma, delta)))
                continue
            for v in ranges[depth]:
                stack.append((depth + 1, prefix + (v,)))
    return (
        np.asarray(ti, dtype=np.int32),
        np.asarray(tj, dtype=np.int32),
        np.asarray(tk, dtype=np.int32),
        np.asarray(tc, dtype=np.float64),
    )


@dataclass(frozen=True)
class Jet:
    base_x: Tuple[float, ...]
    base_xi: Tuple[float, ...]
    order: int
    coeffs: np.ndarray  # complex128, aligned with index_list(2n, order)

    def __post_init__(self):
        if self.order < 0 or self.order > MAX_ORDER:
            raise JetError(f"jet order must be in [0, {MAX_ORDER}]")
        expected = len(index_list(2 * self.n, self.order))
        if len(self.coeffs) != expected:
            raise JetError("coefficient array length mismatch")

    @property
    def n(self) -> int:
        return len(self.base_x)

    @property
    def value(self) -> complex:
        return complex(self.coeffs[0])

    def indices(self) -> Tuple[Tuple[int, ...], ...]:
        return index_list(2 * self.n, self.order)

    def get(self, alpha: Sequence[int], beta: Sequence[int]) -> complex:
        key = tuple(alpha) + tuple(beta)
        pos = index_positions(2 * self.n, self.order).get(key)
        if pos is None:
            raise JetError(f"index {key} outside truncation")
        return complex(self.coeffs[pos])

    def same_frame(self, other: "Jet") -> bool:
        return (
            self.base_x == other.base_x
            and self.base_xi == other.base_xi
            and self.order == other.order
        )

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise JetError("cannot extend a jet")
        if order == self.order:
            return self
        keep = len(index_list(2 * self.n, order))
        return Jet(self.base_x, self.base_xi, order, self.coeffs[:keep].copy())

    def pad(self, order: int) -> "Jet":
        """View at a higher order with unknown top coefficients set to 0."""
        if order < self.order:
            raise JetError("use truncate to lower the order")
        full = np.zeros(len(index_list(2 * self.n, order)), dtype=np.complex128)
        full[: len(self.coeffs)] = self.coeffs
        return Jet(self.base_x, self.base_xi, order, full)

    def scale(self, c: complex) -> "Jet":
        return Jet(self.base_x, self.base_xi, self.order, self.coeffs * c)

    def derivative(self, direction: int) -> "Jet":
        """Jet of the partial derivative along combined coordinate index
        direction in [0, 2n); the order drops by one."""
        if self.order == 0:
            raise JetError("order-0 jet has no derivative jet")
        idxs_lo = index_list(2 * self.n, self.order - 1)
        pos_hi = index_positions(2 * self.n, self.order)
        out = np.empty(len(idxs_lo), dtype=np.complex128)
        for p, gamma in enumerate(idxs_lo):
            shifted = list(gamma)
            shifted[direction] += 1
            out[p] = self.coeffs[pos_hi[tuple(shifted)]]
        return Jet(self.base_x, self.base_xi, self.order - 1, out)

    def evaluate(self, x: Sequence[float], xi: Sequence[float]) -> complex:
        """Taylor polynomial value at (x, xi)."""
        dz = [complex(a) - b for a, b in zip(x, self.base_x)] + [
            complex(a) - b for a, b in zip(xi, self.base_xi)
        ]
        total = 0j
        for gamma, c in zip(self.indices(), self.coeffs):
            if c == 0:
                continue
            term = c
            for d, g in zip(dz, gamma):
                if g:
                    term *= d**g / math.factorial(g)
            total += term
        return total

    def nonzero_count(self, tol: float = 0.0) -> int:
        return int(np.sum(np.abs(self.coeffs) > tol))

    def to_json(self) -> str:
        n = self.n
        entries = []
        for gamma, c in zip(self.indices(), self.coeffs):
            if c != 0:
                entries.append(
                    {
                        "alpha": list(gamma[:n]),
                        "beta": list(gamma[n:]),
                        "re": c.real,
                        "im": c.imag,
                    }
                )
        return json.dumps(
            {
                "base": {"x": list(self.base_x), "xi": list(self.base_xi)},
                "order": self.order,
                "coeffs": entries,
            }
        )

    @staticmethod
    def from_json(text: str) -> "Jet":
        data = json.loads(text)
        base_x = tuple(float(v) for v in data["base"]["x"])
        base_xi = tuple(float(v) for v in data["base"]["xi"])
        order = int(data["order"])
        n = len(base_x)
        pos = index_positions(2 * n, order)
        coeffs = np.zeros(len(index_list(2 * n, order)), dtype=np.complex128)
        for e in data["coeffs"]:
            key = tuple(e["alpha"]) + tuple(e["beta"])
            coeffs[pos[key]] = complex(e["re"], e["im"])
        return Jet(base_x, base_xi, order, coeffs)

    @staticmethod
    def zero(base, order: int) -> "Jet":
        base_x, base_xi = _split_base(base)
        n = len(base_x)
        return Jet(
            base_x,
            base_xi,
            order,
            np.zeros(len(index_list(2 * n, order)), dtype=np.complex128),
        )

    @staticmethod
    def constant(base, order: int, value: complex) -> "Jet":
        j = Jet.zero(base, order)
        j.coeffs[0] = value
        return j


def _split_base(base) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    x, xi = base
    return tuple(float(v) for v in x), tuple(float(v) for v in xi)


def _field_expr(field) -> symexpr.Node:
    if isinstance(field, symexpr.Node):
        return field
    expr = getattr(field, "expr", None)
    if isinstance(expr, symexpr.Node):
        return expr
    raise JetError(f"cannot take a jet of {type(field).__name__}")


def jet_of(field, base, K: int = DEFAULT_ORDER) -> Jet:
    """Jet of an expression (or an object with an .expr attribute) at base.

    Coefficients are exact symbolic derivatives evaluated at the base point.
    """
    ast = _field_expr(field)
    base_x, base_xi = _split_base(base)
    n = len(base_x)
    if K < 0 or K > MAX_ORDER:
        raise JetError(f"jet order must be in [0, {MAX_ORDER}]")
    idxs = index_list(2 * n, K)
    pos = index_positions(2 * n, K)
    names = [("x", k + 1) for k in range(n)] + [("xi", k + 1) for k in range(n)]
    d_asts: List[Optional[symexpr.Node]] = [None] * len(idxs)
    d_asts[0] = ast
    coeffs = np.empty(len(idxs), dtype=np.complex128)
    try:
        coeffs[0] = symexpr.evaluate(ast, base_x, base_xi)
    except symexpr.DomainError as exc:
        raise JetError(f"singular base point: {exc}") from exc
    for p, gamma in enumerate(idxs):
        if p == 0:
            continue
        direction = next(k for k, g in enumerate(gamma) if g)
        parent = list(gamma)
        parent[direction] -= 1
        parent_ast = d_asts[pos[tuple(parent)]]
        da = symexpr.differentiate(parent_ast, names[direction])
        d_asts[p] = da
        try:
            coeffs[p] = symexpr.evaluate(da, base_x, base_xi)
        except symexpr.DomainError as exc:
            raise JetError(f"singular base point: {exc}") from exc
    return Jet(base_x, base_xi, K, coeffs)


def _check_frame(a: Jet, b: Jet):
    if not a.same_frame(b):
        raise JetError("jets must share base point and order")


def jet_add(a: Jet, b: Jet) -> Jet:
    _check_frame(a, b)
    return Jet(a.base_x, a.base_xi, a.order, a.coeffs + b.coeffs)


def jet_sub(a: Jet, b: Jet) -> Jet:
    _check_frame(a, b)
    return Jet(a.base_x, a.base_xi, a.order, a.coeffs - b.coeffs)


def jet_mul(a: Jet, b: Jet) -> Jet:
    _check_frame(a, b)
    ti, tj, tk, tc = leibniz_table(2 * a.n, a.order)
    out = _kernel.cauchy_product(
        np.ascontiguousarray(a.coeffs),
        np.ascontiguousarray(b.coeffs),
        ti,
        tj,
        tk,
        tc,
        len(a.coeffs),
    )
    return Jet(a.base_x, a.base_xi, a.order, out)


def direction_index(direction, n: int) -> int:
    """Resolve a transversal direction ('x3'/'xi1'/int) to a combined index."""
    if isinstance(direction, int):
        if not 0 <= direction < 2 * n:
            raise JetError("direction index out of range")
        return direction
    kind, idx = symexpr._var_key(direction)
    if not 1 <= idx <= n:
        raise JetError("direction index out of range")
    return idx - 1 if kind == "x" else n + idx - 1


DIVISION_TOL = 1e-10


def divide_by_factor(q: Jet, p: Jet, nu) -> Jet:
    """Quotient jet g of the transversal division q = p g + (flat remainder).

    Preconditions: p vanishes at the base point and its directional
    derivative along nu does not.  The returned g has order K-1 and is the
    unique jet such that every coefficient of q - p g whose index has a
    nu-slot vanishes; coefficients without nu-slots form the obstruction
    residual, recoverable as jet_sub(q.truncate(K-1), jet_mul(...)).

    The coefficients are produced by the triangular sweep: the value from
    the first nu-derivative, then equation indices processed by total order
    and decreasing nu-multiplicity, each yielding exactly one new quotient
    coefficient.
    """
    _check_frame(q, p)
    n2 = 2 * q.n
    if abs(p.value) > DIVISION_TOL:
        raise JetError(f"factor does not vanish at base point: |p| = {abs(p.value)}")
    nu_idx = direction_index(nu, q.n)
    e_nu = tuple(1 if k == nu_idx else 0 for k in range(n2))
    pos_hi = index_positions(n2, q.order)
    p_nu = p.coeffs[pos_hi[e_nu]]
    if abs(p_nu) < DIVISION_TOL:
        raise JetError("factor is not transversal along the given direction")

    K = q.order
    idxs_hi = index_list(n2, K)
    idxs_lo = index_list(n2, K - 1) if K > 0 else ()
    pos_lo = index_positions(n2, K - 1) if K > 0 else {}
    g = np.zeros(len(idxs_lo), dtype=np.complex128)
    known = np.zeros(len(idxs_lo), dtype=bool)

    equations = [gamma for gamma in idxs_hi if gamma[nu_idx] >= 1]
    equations.sort(key=lambda gm: (sum(gm), -gm[nu_idx], gm))

    for gamma in equations:
        target = list(gamma)
        target[nu_idx] -= 1
        tpos = pos_lo[tuple(target)]
        rhs = q.coeffs[pos_hi[gamma]]
        # subtract known Leibniz contributions of p * g
        for delta in _sub_indices(gamma):
            if delta == gamma:
                continue  # multiplies p(base) = 0
            dpos = pos_lo[delta]
            if dpos == tpos:
                continue
            if not known[dpos]:
                raise AssertionError("sweep ordering violated")
            if g[dpos] == 0:
                continue
            comp = tuple(gm - d for gm, d in zip(gamma, delta))
            rhs -= _binom_product(gamma, delta) * p.coeffs[pos_hi[comp]] * g[dpos]
        g[tpos] = rhs / (gamma[nu_idx] * p_nu)
        known[tpos] = True
    return Jet(q.base_x, q.base_xi, K - 1, g)


@lru_cache(maxsize=None)
def _sub_indices(gamma: Tuple[int, ...]) -> Tuple[Tuple[int, ...], ...]:
    out = [()]
    for g in gamma:
        out = [prefix + (v,) for prefix in out for v in range(g + 1)]
    return tuple(tuple(o) for o in out)


def division_residual(q: Jet, p: Jet, g: Jet) -> Jet:
    """Jet of q - p g through order K-1."""
    Kr = g.order
    return jet_sub(q.truncate(Kr), jet_mul(p.truncate(Kr), g))


class HomogeneousExtension:
    """Degree-m homogeneous extension |xi|^m g~(x, xi/|xi|) of a jet given
    at a base point with |xi0| = 1; agrees with the jet polynomial on the
    sphere and satisfies the Euler identity exactly."""

    def __init__(self, g: Jet, degree: int):
        if abs(np.linalg.norm(g.base_xi) - 1.0) > 1e-12:
            raise JetError("homogenize requires a base point with |xi| = 1")
        self.jet = g
        self.degree = degree

    def value(self, x: Sequence[float], xi: Sequence[float]) -> complex:
        norm = float(np.linalg.norm(xi))
        if norm == 0:
            raise JetError("homogeneous extension undefined at xi = 0")
        omega = [v / norm for v in xi]
        return norm**self.degree * self.jet.evaluate(x, omega)

    def _poly_grad_xi(self, x, omega) -> np.ndarray:
        n = self.jet.n
        return np.array(
            [complex(self.jet.derivative(n + k).evaluate(x, omega)) for k in range(n)]
        )

    def grad_xi(self, x: Sequence[float], xi: Sequence[float]) -> np.ndarray:
        norm = float(np.linalg.norm(xi))
        if norm == 0:
            raise JetError("homogeneous extension undefined at xi = 0")
        omega = np.asarray(xi, dtype=float) / norm
        gval = self.jet.evaluate(x, omega)
        grad_omega = self._poly_grad_xi(x, omega)
        m = self.degree
        proj = grad_omega - omega * np.dot(omega, grad_omega)
        return m * norm ** (m - 1) * omega * gval + norm ** (m - 1) * proj

    def euler_residual(self, x, xi) -> float:
        v = self.value(x, xi)
        g = self.grad_xi(x, xi)
        return abs(np.dot(np.asarray(xi, dtype=complex), g) - self.degree * v)


def homogenize(g: Jet, degree: int) -> HomogeneousExtension:
    return HomogeneousExtension(g, degree)


# ---------------------------------------------------------------------------
# Coefficient ordering


@dataclass(frozen=True)
class OrderedIndex:
    """Index (j, k, alpha, beta) of a Taylor coefficient of the graded
    family q_{-j}: k counts derivatives in the distinguished base variable,
    alpha the remaining base variables, beta the fiber variables."""

    j: int
    k: int
    alpha: Tuple[int, ...]
    beta: Tuple[int, ...]

    def __post_init__(self):
        if self.j < -1:
            raise JetError("j must be >= -1")
        if self.k < 0 or any(a < 0 for a in self.alpha) or any(
            b < 0 for b in self.beta
        ):
            raise JetError("k, alpha, beta must be non-negative")

    @property
    def total(self) -> int:
        return self.j + self.k + sum(self.alpha) + sum(self.beta)

    def sort_key(self):
        # Primary: total order ascending.  Ties: larger |beta| first
        # (the reversed rule), then lexicographic on beta; then larger
        # k + |alpha| first, then lexicographic on (k, alpha) with the
        # distinguished variable leftmost.
        ka = (self.k,) + self.alpha
        return (
            self.total,
            -sum(self.beta),
            self.beta,
            -sum(ka),
            ka,
        )


def compare_indices(a: OrderedIndex, b: OrderedIndex) -> str:
    if len(a.alpha) != len(b.alpha) or len(a.beta) != len(b.beta):
        raise JetError("indices live in different dimensions")
    ka, kb = a.sort_key(), b.sort_key()
    if ka < kb:
        return "less"
    if ka > kb:
        return "greater"
    return "equal"


def first_nonvanishing(
    terms: Sequence[Tuple[int, Jet]],
    tol: float = 1e-9,
    depth: Optional[int] = None,
) -> Optional[Tuple[OrderedIndex, complex]]:
    """Minimal index (under the well-ordering) whose coefficient modulus
    exceeds tol among the per-degree jets q_{-j}; None if all vanish within
    the common coverage depth j + k + |alpha| + |beta| <= depth.

    Jets are over the full (x, xi) space with the first base variable
    playing the role of the distinguished parameter (k) and the first fiber
    slot excluded (the remainder family carries no such dependence).
    """
    if not terms:
        return None
    max_depth = min(j + jet.order for j, jet in terms)
    if depth is None:
        depth = max_depth
    elif depth > max_depth:
        raise JetError(
            f"requested depth {depth} exceeds common jet coverage {max_depth}"
        )
    best: Optional[Tuple[OrderedIndex, complex]] = None
    for j, jt in terms:
        n = jt.n
        for gamma, c in zip(jt.indices(), jt.coeffs):
            if abs(c) <= tol:
                continue
            if gamma[n] != 0:
                raise JetError(
                    "jet carries derivatives in the distinguished fiber slot"
                )
            idx = OrderedIndex(j, gamma[0], gamma[1:n], gamma[n + 1 :])
            if idx.total > depth:
                continue
            if best is None or compare_indices(idx, best[0]) == "less":
                best = (idx, complex(c))
    return best
