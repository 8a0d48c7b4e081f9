"""Classical polyhomogeneous symbols and the symbol calculus.

A ClassicalSymbol is a finite list of homogeneous terms of strictly
descending integer degree.  Composition and adjoint are computed
symbolically term by term with the convention D_x = -i d/dx and regrouped
by homogeneity degree, which is exact because xi-differentiation lowers the
degree of a homogeneous term by exactly one.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import symexpr as se

__all__ = [
    "HomogeneousTerm",
    "ClassicalSymbol",
    "SymbolError",
    "check_homogeneity",
    "compose_symbols",
    "adjoint_symbol",
    "poisson",
    "iterated_hamilton",
    "is_principal_type",
    "fixtures",
    "fixture_im_parts",
    "normal_form_template",
]


class SymbolError(ValueError):
    pass


@dataclass(frozen=True)
class HomogeneousTerm:
    degree: int
    expr: se.Node
    dimension: int

    def evaluate(self, x, xi) -> complex:
        return se.evaluate(self.expr, x, xi)

    def diff(self, varid) -> se.Node:
        return se.differentiate(self.expr, varid)


@dataclass(frozen=True)
class ClassicalSymbol:
    terms: Tuple[HomogeneousTerm, ...]

    def __post_init__(self):
        if not self.terms:
            raise SymbolError("symbol needs at least one term")
        dims = {t.dimension for t in self.terms}
        if len(dims) != 1:
            raise SymbolError("terms must share dimension")
        degs = [t.degree for t in self.terms]
        if degs != list(range(degs[0], degs[0] - len(degs), -1)):
            raise SymbolError("degrees must descend strictly by 1")

    @property
    def dimension(self) -> int:
        return self.terms[0].dimension

    @property
    def top_degree(self) -> int:
        return self.terms[0].degree

    @property
    def depth(self) -> int:
        return len(self.terms)

    @property
    def principal(self) -> HomogeneousTerm:
        return self.terms[0]

    def term(self, degree: int) -> HomogeneousTerm:
        off = self.top_degree - degree
        if not 0 <= off < self.depth:
            raise SymbolError(f"no stored term of degree {degree}")
        return self.terms[off]

    def term_or_zero(self, degree: int) -> se.Node:
        off = self.top_degree - degree
        if 0 <= off < self.depth:
            return self.terms[off].expr
        return se.ZERO

    @staticmethod
    def from_exprs(top_degree: int, exprs: Sequence[se.Node], dimension: int):
        return ClassicalSymbol(
            tuple(
                HomogeneousTerm(top_degree - k, e, dimension)
                for k, e in enumerate(exprs)
            )
        )

    @staticmethod
    def parse(top_degree: int, sources: Sequence[str], dimension: int):
        return ClassicalSymbol.from_exprs(
            top_degree,
            [se.parse_expression(s, dimension) for s in sources],
            dimension,
        )


# ---------------------------------------------------------------------------


def _sample_points(n: int, samples: int, seed: int, min_xi_prime: float = 0.1):
    rng = np.random.default_rng(seed)
    pts = []
    while len(pts) < samples:
        x = rng.uniform(-1.5, 3.0, n)
        xi = rng.normal(size=n)
        norm = np.linalg.norm(xi)
        if norm < 1e-6:
            continue
        xi = xi / norm * rng.uniform(0.5, 2.0)
        if n >= 2 and np.linalg.norm(xi[1:]) < min_xi_prime:
            continue
        pts.append((x, xi))
    return pts


def check_homogeneity(
    term: HomogeneousTerm, samples: int = 50, seed: int = 20240) -> float:
    """Max relative Euler residual |<xi, d_xi a> - m a| / (1 + |a|)."""
    n = term.dimension
    grads = [term.diff(("xi", k + 1)) for k in range(n)]
    worst = 0.0
    for x, xi in _sample_points(n, samples, seed):
        a = se.evaluate(term.expr, x, xi)
        euler = sum(
            xi[k] * se.evaluate(grads[k], x, xi) for k in range(n)
        )
        worst = max(worst, abs(euler - term.degree * a) / (1.0 + abs(a)))
    return worst


def _dx_pow(node: se.Node, alpha: Sequence[int]) -> se.Node:
    for k, a in enumerate(alpha):
        for _ in range(a):
            node = se.differentiate(node, ("x", k + 1))
    return node


def _dxi_pow(node: se.Node, alpha: Sequence[int]) -> se.Node:
    for k, a in enumerate(alpha):
        for _ in range(a):
            node = se.differentiate(node, ("xi", k + 1))
    return node


def _alphas(n: int, total: int, free_slots: Optional[Sequence[int]] = None):
    slots = list(range(n)) if free_slots is None else list(free_slots)
    for combo in itertools.combinations_with_replacement(slots, total):
        alpha = [0] * n
        for s in combo:
            alpha[s] += 1
        yield tuple(alpha)


def _alpha_factorial(alpha) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def compose_symbols(
    a: ClassicalSymbol, b: ClassicalSymbol, depth: int
) -> ClassicalSymbol:
    """Asymptotic composition a # b ~ sum d_xi^alpha a D_x^alpha b / alpha!,
    regrouped into homogeneous terms of degree m_a + m_b, m_a + m_b - 1, ...
    down to the requested depth."""
    if a.dimension != b.dimension:
        raise SymbolError("dimension mismatch")
    if depth < 1 or depth > min(a.depth, b.depth):
        raise SymbolError(
            f"depth {depth} not covered by stored terms "
            f"({a.depth} and {b.depth} available)"
        )
    n = a.dimension
    top = a.top_degree + b.top_degree
    out_exprs: List[se.Node] = []
    for d in range(top, top - depth, -1):
        acc: se.Node = se.ZERO
        for s in range(a.depth):
            ma = a.top_degree - s
            for t in range(b.depth):
                mb = b.top_degree - t
                k = ma + mb - d
                if k < 0:
                    continue
                factor = (-1j) ** k
                for alpha in _alphas(n, k):
                    da = _dxi_pow(a.terms[s].expr, alpha)
                    if da == se.ZERO:
                        continue
                    db = _dx_pow(b.terms[t].expr, alpha)
                    if db == se.ZERO:
                        continue
                    coeff = se.Const(factor / _alpha_factorial(alpha))
                    acc = acc + coeff * da * db
        out_exprs.append(acc)
    return ClassicalSymbol.from_exprs(top, out_exprs, n)


def adjoint_symbol(
    r: ClassicalSymbol, depth: Optional[int] = None, xi1_independent: bool = False
) -> ClassicalSymbol:
    """Adjoint symbol sum_alpha d_xi^alpha D_x^alpha conj(sigma_R) / alpha!.

    With xi1_independent=True the symbol is treated as an operator in the
    variables x2..xn depending on x1 as a parameter: the expansion indices
    skip the first slot, matching the restricted formula for remainder
    families r(x, xi').
    """
    if depth is None:
        depth = r.depth
    if depth < 1 or depth > r.depth:
        raise SymbolError("depth not covered by stored terms")
    n = r.dimension
    slots = range(1, n) if xi1_independent else range(n)
    out_exprs: List[se.Node] = []
    for d in range(r.top_degree, r.top_degree - depth, -1):
        acc: se.Node = se.ZERO
        for k in range(0, r.top_degree - d + 1):
            src = r.top_degree - (d + k)
            if not 0 <= src < r.depth:
                continue
            conj = se.conjugate(r.terms[src].expr)
            factor = (-1j) ** k
            for alpha in _alphas(n, k, slots):
                node = _dxi_pow(_dx_pow(conj, alpha), alpha)
                if node == se.ZERO:
                    continue
                acc = acc + se.Const(factor / _alpha_factorial(alpha)) * node
        out_exprs.append(acc)
    return ClassicalSymbol.from_exprs(r.top_degree, out_exprs, n)


def poisson(a: se.Node, b: se.Node, n: int) -> se.Node:
    """{a, b} = sum_j d_xi_j a d_x_j b - d_x_j a d_xi_j b."""
    acc: se.Node = se.ZERO
    for j in range(1, n + 1):
        acc = acc + se.differentiate(a, ("xi", j)) * se.differentiate(b, ("x", j))
        acc = acc - se.differentiate(a, ("x", j)) * se.differentiate(b, ("xi", j))
    return acc


def iterated_hamilton(p: se.Node, q: se.Node, m: int, n: int) -> se.Node:
    if m < 1:
        raise SymbolError("m must be >= 1")
    out = q
    for _ in range(m):
        out = poisson(p, out, n)
    return out


def is_principal_type(p: HomogeneousTerm, point) -> bool:
    """True iff the Hamilton field of p and the radial field are linearly
    independent at the given characteristic point."""
    x, xi = point
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    n = p.dimension
    if np.linalg.norm(xi) == 0:
        raise SymbolError("xi = 0 is excluded from the cotangent sphere")
    val = se.evaluate(p.expr, x, xi)
    if abs(val) > 1e-8:
        raise SymbolError(f"point is not characteristic: |p| = {abs(val)}")
    dxi = np.array([se.evaluate(p.diff(("xi", k + 1)), x, xi) for k in range(n)])
    dx = np.array([se.evaluate(p.diff(("x", k + 1)), x, xi) for k in range(n)])
    ham = np.concatenate([dxi, -dx])
    radial = np.concatenate([np.zeros(n), xi]).astype(complex)
    mat = np.vstack([ham, radial])
    smin = np.linalg.svd(mat, compute_uv=False)[-1]
    return bool(smin > 1e-8)


# ---------------------------------------------------------------------------
# Fixtures


GRAPH_F_SRC = "(-flatExp(-({t})) + flatExp(({t}) - 2))"


def graph_f(shift: float = 0.0) -> str:
    """The flat building-block profile: -e^{-1/t^2} for t<0, 0 on [0,2],
    e^{-1/(t-2)^2} for t>2, precomposed with t = x1 - shift."""
    t = f"x1 - {shift}" if shift else "x1"
    return GRAPH_F_SRC.format(t=t)


def normal_form_template(f_src: str, n: int) -> ClassicalSymbol:
    """xi1 + i f(x, xi') for a user-supplied degree-1 imaginary part."""
    expr = se.parse_expression(f"xi1 + i*({f_src})", n)
    return ClassicalSymbol.from_exprs(1, [expr], n)


P1_IM_SRC = f"normXiPrime*({graph_f()} + x2*cutoff(x1, 0, 2))"
P2_IM_SRC = (
    "normXiPrime*("
    f"flatExpLin(-x2)*{graph_f(1.0)} + flatExpLin(x2)*{graph_f()})"
)


def fixture_im_parts(n: int = 2) -> Dict[str, se.Node]:
    """Real-valued imaginary parts of the normal-form fixtures (Re p = xi1)."""
    if n < 2:
        raise SymbolError("fixtures need dimension >= 2")
    return {
        "p1": se.parse_expression(P1_IM_SRC, n),
        "p2": se.parse_expression(P2_IM_SRC, n),
        "model2d": se.parse_expression("x1*xi2", 2) if n == 2
        else se.parse_expression("x1*xi2", n),
    }


def fixtures(n: int = 2) -> Dict[str, ClassicalSymbol]:
    """Named principal-type fixtures.

    p1: xi1 + i|xi'|(f(x1) + x2 phi(x1)) with phi a bump on [0,2];
    p2: xi1 + i h where h glues f(x1-1) e^{1/x2} (x2<0) with
        f(x1) e^{-1/x2} (x2>0) and vanishes identically at x2=0.
    """
    if n < 2:
        raise SymbolError("fixtures need dimension >= 2")
    p1 = normal_form_template(P1_IM_SRC, n)
    p2 = normal_form_template(P2_IM_SRC, n)
    lewy = ClassicalSymbol.parse(
        1, ["xi1 + i*xi2 - 2*i*(x1 + i*x2)*xi3"], 3
    )
    model2d = ClassicalSymbol.parse(1, ["xi1 + i*x1*xi2"], 2)
    return {"lewy": lewy, "model2d": model2d, "p1": p1, "p2": p2}
