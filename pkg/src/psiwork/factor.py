"""Jet-level Malgrange factorization Q = P # E + R and related criteria.

All divisions happen on truncated Taylor jets at a fixed characteristic
point: the preparation theorem is realized as a formal division in the
xi1-power filtration (jet.divide_by_factor with nu = xi1), so every result
is an order-K identity of Taylor coefficients at that point.  Remainders R
carry no xi1 dependence by construction: their xi1-indexed coefficients are
checked small and then projected to exactly zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import jet as jt
from . import symbol as sy
from . import symexpr as se
from .symbol import _alpha_factorial, _alphas

__all__ = [
    "FactorError",
    "FactorizationResult",
    "ProportionalityReport",
    "taylor_expression",
    "malgrange_divide_term",
    "normalize_lower_order",
    "factor_symbol",
    "proportionality",
    "commutator_test",
    "DEFAULT_DEPTH",
    "DEFAULT_ORDER",
]

DEFAULT_DEPTH = 3
DEFAULT_ORDER = 6
XI1_FREE_TOL = 1e-9
UNIT_TOL = 1e-9


class FactorError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Jet utilities


def _gamma_factorial(gamma) -> int:
    out = 1
    for g in gamma:
        out *= math.factorial(g)
    return out


def taylor_expression(j: jt.Jet) -> se.Node:
    """The Taylor polynomial of a jet as a symbolic expression."""
    n = j.n
    acc: se.Node = se.ZERO
    for gamma, c in zip(j.indices(), j.coeffs):
        if c == 0:
            continue
        mono: se.Node = se.Const(complex(c) / _gamma_factorial(gamma))
        for k in range(n):
            if gamma[k]:
                mono = mono * (se.Var("x", k + 1) - se.Const(j.base_x[k])) ** gamma[k]
        for k in range(n):
            if gamma[n + k]:
                mono = mono * (
                    se.Var("xi", k + 1) - se.Const(j.base_xi[k])
                ) ** gamma[n + k]
        acc = acc + mono
    return acc


def _xi1_slot_error(j: jt.Jet) -> float:
    n = j.n
    worst = 0.0
    for gamma, c in zip(j.indices(), j.coeffs):
        if gamma[n] > 0:
            worst = max(worst, abs(c))
    return worst


def _project_xi1_free(j: jt.Jet) -> jt.Jet:
    n = j.n
    coeffs = j.coeffs.copy()
    for pos, gamma in enumerate(j.indices()):
        if gamma[n] > 0:
            coeffs[pos] = 0.0
    return jt.Jet(j.base_x, j.base_xi, j.order, coeffs)


def _jet_deriv(j: jt.Jet, alpha: Sequence[int], kind: str) -> jt.Jet:
    n = j.n
    for k, a in enumerate(alpha):
        for _ in range(a):
            j = j.derivative(k if kind == "x" else n + k)
    return j


def _check_unit_factor(p1: jt.Jet):
    if abs(p1.value) > jt.DIVISION_TOL:
        raise FactorError("divisor does not vanish at the base point")
    n = p1.n
    beta1 = tuple(1 if k == n else 0 for k in range(2 * n))
    pos = jt.index_positions(2 * n, p1.order)[beta1]
    if abs(p1.coeffs[pos] - 1.0) > UNIT_TOL:
        raise FactorError(
            "divisor must have unit xi1-derivative at the base point"
        )


def malgrange_divide_term(q: jt.Jet, p: jt.Jet) -> Tuple[jt.Jet, jt.Jet]:
    """Division q = p e + r with r free of xi1, through order K-1.

    p must be a jet of xi1 + i f with unit d/d xi1 at the base point.
    Returns (e, r); r's xi1-indexed coefficients are verified below 1e-9
    and projected to exactly zero.
    """
    _check_unit_factor(p)
    e = jt.divide_by_factor(q, p, "xi1")
    residual = jt.division_residual(q, p, e)
    err = _xi1_slot_error(residual)
    if err > XI1_FREE_TOL:
        raise FactorError(f"division residual not xi1-free: {err:.3g}")
    r = _project_xi1_free(residual)
    return e, r


# ---------------------------------------------------------------------------
# Stage loop shared by factor_symbol and normalize_lower_order


def _composition_remainder(
    q_jet: jt.Jet,
    p_jets: Dict[int, jt.Jet],
    e_jets: Dict[int, jt.Jet],
    d: int,
    ord_out: int,
    n: int,
    base,
) -> jt.Jet:
    """Jet of q_d - sum of already-known degree-d parts of sigma_{P # E}."""
    acc = q_jet.truncate(ord_out)
    for s, pj in p_jets.items():
        for te, ej in e_jets.items():
            k = s + te - d
            if k < 0:
                continue
            for alpha in _alphas(n, k):
                pa = _jet_deriv(pj, alpha, "xi")
                ea = _jet_deriv(ej, alpha, "x")
                if pa.order < ord_out or ea.order < ord_out:
                    raise FactorError(
                        "jet order exhausted; raise K or lower the depth"
                    )
                prod = jt.jet_mul(pa.truncate(ord_out), ea.truncate(ord_out))
                factor = (-1j) ** k / _alpha_factorial(alpha)
                acc = jt.jet_sub(acc, prod.scale(factor))
    return acc


def _stage_loop(
    q_jets: Dict[int, jt.Jet],
    p_jets: Dict[int, jt.Jet],
    top_degree: int,
    stages: int,
    K: int,
    n: int,
    base,
):
    p1 = p_jets[max(p_jets)]
    e_jets: Dict[int, jt.Jet] = {}
    r_jets: Dict[int, jt.Jet] = {}
    residuals: Dict[int, float] = {}
    for j in range(stages):
        d = top_degree - j
        ord_j = K - 2 * j
        if ord_j < 1:
            raise FactorError("jet order exhausted; raise K or lower the depth")
        q_jet = q_jets.get(d, jt.Jet.zero(base, K))
        rem = _composition_remainder(q_jet, p_jets, e_jets, d, ord_j, n, base)
        e = jt.divide_by_factor(rem, p1.truncate(ord_j), "xi1")
        residual = jt.division_residual(rem, p1.truncate(ord_j), e)
        err = _xi1_slot_error(residual)
        if err > XI1_FREE_TOL:
            raise FactorError(f"stage {j} residual not xi1-free: {err:.3g}")
        residuals[d] = err
        e_jets[d - 1] = e
        r_jets[d] = _project_xi1_free(residual)
    return e_jets, r_jets, residuals


# ---------------------------------------------------------------------------
# Public operations


@dataclass
class FactorizationResult:
    point: Tuple[Tuple[float, ...], Tuple[float, ...]]
    depth: int
    order: int
    e_jets: Tuple[Tuple[int, jt.Jet], ...]   # (degree, jet), degrees descending
    r_jets: Tuple[Tuple[int, jt.Jet], ...]
    residuals: Dict[int, float]              # per-degree xi1-slot residual
    r_xi1_independent: bool = True

    @property
    def E(self) -> sy.ClassicalSymbol:
        return sy.ClassicalSymbol.from_exprs(
            self.e_jets[0][0],
            [taylor_expression(j) for _, j in self.e_jets],
            len(self.point[0]),
        )

    @property
    def R(self) -> sy.ClassicalSymbol:
        return sy.ClassicalSymbol.from_exprs(
            self.r_jets[0][0],
            [taylor_expression(j) for _, j in self.r_jets],
            len(self.point[0]),
        )

    def first_nonvanishing_index(self, tol: float = 1e-9):
        top = self.r_jets[0][0]
        terms = [(top - deg, j) for deg, j in self.r_jets]
        return jt.first_nonvanishing(terms, tol=tol)

    def to_json(self) -> str:
        return json.dumps(
            {
                "point": {
                    "x": list(self.point[0]),
                    "xi": list(self.point[1]),
                },
                "depth": self.depth,
                "order": self.order,
                "residual_norms": {str(k): v for k, v in self.residuals.items()},
                "e": {str(d): json.loads(j.to_json()) for d, j in self.e_jets},
                "r": {str(d): json.loads(j.to_json()) for d, j in self.r_jets},
                "r_xi1_independent": self.r_xi1_independent,
            }
        )


def _term_jets(S: sy.ClassicalSymbol, base, K: int) -> Dict[int, jt.Jet]:
    return {t.degree: jt.jet_of(t.expr, base, K) for t in S.terms}


def _check_lower_terms_xi1_free(p_jets: Dict[int, jt.Jet], top: int):
    for d, j in p_jets.items():
        if d == top:
            continue
        err = _xi1_slot_error(j)
        if err > XI1_FREE_TOL:
            raise FactorError(
                f"lower-order term of degree {d} depends on xi1 ({err:.3g}); "
                "run normalize_lower_order first"
            )


def factor_symbol(
    Q: sy.ClassicalSymbol,
    P: sy.ClassicalSymbol,
    point,
    depth: int = DEFAULT_DEPTH,
    order: int = DEFAULT_ORDER,
) -> FactorizationResult:
    """Degree-by-degree jet factorization Q = P # E + R at a point.

    P must have unit xi1-derivative principal part vanishing at the point
    and xi1-independent lower-order terms.  Each stage divides the current
    remainder by the principal factor and feeds the solved E-terms back
    through the composition formula before the next division.
    """
    if Q.dimension != P.dimension:
        raise FactorError("dimension mismatch")
    base = (tuple(float(v) for v in point[0]), tuple(float(v) for v in point[1]))
    n = P.dimension
    p_jets = _term_jets(P, base, order)
    _check_unit_factor(p_jets[P.top_degree])
    _check_lower_terms_xi1_free(p_jets, P.top_degree)
    if P.top_degree != 1:
        raise FactorError("expected a first-order divisor (reduce orders first)")
    q_jets = _term_jets(Q, base, order)
    e_jets, r_jets, residuals = _stage_loop(
        q_jets, p_jets, Q.top_degree, depth, order, n, base
    )
    return FactorizationResult(
        base,
        depth,
        order,
        tuple(sorted(e_jets.items(), key=lambda kv: -kv[0])),
        tuple(sorted(r_jets.items(), key=lambda kv: -kv[0])),
        residuals,
    )


def normalize_lower_order(
    P: sy.ClassicalSymbol,
    point,
    depth: Optional[int] = None,
    order: int = DEFAULT_ORDER,
) -> sy.ClassicalSymbol:
    """Jet-level symbol of (I - a~) # P with xi1-free lower-order terms.

    The principal part must already have the form xi1 + i f(x, xi') at the
    point (checked on jets).  Lower-order terms are replaced by the division
    remainders, expressed as Taylor polynomials at the point.
    """
    if depth is None:
        depth = P.depth
    if depth < 1 or depth > P.depth:
        raise FactorError("depth not covered by stored terms")
    base = (tuple(float(v) for v in point[0]), tuple(float(v) for v in point[1]))
    n = P.dimension
    if P.top_degree != 1:
        raise FactorError("expected a first-order symbol")
    p_jets = _term_jets(P, base, order)
    p1 = p_jets[1]
    _check_unit_factor(p1)
    # d/d xi1 (p1 - xi1) must vanish identically at jet level
    xi1_expr = se.parse_expression("xi1", n)
    probe = jt.jet_of(P.principal.expr - xi1_expr, base, order)
    if _xi1_slot_error(probe) > XI1_FREE_TOL:
        raise FactorError("principal part is not of the form xi1 + i f(x, xi')")
    if depth == 1:
        return P
    q_jets = {d: j for d, j in p_jets.items() if d <= 0}
    _, r_jets, _ = _stage_loop(q_jets, p_jets, 0, depth - 1, order, n, base)
    exprs = [P.principal.expr] + [
        taylor_expression(r_jets[-j]) for j in range(depth - 1)
    ]
    return sy.ClassicalSymbol.from_exprs(1, exprs, n)


@dataclass
class ProportionalityReport:
    mu: complex
    ok: bool
    bracket: float
    poly_residual: float      # sup of |coefficients of q1 - mu p1 at x0|
    lower_residual: float     # |q0(x0) - mu p0(x0)|
    grad_residual: float      # |d_xi e0(x0, xi0)|
    tol: float = 1e-8

    def to_json(self) -> str:
        return json.dumps(
            {
                "mu": [self.mu.real, self.mu.imag],
                "ok": self.ok,
                "bracket": self.bracket,
                "poly_residual": self.poly_residual,
                "lower_residual": self.lower_residual,
                "grad_residual": self.grad_residual,
                "tol": self.tol,
            }
        )


def _re_im(node: se.Node) -> Tuple[se.Node, se.Node]:
    conj = se.conjugate(node)
    return (
        se.Const(0.5 + 0j) * (node + conj),
        se.Const(-0.5j) * (node - conj),
    )


def proportionality(
    P: sy.ClassicalSymbol,
    Q: sy.ClassicalSymbol,
    point,
    order: int = 4,
) -> ProportionalityReport:
    """Extract mu with Q*(x0,D) = mu P*(x0,D) for first-order symbols.

    mu is the value of the degree-0 factor e0 at the point; the report
    checks proportionality of the frozen principal parts as polynomials in
    xi, the zero-order matching, and the vanishing xi-gradient of e0.
    """
    x0, xi0 = point
    n = P.dimension
    p1 = P.principal.expr
    if abs(se.evaluate(p1, x0, xi0)) > 1e-7:
        raise FactorError("point is not characteristic for P")
    re_p, im_p = _re_im(p1)
    bracket = complex(
        se.evaluate(sy.poisson(re_p, im_p, n), x0, xi0)
    ).real
    if bracket <= 0:
        raise FactorError(
            f"sign-change hypothesis fails: {{Re p, Im p}} = {bracket:.3g} <= 0"
        )
    depth = min(2, P.depth, Q.depth)
    result = factor_symbol(Q, P, point, depth=depth, order=order)
    e0 = dict(result.e_jets)[Q.top_degree - 1]
    mu = e0.value
    grad = max(
        abs(e0.get((0,) * n, tuple(1 if k == j else 0 for k in range(n))))
        for j in range(n)
    )
    poly_res = abs(
        se.evaluate(Q.principal.expr, x0, xi0) - mu * se.evaluate(p1, x0, xi0)
    )
    for j in range(1, n + 1):
        dq = se.differentiate(Q.principal.expr, ("xi", j))
        dp = se.differentiate(p1, ("xi", j))
        poly_res = max(
            poly_res,
            abs(se.evaluate(dq, x0, xi0) - mu * se.evaluate(dp, x0, xi0)),
        )
    q0 = Q.term_or_zero(Q.top_degree - 1)
    p0 = P.term_or_zero(P.top_degree - 1)
    lower = abs(
        se.evaluate(q0, x0, xi0) - mu * se.evaluate(p0, x0, xi0)
    )
    tol = 1e-8
    ok = poly_res < tol and lower < tol and grad < tol
    return ProportionalityReport(
        mu, ok, bracket, float(poly_res), float(lower), float(grad), tol
    )


def commutator_test(
    p: se.Node,
    q: se.Node,
    points: Sequence,
    m_max: int,
    n: int,
    mu: Optional[se.Node] = None,
    tol: float = 1e-7,
) -> List[Dict]:
    """Evaluate iterated Hamilton derivatives H_p^m(q) at characteristic points.

    Each entry reports the values for m = 1..m_max and passes iff all stay
    below tol.  With a scalar factor mu the first-order transport identity
    sum_j d_xi_j p . D_x_j mu is evaluated as well and included in the
    verdict.
    """
    iterates = [sy.iterated_hamilton(p, q, m, n) for m in range(1, m_max + 1)]
    transport = None
    if mu is not None:
        acc: se.Node = se.ZERO
        for j in range(1, n + 1):
            acc = acc + se.differentiate(p, ("xi", j)) * se.Const(-1j) * (
                se.differentiate(mu, ("x", j))
            )
        transport = acc
    out = []
    for pt in points:
        x0, xi0 = pt
        if abs(se.evaluate(p, x0, xi0)) > 1e-7:
            raise FactorError(f"point {pt} is not characteristic")
        values = [complex(se.evaluate(h, x0, xi0)) for h in iterates]
        entry = {
            "point": (tuple(x0), tuple(xi0)),
            "values": values,
            "pass": all(abs(v) < tol for v in values),
        }
        if transport is not None:
            tv = complex(se.evaluate(transport, x0, xi0))
            entry["transport"] = tv
            entry["pass"] = entry["pass"] and abs(tv) < tol
        out.append(entry)
    return out
