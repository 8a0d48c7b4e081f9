"""Approximate null solutions of P* for operators in normal form.

For P = D_t + i f(t, x, D_x) + (lower order), with f real and independent of
the first covariable, the approximate solutions are

    v_tau(t, x) = tau^{N+n} e^{i tau w(t,x)} sum_j phi_j(t,x) tau^{-j}.

The phase is taken as

    w(t,x) = w0(t) + <x - y(t), eta(t)> + sum_{2 <= |a| <= M} c_a(t) z^a,

with z = x - y(t) and plain monomial coefficients c_a (the symmetric
coefficients of the usual presentation are recovered from the Hessian
H_jk = (1 + delta_jk) c_{e_j+e_k}).  Writing f~ for the finite xi-Taylor
expansion of f around eta(t),

    f~(t, x, xi) = sum_{|b| <= M} f^{(b)}(t, x, eta(t)) (xi - eta(t))^b / b!,

and matching the coefficient of z^a in the eiconal equation
dw/dt = i f~(t, x, dw/dx) yields

  |a| = 0:   w0' = <y', eta> + i f(t, y, eta),
  |a| = 1:   eta_j' - sum_k H_jk y_k' = i (f_{(j)} + sum_k f^{(k)} H_jk),
  2<=|a|<=M: c_a' = sum_k (a_k + 1) c_{a+e_k} y_k' + i A_a(t),

where A_a is the z^a-coefficient of the expansion of f~(t, y+z, dw/dx) and
the transport sum is dropped when |a| = M.  Splitting the |a| = 1 equations
into real and imaginary parts (y, eta real) gives

    Im H y'  = -grad_x f - Re H grad_xi f,
    eta'     =  Re H y'  - Im H grad_xi f,

solvable because Im H stays positive definite; that invariant
(min eig(Im H - I/2) > 0) is monitored on every accepted step.

The amplitude phi_0(t,x) = sum_{|a| < M} phi_a(t) z^a solves the linear
system obtained from the tau^0 coefficient of e^{-i tau w} P*(phi e^{i tau w}).
With P* = D_t - i f(x,D) - i sum_k (d_{xi_k} D_{x_k} f)(x,D) + conj(q0)(x,D)
and the standard expansion of a(x,D)(phi e^{i tau w}), that coefficient is

    L phi = D_t phi - i sum_k f~^{(k)}(t,x,w') D_k phi
            - (1/2) sum_{j,k} f~^{(jk)}(t,x,w') (d_j d_k w) phi
            - sum_k (d_{x_k} f^{(k)})~(t,x,w') phi + conj(q0)~(t,x,w') phi,

and matching z^a coefficients of L phi = O(|z|^{M-1}) gives
D_t phi_a + sum_b a_{ab} phi_b = 0.

The module also provides the explicit closed-form solution for the model
operator P = D_1 + i x_1 D_n, whose phase

    w(x) = x_n + i (x_1^2 + ... + x_{n-1}^2 + (x_n + i x_1^2 / 2)^2) / 2

satisfies P* w = 0 exactly, and whose amplitude solves D_1 phi = i x_1 D_n phi
by a power-series recursion in x_1.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import CubicHermiteSpline

from . import symbol as sy
from . import symexpr as se

__all__ = [
    "WKBError",
    "PhaseExpansion",
    "AmplitudeSet",
    "ApproxSolution",
    "GridSpec",
    "ModelPhase",
    "solve_phase_system",
    "normalize_w0",
    "transport_matrix",
    "solve_transport",
    "assemble_v",
    "model_solution",
    "model_w_expr",
    "model_pstar_residual",
    "solve_ck_amplitude",
    "ck_residual",
    "eiconal_residual",
    "poly_evaluate",
    "write_grid",
    "read_grid",
]

DEFAULT_M = 3
POSDEF_MARGIN = 0.0
REAL_TOL = 1e-9


class WKBError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Truncated multivariate polynomials: dict multi-index tuple -> complex


def _p_add(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0.0) + v
    return out


def _p_scale(a: dict, c) -> dict:
    return {k: c * v for k, v in a.items()}


def _p_mul(a: dict, b: dict, deg: int) -> dict:
    out: dict = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            k = tuple(i + j for i, j in zip(ka, kb))
            if sum(k) <= deg:
                out[k] = out.get(k, 0.0) + va * vb
    return out


def _p_diff(a: dict, j: int) -> dict:
    out: dict = {}
    for k, v in a.items():
        if k[j] > 0:
            km = list(k)
            km[j] -= 1
            out[tuple(km)] = out.get(tuple(km), 0.0) + k[j] * v
    return out


def poly_evaluate(poly: dict, z) -> np.ndarray:
    """Evaluate a monomial dict at points z of shape (..., m)."""
    z = np.asarray(z, dtype=float)
    out = np.zeros(z.shape[:-1], dtype=complex)
    for k, v in poly.items():
        mono = np.ones(z.shape[:-1])
        for j, p in enumerate(k):
            if p:
                mono = mono * z[..., j] ** p
        out = out + v * mono
    return out


def _indices_of_degree(m: int, total: int) -> List[tuple]:
    return sorted(sy._alphas(m, total))


def _indices_up_to(m: int, lo: int, hi: int) -> Tuple[tuple, ...]:
    out: List[tuple] = []
    for d in range(lo, hi + 1):
        out.extend(_indices_of_degree(m, d))
    return tuple(out)


def _add_e(alpha: tuple, k: int, delta: int = 1) -> tuple:
    out = list(alpha)
    out[k] += delta
    return tuple(out)


# ---------------------------------------------------------------------------
# Cached mixed derivatives of a symbol f(t, x, xi') in the ambient variables


class _FDerivs:
    """d_xi^beta d_x^gamma f evaluated at (t, y, eta); beta, gamma index the
    last n-1 coordinates, the first slot being the evolution variable t."""

    def __init__(self, f: se.Node, n: int):
        self.n = n
        self.m = n - 1
        zero = (0,) * self.m
        self._nodes: Dict[tuple, se.Node] = {(zero, zero): f}

    def node(self, beta: tuple, gamma: tuple) -> se.Node:
        key = (tuple(beta), tuple(gamma))
        if key not in self._nodes:
            beta, gamma = key
            for j in range(self.m):
                if beta[j] > 0:
                    prev = self.node(_add_e(beta, j, -1), gamma)
                    self._nodes[key] = se.differentiate(prev, ("xi", j + 2))
                    break
            else:
                for j in range(self.m):
                    if gamma[j] > 0:
                        prev = self.node(beta, _add_e(gamma, j, -1))
                        self._nodes[key] = se.differentiate(prev, ("x", j + 2))
                        break
        return self._nodes[key]

    def value(self, beta, gamma, t: float, y, eta) -> complex:
        x = np.concatenate([[t], np.asarray(y, dtype=float)])
        xi = np.concatenate([[0.0], np.asarray(eta, dtype=float)])
        return complex(se.evaluate(self.node(tuple(beta), tuple(gamma)), x, xi))


def _check_normal_form(f: se.Node, n: int, require_real: bool = True) -> None:
    """f must not depend on the first covariable (and be real if requested)."""
    dxi1 = se.differentiate(f, ("xi", 1))
    rng = np.random.default_rng(1234)
    for _ in range(8):
        x = rng.uniform(-1.0, 2.5, n)
        xi = np.concatenate([rng.uniform(-1, 1, 1), rng.uniform(0.4, 1.6, n - 1)])
        if abs(se.evaluate(dxi1, x, xi)) > REAL_TOL:
            raise WKBError("symbol must be independent of the first covariable")
        if require_real and abs(np.imag(se.evaluate(f, x, xi))) > REAL_TOL:
            raise WKBError("imaginary-part symbol must be real valued")


# ---------------------------------------------------------------------------
# Phase expansion


@dataclass
class PhaseExpansion:
    """Solution record of the quasilinear phase system.

    State layout per time: [y (m), eta (m), Re w0, Im w0, Re c_a, Im c_a ...]
    with the coefficient order given by ``alphas``.  ``w0_shift`` holds the
    additive normalization; w0(t) = stored value minus the shift.
    """

    n: int
    M: int
    alphas: Tuple[tuple, ...]
    ts: np.ndarray
    states: np.ndarray
    derivs: np.ndarray
    t0: float
    w0_shift: complex = 0.0 + 0.0j
    spline: Optional[CubicHermiteSpline] = None

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.derivs = np.asarray(self.derivs, dtype=float)
        m = self.n - 1
        if self.states.shape[1] != 2 * m + 2 + 2 * len(self.alphas):
            raise WKBError("state layout mismatch")
        if self.spline is None:
            self.spline = CubicHermiteSpline(self.ts, self.states, self.derivs, axis=0)

    # -- accessors ----------------------------------------------------------

    @property
    def t_span(self) -> Tuple[float, float]:
        return float(self.ts[0]), float(self.ts[-1])

    def state(self, t: float) -> np.ndarray:
        return np.asarray(self.spline(t), dtype=float)

    def state_deriv(self, t: float) -> np.ndarray:
        return np.asarray(self.spline.derivative()(t), dtype=float)

    def unpack(self, vec) -> Tuple[np.ndarray, np.ndarray, complex, Dict[tuple, complex]]:
        m = self.n - 1
        y = np.asarray(vec[:m], dtype=float)
        eta = np.asarray(vec[m : 2 * m], dtype=float)
        w0 = vec[2 * m] + 1j * vec[2 * m + 1]
        c = {
            a: vec[2 * m + 2 + 2 * k] + 1j * vec[2 * m + 3 + 2 * k]
            for k, a in enumerate(self.alphas)
        }
        return y, eta, w0, c

    def y(self, t: float) -> np.ndarray:
        return self.unpack(self.state(t))[0]

    def eta(self, t: float) -> np.ndarray:
        return self.unpack(self.state(t))[1]

    def w0(self, t: float) -> complex:
        return self.unpack(self.state(t))[2] - self.w0_shift

    def coefficients(self, t: float) -> Dict[tuple, complex]:
        return self.unpack(self.state(t))[3]

    def hessian(self, t: float) -> np.ndarray:
        return _hessian(self.coefficients(t), self.n - 1)

    def min_margin(self, t: float) -> float:
        H = self.hessian(t)
        m = self.n - 1
        return float(np.min(np.linalg.eigvalsh(H.imag - 0.5 * np.eye(m))))

    def w_value(self, t: float, x) -> np.ndarray:
        """Phase value at (t, x); x has shape (..., n-1)."""
        y, eta, w0, c = self.unpack(self.state(t))
        z = np.asarray(x, dtype=float) - y
        out = (w0 - self.w0_shift) + z @ eta
        return out + poly_evaluate(c, z)

    def grad_x(self, t: float, x) -> np.ndarray:
        y, eta, _, c = self.unpack(self.state(t))
        z = np.asarray(x, dtype=float) - y
        m = self.n - 1
        out = np.empty(z.shape[:-1] + (m,), dtype=complex)
        for j in range(m):
            out[..., j] = eta[j] + poly_evaluate(_p_diff(c, j), z)
        return out

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "M": self.M,
                "alphas": [list(a) for a in self.alphas],
                "ts": self.ts.tolist(),
                "states": self.states.tolist(),
                "derivs": self.derivs.tolist(),
                "t0": self.t0,
                "w0_shift": [self.w0_shift.real, self.w0_shift.imag],
            }
        )

    @staticmethod
    def from_json(text: str) -> "PhaseExpansion":
        d = json.loads(text)
        return PhaseExpansion(
            n=d["n"],
            M=d["M"],
            alphas=tuple(tuple(a) for a in d["alphas"]),
            ts=np.asarray(d["ts"]),
            states=np.asarray(d["states"]),
            derivs=np.asarray(d["derivs"]),
            t0=d["t0"],
            w0_shift=d["w0_shift"][0] + 1j * d["w0_shift"][1],
        )


def _hessian(c: Dict[tuple, complex], m: int) -> np.ndarray:
    H = np.empty((m, m), dtype=complex)
    for j in range(m):
        for k in range(j, m):
            key = _add_e(_add_e((0,) * m, j), k)
            H[j, k] = H[k, j] = (1 + (j == k)) * c.get(key, 0.0)
    return H


def _symbol_on_phase(
    fd: _FDerivs,
    beta0: tuple,
    gamma0: tuple,
    t: float,
    y,
    eta,
    g: List[dict],
    deg: int,
) -> dict:
    """z-expansion, through degree deg, of
    (d_xi^beta0 d_x^gamma0 f)(t, y + z, dw/dx) with dw/dx - eta = g(z)."""
    m = fd.m
    out: dict = {}
    for btot in range(deg + 1):
        for beta in sy._alphas(m, btot):
            gb: dict = {(0,) * m: 1.0}
            ok = True
            for j in range(m):
                for _ in range(beta[j]):
                    gb = _p_mul(gb, g[j], deg)
                    if not gb:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                continue
            fac = 1.0 / sy._alpha_factorial(beta)
            fb: dict = {}
            bfull = tuple(i + j for i, j in zip(beta0, beta))
            for gtot in range(deg - btot + 1):
                for gamma in sy._alphas(m, gtot):
                    gfull = tuple(i + j for i, j in zip(gamma0, gamma))
                    val = fd.value(bfull, gfull, t, y, eta)
                    if val != 0:
                        fb[gamma] = val / sy._alpha_factorial(gamma)
            if fb:
                out = _p_add(out, _p_scale(_p_mul(fb, gb, deg), fac))
    return out


def _gradient_polys(c: Dict[tuple, complex], m: int) -> List[dict]:
    """g_j(z) = d_j(sum_{|a|>=2} c_a z^a), the non-linear part of dw/dx."""
    return [_p_diff(c, j) for j in range(m)]


def _point_data(fd: _FDerivs, t: float, y, eta, c: Dict[tuple, complex]):
    m = fd.m
    zero = (0,) * m
    H = _hessian(c, m)
    fval = fd.value(zero, zero, t, y, eta).real
    gx = np.array(
        [fd.value(zero, _add_e(zero, j), t, y, eta).real for j in range(m)]
    )
    gxi = np.array(
        [fd.value(_add_e(zero, j), zero, t, y, eta).real for j in range(m)]
    )
    ydot = np.linalg.solve(H.imag, -(gx + H.real @ gxi))
    etadot = H.real @ ydot - H.imag @ gxi
    return fval, gx, gxi, H, ydot, etadot


def solve_phase_system(
    f: se.Node,
    init,
    M: int = DEFAULT_M,
    t_span: Tuple[float, float] = (-1.0, 1.0),
    n: int = 2,
    t_mid: Optional[float] = None,
    rtol: float = 1e-9,
    atol: float = 1e-10,
    max_step: float = np.inf,
) -> PhaseExpansion:
    """Integrate the quasilinear phase system from the midpoint data
    y = x, eta = xi, w0 = 0, c_{2e_j} = i/2 (Hessian i I), higher c = 0."""
    if M < 2:
        raise WKBError("expansion order M must be at least 2")
    _check_normal_form(f, n)
    m = n - 1
    x0 = np.asarray(init[0], dtype=float)
    xi0 = np.asarray(init[1], dtype=float)
    if x0.shape != (m,) or xi0.shape != (m,):
        raise WKBError("init must be a pair of (n-1)-vectors")
    a, b = float(t_span[0]), float(t_span[1])
    if not b > a:
        raise WKBError("t_span must be increasing")
    t0 = 0.5 * (a + b) if t_mid is None else float(t_mid)
    if not a <= t0 <= b:
        raise WKBError("t_mid must lie inside t_span")

    alphas = _indices_up_to(m, 2, M)
    index = {al: 2 * m + 2 + 2 * k for k, al in enumerate(alphas)}
    fd = _FDerivs(f, n)

    def unpack_c(vec):
        return {al: vec[index[al]] + 1j * vec[index[al] + 1] for al in alphas}

    def rhs(t, vec):
        y = vec[:m]
        eta = vec[m : 2 * m]
        c = unpack_c(vec)
        fval, _, _, H, ydot, etadot = _point_data(fd, t, y, eta, c)
        g = _gradient_polys(c, m)
        A = _symbol_on_phase(fd, (0,) * m, (0,) * m, t, y, eta, g, M)
        out = np.empty_like(vec)
        out[:m] = ydot
        out[m : 2 * m] = etadot
        w0dot = ydot @ eta + 1j * fval
        out[2 * m] = w0dot.real
        out[2 * m + 1] = w0dot.imag
        for al in alphas:
            val = 1j * A.get(al, 0.0)
            if sum(al) < M:
                for k in range(m):
                    up = _add_e(al, k)
                    cu = vec[index[up]] + 1j * vec[index[up] + 1]
                    val += (al[k] + 1) * cu * ydot[k]
            out[index[al]] = val.real
            out[index[al] + 1] = val.imag
        return out

    def margin(vec) -> float:
        H = _hessian(unpack_c(vec), m)
        return float(np.min(np.linalg.eigvalsh(H.imag - 0.5 * np.eye(m))))

    z0 = np.zeros(2 * m + 2 + 2 * len(alphas))
    z0[:m] = x0
    z0[m : 2 * m] = xi0
    for j in range(m):
        key = _add_e((0,) * m, j, 2)
        z0[index[key] + 1] = 0.5  # Hessian = i * identity
    if margin(z0) <= POSDEF_MARGIN:
        raise WKBError("initial Hessian violates positive definiteness")

    def run(t_from, t_to):
        ts = [t_from]
        zs = [z0.copy()]
        ds = [rhs(t_from, z0)]
        if t_to == t_from:
            return ts, zs, ds
        solver = RK45(rhs, t_from, z0, t_to, rtol=rtol, atol=atol, max_step=max_step)
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise WKBError(f"phase integrator failed: {msg}")
            if margin(solver.y) <= POSDEF_MARGIN:
                raise WKBError(
                    f"positive definiteness of Im Hessian - I/2 lost at t={solver.t:.6f}"
                )
            ts.append(solver.t)
            zs.append(solver.y.copy())
            ds.append(rhs(solver.t, solver.y))
        return ts, zs, ds

    fts, fzs, fds = run(t0, b)
    bts, bzs, bds = run(t0, a)
    ts = list(reversed(bts[1:])) + fts
    zs = list(reversed(bzs[1:])) + fzs
    ds = list(reversed(bds[1:])) + fds
    ts_arr = np.asarray(ts)
    if len(ts_arr) < 2 or np.any(np.diff(ts_arr) <= 0):
        raise WKBError("degenerate time grid from the integrator")
    return PhaseExpansion(
        n=n,
        M=M,
        alphas=alphas,
        ts=ts_arr,
        states=np.asarray(zs),
        derivs=np.asarray(ds),
        t0=t0,
    )


def normalize_w0(
    phase: PhaseExpansion,
    mode: str = "point",
    samples: int = 2001,
    flat_tol: float = 1e-9,
) -> PhaseExpansion:
    """Shift w0 so that min Im w0 = 0 and Re w0 = 0 at the minimizer (or on
    the flat core in interval mode).  Requires an interior minimum with
    strictly positive endpoint values afterwards."""
    if mode not in ("point", "interval"):
        raise WKBError("mode must be 'point' or 'interval'")
    a, b = phase.t_span
    ts = np.linspace(a, b, samples)
    m = phase.n - 1
    raw = phase.spline(ts)[:, 2 * m] + 1j * phase.spline(ts)[:, 2 * m + 1]
    imw = raw.imag
    lo = float(np.min(imw))
    k_min = int(np.argmin(imw))
    if k_min == 0 or k_min == samples - 1:
        raise WKBError(
            "Im w0 has no interior minimum: f never changed sign from - to +"
        )
    scale = max(1.0, float(np.max(imw) - lo))
    flat = np.flatnonzero(imw - lo <= flat_tol * scale)
    if mode == "interval":
        i0, i1 = int(flat[0]), int(flat[-1])
        kc = (i0 + i1) // 2
        core_re = raw.real[i0 : i1 + 1]
        if np.max(np.abs(core_re - raw.real[kc])) > 1e-6 * scale:
            raise WKBError("Re w0 is not constant on the flat core")
    else:
        kc = k_min
    shift = raw.real[kc] + 1j * lo
    if imw[0] - lo <= 0 or imw[-1] - lo <= 0:
        raise WKBError("Im w0 not strictly positive at the endpoints")
    return dataclasses.replace(
        phase, w0_shift=phase.w0_shift + shift, spline=phase.spline
    )


# ---------------------------------------------------------------------------
# Transport system


@dataclass
class AmplitudeSet:
    """Leading amplitude phi_0(t,x) = sum_{|a|<M} phi_a(t) (x - y(t))^a."""

    n: int
    M: int
    beta0: tuple
    alphas: Tuple[tuple, ...]
    ts: np.ndarray
    coeffs: np.ndarray  # complex, shape (len(ts), len(alphas))
    derivs: np.ndarray
    t0: float
    support_box: Optional[Tuple[Tuple[float, float], ...]] = None
    spline: Optional[CubicHermiteSpline] = None

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        self.derivs = np.asarray(self.derivs, dtype=complex)
        if self.spline is None:
            stacked = np.concatenate([self.coeffs.real, self.coeffs.imag], axis=1)
            dstacked = np.concatenate([self.derivs.real, self.derivs.imag], axis=1)
            self.spline = CubicHermiteSpline(self.ts, stacked, dstacked, axis=0)

    def phi0_coeffs(self, t: float) -> Dict[tuple, complex]:
        vec = np.asarray(self.spline(t))
        k = len(self.alphas)
        return {a: vec[i] + 1j * vec[k + i] for i, a in enumerate(self.alphas)}

    def phi0_value(self, t: float, x, y=None) -> np.ndarray:
        if y is None:
            raise WKBError("phi0_value needs the curve position y(t)")
        z = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return poly_evaluate(self.phi0_coeffs(t), z)

    def to_json(self) -> str:
        return json.dumps(
            {
                "n": self.n,
                "M": self.M,
                "beta0": list(self.beta0),
                "alphas": [list(a) for a in self.alphas],
                "ts": self.ts.tolist(),
                "coeffs_re": self.coeffs.real.tolist(),
                "coeffs_im": self.coeffs.imag.tolist(),
                "derivs_re": self.derivs.real.tolist(),
                "derivs_im": self.derivs.imag.tolist(),
                "t0": self.t0,
                "support_box": self.support_box,
            }
        )

    @staticmethod
    def from_json(text: str) -> "AmplitudeSet":
        d = json.loads(text)
        return AmplitudeSet(
            n=d["n"],
            M=d["M"],
            beta0=tuple(d["beta0"]),
            alphas=tuple(tuple(a) for a in d["alphas"]),
            ts=np.asarray(d["ts"]),
            coeffs=np.asarray(d["coeffs_re"]) + 1j * np.asarray(d["coeffs_im"]),
            derivs=np.asarray(d["derivs_re"]) + 1j * np.asarray(d["derivs_im"]),
            t0=d["t0"],
            support_box=None
            if d["support_box"] is None
            else tuple(tuple(p) for p in d["support_box"]),
        )


def transport_matrix(
    f: se.Node,
    phase: PhaseExpansion,
    t: float,
    lower: Optional[se.Node] = None,
) -> np.ndarray:
    """The matrix a_{ab}(t) of the transport system D_t phi_a + sum a_{ab} phi_b = 0,
    rows and columns ordered by _indices_up_to(n-1, 0, M-1)."""
    n = phase.n
    m = n - 1
    M = phase.M
    fd = _FDerivs(f, n)
    y, eta, _, c = phase.unpack(phase.state(t))
    _, _, _, _, ydot, _ = _point_data(fd, t, y, eta, c)
    g = _gradient_polys(c, m)
    deg = M - 1
    zero = (0,) * m

    Ak = [
        _symbol_on_phase(fd, _add_e(zero, k), zero, t, y, eta, g, deg)
        for k in range(m)
    ]
    B: dict = {}
    for j in range(m):
        for k in range(m):
            Ajk = _symbol_on_phase(
                fd, _add_e(_add_e(zero, j), k), zero, t, y, eta, g, deg
            )
            Wjk = _p_diff(_p_diff(dict(c), j), k)
            B = _p_add(B, _p_scale(_p_mul(Ajk, Wjk, deg), -0.5))
    for k in range(m):
        Ck = _symbol_on_phase(
            fd, _add_e(zero, k), _add_e(zero, k), t, y, eta, g, deg
        )
        B = _p_add(B, _p_scale(Ck, -1.0))
    if lower is not None:
        ld = _FDerivs(se.conjugate(lower), n)
        B = _p_add(B, _symbol_on_phase(ld, zero, zero, t, y, eta, g, deg))

    basis = _indices_up_to(m, 0, M - 1)
    pos = {a: i for i, a in enumerate(basis)}
    gen = np.zeros((len(basis), len(basis)), dtype=complex)  # phidot = gen @ phi
    for a in basis:
        ia = pos[a]
        for k in range(m):
            up = _add_e(a, k)
            if up in pos:
                gen[ia, pos[up]] += (a[k] + 1) * ydot[k]
        for k in range(m):
            for gkey, gval in Ak[k].items():
                d = tuple(i - j for i, j in zip(a, gkey))
                if any(v < 0 for v in d):
                    continue
                col = _add_e(d, k)
                if col in pos:
                    gen[ia, pos[col]] += 1j * gval * (d[k] + 1)
        for gkey, gval in B.items():
            d = tuple(i - j for i, j in zip(a, gkey))
            if any(v < 0 for v in d):
                continue
            gen[ia, pos[d]] -= 1j * gval
    return 1j * gen  # D_t phi + a phi = 0  <=>  phidot = -i a phi


def solve_transport(
    f: se.Node,
    phase: PhaseExpansion,
    beta0: Optional[tuple] = None,
    lower: Optional[se.Node] = None,
    t0: Optional[float] = None,
    m_amp: int = 0,
    a_matrix: Optional[Callable[[float], np.ndarray]] = None,
    support_box=None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> AmplitudeSet:
    """Solve the transport system for phi_0 with the coefficient prescription
    phi_{beta0}(t0) = 1 and phi_gamma(t0) = 0 otherwise."""
    if m_amp != 0:
        raise WKBError(
            "only the leading amplitude phi_0 is implemented; higher orders "
            "are absorbed in the order budget of the assembled solution"
        )
    n = phase.n
    m = n - 1
    M = phase.M
    basis = _indices_up_to(m, 0, M - 1)
    if beta0 is None:
        beta0 = (0,) * m
    beta0 = tuple(beta0)
    if beta0 not in basis:
        raise WKBError("beta0 must satisfy |beta0| < M")
    if t0 is None:
        t0 = phase.t0
    a, b = phase.t_span
    if not a <= t0 <= b:
        raise WKBError("t0 outside the phase time span")
    amat = a_matrix
    if amat is None:
        amat = lambda t: transport_matrix(f, phase, t, lower=lower)
    k = len(basis)

    def rhs(t, vec):
        phi = vec[:k] + 1j * vec[k:]
        dphi = -1j * (amat(t) @ phi)
        return np.concatenate([dphi.real, dphi.imag])

    z0 = np.zeros(2 * k)
    z0[basis.index(beta0)] = 1.0

    def run(t_from, t_to):
        ts = [t_from]
        zs = [z0.copy()]
        ds = [rhs(t_from, z0)]
        if t_to == t_from:
            return ts, zs, ds
        solver = RK45(rhs, t_from, z0, t_to, rtol=rtol, atol=atol)
        while solver.status == "running":
            msg = solver.step()
            if solver.status == "failed":
                raise WKBError(f"transport integrator failed: {msg}")
            ts.append(solver.t)
            zs.append(solver.y.copy())
            ds.append(rhs(solver.t, solver.y))
        return ts, zs, ds

    fts, fzs, fds = run(t0, b)
    bts, bzs, bds = run(t0, a)
    ts = np.asarray(list(reversed(bts[1:])) + fts)
    zs = np.asarray(list(reversed(bzs[1:])) + fzs)
    ds = np.asarray(list(reversed(bds[1:])) + fds)
    coeffs = zs[:, :k] + 1j * zs[:, k:]
    derivs = ds[:, :k] + 1j * ds[:, k:]
    return AmplitudeSet(
        n=n,
        M=M,
        beta0=beta0,
        alphas=basis,
        ts=ts,
        coeffs=coeffs,
        derivs=derivs,
        t0=t0,
        support_box=support_box,
    )


# ---------------------------------------------------------------------------
# Eiconal residual


def eiconal_residual(
    phase: PhaseExpansion,
    f: se.Node,
    radii: Sequence[float],
    samples: int = 48,
    n_t: int = 9,
    seed: int = 5,
) -> dict:
    """Max residual of dw/dt - i f~(t, x, dw/dx) over |x - y(t)| <= h, plus the
    log-log slope across the radii (expected about M + 1)."""
    n = phase.n
    m = n - 1
    M = phase.M
    fd = _FDerivs(f, n)
    a, b = phase.t_span
    pad = 0.05 * (b - a)
    # evaluate at accepted integrator nodes, where state and derivative are
    # exact rather than spline-interpolated
    inside = np.flatnonzero((phase.ts >= a + pad) & (phase.ts <= b - pad))
    if len(inside) == 0:
        inside = np.arange(len(phase.ts))
    picks = inside[np.unique(np.linspace(0, len(inside) - 1, n_t).astype(int))]
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(samples, m))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radial = rng.uniform(0.3, 1.0, samples)
    out: Dict[float, float] = {}
    for h in radii:
        worst = 0.0
        for ti in picks:
            t = float(phase.ts[ti])
            vec = phase.states[ti]
            dvec = phase.derivs[ti]
            y, eta, _, c = phase.unpack(vec)
            ydot, etadot, w0dot, cdot = phase.unpack(dvec)
            for d, r in zip(dirs, radial):
                z = h * r * d
                x = y + z
                # time derivative of w at fixed x
                dtw = w0dot + z @ etadot - ydot @ eta
                for al, cv in c.items():
                    dtw += cdot[al] * np.prod(z ** np.array(al))
                    for k in range(m):
                        if al[k]:
                            zm = np.array(al)
                            zm[k] -= 1
                            dtw -= ydot[k] * cv * al[k] * np.prod(z ** zm)
                # truncated Taylor value of f(t, x, dw/dx)
                wp = np.array(
                    [eta[j] + poly_evaluate(_p_diff(c, j), z) for j in range(m)]
                )
                dxi = wp - eta
                fval = 0.0 + 0.0j
                for btot in range(M + 1):
                    for beta in sy._alphas(m, btot):
                        mono = np.prod(dxi ** np.array(beta))
                        if mono == 0:
                            continue
                        coef = fd.value(beta, (0,) * m, t, x, eta)
                        fval += coef * mono / sy._alpha_factorial(beta)
                res = abs(dtw - 1j * fval)
                worst = max(worst, float(res))
        out[float(h)] = worst
    hs = np.array(sorted(out))
    vals = np.array([out[h] for h in hs])
    slope = None
    if len(hs) >= 2 and np.all(vals > 0):
        slope = float(np.polyfit(np.log(hs), np.log(vals), 1)[0])
    return {"residuals": out, "slope": slope}


# ---------------------------------------------------------------------------
# Grid assembly


@dataclass(frozen=True)
class GridSpec:
    box: Tuple[Tuple[float, float], ...]
    dims: Tuple[int, ...]

    def __post_init__(self):
        if len(self.box) != len(self.dims):
            raise WKBError("box / dims rank mismatch")
        if any(d < 2 for d in self.dims):
            raise WKBError("each grid axis needs at least two samples")

    @property
    def rank(self) -> int:
        return len(self.dims)

    def axes(self) -> List[np.ndarray]:
        return [np.linspace(lo, hi, d) for (lo, hi), d in zip(self.box, self.dims)]

    def mesh(self) -> np.ndarray:
        """Points array of shape dims + (rank,)."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(grids, axis=-1)


def _plateau(u: np.ndarray) -> np.ndarray:
    """Smooth cutoff of |u|: 1 on [0, 1/2], 0 outside [0, 1)."""
    u = np.abs(np.asarray(u, dtype=float))
    s = 2.0 - 2.0 * u  # >= 1 inside the plateau, <= 0 outside the support
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        fa = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        fb = np.where(1 - s > 0, np.exp(-1.0 / np.where(1 - s > 0, 1 - s, 1.0)), 0.0)
    return fa / (fa + fb + 1e-300)


def _box_cutoff(pts: np.ndarray, box) -> np.ndarray:
    chi = np.ones(pts.shape[:-1])
    for j, (lo, hi) in enumerate(box):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        chi = chi * _plateau((pts[..., j] - mid) / half)
    return chi


def assemble_v(
    phase,
    amplitudes,
    tau: float,
    N: int,
    grid: GridSpec,
    cutoff: bool = True,
    support_box=None,
) -> np.ndarray:
    """Sample v_tau = tau^{N+n} e^{i tau w} phi chi on the grid.

    phase: PhaseExpansion (first grid axis is t), ModelPhase, or a callable
    mapping a points array of shape (..., n) to complex w values.
    amplitudes: AmplitudeSet, a callable on points, or None (phi = 1)."""
    n = grid.rank
    pts = grid.mesh()
    if isinstance(phase, PhaseExpansion):
        if n != phase.n:
            raise WKBError("grid rank does not match phase dimension")
        taxis = grid.axes()[0]
        w = np.empty(grid.dims, dtype=complex)
        phi = np.ones(grid.dims, dtype=complex)
        for i, t in enumerate(taxis):
            xs = pts[i, ..., 1:]
            w[i] = phase.w_value(t, xs)
            if isinstance(amplitudes, AmplitudeSet):
                phi[i] = amplitudes.phi0_value(t, xs, y=phase.y(t))
            elif callable(amplitudes):
                phi[i] = amplitudes(pts[i])
    else:
        w = phase.value(pts) if isinstance(phase, ModelPhase) else phase(pts)
        w = np.asarray(w, dtype=complex)
        if callable(amplitudes):
            phi = np.asarray(amplitudes(pts), dtype=complex)
        elif amplitudes is None:
            phi = np.ones(grid.dims, dtype=complex)
        else:
            raise WKBError("unsupported amplitude object for this phase")

    # Nyquist check on the oscillatory factor
    ph = tau * w.real
    for axis in range(n):
        if np.max(np.abs(np.diff(ph, axis=axis))) >= np.pi:
            raise WKBError(
                "grid too coarse: tau * Re w varies by more than pi between "
                f"neighbouring samples along axis {axis}"
            )

    if cutoff:
        box = support_box
        if box is None and isinstance(amplitudes, AmplitudeSet):
            box = amplitudes.support_box
        if box is None:
            box = grid.box
        chi = _box_cutoff(pts, box)
    else:
        chi = 1.0

    imw = w.imag
    mask = np.asarray(chi) > 0 if cutoff else np.ones(grid.dims, bool)
    if np.any(imw[mask] < -1e-10):
        raise WKBError("Im w is negative on the support of the amplitude")
    return tau ** (N + n) * np.exp(1j * tau * w) * phi * chi


# ---------------------------------------------------------------------------
# Explicit model operator P = D_1 + i x_1 D_n


def model_w_expr(n: int) -> se.Node:
    if n < 2:
        raise WKBError("model needs dimension >= 2")
    quad = " + ".join(f"x{j}^2" for j in range(1, n)) if n > 1 else "0"
    src = f"x{n} + i*({quad} + (x{n} + i*x1^2/2)^2)/2"
    return se.parse_expression(src, n)


def model_pstar_residual(n: int) -> se.Node:
    """(D_1 - i x_1 D_n) w for the model phase; identically zero."""
    w = model_w_expr(n)
    d1 = se.differentiate(w, ("x", 1))
    dn = se.differentiate(w, ("x", n))
    return se.Const(-1j) * d1 - se.parse_expression("x1", n) * dn


@dataclass(frozen=True)
class ModelPhase:
    """Closed-form phase of the model operator; value() is vectorized."""

    n: int

    @property
    def w_expr(self) -> se.Node:
        return model_w_expr(self.n)

    def value(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        x1 = pts[..., 0]
        xn = pts[..., -1]
        quad = np.sum(pts[..., :-1] ** 2, axis=-1)
        return xn + 0.5j * (quad + (xn + 0.5j * x1**2) ** 2)

    def grad_re(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape)
        x1 = pts[..., 0]
        xn = pts[..., -1]
        out[..., 0] = -x1 * xn
        out[..., -1] = 1.0 - 0.5 * x1**2
        return out


def solve_ck_amplitude(initial: Dict[tuple, complex], order: int, n: int) -> dict:
    """Power-series solution of D_1 phi - i x_1 D_n phi = 0 with
    phi(0, x') given by the monomial coefficients ``initial`` (multi-indices
    of length n-1).  Recursion: (k+2) phi_{k+2} = i d_n phi_k."""
    if order < 0:
        raise WKBError("order must be non-negative")
    m = n - 1
    layers: List[dict] = [dict(initial), {}]
    for k in range(0, order - 1):
        prev = layers[k]
        layers.append(_p_scale(_p_diff(prev, m - 1), 1j / (k + 2)))
    phi: dict = {}
    for k, layer in enumerate(layers[: order + 1]):
        for key, val in layer.items():
            if val != 0:
                phi[(k,) + tuple(key)] = val
    return phi


def ck_residual(phi: dict, n: int) -> float:
    """Max coefficient of d_1 phi - i x_1 d_n phi below the x_1 truncation."""
    if not phi:
        return 0.0
    top = max(k[0] for k in phi)
    res = _p_diff(phi, 0)
    shifted: dict = {}
    for k, v in _p_diff(phi, n - 1).items():
        shifted[_add_e(k, 0)] = shifted.get(_add_e(k, 0), 0.0) - 1j * v
    res = _p_add(res, shifted)
    worst = 0.0
    for k, v in res.items():
        if k[0] < top:
            worst = max(worst, abs(v))
    return worst


@dataclass
class ApproxSolution:
    phase: object
    amplitudes: object
    tau: float
    N: int
    grid: GridSpec
    values: np.ndarray

    def save(self, path: str) -> None:
        write_grid(path, self.grid, self.values)


def model_solution(
    tau: float,
    n: int,
    radius: float,
    N: int = 0,
    order: int = 6,
    initial: Optional[Dict[tuple, complex]] = None,
    points_per_axis: int = 33,
) -> ApproxSolution:
    """Explicit approximate solution for P = D_1 + i x_1 D_n on a ball."""
    if n < 2:
        raise WKBError("model needs dimension >= 2")
    phase = ModelPhase(n)
    grid = GridSpec(
        box=tuple((-radius, radius) for _ in range(n)),
        dims=(points_per_axis,) * n,
    )
    pts = grid.mesh()
    r2 = np.sum(pts**2, axis=-1)
    ball = r2 <= radius**2
    margin = phase.value(pts).imag - r2 / 4.0
    if np.min(margin[ball]) < 0:
        raise WKBError(
            "support radius too large for the Im w >= |x|^2/4 bound; "
            "shrink the radius"
        )
    if np.min(np.linalg.norm(phase.grad_re(pts), axis=-1)[ball]) <= 0:
        raise WKBError("d Re w vanishes inside the support ball")
    if initial is None:
        initial = {(0,) * (n - 1): 1.0}
    phi_poly = solve_ck_amplitude(initial, order, n)

    def phi_func(p):
        return poly_evaluate(phi_poly, p)

    def chi_phi(p):
        rr = np.sqrt(np.sum(np.asarray(p) ** 2, axis=-1))
        return phi_func(p) * _plateau(rr / radius)

    values = assemble_v(phase, chi_phi, tau, N, grid, cutoff=False)
    return ApproxSolution(
        phase=phase,
        amplitudes=phi_poly,
        tau=tau,
        N=N,
        grid=grid,
        values=values,
    )


# ---------------------------------------------------------------------------
# Binary grid serialization


def write_grid(path: str, grid: GridSpec, values: np.ndarray) -> None:
    """Layout: int32 n, int32 dims[n], float64 box[2n], then interleaved
    re/im float64 samples, all little-endian, C order."""
    values = np.asarray(values, dtype=complex)
    if tuple(values.shape) != tuple(grid.dims):
        raise WKBError("values shape does not match grid dims")
    n = grid.rank
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", n))
        fh.write(struct.pack(f"<{n}i", *grid.dims))
        flat_box = [v for pair in grid.box for v in pair]
        fh.write(struct.pack(f"<{2 * n}d", *flat_box))
        inter = np.empty(values.size * 2, dtype="<f8")
        inter[0::2] = values.real.ravel()
        inter[1::2] = values.imag.ravel()
        fh.write(inter.tobytes())


def read_grid(path: str) -> Tuple[GridSpec, np.ndarray]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<i", fh.read(4))
        dims = struct.unpack(f"<{n}i", fh.read(4 * n))
        flat_box = struct.unpack(f"<{2 * n}d", fh.read(16 * n))
        box = tuple((flat_box[2 * k], flat_box[2 * k + 1]) for k in range(n))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    values = (payload[0::2] + 1j * payload[1::2]).reshape(dims)
    return GridSpec(box=box, dims=tuple(dims)), values
