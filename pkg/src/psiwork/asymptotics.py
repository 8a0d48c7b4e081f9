"""Oscillatory pairing integrals and their asymptotics.

This module evaluates the pairing integral

    I_tau = tau^n * integral H(tau*t, tau*x) (R* v_tau)(t, x) dt dx

for an approximate null solution v_tau = e^{i tau w} phi built by the wkb
module, together with the machinery needed to interpret the result:

* ``sobolev_norm`` -- periodized discrete-Fourier realization of the H_(s)
  norm for compactly supported grid functions.
* ``apply_symbol_gaussian`` -- the action of a pseudo-differential operator
  q(x, D') on a Gaussian wave packet phi e^{i tau w}, truncated to

      sum_{|alpha| < k} q^{(alpha)}(x, tau*eta) (D - tau*eta)^alpha
          (phi e^{i tau w}) / alpha!

  which is accurate to O(tau^{mu - k/2}) when Im w >= 0 vanishes only at a
  point where w' = eta is real and Im w'' is positive definite.
* ``lambda_profile`` -- the amplitude profiles lambda_J collecting all terms
  of tau-homogeneity -J in the expansion of R*(phi e^{i tau w}):

      lambda_J = sum_{j+|alpha|+l=J} q_{-j}^{(alpha)}(t, x, w_x') D^alpha phi_l

  with q_{-j}^{(alpha)}(., w_x') realized by a finite Taylor expansion at a
  real covector.
* ``compute_I_tau`` -- tensor Gauss-Legendre quadrature for I_tau in the
  scaled variables (tau*t, tau*x) -> (t, x), which make the probe window
  tau-independent.
* ``predicted_limit`` -- the closed-form limit of tau^m I_tau assembled from
  the jets of the adjoint symbol terms at the base point:

      lim tau^m I_tau = integral H(t,x) * weight(t,x) *
          sum_{j+k+|alpha|+|beta0|=m} t^k x^alpha
              (d_t^k d_x^alpha d_xi^beta0 q_{-j})(Gamma) / (k! alpha!) dt dx

  where weight = e^{i x_n} on the straightened geometry and
  e^{i(t w0'(0) + <x, eta(0)>)} along a general curve, with the factor
  x^alpha replaced by (x + y'(0) t)^alpha in the latter case.
* ``decay_fit`` -- log-log slope fits and Richardson extrapolation of
  tau^m I_tau over a geometric tau grid, yielding a match/decay/inconclusive
  verdict against a predicted limit.
* ``stationary_phase`` -- the leading term e^{i lam f(x0)} A0 u(x0)
  lam^{-d/2} with A0 = (2 pi)^{d/2} e^{i pi sgn f''(x0) / 4}
  / |det f''(x0)|^{1/2}.
* ``verify_norm_estimates`` -- measured Sobolev-norm decay slopes of a
  solution family against cited exponents.

Conventions.  Grid coordinates are (t, x_1, ..., x_{n-1}); symbols act as
operators in the x variables only (t is a parameter), so all xi
multi-indices have a vanishing first slot.  Taylor expansions use the
standard multi-index normalization (division by the product factorial
alpha!), which is equal, term by term, to summing over ordered index
sequences with 1/|alpha|! weights.  D = -i d.  The tau^{N+n} prefactor
stored in an ApproxSolution is deliberately dropped inside compute_I_tau:
the pairing is evaluated in the scale-invariant normalization
v = e^{i tau w} phi, so that a first nonvanishing coefficient of total
order m produces I_tau ~ tau^{-m}.
"""

from __future__ import annotations

import cmath
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import jet as jt
from . import symbol as sy
from . import symexpr as se
from . import wkb


class AsymptoticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Small helpers


def _mfact(alpha: Sequence[int]) -> int:
    out = 1
    for a in alpha:
        out *= math.factorial(a)
    return out


def _coords(pts: np.ndarray, n: int) -> List[np.ndarray]:
    return [pts[..., j] for j in range(n)]


def _x_slots(n: int) -> Tuple[int, ...]:
    """0-indexed slots of the x variables (everything but the first axis t)."""
    return tuple(range(1, n))


def _poly_to_expr(poly: Dict[tuple, complex], n: int) -> se.Node:
    acc: se.Node = se.ZERO
    for key, val in sorted(poly.items()):
        if val == 0:
            continue
        term: se.Node = se.Const(complex(val))
        for j, k in enumerate(key):
            if k:
                term = term * se.Var("x", j + 1) ** k
        acc = acc + term
    return acc


def map_over_taus(fn: Callable, taus: Sequence[float], workers: Optional[int] = None):
    """Apply ``fn`` to each tau; evaluations are independent and read-only."""
    if workers is None or workers <= 1:
        return [fn(t) for t in taus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, taus))


def gauss_legendre(box: Sequence[Tuple[float, float]], points_per_axis: int):
    """Tensor Gauss-Legendre nodes (K, n) and weights (K,) over a box."""
    nodes_1d = []
    weights_1d = []
    for lo, hi in box:
        u, w = np.polynomial.legendre.leggauss(points_per_axis)
        nodes_1d.append(0.5 * (hi - lo) * u + 0.5 * (hi + lo))
        weights_1d.append(0.5 * (hi - lo) * w)
    mesh = np.meshgrid(*nodes_1d, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    wt = np.ones(pts.shape[0])
    for axis, w in enumerate(weights_1d):
        shape = [1] * len(box)
        shape[axis] = -1
        wt = wt * np.broadcast_to(
            w.reshape(shape), [len(v) for v in nodes_1d]
        ).ravel()
    return pts, wt


# ---------------------------------------------------------------------------
# Probe window


@dataclass(frozen=True)
class ProbeWindow:
    """Compactly supported smooth probe H on R^n.

    H(u) = (product_j u_j^{moments_j}) * smooth plateau cutoff of ``box``,
    where the cutoff is 1 on the inner half of the box and glued to 0 at the
    edges with exp(-1/s) factors, so all derivatives vanish at the edges.
    A ``profile`` callable replaces the plateau-based bump entirely (used
    with closed-form oracles such as Gaussian profiles; the compact-support
    invariant is then the caller's responsibility).
    """

    box: Tuple[Tuple[float, float], ...]
    t0: float = 0.0
    N: int = 2
    moments: Optional[Tuple[int, ...]] = None
    profile: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.moments is not None and len(self.moments) != len(self.box):
            raise AsymptoticsError("moments length does not match box rank")
        if self.N < 0:
            raise AsymptoticsError("N must be a non-negative integer")

    @property
    def dimension(self) -> int:
        return len(self.box)

    def value(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        if self.profile is not None:
            out = np.asarray(self.profile(pts), dtype=complex)
        else:
            out = wkb._box_cutoff(pts, self.box).astype(complex)
        if self.moments is not None:
            for j, mj in enumerate(self.moments):
                if mj:
                    out = out * pts[..., j] ** mj
        return out


# ---------------------------------------------------------------------------
# Sobolev norms


def sobolev_norm(g: np.ndarray, s: float, box: Sequence[Tuple[float, float]]) -> float:
    """Periodized H_(s) norm of a grid function supported inside ``box``.

    The samples are treated as one period of a torus function; the norm is
    (sum (1+|xi|^2)^s |g_hat(xi)|^2 * cell_volume / n_points)^{1/2} with
    xi the discrete Fourier frequencies.  For s = 0 this is the Riemann-sum
    L^2 norm (Parseval).  The realization approximates the R^n norm for
    smooth g supported well inside the box; boundary effects are not
    bounded, only made negligible by padding.
    """
    g = np.asarray(g, dtype=complex)
    if g.ndim != len(box):
        raise AsymptoticsError("grid rank does not match box rank")
    peak = float(np.max(np.abs(g))) if g.size else 0.0
    if peak > 0:
        for axis in range(g.ndim):
            for edge in (0, -1):
                face = np.take(g, edge, axis=axis)
                if np.max(np.abs(face)) >= 1e-12 * peak:
                    raise AsymptoticsError(
                        "grid function is not supported inside the box "
                        f"(nonzero values on the edge of axis {axis})"
                    )
    dims = g.shape
    spacings = [(hi - lo) / (d - 1) for (lo, hi), d in zip(box, dims)]
    ghat = np.fft.fftn(g)
    xi2 = np.zeros(dims)
    for axis, (d, h) in enumerate(zip(dims, spacings)):
        freq = 2.0 * np.pi * np.fft.fftfreq(d, h)
        shape = [1] * len(dims)
        shape[axis] = -1
        xi2 = xi2 + freq.reshape(shape) ** 2
    cell = math.prod(spacings)
    norm2 = np.sum((1.0 + xi2) ** s * np.abs(ghat) ** 2) * cell / math.prod(dims)
    return float(np.sqrt(norm2))


def zero_pad(
    box: Sequence[Tuple[float, float]], values: np.ndarray, cells: int
) -> Tuple[Tuple[Tuple[float, float], ...], np.ndarray]:
    """Embed a grid function into a larger box by padding with exact zeros
    (``cells`` grid cells per side, keeping the spacing).  Useful before
    ``sobolev_norm`` when roundoff-level values touch the original edge."""
    values = np.asarray(values)
    if values.ndim != len(box):
        raise AsymptoticsError("grid rank does not match box rank")
    new_box = []
    for (lo, hi), d in zip(box, values.shape):
        h = (hi - lo) / (d - 1)
        new_box.append((lo - cells * h, hi + cells * h))
    return tuple(new_box), np.pad(values, cells)


def spectral_derivative(values: np.ndarray, grid: wkb.GridSpec, axis: int) -> np.ndarray:
    """FFT partial derivative along one grid axis (periodized)."""
    (lo, hi) = grid.box[axis]
    d = grid.dims[axis]
    h = (hi - lo) / (d - 1)
    freq = 2.0 * np.pi * np.fft.fftfreq(d, h)
    shape = [1] * len(grid.dims)
    shape[axis] = -1
    vhat = np.fft.fft(values, axis=axis)
    return np.fft.ifft(1j * freq.reshape(shape) * vhat, axis=axis)


def model_pstar_apply(grid: wkb.GridSpec, values: np.ndarray) -> np.ndarray:
    """Apply P* = D_1 - i x_1 D_n = -i d_1 - x_1 d_n on the grid (spectral)."""
    pts = grid.mesh()
    d1 = spectral_derivative(values, grid, 0)
    dn = spectral_derivative(values, grid, grid.rank - 1)
    return -1j * d1 - pts[..., 0] * dn


# ---------------------------------------------------------------------------
# Symbol action on Gaussian wave packets


def _w_expr_of(phase, n: int) -> se.Node:
    if isinstance(phase, se.Node):
        return phase
    if hasattr(phase, "w_expr"):
        return phase.w_expr
    raise AsymptoticsError("phase must be an expression or expose w_expr")


def _dminus_chain(
    phi_expr: se.Node, w_expr: se.Node, tau: float, eta: Sequence[float], k: int, n: int
) -> Dict[tuple, se.Node]:
    """Expressions M_alpha with (D - tau*eta)^alpha (phi e^{i tau w}) =
    e^{i tau w} M_alpha, for |alpha| < k over the x slots."""
    grads = [se.differentiate(w_expr, ("x", j + 1)) for j in range(n)]
    out: Dict[tuple, se.Node] = {(0,) * n: phi_expr}
    slots = _x_slots(n)
    for deg in range(1, k):
        for alpha in sy._alphas(n, deg, slots):
            j = next(i for i in slots if alpha[i] > 0)
            parent = tuple(a - (1 if i == j else 0) for i, a in enumerate(alpha))
            mp = out[parent]
            out[alpha] = se.Const(-1j) * se.differentiate(mp, ("x", j + 1)) + se.Const(
                tau
            ) * (grads[j] - se.Const(eta[j])) * mp
    return out


def _symbol_xi_derivative(q, alpha: tuple) -> se.Node:
    """d_xi^alpha of the total symbol (sum of the stored terms)."""
    acc: se.Node = se.ZERO
    for term in q.terms:
        acc = acc + sy._dxi_pow(term.expr, alpha)
    return acc


def _check_packet_phase(w_vals: np.ndarray, grid: wkb.GridSpec) -> None:
    imw = w_vals.imag
    scale = float(np.max(np.abs(w_vals))) + 1.0
    if np.min(imw) < -1e-10 * scale:
        raise AsymptoticsError("Im w is negative on the grid")
    n = grid.rank
    spac = [(hi - lo) / (d - 1) for (lo, hi), d in zip(grid.box, grid.dims)]
    # a zero of Im w between grid nodes still reads O(h^2) on the grid
    if np.min(imw) > 10.0 * max(spac) ** 2 * scale:
        return  # strictly positive everywhere: admitted, nothing to check
    idx = np.unravel_index(np.argmin(imw), imw.shape)
    if any(i == 0 or i == d - 1 for i, d in zip(idx, grid.dims)):
        raise AsymptoticsError("minimum of Im w lies on the grid boundary")
    # Second differences of Im w at the interior minimum
    hess = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            if a == b:
                up = list(idx)
                dn = list(idx)
                up[a] += 1
                dn[a] -= 1
                hess[a, a] = (
                    imw[tuple(up)] - 2 * imw[idx] + imw[tuple(dn)]
                ) / spac[a] ** 2
            else:
                pp = list(idx)
                pm = list(idx)
                mp = list(idx)
                mm = list(idx)
                pp[a] += 1
                pp[b] += 1
                pm[a] += 1
                pm[b] -= 1
                mp[a] -= 1
                mp[b] += 1
                mm[a] -= 1
                mm[b] -= 1
                hess[a, b] = (
                    imw[tuple(pp)] - imw[tuple(pm)] - imw[tuple(mp)] + imw[tuple(mm)]
                ) / (4 * spac[a] * spac[b])
    # second differences of a degenerate minimum read O(h^2); require the
    # smallest eigenvalue to clear that discretization floor
    floor = 10.0 * max(spac) ** 2
    if np.min(np.linalg.eigvalsh(0.5 * (hess + hess.T))) <= floor:
        raise AsymptoticsError(
            "Hessian of Im w is not positive definite at its minimum"
        )


def apply_symbol_gaussian(
    q,
    phi,
    w,
    tau: float,
    k: int,
    grid: wkb.GridSpec,
    eta: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Truncated action of q(x, D') on the wave packet phi e^{i tau w}.

    Returns sum_{|alpha|<k} q^{(alpha)}(x, tau*eta) (D - tau*eta)^alpha
    (phi e^{i tau w}) / alpha! sampled on the grid, with alpha ranging over
    the x slots (the first axis t is a parameter).  phi and w are symexpr
    nodes (w may also be a ModelPhase).  eta defaults to the unit covector
    along the last axis.
    """
    n = grid.rank
    w_expr = _w_expr_of(w, n)
    if eta is None:
        eta = [0.0] * (n - 1) + [1.0]
    if k < 1:
        raise AsymptoticsError("expansion count k must be at least 1")
    pts = grid.mesh()
    xs = _coords(pts, n)
    zeros = [0.0] * n
    w_vals = np.asarray(se.evaluate(w_expr, xs, zeros), dtype=complex)
    _check_packet_phase(w_vals, grid)
    chain = _dminus_chain(phi, w_expr, tau, eta, k, n)
    xi_num = [tau * e for e in eta]
    acc = np.zeros(grid.dims, dtype=complex)
    for alpha, m_expr in chain.items():
        q_alpha = _symbol_xi_derivative(q, alpha)
        if q_alpha == se.ZERO:
            continue
        qv = np.asarray(se.evaluate(q_alpha, xs, xi_num), dtype=complex)
        mv = np.asarray(se.evaluate(m_expr, xs, zeros), dtype=complex)
        acc = acc + qv * mv / _mfact(alpha)
    return np.exp(1j * tau * w_vals) * acc


# ---------------------------------------------------------------------------
# lambda_J amplitude profiles


def _taylor_symbol_at(
    q_expr: se.Node,
    xi0: Sequence[float],
    xs: List[np.ndarray],
    delta: List[np.ndarray],
    order: int,
    n: int,
) -> np.ndarray:
    """Taylor realization of q(x, w') at the real covector xi0:
    sum_{|beta|<=order} d_xi^beta q(x, xi0) * (w' - xi0)^beta / beta!."""
    xi_num = list(xi0)
    acc = np.zeros(np.broadcast(*xs).shape, dtype=complex)
    slots = _x_slots(n)
    for deg in range(order + 1):
        for beta in sy._alphas(n, deg, slots):
            node = sy._dxi_pow(q_expr, beta)
            if node == se.ZERO:
                continue
            qv = np.asarray(se.evaluate(node, xs, xi_num), dtype=complex)
            mono = np.ones_like(acc)
            for j in slots:
                if beta[j]:
                    mono = mono * delta[j - 1] ** beta[j]
            acc = acc + qv * mono / _mfact(beta)
    return acc


def lambda_profile(
    rstar,
    phase,
    amplitudes,
    J: int,
    eta: Optional[Sequence[float]] = None,
    taylor_order: int = 4,
) -> Callable[[np.ndarray], np.ndarray]:
    """Profile lambda_J collecting the tau-homogeneity -J terms:

        lambda_J = sum_{j+|alpha|+l=J} q_{-j}^{(alpha)}(t, x, w_x') D^alpha phi_l

    with alpha over the x slots, j >= -top_degree, and q_{-j}^{(alpha)}
    evaluated at the complex gradient w_x' through its Taylor polynomial at
    the real covector eta.  ``amplitudes`` is a monomial-coefficient dict
    (a single phi) or a sequence of dicts (phi_0, phi_1, ...).
    """
    n = rstar.dimension
    w_expr = _w_expr_of(phase, n)
    if eta is None:
        eta = [0.0] * (n - 1) + [1.0]
    phis = [amplitudes] if isinstance(amplitudes, dict) else list(amplitudes)
    grads = [se.differentiate(w_expr, ("x", j + 1)) for j in _x_slots(n)]
    degrees = [t.degree for t in rstar.terms]
    slots = _x_slots(n)

    def profile(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        xs = _coords(pts, n)
        zeros = [0.0] * n
        delta = [
            np.asarray(se.evaluate(g, xs, zeros), dtype=complex) - eta[j]
            for j, g in zip(range(1, n), grads)
        ]
        acc = np.zeros(pts.shape[:-1], dtype=complex)
        for deg in degrees:
            j = -deg
            for l, phi in enumerate(phis):
                rem = J - j - l
                if rem < 0:
                    continue
                for alpha in sy._alphas(n, rem, slots):
                    dphi = dict(phi)
                    for slot in slots:
                        for _ in range(alpha[slot]):
                            dphi = wkb._p_diff(dphi, slot)
                    if not dphi:
                        continue
                    q_alpha = sy._dxi_pow(rstar.term(deg).expr, alpha)
                    if q_alpha == se.ZERO:
                        continue
                    qv = _taylor_symbol_at(q_alpha, eta, xs, delta, taylor_order, n)
                    pv = wkb.poly_evaluate(dphi, pts) * (-1j) ** rem
                    acc = acc + qv * pv
        return acc

    return profile


# ---------------------------------------------------------------------------
# The pairing integral I_tau


def compute_I_tau(
    R,
    v: wkb.ApproxSolution,
    window: ProbeWindow,
    points_per_axis: int = 40,
    k: int = 4,
    rstar=None,
    eta: Optional[Sequence[float]] = None,
    scaled: bool = True,
    check_resolution: bool = False,
) -> complex:
    """Pairing I_tau = tau^n * integral H(tau t, tau x) (R* v)(t, x) dt dx.

    Quadrature runs in the scaled variables (tau t, tau x) -> (t, x), where
    the window is tau-independent: I_tau = integral H(u) (R* v)(u/tau) du.
    R* is adjoint_symbol(R) acting through the truncated wave-packet
    expansion (k terms).  The tau^{N+n} prefactor of v is dropped (see the
    module docstring); the stored phase and amplitude are used directly.
    ``rstar`` overrides the adjoint (test stub).  ``scaled=False`` evaluates
    the same integral by a trapezoid rule in the unscaled variables, as a
    cross-check of the change of variables.
    """
    n = window.dimension
    if v.grid.rank != n:
        raise AsymptoticsError("window rank does not match the solution grid")
    q = rstar if rstar is not None else sy.adjoint_symbol(R, xi1_independent=True)
    if eta is None:
        eta = [0.0] * (n - 1) + [1.0]
    tau = v.tau
    w_expr = _w_expr_of(v.phase, n)
    if not isinstance(v.amplitudes, dict):
        raise AsymptoticsError("compute_I_tau needs a polynomial amplitude")
    phi_expr = _poly_to_expr(v.amplitudes, n)
    radius = min(hi for _, hi in v.grid.box)
    reach = max(abs(lo) for lo, _ in window.box + tuple()) / tau
    reach = max(reach, max(abs(hi) for _, hi in window.box) / tau)
    if reach > 0.5 * radius * 0.999:
        raise AsymptoticsError(
            "window not resolved inside the amplitude plateau; "
            "increase tau or the support radius"
        )

    def integrand_at(x_pts: np.ndarray) -> np.ndarray:
        xs = _coords(x_pts, n)
        zeros = [0.0] * n
        w_vals = np.asarray(se.evaluate(w_expr, xs, zeros), dtype=complex)
        chain = _dminus_chain(phi_expr, w_expr, tau, eta, k, n)
        xi_num = [tau * e for e in eta]
        acc = np.zeros(x_pts.shape[:-1], dtype=complex)
        for alpha, m_expr in chain.items():
            q_alpha = _symbol_xi_derivative(q, alpha)
            if q_alpha == se.ZERO:
                continue
            qv = np.asarray(se.evaluate(q_alpha, xs, xi_num), dtype=complex)
            mv = np.asarray(se.evaluate(m_expr, xs, zeros), dtype=complex)
            acc = acc + qv * mv / _mfact(alpha)
        return np.exp(1j * tau * w_vals) * acc

    def quad(p: int) -> complex:
        if scaled:
            u_pts, wt = gauss_legendre(window.box, p)
            h_vals = window.value(u_pts)
            vals = integrand_at(u_pts / tau)
            return complex(np.sum(wt * h_vals * vals))
        axes = [
            np.linspace(lo / tau, hi / tau, p) for lo, hi in window.box
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        x_pts = np.stack(mesh, axis=-1)
        h_vals = window.value(tau * x_pts)
        vals = h_vals * integrand_at(x_pts)
        for axis in reversed(range(n)):
            vals = np.trapezoid(vals, axes[axis], axis=axis)
        return complex(tau**n * vals)

    result = quad(points_per_axis)
    if check_resolution:
        refined = quad(2 * points_per_axis)
        denom = max(abs(refined), 1e-300)
        if abs(result - refined) / denom > 1e-8:
            raise AsymptoticsError(
                "quadrature not converged: doubling the points changed "
                f"I_tau by {abs(result - refined) / denom:.2e} relative"
            )
    return result


# ---------------------------------------------------------------------------
# Predicted limit of tau^m I_tau


def c_beta_product(hessian: np.ndarray, beta: Sequence[int]) -> Callable:
    """Symmetric-index product c_beta(x) = prod_j (H x)_{beta~_j}, where
    beta~ is the increasing index sequence of the xi multi-index beta and
    H is the (symmetric) x-Hessian of the phase at the base point."""
    hessian = np.asarray(hessian)
    seq: List[int] = []
    for j, b in enumerate(beta):
        seq.extend([j] * b)

    def value(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        hx = x @ hessian.T
        out = np.ones(x.shape[:-1], dtype=complex)
        for j in seq:
            out = out * hx[..., j]
        return out

    return value


def predicted_limit(
    jets: Dict[int, jt.Jet],
    beta0: Sequence[int],
    window: ProbeWindow,
    m: int,
    section: int = 3,
    eta0: Optional[Sequence[float]] = None,
    w0prime0: float = 0.0,
    yprime0: Optional[Sequence[float]] = None,
    g_values: Optional[Dict[tuple, object]] = None,
    points_per_axis: int = 60,
) -> complex:
    """Closed-form limit of tau^m I_tau assembled from symbol jets.

    ``jets`` maps j to the jet of the adjoint term q_{-j} at the base point
    Gamma (x-base (t0, y), xi-base eta).  ``beta0`` is the xi multi-index of
    the amplitude prescription, given over the x slots (length n-1).
    section=3 pairs t^k x^alpha against H * e^{i x_last}; section=4 pairs
    t^k (x + y'(0) t)^alpha against H * e^{i (t w0'(0) + <x, eta(0)>)}.
    ``g_values`` carries the limiting G-slot values indexed by the extra xi
    multi-index beta (over the x slots); the beta = 0 slot is the constant 1
    and values for |beta| > 0 multiply coefficients that drop out of the
    m-th limit under the first-nonvanishing ordering, so perturbing them
    must not change the result.
    """
    if not jets:
        return 0.0 + 0.0j
    n = next(iter(jets.values())).n
    if window.dimension != n:
        raise AsymptoticsError("window rank does not match the jet dimension")
    beta0 = tuple(beta0)
    if len(beta0) == n:
        if beta0[0] != 0:
            raise AsymptoticsError("beta0 must not involve the first xi slot")
        beta0 = beta0[1:]
    if len(beta0) != n - 1:
        raise AsymptoticsError("beta0 must be a xi multi-index over the x slots")
    if g_values is None:
        g_values = {}
    u_pts, wt = gauss_legendre(window.box, points_per_axis)
    h_vals = window.value(u_pts)
    t_vals = u_pts[..., 0]
    x_vals = u_pts[..., 1:]
    if section == 3:
        weight = np.exp(1j * u_pts[..., -1])
        shift = np.zeros_like(x_vals)
    elif section == 4:
        if eta0 is None:
            eta0 = [0.0] * (n - 2) + [1.0]
        weight = np.exp(
            1j * (t_vals * w0prime0 + x_vals @ np.asarray(eta0, dtype=float))
        )
        yp = np.zeros(n - 1) if yprime0 is None else np.asarray(yprime0, float)
        shift = np.outer(t_vals, yp)
    else:
        raise AsymptoticsError("section must be 3 or 4")
    base_pair = wt * h_vals * weight

    def g_factor(beta: tuple) -> np.ndarray:
        if sum(beta) == 0:
            val = g_values.get(beta, 1.0)
        else:
            val = g_values.get(beta, 0.0)
        if callable(val):
            return np.asarray(val(u_pts), dtype=complex)
        return np.full(u_pts.shape[0], complex(val))

    total = 0.0 + 0.0j
    xa = x_vals + shift
    for j, jet in jets.items():
        if j < -1:
            raise AsymptoticsError("j must be at least -1")
        for kk in range(0, m - j - sum(beta0) + 1):
            rem = m - j - kk - sum(beta0)
            if rem < 0:
                continue
            for extra in range(0, rem + 1):
                a_tot = rem - extra
                for alpha in sy._alphas(n - 1, a_tot):
                    for beta in sy._alphas(n - 1, extra):
                        gfac = g_factor(beta)
                        if extra > 0 and not np.any(gfac):
                            continue
                        full_alpha = (kk,) + alpha
                        full_beta = (0,) + tuple(
                            b + b0 for b, b0 in zip(beta, beta0)
                        )
                        try:
                            coeff = jet.get(full_alpha, full_beta)
                        except jt.JetError as exc:
                            raise AsymptoticsError(
                                "jet depth insufficient for the requested "
                                f"order m={m}"
                            ) from exc
                        if coeff == 0:
                            continue
                        mono = t_vals**kk
                        for jx in range(n - 1):
                            if alpha[jx]:
                                mono = mono * xa[..., jx] ** alpha[jx]
                        pairing = complex(np.sum(base_pair * gfac * mono))
                        total += (
                            coeff
                            * pairing
                            / (math.factorial(kk) * _mfact(alpha))
                        )
    return total


# ---------------------------------------------------------------------------
# Decay fits and reports


@dataclass
class AsymptoticReport:
    tau_grid: Tuple[float, ...]
    I_values: Tuple[complex, ...]
    fitted_slope: float
    r_squared: float
    extrapolated_limit: complex
    predicted_limit: Optional[complex]
    m: int
    verdict: str
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        taus = self.tau_grid
        if any(b <= a for a, b in zip(taus, taus[1:])):
            raise AsymptoticsError("tau grid must be strictly increasing")

    @property
    def exit_code(self) -> int:
        return {"match": 0, "decay": 0, "inconclusive": 3}[self.verdict]

    def to_json(self) -> str:
        def cpx(z):
            return None if z is None else [z.real, z.imag]

        return json.dumps(
            {
                "tau_grid": list(self.tau_grid),
                "I_values": [cpx(complex(z)) for z in self.I_values],
                "fitted_slope": self.fitted_slope,
                "r_squared": self.r_squared,
                "extrapolated_limit": cpx(complex(self.extrapolated_limit)),
                "predicted_limit": cpx(
                    None if self.predicted_limit is None else complex(self.predicted_limit)
                ),
                "m": self.m,
                "verdict": self.verdict,
                "notes": list(self.notes),
            },
            indent=2,
            sort_keys=True,
        )

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tau", "abs_I", "re_I", "im_I"])
            for tau, val in zip(self.tau_grid, self.I_values):
                val = complex(val)
                writer.writerow([tau, abs(val), val.real, val.imag])


def _richardson(taus: np.ndarray, values: np.ndarray, levels: int = 3) -> complex:
    """Extrapolate a sequence a(tau) = L + c1/tau + c2/tau^2 + ... sampled
    on a geometric tau grid."""
    vals = values.astype(complex).copy()
    ts = taus.astype(float).copy()
    ratio = ts[1] / ts[0]
    for level in range(1, min(levels, len(vals) - 1) + 1):
        factor = ratio**level
        vals = (factor * vals[1:] - vals[:-1]) / (factor - 1.0)
        ts = ts[1:]
    return complex(vals[-1])


def decay_fit(
    tau_grid: Sequence[float],
    I_values: Sequence[complex],
    m: int,
    predicted: Optional[complex] = None,
    kappa: Optional[float] = None,
) -> AsymptoticReport:
    """Log-log slope fit plus Richardson extrapolation of tau^m I_tau.

    Verdicts: ``match`` when a predicted limit is supplied and the
    extrapolated limit agrees within 5 percent relative; ``decay`` when the
    fitted slope is at most -(m + 0.8) (or -(kappa + 0.8) when kappa is
    given); ``inconclusive`` otherwise (a low R^2 is flagged in notes).
    """
    taus = np.asarray(tau_grid, dtype=float)
    vals = np.asarray(I_values, dtype=complex)
    if taus.size < 5:
        raise AsymptoticsError("decay fit needs at least 5 tau points")
    if taus.size != vals.size:
        raise AsymptoticsError("tau grid and values length mismatch")
    mags = np.abs(vals)
    if np.any(mags <= 0.0):
        raise AsymptoticsError("degenerate fit: zero magnitudes in the sequence")
    logt = np.log(taus)
    logv = np.log(mags)
    slope, intercept = np.polyfit(logt, logv, 1)
    fitted = slope * logt + intercept
    ss_res = float(np.sum((logv - fitted) ** 2))
    ss_tot = float(np.sum((logv - np.mean(logv)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    extrapolated = _richardson(taus, taus**m * vals)
    notes: List[str] = []
    threshold = (kappa if kappa is not None else m) + 0.8
    if predicted is not None and abs(predicted) > 0 and (
        abs(extrapolated - predicted) / abs(predicted) < 0.05
    ):
        verdict = "match"
    elif slope <= -threshold:
        verdict = "decay"
    else:
        verdict = "inconclusive"
        if r2 < 0.9:
            notes.append(f"low R^2 ({r2:.3f}): no clean power law")
    return AsymptoticReport(
        tau_grid=tuple(float(t) for t in taus),
        I_values=tuple(complex(z) for z in vals),
        fitted_slope=float(slope),
        r_squared=float(r2),
        extrapolated_limit=extrapolated,
        predicted_limit=None if predicted is None else complex(predicted),
        m=int(m),
        verdict=verdict,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# Stationary phase primitive


def _fd_gradient(fn: Callable, x0: np.ndarray, h: float) -> np.ndarray:
    d = len(x0)
    out = np.empty(d, dtype=complex)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        out[j] = (fn(x0 + e) - fn(x0 - e)) / (2 * h)
    return out


def _fd_hessian(fn: Callable, x0: np.ndarray, h: float) -> np.ndarray:
    d = len(x0)
    out = np.empty((d, d), dtype=complex)
    f0 = fn(x0)
    for a in range(d):
        ea = np.zeros(d)
        ea[a] = h
        out[a, a] = (fn(x0 + ea) - 2 * f0 + fn(x0 - ea)) / h**2
        for b in range(a + 1, d):
            eb = np.zeros(d)
            eb[b] = h
            out[a, b] = out[b, a] = (
                fn(x0 + ea + eb) - fn(x0 + ea - eb) - fn(x0 - ea + eb) + fn(x0 - ea - eb)
            ) / (4 * h**2)
    return out


def stationary_phase(phi_tilde, u, lam: float, x0: Sequence[float]) -> complex:
    """Leading stationary-phase term of integral e^{i lam f(x)} u(x) dx in
    dimension d = len(x0):

        e^{i lam f(x0)} * A0 * u(x0) * lam^{-d/2},
        A0 = (2 pi)^{d/2} e^{i pi sgn f''(x0) / 4} / |det f''(x0)|^{1/2},

    with error O(lam^{-d/2-1}) controlled by sup |d^alpha u|, |alpha| <=
    d + 3.  ``phi_tilde`` and ``u`` are symexpr nodes in x1..xd or plain
    callables on points.
    """
    x0 = np.asarray(x0, dtype=float)
    d = len(x0)
    if isinstance(phi_tilde, se.Node):
        zeros = [0.0] * d

        def f_at(x):
            return complex(se.evaluate(phi_tilde, list(x), zeros))

        grad = np.array(
            [
                complex(se.evaluate(se.differentiate(phi_tilde, ("x", j + 1)), list(x0), zeros))
                for j in range(d)
            ]
        )
        hess = np.array(
            [
                [
                    complex(
                        se.evaluate(
                            se.differentiate(
                                se.differentiate(phi_tilde, ("x", a + 1)), ("x", b + 1)
                            ),
                            list(x0),
                            zeros,
                        )
                    )
                    for b in range(d)
                ]
                for a in range(d)
            ]
        )
        f0 = f_at(x0)
    else:
        h = 1e-4 * (1.0 + float(np.max(np.abs(x0))))
        grad = _fd_gradient(phi_tilde, x0, h)
        hess = _fd_hessian(phi_tilde, x0, h)
        f0 = complex(phi_tilde(x0))
    if np.max(np.abs(grad.imag)) > 1e-8 or np.max(np.abs(hess.imag)) > 1e-6:
        raise AsymptoticsError("phase must be real-valued")
    if np.max(np.abs(grad.real)) > 1e-6:
        raise AsymptoticsError("x0 is not a critical point of the phase")
    hr = 0.5 * (hess.real + hess.real.T)
    det = float(np.linalg.det(hr))
    if abs(det) < 1e-10:
        raise AsymptoticsError("degenerate Hessian at the critical point")
    eigs = np.linalg.eigvalsh(hr)
    sgn = int(np.sum(eigs > 0) - np.sum(eigs < 0))
    a0 = (2.0 * math.pi) ** (d / 2.0) * cmath.exp(1j * math.pi * sgn / 4.0) / math.sqrt(
        abs(det)
    )
    if isinstance(u, se.Node):
        u0 = complex(se.evaluate(u, list(x0), [0.0] * d))
    else:
        u0 = complex(u(x0))
    return cmath.exp(1j * lam * f0.real) * a0 * u0 * lam ** (-d / 2.0)


# ---------------------------------------------------------------------------
# Norm-estimate verification


def verify_norm_estimates(
    taus: Sequence[float],
    v_builder: Callable[[float], Tuple[Sequence[Tuple[float, float]], np.ndarray]],
    m_list: Sequence[int],
    cited: Optional[Dict[int, float]] = None,
    pstar_builder: Optional[Callable[[float], Tuple[Sequence[Tuple[float, float]], np.ndarray]]] = None,
    k_list: Optional[Sequence[float]] = None,
    pstar_s: float = 1.0,
    workers: Optional[int] = None,
) -> dict:
    """Fit Sobolev-norm decay slopes of a solution family against cited
    exponents.

    ``v_builder(tau)`` returns (box, values) for the solution at tau in the
    normalization whose cited bound is checked; the default citation for
    each m in ``m_list`` is ||v_tau||_(-m) <= C tau^{-m}, i.e. slope -m.
    A measured slope passes when it is at most cited + 0.2.  When
    ``pstar_builder`` is given, the (pstar_s) norms of P* v_tau are computed
    and, for each k in ``k_list``, the sequence tau^k * norm is checked to
    be decreasing along the grid.
    """
    taus = [float(t) for t in taus]
    if len(taus) < 3:
        raise AsymptoticsError("need at least 3 tau points to fit slopes")
    logt = np.log(np.asarray(taus))
    if cited is None:
        cited = {m: -float(m) for m in m_list}
    fields = map_over_taus(v_builder, taus, workers)
    report: dict = {"taus": taus, "m_slopes": {}, "m_cited": {}, "m_pass": {}}
    for m in m_list:
        norms = np.array([sobolev_norm(vals, -m, box) for box, vals in fields])
        if np.any(norms <= 0):
            raise AsymptoticsError("vanishing norms: grid resolution failure")
        slope = float(np.polyfit(logt, np.log(norms), 1)[0])
        report["m_slopes"][m] = slope
        report["m_cited"][m] = cited[m]
        report["m_pass"][m] = slope <= cited[m] + 0.2
    if pstar_builder is not None:
        pfields = map_over_taus(pstar_builder, taus, workers)
        pnorms = np.array([sobolev_norm(vals, pstar_s, box) for box, vals in pfields])
        report["pstar_norms"] = pnorms.tolist()
        report["pstar_decreasing"] = {}
        for k in k_list or ():
            seq = np.asarray(taus) ** k * pnorms
            report["pstar_decreasing"][k] = bool(np.all(np.diff(seq) < 0))
    return report
