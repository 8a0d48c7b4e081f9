"""Bicharacteristic flows, sign changes and minimal intervals.

The real part of the symbol drives a Hamilton flow on T*(R^n); the
imaginary part is examined along those curves.  All minimality estimators
assume the declared normal form Re p = xi1 with Im p independent of xi1,
so a bicharacteristic is a straight slice [a,b] x {w} with w the frozen
transverse data (x2..xn, xi).  Sign evaluation runs in extended precision
(symexpr.evaluate_real) so the flat fixtures keep a usable sign far into
their tails; interval endpoints are still only resolvable to roughly 1e-2
there, which the reports carry as a one-sided estimate marker.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import RK45
from scipy.interpolate import CubicHermiteSpline

from . import symexpr as se

__all__ = [
    "BicharError",
    "Bicharacteristic",
    "MinimalityReport",
    "StrongInterval",
    "OffsetSampler",
    "RhoResult",
    "OneDimResult",
    "normal_form_slice",
    "integrate_bicharacteristic",
    "detect_sign_change",
    "strong_sign_change",
    "estimate_L",
    "find_minimal_interval",
    "rho_minimality",
    "approximating_sequence",
    "check_one_dim_bichar",
    "cross_section_grid",
]

SIGN_TOL = 1e-9        # |Im p| below this counts as zero for detect_sign_change
BISECT_TOL = 1e-8      # bisection refinement tolerance in the t parameter
PROJECT_TOL = 1e-9     # |Re p| drift bound restored after each accepted step
SAMPLE_TOL = 1e-7      # |Re p| invariant along stored samples
FLAT_CHECK_TOL = 1e-6  # transverse-derivative vanishing bound on the interval


class BicharError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Curves


@dataclass
class Bicharacteristic:
    """A sampled integral curve of H_{Re p}, or a straight normal-form slice.

    states rows are (x(t), xi(t)) concatenated.  For a normal-form slice the
    transverse label w = (x_tail, xi) is stored and state() is exact.
    """

    ts: np.ndarray
    states: np.ndarray
    n: int
    w: Optional[Dict[str, Tuple[float, ...]]] = None
    spline: Optional[CubicHermiteSpline] = None

    def __post_init__(self):
        self.ts = np.asarray(self.ts, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.ts.ndim != 1 or len(self.ts) < 2:
            raise BicharError("need at least two samples")
        if np.any(np.diff(self.ts) <= 0):
            raise BicharError("sample times must be strictly increasing")
        if self.states.shape != (len(self.ts), 2 * self.n):
            raise BicharError("state array shape mismatch")

    @property
    def interval(self) -> Tuple[float, float]:
        return float(self.ts[0]), float(self.ts[-1])

    @property
    def length(self) -> float:
        return float(self.ts[-1] - self.ts[0])

    @property
    def is_slice(self) -> bool:
        return self.w is not None

    def state(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        if self.w is not None:
            x = np.empty(self.n)
            x[0] = t
            x[1:] = self.w["x_tail"]
            return x, np.asarray(self.w["xi"], dtype=float)
        if self.spline is not None:
            z = self.spline(t)
        else:
            z = np.array(
                [np.interp(t, self.ts, self.states[:, k])
                 for k in range(2 * self.n)]
            )
        return z[: self.n], z[self.n:]

    def to_json(self) -> str:
        payload = {
            "n": self.n,
            "ts": self.ts.tolist(),
            "states": self.states.tolist(),
            "w": None if self.w is None else
                 {k: list(v) for k, v in self.w.items()},
        }
        return json.dumps(payload)

    @staticmethod
    def from_json(text: str) -> "Bicharacteristic":
        d = json.loads(text)
        w = d["w"]
        if w is not None:
            w = {k: tuple(v) for k, v in w.items()}
        return Bicharacteristic(
            np.asarray(d["ts"]), np.asarray(d["states"]), d["n"], w
        )

    def to_csv(self, path) -> None:
        header = "t," + ",".join(
            [f"x{k+1}" for k in range(self.n)]
            + [f"xi{k+1}" for k in range(self.n)]
        )
        np.savetxt(
            path,
            np.column_stack([self.ts, self.states]),
            delimiter=",",
            header=header,
            comments="",
        )


def normal_form_slice(a, b, x_tail, xi, samples: int = 65) -> Bicharacteristic:
    """The straight bicharacteristic x1 = t of Re p = xi1 at frozen w."""
    x_tail = tuple(float(v) for v in x_tail)
    xi = tuple(float(v) for v in xi)
    n = len(x_tail) + 1
    if len(xi) != n:
        raise BicharError("xi dimension mismatch")
    if abs(xi[0]) > SAMPLE_TOL:
        raise BicharError("normal-form slice needs xi1 = 0 (characteristic)")
    ts = np.linspace(a, b, samples)
    states = np.empty((samples, 2 * n))
    states[:, 0] = ts
    states[:, 1:n] = x_tail
    states[:, n:] = xi
    return Bicharacteristic(ts, states, n, w={"x_tail": x_tail, "xi": xi})


def integrate_bicharacteristic(
    p_re: se.Node,
    start,
    t_span,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    max_step: float = np.inf,
    box: float = 50.0,
) -> Bicharacteristic:
    """Adaptive RK integration of xdot = d_xi Re p, xidot = -d_x Re p.

    After each accepted step the state is re-projected onto {Re p = 0} by a
    Newton correction along the gradient until |Re p| < 1e-9.
    """
    x0 = np.asarray(start[0], dtype=float)
    xi0 = np.asarray(start[1], dtype=float)
    n = len(x0)
    dxs = [se.differentiate(p_re, ("x", k + 1)) for k in range(n)]
    dxis = [se.differentiate(p_re, ("xi", k + 1)) for k in range(n)]

    def value(z):
        return complex(se.evaluate(p_re, z[:n], z[n:])).real

    def gradient(z):
        gx = [complex(se.evaluate(d, z[:n], z[n:])).real for d in dxs]
        gxi = [complex(se.evaluate(d, z[:n], z[n:])).real for d in dxis]
        return np.array(gx + gxi)

    def rhs(t, z):
        g = gradient(z)
        return np.concatenate([g[n:], -g[:n]])

    def project(z):
        for _ in range(50):
            v = value(z)
            if abs(v) <= PROJECT_TOL:
                return z
            g = gradient(z)
            gg = float(np.dot(g, g))
            if gg < 1e-20:
                break
            z = z - v * g / gg
        raise BicharError("projection onto the characteristic set failed")

    z0 = np.concatenate([x0, xi0])
    if abs(value(z0)) > SAMPLE_TOL:
        raise BicharError("start point is not characteristic for Re p")
    if np.linalg.norm(gradient(z0)) < 1e-10:
        raise BicharError("dp vanishes at the start point")
    z0 = project(z0)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise BicharError("t_span must be increasing")
    solver = RK45(rhs, t0, z0, t1, rtol=rtol, atol=atol, max_step=max_step)
    ts = [t0]
    zs = [z0]
    dzs = [rhs(t0, z0)]
    while solver.status == "running":
        msg = solver.step()
        if solver.status == "failed":
            raise BicharError(f"integrator step underflow: {msg}")
        z = project(solver.y.copy())
        solver.y = z
        if np.max(np.abs(z)) > box:
            raise BicharError("flow left the chart box")
        ts.append(solver.t)
        zs.append(z)
        dzs.append(rhs(solver.t, z))
    ts = np.asarray(ts)
    zs = np.asarray(zs)
    spline = CubicHermiteSpline(ts, zs, np.asarray(dzs), axis=0)
    return Bicharacteristic(ts, zs, n, spline=spline)


# ---------------------------------------------------------------------------
# Sign machinery


def _profile(im_p: se.Node, gamma: Bicharacteristic) -> Callable:
    """t -> Im p(gamma(t)) in extended precision; accepts scalar or array t."""
    if gamma.w is not None:
        x_tail = gamma.w["x_tail"]
        xi = gamma.w["xi"]

        def g(t):
            x = [t] + list(x_tail)
            out = np.asarray(se.evaluate_real(im_p, x, xi))
            return np.broadcast_to(out, np.shape(t))

        return g

    def g(t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty(len(t_arr), dtype=np.longdouble)
        for i, ti in enumerate(t_arr):
            x, xi = gamma.state(ti)
            out[i] = se.evaluate_real(im_p, x, xi)
        return out if np.ndim(t) else out[0]

    return g


def _bisect_first(g, lo, hi, pred):
    """pred false at lo, true at hi; first t where pred holds, +-BISECT_TOL."""
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if pred(g(mid)):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def detect_sign_change(
    im_p: se.Node,
    gamma: Bicharacteristic,
    tol: float = SIGN_TOL,
    samples: int = 1201,
) -> Optional[Tuple[float, float]]:
    """Earliest s- < s+ with Im p < -tol at s- and > +tol at s+, or None."""
    g = _profile(im_p, gamma)
    a, b = gamma.interval
    ts = np.linspace(a, b, samples)
    vals = np.asarray(g(ts))
    below = np.nonzero(vals < -tol)[0]
    if len(below) == 0:
        return None
    i = below[0]
    s_minus = ts[i] if i == 0 else _bisect_first(
        g, ts[i - 1], ts[i], lambda v: v < -tol
    )
    above = np.nonzero(vals[i:] > tol)[0]
    if len(above) == 0:
        return None
    j = i + above[0]
    s_plus = _bisect_first(g, ts[j - 1], ts[j], lambda v: v > tol)
    return float(s_minus), float(s_plus)


@dataclass
class StrongInterval:
    """Interval [a,b] on which Im p vanishes, flanked by strict signs."""

    a: float
    b: float
    raw_gap: float            # unrefined witness gap t+ - s- on the scan grid
    max_interior: float
    witnesses: List[Dict]     # per-epsilon witness records
    converged: bool
    degenerate: bool

    @property
    def length(self) -> float:
        return self.b - self.a


def strong_sign_change(
    im_p: se.Node,
    gamma: Bicharacteristic,
    samples: int = 1201,
    eps0: float = 0.5,
    n_eps: int = 8,
) -> Optional[StrongInterval]:
    """Minimal-gap interval from the infimum construction.

    Scans Im p along gamma, takes the closest pair of strictly negative /
    strictly positive samples (in that order), refines the flanking
    boundaries of the intermediate zero set by bisection, and collects
    strict-sign witnesses at a decreasing epsilon grid outside the interval.
    """
    g = _profile(im_p, gamma)
    a, b = gamma.interval
    ts = np.linspace(a, b, samples)
    vals = np.asarray(g(ts))
    neg = vals < 0
    pos = vals > 0
    best = None
    last_neg = -1
    for i in range(samples):
        if neg[i]:
            last_neg = i
        elif pos[i] and last_neg >= 0:
            gap = ts[i] - ts[last_neg]
            if best is None or gap < best[0] - 1e-15:
                best = (gap, last_neg, i)
    if best is None:
        return None
    raw_gap, si, ti = best
    degenerate = ti == si + 1
    if degenerate:
        mid = _bisect_first(g, ts[si], ts[ti], lambda v: v >= 0)
        a_ref = b_ref = mid
    else:
        i0 = si + 1
        while neg[i0]:
            i0 += 1
        a_ref = _bisect_first(g, ts[i0 - 1], ts[i0], lambda v: not (v < 0))
        j0 = ti - 1
        while pos[j0]:
            j0 -= 1
        b_ref = _bisect_first(g, ts[j0], ts[j0 + 1], lambda v: v > 0)
        if a_ref > b_ref:
            mid = 0.5 * (a_ref + b_ref)
            a_ref = b_ref = mid
        if b_ref - a_ref <= 2 * BISECT_TOL:
            degenerate = True
    interior = (ts > a_ref + BISECT_TOL) & (ts < b_ref - BISECT_TOL)
    max_interior = float(np.max(np.abs(vals[interior]).astype(float))) if (
        interior.any()
    ) else 0.0
    witnesses = []
    all_found = True
    for k in range(n_eps):
        eps = eps0 * 2.0 ** (-k)
        lo = max(a, a_ref - eps)
        s_cands = np.linspace(lo, a_ref, 65)[:-1]
        sv = np.asarray(g(s_cands))
        idx = np.nonzero(sv < 0)[0]
        s_w = float(s_cands[idx[-1]]) if len(idx) else None
        hi = min(b, b_ref + eps)
        t_cands = np.linspace(b_ref, hi, 65)[1:]
        tv = np.asarray(g(t_cands))
        idx = np.nonzero(tv > 0)[0]
        t_w = float(t_cands[idx[0]]) if len(idx) else None
        found = s_w is not None and t_w is not None
        all_found = all_found and found
        witnesses.append(
            {"eps": eps, "s_minus": s_w, "s_plus": t_w, "found": found}
        )
    return StrongInterval(
        float(a_ref), float(b_ref), float(raw_gap), max_interior,
        witnesses, all_found, degenerate,
    )


# ---------------------------------------------------------------------------
# Minimality estimators


@dataclass(frozen=True)
class OffsetSampler:
    """Dyadic transverse offsets |w - w0| = eps0 * 2^-k along directions."""

    directions: Optional[Tuple[Tuple[float, ...], ...]] = None
    eps0: float = 0.5
    k_max: int = 12


@dataclass
class MinimalityReport:
    L_estimate: Optional[float]   # route A: refined interval-length envelope
    L_raw: Optional[float]        # route B: in-slice witness-gap envelope
    interval: Optional[Tuple[float, float]]
    rho: Optional[float]
    witnesses: List[Dict]
    converged: bool
    degenerate: bool
    direction: Optional[Tuple[float, ...]]
    tol: float
    one_sided_estimate: bool = True
    flat_residual: Optional[float] = None
    interior_flat: Optional[bool] = None
    per_direction: Dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["per_direction"] = {
            ",".join(map(str, k)): v for k, v in self.per_direction.items()
        }
        return json.dumps(d)


def _default_directions(n: int) -> Tuple[Tuple[float, ...], ...]:
    plus = tuple(1.0 if k == 0 else 0.0 for k in range(n - 1))
    minus = tuple(-v for v in plus)
    return (plus, minus)


def _require_slice(gamma: Bicharacteristic):
    if gamma.w is None:
        raise BicharError(
            "minimality estimators need a normal-form slice "
            "(Re p = xi1, frozen transverse data)"
        )


def estimate_L(
    im_p: se.Node,
    gamma: Bicharacteristic,
    sampler: Optional[OffsetSampler] = None,
    samples: int = 1201,
) -> MinimalityReport:
    """Estimate the minimal limit length of sign-change sub-bicharacteristics.

    Route A minimizes the refined strong-interval length over slices at
    dyadic transverse offsets and takes a monotone lim-inf envelope over the
    offset scale; route B does the same with the unrefined in-slice witness
    gaps.  Both are upper bounds for the true lim-inf (one-sided estimate).
    """
    _require_slice(gamma)
    sampler = sampler or OffsetSampler()
    a, b = gamma.interval
    tol_L = 0.1 * min(1.0, b - a)
    n = gamma.n
    directions = sampler.directions or _default_directions(n)
    x_tail = np.asarray(gamma.w["x_tail"], dtype=float)
    xi = gamma.w["xi"]

    per_direction: Dict = {}
    witnesses: List[Dict] = []
    best = None  # (envelope length, direction, interval, envelope gap, spread)
    for d in directions:
        d_arr = np.asarray(d, dtype=float)
        records = []
        for k in range(sampler.k_max + 1):
            eps = sampler.eps0 * 2.0 ** (-k)
            sl = normal_form_slice(a, b, x_tail + eps * d_arr, xi)
            strong = strong_sign_change(im_p, sl, samples=samples)
            if strong is None:
                records.append({"eps": eps, "found": False})
                continue
            rec = {
                "eps": eps,
                "found": True,
                "interval": (strong.a, strong.b),
                "length": strong.length,
                "gap": strong.raw_gap,
            }
            records.append(rec)
            witnesses.append({"direction": d, **rec})
        per_direction[tuple(d)] = records
        valid = [r for r in records if r["found"]]
        if not valid:
            continue
        tail = valid[-min(3, len(valid)):]
        env_len = min(r["length"] for r in tail)
        env_gap = min(r["gap"] for r in tail)
        spread = max(r["length"] for r in tail) - env_len
        if best is None or env_len < best[0]:
            best = (env_len, tuple(d), tail[-1]["interval"], env_gap, spread)

    if best is None:
        return MinimalityReport(
            None, None, None, None, witnesses, False, False, None, tol_L,
            per_direction=per_direction,
        )
    env_len, direction, interval, env_gap, spread = best
    L = min(env_len, b - a)
    converged = abs(env_len - env_gap) < tol_L and spread < tol_L
    degenerate = L < tol_L
    return MinimalityReport(
        float(L), float(min(env_gap, b - a)), interval, None, witnesses,
        converged, degenerate, direction, tol_L, per_direction=per_direction,
    )


def find_minimal_interval(
    im_p: se.Node,
    gamma: Bicharacteristic,
    sampler: Optional[OffsetSampler] = None,
    samples: int = 1201,
) -> MinimalityReport:
    """Locate the limiting minimal interval and verify its transverse flatness.

    For a non-degenerate interval all derivatives of Im p of order <= 4 in
    (x, xi') (no xi1 differentiations) must vanish along it; a failure is
    flagged on the report, not fatal.
    """
    from . import jet as jt

    report = estimate_L(im_p, gamma, sampler, samples)
    if report.L_estimate is None:
        raise BicharError("estimate_L found no sign-change sequence")
    a0, b0 = report.interval
    if report.degenerate:
        mid = 0.5 * (a0 + b0)
        report.interval = (mid, mid)
        return report
    n = gamma.n
    x_tail = gamma.w["x_tail"]
    xi = gamma.w["xi"]
    margin = 0.05 * (b0 - a0)
    worst = 0.0
    for t in np.linspace(a0 + margin, b0 - margin, 7):
        j = jt.jet_of(im_p, ((t, *x_tail), xi), 4)
        for gm, c in zip(j.indices(), j.coeffs):
            if gm[n] > 0:  # xi1 slot
                continue
            worst = max(worst, abs(c))
    report.flat_residual = worst
    report.interior_flat = worst < FLAT_CHECK_TOL
    return report


@dataclass
class RhoResult:
    rho: float
    cap: float
    certified: List[float]
    failing: List[float]
    sup_by_kappa: Dict[float, float]

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def rho_minimality(
    im_p: se.Node,
    gamma: Bicharacteristic,
    interval: Tuple[float, float],
    kappa_grid: Optional[Sequence[float]] = None,
    radii: Sequence[float] = (0.2, 0.1, 0.05, 0.02),
    n_t: int = 21,
    n_ball: int = 24,
    vanish_tol: float = 0.0,
    seed: int = 7,
) -> RhoResult:
    """Smallest grid rho such that Im p vanishes near I_kappa for kappa > rho.

    A kappa certifies when for some transverse radius in the decreasing grid
    every sampled tube point evaluates to |Im p| <= vanish_tol in extended
    precision.  The default vanish_tol = 0 is a strict-zero test: threshold
    tests are vacuous against flat functions, whose tails sink below any
    fixed tolerance while remaining nonzero.
    """
    _require_slice(gamma)
    a0, b0 = float(interval[0]), float(interval[1])
    cap = 0.5 * (b0 - a0)
    if cap <= 0:
        return RhoResult(0.0, 0.0, [], [], {})
    if kappa_grid is None:
        kappa_grid = np.linspace(cap / 40, cap, 40)
    n = gamma.n
    m = n - 1
    x_tail = np.asarray(gamma.w["x_tail"], dtype=float)
    xi = np.asarray(gamma.w["xi"], dtype=float)
    rng = np.random.default_rng(seed)
    # unit offsets in the transverse (x', xi') data, xi1 frozen at 0
    dirs = []
    for k in range(m):
        for s in (1.0, -1.0):
            v = np.zeros(2 * m)
            v[k] = s
            dirs.append(v)
            v = np.zeros(2 * m)
            v[m + k] = s
            dirs.append(v)
    extra = rng.normal(size=(n_ball, 2 * m))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    dirs = np.vstack([np.zeros(2 * m)] + dirs + list(extra))

    certified, failing = [], []
    sup_by_kappa: Dict[float, float] = {}
    for kappa in kappa_grid:
        kappa = float(kappa)
        lo, hi = a0 + kappa, b0 - kappa
        if lo > hi:
            lo = hi = 0.5 * (a0 + b0)
        ts = np.linspace(lo, hi, n_t)
        ok = False
        best_sup = np.inf
        for r in radii:
            sup = 0.0
            for v in dirs:
                xt = x_tail + r * v[:m]
                xp = xi.copy()
                xp[1:] += r * v[m:]
                if np.linalg.norm(xp[1:]) < 1e-6:
                    continue
                x = [ts] + [np.full(n_t, c) for c in xt]
                vals = se.evaluate_real(im_p, x, list(xp))
                sup = max(sup, float(np.max(np.abs(np.asarray(vals, dtype=float)))))
                if sup > vanish_tol:
                    break
            best_sup = min(best_sup, sup)
            if sup <= vanish_tol:
                ok = True
                break
        sup_by_kappa[kappa] = best_sup
        (certified if ok else failing).append(kappa)
    rho = max(failing) if failing else 0.0
    return RhoResult(float(rho), cap, certified, failing, sup_by_kappa)


def _hausdorff_segments(seg1, seg2, samples: int = 128) -> float:
    """Hausdorff distance between two sampled phase-space segments."""

    def sample(seg):
        (a, b), point_fn = seg
        return np.array([point_fn(t) for t in np.linspace(a, b, samples)])

    A, B = sample(seg1), sample(seg2)
    d = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def approximating_sequence(
    im_p: se.Node,
    gamma: Bicharacteristic,
    interval: Tuple[float, float],
    count: int,
    direction: Optional[Sequence[float]] = None,
    eps0: float = 0.5,
    samples: int = 1201,
) -> Tuple[List[Dict], bool]:
    """Offset slices carrying rho-minimality certificates converging to Gamma.

    Returns (entries, exhausted); each entry holds the offset, the strong
    interval found on the slice, its rho certificate and the Hausdorff
    distance to the target interval.  exhausted is True when some offset
    produced no sign-change interval (partial list returned).
    """
    _require_slice(gamma)
    if count <= 0:
        return [], False
    a, b = gamma.interval
    a0, b0 = interval
    n = gamma.n
    x_tail = np.asarray(gamma.w["x_tail"], dtype=float)
    xi = gamma.w["xi"]
    if direction is None:
        direction = _default_directions(n)[0]
    d_arr = np.asarray(direction, dtype=float)

    def segment(x_t, lo, hi):
        xt = np.asarray(x_t, dtype=float)
        return ((lo, hi), lambda t: np.concatenate([[t], xt]))

    target = segment(x_tail, a0, b0)
    entries: List[Dict] = []
    exhausted = False
    for j in range(1, count + 1):
        eps = eps0 * 2.0 ** (-(j - 1))
        xt_j = x_tail + eps * d_arr
        sl = normal_form_slice(a, b, xt_j, xi)
        strong = strong_sign_change(im_p, sl, samples=samples)
        if strong is None:
            exhausted = True
            break
        rho = rho_minimality(
            im_p, sl, (strong.a, strong.b), radii=(eps / 2, eps / 4)
        )
        entries.append(
            {
                "eps": eps,
                "x_tail": tuple(xt_j),
                "interval": (strong.a, strong.b),
                "rho": rho.rho,
                "hausdorff": _hausdorff_segments(
                    target, segment(xt_j, strong.a, strong.b)
                ),
            }
        )
    return entries, exhausted


# ---------------------------------------------------------------------------
# One-dimensional bicharacteristics


@dataclass
class OneDimResult:
    ok: bool
    ts: np.ndarray
    c: np.ndarray
    max_residual: float
    reason: str = ""


def check_one_dim_bichar(p_expr: se.Node, gamma: Bicharacteristic, n: Optional[int] = None) -> OneDimResult:
    """Test gamma'(t) = c(t) H_p(gamma(t)) with complex least-squares c(t).

    p may be complex-valued; gamma' comes from centered differences of the
    stored samples.  Fails (ok=False) when p does not vanish along gamma or
    when the residual of the fit exceeds 1e-4.
    """
    n = n if n is not None else gamma.n
    dxs = [se.differentiate(p_expr, ("x", k + 1)) for k in range(n)]
    dxis = [se.differentiate(p_expr, ("xi", k + 1)) for k in range(n)]
    a, b = gamma.interval
    ts = np.linspace(a, b, 401)
    zs = np.array([np.concatenate(gamma.state(t)) for t in ts])
    m = len(ts)
    cs = []
    out_ts = []
    worst = 0.0
    for i in range(1, m - 1):
        z = zs[i]
        x, xi = z[:n], z[n:]
        pv = se.evaluate(p_expr, x, xi)
        if abs(pv) > SAMPLE_TOL:
            return OneDimResult(
                False, np.array([]), np.array([]), np.inf,
                f"p does not vanish along the curve (|p| = {abs(pv):.3g})",
            )
        dz = (zs[i + 1] - zs[i - 1]) / (ts[i + 1] - ts[i - 1])
        if np.linalg.norm(dz) < 1e-12:
            return OneDimResult(
                False, np.array([]), np.array([]), np.inf,
                "curve derivative vanishes",
            )
        hp = np.concatenate(
            [
                [se.evaluate(d, x, xi) for d in dxis],
                [-se.evaluate(d, x, xi) for d in dxs],
            ]
        )
        denom = np.vdot(hp, hp)
        if abs(denom) < 1e-20:
            return OneDimResult(
                False, np.array([]), np.array([]), np.inf,
                "Hamilton field vanishes",
            )
        c = np.vdot(hp, dz) / denom
        res = np.linalg.norm(dz - c * hp) / np.linalg.norm(dz)
        worst = max(worst, float(res))
        cs.append(c)
        out_ts.append(ts[i])
    ok = worst < 1e-4
    return OneDimResult(
        ok, np.asarray(out_ts), np.asarray(cs), worst,
        "" if ok else "least-squares residual too large",
    )


# ---------------------------------------------------------------------------
# Cross sections


def cross_section_grid(
    im_p: se.Node,
    x1_range: Tuple[float, float],
    x2_range: Tuple[float, float],
    nx: int = 201,
    ny: int = 201,
    x_rest: Sequence[float] = (),
    xi: Sequence[float] = (0.0, 1.0),
):
    """Sign of Im p on an (x1, x2) grid; returns (x1s, x2s, sign array)."""
    x1s = np.linspace(*x1_range, nx)
    x2s = np.linspace(*x2_range, ny)
    X1, X2 = np.meshgrid(x1s, x2s, indexing="ij")
    x = [X1, X2] + [np.full_like(X1, c) for c in x_rest]
    vals = np.asarray(se.evaluate_real(im_p, x, list(xi)))
    signs = np.zeros(vals.shape, dtype=np.int8)
    signs[vals > 0] = 1
    signs[vals < 0] = -1
    return x1s, x2s, signs
