"""Command-line front end: configuration loading, subcommand orchestration,
fixture emission and report/figure output.

Configuration is a JSON object validated against a fixed schema::

    {
      "dimension":  int >= 2                      (required)
      "symbols":    {name: fixture-name | {"degree": int, "exprs": [str]}}
      "task":       {free-form per-subcommand parameters}
      "tau_grid":   [strictly increasing positive numbers]
      "tolerances": {name: number}
      "beta0":      [non-negative ints]
      "window":     {"box": [[lo, hi], ...], "moments": [ints], "N": int}
      "output_dir": str
      "seed":       int
      "workers":    int >= 1
    }

Unknown top-level keys are rejected.  Schema violations exit with code 2
and print one diagnostic per problem; numerical aborts raised by the
computational modules exit with code 4; inconclusive verdicts exit with
code 3.  Success (including a definite negative verdict recorded in the
report) exits 0 unless noted below.

Subcommands
-----------
``fixtures``        sign grid of the imaginary part of a named fixture over
                    a rectangle, as CSV and SVG.
``psi-scan``        minus-to-plus detection and strong-interval extraction
                    along a family of straight characteristic slices.
``minimal``         limit-length estimate, minimal interval, shrunken-core
                    vanishing certificate and approximating slice sequence
                    for a fixture or configured symbol.
``factor``          lower-order normalization plus jet factorization
                    Q = P # E + R with the first nonvanishing remainder index.
``wkb``             phase/transport construction for a normal-form symbol
                    and the eiconal residual order check.
``itau``            pairing-integral decay pipeline: oscillatory solution,
                    window pairing over a tau grid, decay fit and verdict.
``proportionality`` extraction of the scalar relating two adjoints at a
                    characteristic point.
``commutator``      iterated Hamilton-derivative vanishing test at
                    characteristic points, with optional transport factor.

All artifacts are written deterministically (sorted keys, fixed float
formatting, seeded generators), so a rerun with the same configuration and
seed reproduces every output byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import asymptotics as asy
from . import bichar as bc
from . import factor as fc
from . import jet as jt
from . import symbol as sy
from . import symexpr as se
from . import wkb

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INCONCLUSIVE = 3
EXIT_NUMERIC = 4

_NUMERIC_ERRORS = (
    se.ExprError,
    jt.JetError,
    sy.SymbolError,
    bc.BicharError,
    fc.FactorError,
    wkb.WKBError,
    asy.AsymptoticsError,
    np.linalg.LinAlgError,
    ZeroDivisionError,
    FloatingPointError,
)


class ConfigError(ValueError):
    """Schema violation; carries one diagnostic string per problem."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


# --------------------------------------------------------------------------
# configuration


_KNOWN_KEYS = {
    "dimension",
    "symbols",
    "task",
    "tau_grid",
    "tolerances",
    "beta0",
    "window",
    "output_dir",
    "seed",
    "workers",
}


@dataclass
class RunConfig:
    dimension: int
    symbols: Dict[str, object] = field(default_factory=dict)
    task: Dict[str, object] = field(default_factory=dict)
    tau_grid: Optional[Tuple[float, ...]] = None
    tolerances: Dict[str, float] = field(default_factory=dict)
    beta0: Optional[Tuple[int, ...]] = None
    window: Optional[Dict[str, object]] = None
    output_dir: str = "."
    seed: int = 0
    workers: int = 1

    def resolve_symbol(self, name: str) -> sy.ClassicalSymbol:
        """Named symbol from the config: fixture reference or expression list."""
        if name not in self.symbols:
            raise ConfigError([f"symbols: no entry named {name!r}"])
        spec = self.symbols[name]
        if isinstance(spec, str):
            table = sy.fixtures(self.dimension)
            if spec not in table:
                raise ConfigError(
                    [f"symbols.{name}: unknown fixture {spec!r} "
                     f"(available: {sorted(table)})"]
                )
            return table[spec]
        return sy.ClassicalSymbol.parse(
            int(spec["degree"]), list(spec["exprs"]), self.dimension
        )


def _validate(raw: object) -> RunConfig:
    bad: List[str] = []
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a JSON object"])
    for key in sorted(set(raw) - _KNOWN_KEYS):
        bad.append(f"unknown key {key!r} (allowed: {sorted(_KNOWN_KEYS)})")
    dim = raw.get("dimension")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 2:
        bad.append("dimension: required integer >= 2")
        dim = 2
    symbols = raw.get("symbols", {})
    if not isinstance(symbols, dict):
        bad.append("symbols: expected an object of named entries")
        symbols = {}
    else:
        for name, spec in symbols.items():
            if isinstance(spec, str):
                continue
            if not isinstance(spec, dict):
                bad.append(f"symbols.{name}: expected fixture name or object")
                continue
            if not isinstance(spec.get("degree"), int):
                bad.append(f"symbols.{name}.degree: required integer")
            exprs = spec.get("exprs")
            if (
                not isinstance(exprs, list)
                or not exprs
                or not all(isinstance(e, str) for e in exprs)
            ):
                bad.append(f"symbols.{name}.exprs: required non-empty "
                           "list of expression strings")
            else:
                for e in exprs:
                    try:
                        se.parse_expression(e, dim)
                    except Exception as exc:  # parse diagnostics are schema-level
                        bad.append(f"symbols.{name}.exprs: {exc}")
    task = raw.get("task", {})
    if not isinstance(task, dict):
        bad.append("task: expected an object")
        task = {}
    tau_grid = raw.get("tau_grid")
    if tau_grid is not None:
        ok = (
            isinstance(tau_grid, list)
            and len(tau_grid) >= 1
            and all(isinstance(t, (int, float)) and not isinstance(t, bool)
                    and t > 0 for t in tau_grid)
            and all(b > a for a, b in zip(tau_grid, tau_grid[1:]))
        )
        if not ok:
            bad.append("tau_grid: expected strictly increasing positive numbers")
            tau_grid = None
    tolerances = raw.get("tolerances", {})
    if not isinstance(tolerances, dict) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool)
        for v in tolerances.values()
    ):
        bad.append("tolerances: expected an object of numbers")
        tolerances = {}
    beta0 = raw.get("beta0")
    if beta0 is not None and not (
        isinstance(beta0, list)
        and all(isinstance(b, int) and not isinstance(b, bool) and b >= 0
                for b in beta0)
    ):
        bad.append("beta0: expected a list of non-negative integers")
        beta0 = None
    window = raw.get("window")
    if window is not None:
        if not isinstance(window, dict) or not isinstance(
            window.get("box"), list
        ):
            bad.append("window: expected an object with a box of [lo, hi] pairs")
            window = None
        else:
            for pair in window["box"]:
                if (
                    not isinstance(pair, list)
                    or len(pair) != 2
                    or not pair[0] < pair[1]
                ):
                    bad.append("window.box: each entry must be [lo, hi], lo < hi")
                    break
    out_dir = raw.get("output_dir", ".")
    if not isinstance(out_dir, str):
        bad.append("output_dir: expected a string path")
        out_dir = "."
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        bad.append("seed: expected an integer")
        seed = 0
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        bad.append("workers: expected an integer >= 1")
        workers = 1
    if bad:
        raise ConfigError(bad)
    return RunConfig(
        dimension=dim,
        symbols=symbols,
        task=task,
        tau_grid=None if tau_grid is None else tuple(float(t) for t in tau_grid),
        tolerances={k: float(v) for k, v in tolerances.items()},
        beta0=None if beta0 is None else tuple(beta0),
        window=window,
        output_dir=out_dir,
        seed=seed,
        workers=workers,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"])
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON: {exc}"])
    return _validate(raw)


# --------------------------------------------------------------------------
# deterministic output helpers


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def _json_default(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_json(path: str, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text + "\n")


def write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_sign_svg(
    path: str,
    x1s: np.ndarray,
    x2s: np.ndarray,
    signs: np.ndarray,
    width: int = 640,
    height: int = 320,
) -> None:
    """Sign grid as an SVG rectangle raster (no plotting dependency).

    Negative cells render dark blue, zero cells white, positive cells dark
    red; axes ranges are annotated in the corners.
    """
    nx, ny = signs.shape
    cw = width / nx
    ch = height / ny
    colors = {-1: "#27408b", 0: "#ffffff", 1: "#8b2727"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height + 20}" viewBox="0 0 {width} {height + 20}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" '
        'fill="#ffffff" stroke="#000000"/>',
    ]
    # merge horizontal runs of equal sign into single rectangles
    for j in range(ny):
        y = format((ny - 1 - j) * ch, ".2f")
        i = 0
        while i < nx:
            k = i
            while k < nx and signs[k, j] == signs[i, j]:
                k += 1
            s = int(signs[i, j])
            if s != 0:
                parts.append(
                    f'<rect x="{format(i * cw, ".2f")}" y="{y}" '
                    f'width="{format((k - i) * cw, ".2f")}" '
                    f'height="{format(ch, ".2f")}" fill="{colors[s]}"/>'
                )
            i = k
    parts.append(
        f'<text x="2" y="{height + 14}" font-size="12">'
        f"x1 in [{_fmt(x1s[0])}, {_fmt(x1s[-1])}], "
        f"x2 in [{_fmt(x2s[0])}, {_fmt(x2s[-1])}]</text>"
    )
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


def write_polyline_svg(
    path: str,
    xs: Sequence[float],
    ys: Sequence[float],
    title: str,
    width: int = 640,
    height: int = 320,
) -> None:
    """Single polyline plot with linear axes fitted to the data range."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0
    pad = 20
    pts = " ".join(
        f"{format(pad + (x - x_lo) / x_span * (width - 2 * pad), '.2f')},"
        f"{format(height - pad - (y - y_lo) / y_span * (height - 2 * pad), '.2f')}"
        for x, y in zip(xs, ys)
    )
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" '
        'fill="#ffffff" stroke="#000000"/>',
        f'<polyline fill="none" stroke="#27408b" stroke-width="1.5" '
        f'points="{pts}"/>',
        f'<text x="{pad}" y="14" font-size="12">{title}</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(parts) + "\n")


# --------------------------------------------------------------------------
# subcommand implementations


def _out_dir(args, cfg: Optional[RunConfig]) -> str:
    out = args.out or (cfg.output_dir if cfg else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _fixture_im(name: str, n: int) -> se.Node:
    table = sy.fixture_im_parts(n)
    if name not in table:
        raise ConfigError(
            [f"fixture: unknown name {name!r} (available: {sorted(table)})"]
        )
    return table[name]


_FIXTURE_SLICES = {
    # fixture -> (t-range of the base slice, default cross-section box)
    "p1": ((-1.0, 3.0), ((-1.0, 3.0), (-1.0, 1.0))),
    "p2": ((-0.5, 3.5), ((-1.0, 4.0), (-1.0, 1.0))),
    "model2d": ((-1.0, 1.0), ((-1.0, 1.0), (-1.0, 1.0))),
}


def cmd_fixtures(args, cfg: Optional[RunConfig]) -> int:
    n = cfg.dimension if cfg else 2
    im = _fixture_im(args.name, n)
    _, box = _FIXTURE_SLICES.get(
        args.name, ((-1.0, 1.0), ((-1.0, 3.0), (-1.0, 1.0)))
    )
    task = cfg.task if cfg else {}
    x1r = tuple(task.get("x1_range", box[0]))
    x2r = tuple(task.get("x2_range", box[1]))
    nx = int(task.get("nx", 201))
    ny = int(task.get("ny", 101))
    x1s, x2s, signs = bc.cross_section_grid(im, x1r, x2r, nx=nx, ny=ny)
    out = _out_dir(args, cfg)
    rows = [
        (x1s[i], x2s[j], int(signs[i, j]))
        for i in range(nx)
        for j in range(ny)
    ]
    write_csv(
        os.path.join(out, f"fixture_{args.name}.csv"),
        ("x1", "x2", "sign_im_p"),
        rows,
    )
    write_sign_svg(
        os.path.join(out, f"fixture_{args.name}.svg"), x1s, x2s, signs
    )
    print(f"fixtures: wrote fixture_{args.name}.csv and .svg to {out}")
    return EXIT_OK


def _base_slice(name: str, offset: float = 0.0) -> bc.Bicharacteristic:
    (a, b), _ = _FIXTURE_SLICES[name]
    return bc.normal_form_slice(a, b, (offset,), (0.0, 1.0))


def cmd_psi_scan(args, cfg: RunConfig) -> int:
    name = args.fixture or cfg.task.get("fixture")
    if name:
        im = _fixture_im(name, cfg.dimension)
        (a, b), _ = _FIXTURE_SLICES[name]
    else:
        im_src = cfg.task.get("im")
        if not isinstance(im_src, str):
            raise ConfigError(
                ["psi-scan: requires --fixture or a real-valued task.im "
                 "expression"]
            )
        im = se.parse_expression(im_src, cfg.dimension)
        a, b = cfg.task.get("t_range", (-1.0, 1.0))
    offsets = cfg.task.get("offsets", [0.0, 0.25, -0.25, 0.05, -0.05])
    entries = []
    found_any = False
    for c in offsets:
        sl = bc.normal_form_slice(a, b, (float(c),), (0.0, 1.0))
        change = bc.detect_sign_change(im, sl)
        entry: Dict[str, object] = {"offset": float(c), "sign_change": change}
        if change is not None:
            found_any = True
            strong = bc.strong_sign_change(im, sl)
            if strong is not None:
                entry["interval"] = [strong.a, strong.b]
                entry["length"] = strong.length
                entry["degenerate"] = strong.degenerate
        entries.append(entry)
    out = _out_dir(args, cfg)
    write_json(
        os.path.join(out, "psi_scan.json"),
        {"fixture": name, "t_range": [a, b], "slices": entries},
    )
    for e in entries:
        tag = "change" if e["sign_change"] is not None else "no change"
        print(f"psi-scan: offset {_fmt(e['offset'])}: {tag}")
    return EXIT_OK if found_any else EXIT_INCONCLUSIVE


def cmd_minimal(args, cfg: Optional[RunConfig]) -> int:
    name = args.fixture or (cfg.task.get("fixture") if cfg else None)
    if not name:
        raise ConfigError(["minimal: requires --fixture or task.fixture"])
    n = cfg.dimension if cfg else 2
    im = _fixture_im(name, n)
    gamma = _base_slice(name)
    report = bc.estimate_L(im, gamma)
    payload: Dict[str, object] = {
        "fixture": name,
        "L": report.L_estimate,
        "L_raw": report.L_raw,
        "interval": report.interval,
        "converged": report.converged,
        "degenerate": report.degenerate,
        "one_sided_estimate": report.one_sided_estimate,
    }
    sides = {}
    for label, d in (("plus", (1.0,)), ("minus", (-1.0,))):
        side = bc.find_minimal_interval(
            im, gamma, bc.OffsetSampler(directions=(d,))
        )
        entry = {
            "interval": side.interval,
            "L": side.L_estimate,
            "degenerate": side.degenerate,
            "interior_flat": side.interior_flat,
        }
        if side.interval and not side.degenerate:
            off = -0.25 if label == "minus" else 0.25
            rho = bc.rho_minimality(im, _base_slice(name, off), side.interval)
            entry["rho_offset_slice"] = rho.rho
            rho0 = bc.rho_minimality(im, gamma, side.interval)
            entry["rho_base_slice"] = rho0.rho
            seq, exhausted = bc.approximating_sequence(
                im, gamma, side.interval, 3, direction=d
            )
            entry["approximating_slices"] = len(seq)
            entry["sequence_exhausted"] = exhausted
        sides[label] = entry
    payload["sides"] = sides
    out = _out_dir(args, cfg)
    write_json(os.path.join(out, f"minimal_{name}.json"), payload)
    if report.L_estimate is None:
        print(f"minimal: {name}: no sign-change interval found")
        return EXIT_INCONCLUSIVE
    lo, hi = report.interval
    print(
        f"minimal: {name}: L = {_fmt(report.L_estimate)}, "
        f"interval [{_fmt(lo)}, {_fmt(hi)}]"
        + (" (degenerate)" if report.degenerate else "")
    )
    return EXIT_OK if report.converged or report.degenerate else EXIT_INCONCLUSIVE


def _point_from_task(task: dict, n: int):
    pt = task.get("point")
    if pt is None:
        return ((0.0,) * n, (0.0,) * (n - 1) + (1.0,))
    return (tuple(float(v) for v in pt[0]), tuple(float(v) for v in pt[1]))


def cmd_factor(args, cfg: RunConfig) -> int:
    P = cfg.resolve_symbol(cfg.task.get("divisor", "P"))
    Q = cfg.resolve_symbol(cfg.task.get("dividend", "Q"))
    point = _point_from_task(cfg.task, cfg.dimension)
    depth = int(cfg.task.get("depth", 2))
    order = int(cfg.task.get("order", 6))
    if cfg.task.get("normalize", True):
        P = fc.normalize_lower_order(P, point, order=order)
    result = fc.factor_symbol(Q, P, point, depth=depth, order=order)
    tol = float(cfg.tolerances.get("coefficient", 1e-9))
    first = result.first_nonvanishing_index(tol=tol)
    payload = json.loads(result.to_json())
    payload["first_nonvanishing"] = (
        None
        if first is None
        else {
            "j": first[0].j,
            "k": first[0].k,
            "alpha": list(first[0].alpha),
            "beta": list(first[0].beta),
            "coefficient": first[1],
        }
    )
    out = _out_dir(args, cfg)
    write_json(os.path.join(out, "factor.json"), payload)
    if first is None:
        print("factor: remainder vanishes to the covered depth")
    else:
        idx = first[0]
        print(
            f"factor: first nonvanishing remainder index "
            f"(j={idx.j}, k={idx.k}, alpha={list(idx.alpha)}, "
            f"beta={list(idx.beta)})"
        )
    return EXIT_OK


def cmd_wkb(args, cfg: RunConfig) -> int:
    n = cfg.dimension
    f_src = cfg.task.get("f")
    if not isinstance(f_src, str):
        raise ConfigError(["wkb: task.f must be an expression string"])
    f = se.parse_expression(f_src, n)
    M = int(cfg.task.get("M", 3))
    t_span = tuple(cfg.task.get("t_span", (-0.5, 0.5)))
    y0 = tuple(cfg.task.get("y0", (0.0,) * (n - 1)))
    eta0 = tuple(cfg.task.get("eta0", (0.0,) * (n - 2) + (1.0,)))
    radii = tuple(cfg.task.get("radii", (0.1, 0.05, 0.025)))
    phase = wkb.solve_phase_system(f, (y0, eta0), M=M, t_span=t_span, n=n)
    if cfg.task.get("normalize_w0", False):
        phase = wkb.normalize_w0(phase)
    wkb.solve_transport(f, phase)
    resid = wkb.eiconal_residual(phase, f, radii)
    min_eig = min(
        float(np.linalg.eigvalsh(phase.hessian(float(t)).imag).min())
        for t in np.linspace(*t_span, 9)
    )
    payload = {
        "M": M,
        "t_span": list(t_span),
        "residuals": {_fmt(h): v for h, v in resid["residuals"].items()},
        "residual_slope": resid["slope"],
        "min_im_hessian_eig": min_eig,
    }
    out = _out_dir(args, cfg)
    write_json(os.path.join(out, "wkb.json"), payload)
    slope = resid["slope"]
    print(
        "wkb: eiconal residual slope "
        + ("n/a" if slope is None else _fmt(slope))
        + f", min Im-Hessian eigenvalue {_fmt(min_eig)}"
    )
    if min_eig <= 0:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_itau(args, cfg: RunConfig) -> int:
    n = cfg.dimension
    if n != 2:
        raise ConfigError(["itau: only dimension 2 pipelines are wired"])
    r_src = cfg.task.get("R")
    if not isinstance(r_src, str):
        raise ConfigError(["itau: task.R must be an expression string"])
    R = sy.ClassicalSymbol.parse(int(cfg.task.get("degree", 0)), [r_src], n)
    taus = list(cfg.tau_grid or (64.0, 128.0, 256.0, 512.0, 1024.0))
    if args.tau_min is not None:
        taus = [t for t in taus if t >= args.tau_min]
    if args.tau_max is not None:
        taus = [t for t in taus if t <= args.tau_max]
    if len(taus) < 5:
        raise ConfigError(["itau: need at least 5 grid points after filtering"])
    radius = float(cfg.task.get("radius", 1.0))
    order = int(cfg.task.get("ck_order", 6))
    initial = {
        tuple(int(v) for v in k.split(",")): complex(vr)
        for k, vr in cfg.task.get("initial", {"5": 1.0}).items()
    }
    w_box = (
        tuple(tuple(p) for p in cfg.window["box"])
        if cfg.window
        else ((-0.4375, 0.4375),) * n
    )
    moments = tuple(
        (cfg.window or {}).get("moments", (0,) * n)
    )
    window = asy.ProbeWindow(box=w_box, moments=moments)
    m = int(cfg.task.get("m", 0))
    kappa = cfg.task.get("kappa")
    predicted = cfg.task.get("predicted")
    if predicted is not None:
        predicted = complex(predicted["re"], predicted.get("im", 0.0)) if (
            isinstance(predicted, dict)
        ) else complex(predicted)
    planted = cfg.task.get("predict_from_jets")
    if planted is not None:
        # jets of the adjoint remainder family at the base point, given as
        # {"j": {"index": [gamma...], "value": [re, im]}} entries
        base = ((0.0,) * n, (0.0,) * (n - 1) + (1.0,))
        depth = int(cfg.task.get("jet_depth", m + 2))
        jets: Dict[int, jt.Jet] = {}
        for j_str, spec in planted.items():
            jet = jt.Jet.zero(base, depth)
            gamma = tuple(int(g) for g in spec.get("index", [0] * (2 * n)))
            val = spec.get("value", [1.0, 0.0])
            jet.coeffs[jt.index_positions(2 * n, depth)[gamma]] = complex(
                val[0], val[1]
            )
            jets[int(j_str)] = jet
        beta0 = cfg.beta0 or (0,) * (n - 1)
        predicted = asy.predicted_limit(jets, beta0, window, m)
    points = int(cfg.task.get("points_per_axis", 40))

    def one(tau: float) -> complex:
        sol = wkb.model_solution(
            tau, n, radius, N=0, order=order, initial=initial,
            points_per_axis=int(2 * radius * tau * 1.3 / np.pi) + 3,
        )
        return asy.compute_I_tau(R, sol, window, points_per_axis=points)

    values = asy.map_over_taus(one, taus, workers=args.workers or cfg.workers)
    report = asy.decay_fit(
        taus, values, m,
        predicted=predicted,
        kappa=None if kappa is None else float(kappa),
    )
    out = _out_dir(args, cfg)
    with open(
        os.path.join(out, "itau.json"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        fh.write(report.to_json() + "\n")
    report.write_csv(os.path.join(out, "itau.csv"))
    write_polyline_svg(
        os.path.join(out, "itau.svg"),
        [np.log2(t) for t in taus],
        [np.log10(abs(v)) if v else -16.0 for v in values],
        "log10 |I_tau| vs log2 tau",
    )
    print(
        f"itau: verdict {report.verdict}, slope {_fmt(report.fitted_slope)}"
        + (
            f", limit {_fmt(abs(report.extrapolated_limit))}"
            if report.extrapolated_limit is not None
            else ""
        )
    )
    return report.exit_code


def cmd_proportionality(args, cfg: RunConfig) -> int:
    P = cfg.resolve_symbol(cfg.task.get("P", "P"))
    Q = cfg.resolve_symbol(cfg.task.get("Q", "Q"))
    point = _point_from_task(cfg.task, cfg.dimension)
    rep = fc.proportionality(P, Q, point, order=int(cfg.task.get("order", 4)))
    out = _out_dir(args, cfg)
    write_json(os.path.join(out, "proportionality.json"), json.loads(rep.to_json()))
    print(
        f"proportionality: mu = {_fmt(rep.mu.real)} + {_fmt(rep.mu.imag)}i, "
        f"{'ok' if rep.ok else 'FAILED'}"
    )
    return EXIT_OK if rep.ok else EXIT_INCONCLUSIVE


def cmd_commutator(args, cfg: RunConfig) -> int:
    n = cfg.dimension
    p = se.parse_expression(cfg.task["p"], n)
    q = se.parse_expression(cfg.task["q"], n)
    mu_src = cfg.task.get("mu")
    mu = se.parse_expression(mu_src, n) if mu_src else None
    points = [
        (tuple(float(v) for v in pt[0]), tuple(float(v) for v in pt[1]))
        for pt in cfg.task.get("points", [[[0.0] * n, [0.0] * (n - 1) + [1.0]]])
    ]
    m_max = int(cfg.task.get("m_max", 3))
    tol = args.tol if args.tol is not None else float(
        cfg.tolerances.get("commutator", 1e-7)
    )
    entries = fc.commutator_test(p, q, points, m_max, n, mu=mu, tol=tol)
    out = _out_dir(args, cfg)
    write_json(os.path.join(out, "commutator.json"), {"entries": entries})
    ok = all(e["pass"] for e in entries)
    for e in entries:
        print(
            f"commutator: point {e['point'][0]}: "
            f"{'pass' if e['pass'] else 'FAIL'}"
        )
    return EXIT_OK if ok else EXIT_INCONCLUSIVE


# --------------------------------------------------------------------------
# entry point


_NEEDS_CONFIG = {"psi-scan", "factor", "wkb", "itau", "proportionality",
                 "commutator"}

_HANDLERS = {
    "fixtures": cmd_fixtures,
    "psi-scan": cmd_psi_scan,
    "minimal": cmd_minimal,
    "factor": cmd_factor,
    "wkb": cmd_wkb,
    "itau": cmd_itau,
    "proportionality": cmd_proportionality,
    "commutator": cmd_commutator,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors are schema-level
        raise ConfigError([f"usage: {message}"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psiwork")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _HANDLERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tau-min", type=float, default=None)
        p.add_argument("--tau-max", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        if name in ("minimal", "psi-scan"):
            p.add_argument("--fixture", default=None)
        if name == "fixtures":
            p.add_argument("--name", required=True)
    return parser


def run(argv: Sequence[str]) -> int:
    try:
        args = build_parser().parse_args(list(argv))
        cfg: Optional[RunConfig] = None
        if args.config is not None:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.workers is not None:
                cfg.workers = args.workers
        elif args.command in _NEEDS_CONFIG:
            raise ConfigError([f"{args.command}: requires --config"])
        np.random.seed((cfg.seed if cfg else 0) & 0x7FFFFFFF)
        return _HANDLERS[args.command](args, cfg)
    except ConfigError as exc:
        for line in exc.diagnostics:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_SCHEMA
    except KeyError as exc:
        print(f"config error: missing task key {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except _NUMERIC_ERRORS as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
