"""Batch front-end: ``milne-bl <command> <config.toml> [--threads N] [--output-dir PATH]``.

Every run writes ``summary.json`` (always) plus the CSV tables and SVG plots
selected by ``formats``.  Outputs are written atomically and carry the
config hash and the package version.  Exit status: 0 success, 1 bad config
or failed self-test, 2 incompatible data, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Callable, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import __version__, diagnostics, presets
from .characteristics import classify, energy, trace
from .diffusive_limit import (
    FLUX_NEUMANN_CONSTANT,
    BallProblem,
    convergence_study,
    interior_u0,
)
from .geometry import CurvatureProfile, MilneConfig
from .phase_grid import FOUR_PI, PhaseGrid, atomic_write, d_psi, norms
from .solver import (
    IncompatibilityError,
    MilneProblem,
    NonConvergenceError,
    solve,
    solve_diffusive,
    solve_inflow,
    solve_psi_derivative,
    solve_tangential,
)

log = logging.getLogger("milne_bl")

COMMANDS = ("milne-solve", "decay-fit", "regularity-probe", "tangent-check", "limit-study", "selftest")
FORMATS = {"csv", "json", "svg"}

EXIT_OK, EXIT_CONFIG, EXIT_INCOMPATIBLE, EXIT_NONCONVERGENCE = 0, 1, 2, 3

_TOP_KEYS = {"command", "output_dir", "formats", "problem", "grid", "solver", "study", "ball", "selftest"}
_SECTION_KEYS = {
    "problem": {"epsilon", "n_exponent", "curvature", "datum", "source", "boundary_kind", "p0", "tau"},
    "grid": {"n_eta", "n_phi", "n_psi", "eta_ratio", "quad_order", "n_aux", "dg_max", "g_cut"},
    "solver": {"fixed_point_tol", "max_iterations", "decay_rate_k0", "allow_wide_exponent"},
    "study": {"eps_list", "k0", "refinements", "tangent_index", "delta", "eta_max", "phi_max"},
    "ball": {"g_mode", "n_samples", "seed", "t_max", "neumann_constant", "eps_list", "tally_points"},
    "selftest": {"fault_injection"},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Parse a TOML run config strictly (unknown keys are errors)."""
    text = Path(path).read_text()
    try:
        cfg = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for sec, allowed in _SECTION_KEYS.items():
        body = cfg.get(sec, {})
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table")
        bad = set(body) - allowed
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(bad)}")
    if "command" in cfg and cfg["command"] not in COMMANDS:
        raise ConfigError(f"unknown command {cfg['command']!r}")
    fmts = set(cfg.get("formats", ["csv", "json", "svg"]))
    if not fmts <= FORMATS:
        raise ConfigError(f"unknown formats: {sorted(fmts - FORMATS)}")


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _milne_config(cfg: dict, epsilon: Optional[float] = None) -> MilneConfig:
    p = cfg.get("problem", {})
    s = cfg.get("solver", {})
    eps = float(p.get("epsilon", 0.1) if epsilon is None else epsilon)
    return MilneConfig(
        eps,
        n_exponent=float(p.get("n_exponent", 0.25)),
        fixed_point_tol=float(s.get("fixed_point_tol", 1e-9)),
        max_iterations=int(s.get("max_iterations", 5000)),
        decay_rate_k0=float(s.get("decay_rate_k0", 0.1)),
        allow_wide_exponent=bool(s.get("allow_wide_exponent", False)),
    )


def build_problem(cfg: dict, epsilon: Optional[float] = None, **overrides) -> MilneProblem:
    p = cfg.get("problem", {})
    try:
        kw = dict(
            cfg=_milne_config(cfg, epsilon),
            prof=presets.curvature(p.get("curvature", {"preset": "constant", "r1": 1.0})),
            tau=tuple(p.get("tau", (0.0, 0.0))),
            h=presets.datum(p.get("datum", {"preset": "sin_phi"})),
            S=presets.source(p.get("source", {"preset": "none"})),
            boundary_kind=p.get("boundary_kind", "inflow"),
            p0=float(p.get("p0", 0.0)),
            **cfg.get("grid", {}),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    kw.update(overrides)
    return MilneProblem(**kw)


# ---------------------------------------------------------------------------
# output helpers


class Outputs:
    def __init__(self, out_dir: Path, formats, chash: str):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.formats = set(formats)
        self.chash = chash
        self.files = []

    def stamp(self) -> dict:
        return {"config_hash": self.chash, "version": __version__}

    def json(self, name: str, data: dict) -> None:
        payload = {**self.stamp(), **data}
        text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
        atomic_write(self.dir / name, lambda fh: fh.write(text))
        self.files.append(name)

    def csv(self, name: str, header, rows) -> None:
        if "csv" not in self.formats:
            return
        buf = io.StringIO()
        buf.write(f"# config_hash={self.chash} version={__version__}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(v) for v in row) + "\n")
        text = buf.getvalue()
        atomic_write(self.dir / name, lambda fh: fh.write(text))
        self.files.append(name)

    def svg(self, name: str, series, title: str, xlabel: str, ylabel: str,
            logx: bool = False, logy: bool = False) -> None:
        if "svg" not in self.formats:
            return
        text = svg_plot(series, title, xlabel, ylabel, logx, logy,
                        comment=f"config_hash={self.chash} version={__version__}")
        atomic_write(self.dir / name, lambda fh: fh.write(text))
        self.files.append(name)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_plot(series, title, xlabel, ylabel, logx=False, logy=False, comment="") -> str:
    """Minimal line plot; ``series`` is a list of (x, y, label)."""
    W, H, m = 640, 420, 60

    def tx(v):
        return np.log10(v) if logx else v

    def ty(v):
        return np.log10(v) if logy else v

    pts = []
    for x, y, label in series:
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y)
        if logx:
            ok &= x > 0
        if logy:
            ok &= y > 0
        pts.append((tx(x[ok]), ty(y[ok]), label))
    allx = np.concatenate([p[0] for p in pts]) if pts else np.zeros(1)
    ally = np.concatenate([p[1] for p in pts]) if pts else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(v):
        return m + (v - x0) / (x1 - x0) * (W - 2 * m)

    def py(v):
        return H - m - (v - y0) / (y1 - y0) * (H - 2 * m)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">',
           f"<!-- {comment} -->",
           f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="{m / 2}" text-anchor="middle" font-size="14">{title}</text>',
           f'<text x="{W / 2}" y="{H - 15}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="15" y="{H / 2}" font-size="12" transform="rotate(-90 15 {H / 2})" '
           f'text-anchor="middle">{ylabel}</text>']
    for lab, val, pos in ((f"{x0:.3g}", None, (m, H - m + 15)), (f"{x1:.3g}", None, (W - m, H - m + 15)),
                          (f"{y0:.3g}", None, (m - 5, H - m)), (f"{y1:.3g}", None, (m - 5, m + 5))):
        out.append(f'<text x="{pos[0]}" y="{pos[1]}" font-size="10" text-anchor="end">'
                   f'{("1e" if (logx if pos[1] > H - m else logy) else "") + lab}</text>')
    for i, (x, y, label) in enumerate(pts):
        col = _COLORS[i % len(_COLORS)]
        path = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{path}"/>')
        for a, b in zip(x, y):
            out.append(f'<circle cx="{px(a):.2f}" cy="{py(b):.2f}" r="2.5" fill="{col}"/>')
        out.append(f'<text x="{W - m - 5}" y="{m + 15 + 14 * i}" font-size="11" fill="{col}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# commands


def _per_eta_rows(sol):
    eta = sol.f.grid.eta_nodes
    al = diagnostics.alpha(sol)
    be = diagnostics.beta(sol)
    qo = diagnostics.quasi_orthogonality_residual(sol)
    dev = diagnostics.linf_deviation(sol)
    return eta, al, be, qo, dev


def cmd_milne_solve(cfg: dict, out: Outputs) -> dict:
    pb = build_problem(cfg)
    sol = solve(pb)
    eta, al, be, qo, dev = _per_eta_rows(sol)
    n = norms(sol.f)
    out.csv("per_eta.csv", ["eta", "fbar", "alpha", "beta", "qo_residual", "linf_f_minus_fL"],
            zip(eta, sol.fbar, al, be, qo, dev))
    out.svg("fbar.svg", [(eta, sol.fbar, "fbar")], "angular average", "eta", "fbar")
    return {
        "f_L": sol.f_L,
        "f_L_tail": sol.f_L_tail,
        "f_L_discrepancy": sol.fL_discrepancy,
        "iterations": sol.iterations,
        "residuals": sol.residual_history,
        "norms": {"l2": n.l2_total, "linf": n.linf_total},
        "alpha_L": float(al[-1]),
        "max_qo_residual": float(np.max(np.abs(qo))),
        "flux0": sol.flux0,
    }


def cmd_decay_fit(cfg: dict, out: Outputs) -> dict:
    st = cfg.get("study", {})
    eps_list = [float(e) for e in st.get("eps_list", [0.2, 0.1, 0.05])]
    k0 = float(st.get("k0", 0.1))
    rows, series, fits = [], [], []
    for eps in eps_list:
        sol = solve(build_problem(cfg, epsilon=eps))
        fit = diagnostics.decay_fit(sol, k0)
        fits.append(fit)
        rows.append((eps, fit.k0_fitted, fit.r_squared, fit.sup_weighted, fit.window[0], fit.window[1],
                     fit.degenerate))
        series.append((sol.f.grid.eta_nodes, diagnostics.linf_deviation(sol), f"eps={eps:g}"))
    out.csv("decay_fit.csv", ["eps", "k0_fitted", "r_squared", "sup_weighted", "window_lo", "window_hi",
                              "degenerate"], rows)
    out.svg("decay.svg", series, "max |f - f_L|", "eta", "max |f - f_L|", logy=True)
    sw = np.array([f.sup_weighted for f in fits])
    med = float(np.median(sw))
    spread = float(np.max(np.abs(sw - med)) / med) if med > 0 else 0.0
    return {
        "eps": eps_list,
        "k0": k0,
        "k0_fitted": [f.k0_fitted for f in fits],
        "r_squared": [f.r_squared for f in fits],
        "sup_weighted": sw,
        "sup_weighted_spread": spread,
        "valid": [f.valid for f in fits],
        "degenerate": [f.degenerate for f in fits],
    }


def regularity_probe(cfg: dict, refinements=None):
    """sup weighted phi-derivative (corrected) and grazing sup (classical) per refinement."""
    st = cfg.get("study", {})
    refinements = [int(r) for r in (refinements or st.get("refinements", [1, 2, 4]))]
    eta_max = float(st.get("eta_max", 0.1))
    phi_max = float(st.get("phi_max", 0.5))
    base = build_problem(cfg)
    rows = []
    for r in refinements:
        pb = base.replace(n_phi=base.n_phi * r)
        cor = solve(pb)
        cla = solve(pb.replace(prof=CurvatureProfile.classical()))
        rows.append((r, pb.n_phi, diagnostics.sup_weighted_dphi(cor),
                     diagnostics.sup_grazing_dphi(cla, eta_max, phi_max)))
    return rows


def cmd_regularity_probe(cfg: dict, out: Outputs) -> dict:
    rows = regularity_probe(cfg)
    out.csv("regularity.csv", ["refinement", "n_phi", "corrected_sup_zeta_dphi", "classical_sup_dphi"], rows)
    nphi = [r[1] for r in rows]
    out.svg("regularity.svg", [(nphi, [r[2] for r in rows], "corrected (weighted)"),
                               (nphi, [r[3] for r in rows], "classical (near grazing)")],
            "phi-derivative under refinement", "n_phi", "sup", logx=True, logy=True)
    cor = np.array([r[2] for r in rows])
    cla = np.array([r[3] for r in rows])
    return {
        "n_phi": nphi,
        "corrected_sup_zeta_dphi": cor,
        "classical_sup_dphi": cla,
        "corrected_max_ratio": float(cor.max() / cor.min()),
        "classical_growth": (cla[1:] / cla[:-1]).tolist(),
    }


def _l2(grid: PhaseGrid, a) -> float:
    return float(np.sqrt(np.einsum("ijk,i,j,k->", a * a, grid.w_eta, grid.w_phi, grid.w_psi)))


def tangent_check(cfg: dict) -> dict:
    st = cfg.get("study", {})
    i = int(st.get("tangent_index", 0))
    delta = float(st.get("delta", 1e-3))
    pb = build_problem(cfg)
    base = solve_inflow(pb)
    g = pb.grid
    w = solve_tangential(pb, base, i)
    shift = np.zeros(2)
    shift[i] = delta
    tau = np.asarray(pb.tau)
    fp = solve_inflow(pb.replace(tau=tuple(tau + shift)))
    fm = solve_inflow(pb.replace(tau=tuple(tau - shift)))
    fd = (fp.f.values - fm.f.values) / (2 * delta) - (fp.f_L - fm.f_L) / (2 * delta)
    ref_norm = _l2(g, fd)
    rel_tau = _l2(g, w.f.values - fd) / ref_norm if ref_norm > 0 else _l2(g, w.f.values)
    wp = solve_psi_derivative(pb, base)
    ref = d_psi(base.f)
    ref_norm = _l2(g, ref)
    rel_psi = _l2(g, wp.f.values - ref) / ref_norm if ref_norm > 0 else _l2(g, wp.f.values)
    return {
        "tangent_index": i,
        "delta": delta,
        "rel_l2_tau": rel_tau,
        "rel_l2_psi": rel_psi,
        "w_L": w.f_L,
        "w_L_tail": w.f_L_tail,
        "wpsi_L": wp.f_L,
        "wpsi_L_tail": wp.f_L_tail,
    }


def cmd_tangent_check(cfg: dict, out: Outputs) -> dict:
    res = tangent_check(cfg)
    out.csv("tangent_check.csv", list(res), [list(res.values())])
    return res


def _ball_problem(cfg: dict) -> BallProblem:
    b = cfg.get("ball", {})
    kw = {}
    for key in ("g_mode", "n_samples", "seed", "t_max", "neumann_constant"):
        if key in b:
            kw[key] = b[key]
    if "tally_points" in b:
        kw["tally_points"] = tuple((tuple(map(float, x)), None) for x in b["tally_points"])
    eps = float(b.get("eps_list", [0.4])[0])
    return BallProblem(eps, **kw)


def cmd_limit_study(cfg: dict, out: Outputs) -> dict:
    b = cfg.get("ball", {})
    eps_list = [float(e) for e in b.get("eps_list", [0.4, 0.2, 0.1])]
    pb = _ball_problem(cfg)
    u0 = interior_u0(pb)
    table = convergence_study(eps_list, pb, u0)
    for row in table.rows:
        out.csv(f"limit_eps_{row.eps:g}.csv", ["x", "y", "z", "estimate", "se", "u0", "abs_diff"],
                [(*t.x, t.estimate, t.std_error, float(u0(np.asarray(t.x))),
                  abs(t.estimate - float(u0(np.asarray(t.x))))) for t in row.tallies])
    errs = [r.max_error for r in table.rows]
    out.svg("limit_loglog.svg", [(eps_list, errs, "max |u - U0|")], "diffusive limit", "eps",
            "max error", logx=True, logy=True)
    flux_u0 = interior_u0(pb, FLUX_NEUMANN_CONSTANT)
    flux_err = [max(abs(t.estimate - float(flux_u0(np.asarray(t.x)))) for t in r.tallies)
                for r in table.rows]
    return {
        "eps": eps_list,
        "max_error": errs,
        "max_error_se": [r.max_error_se for r in table.rows],
        "slope": table.slope,
        "monotone": table.monotone,
        "neumann_constant": pb.neumann_constant,
        "max_error_vs_flux_consistent_u0": flux_err,
        "estimates": [[t.estimate for t in r.tallies] for r in table.rows],
        "std_errors": [[t.std_error for t in r.tallies] for r in table.rows],
        "flagged": [[t.flagged for t in r.tallies] for r in table.rows],
    }


# ---------------------------------------------------------------------------
# self-test


def selftest(fault_injection: Optional[str] = None) -> list[tuple[str, bool, str]]:
    """Quadrature, invariance, constant-solution and reduction-lemma checks."""
    results = []

    grid = PhaseGrid.build(1.0, 16, 16, 8)
    w_phi = grid.w_phi * (1.01 if fault_injection == "weights" else 1.0)
    s2 = float(np.einsum("j,j,k->", grid.sin_phi**2, w_phi, grid.w_psi))
    total = float(np.einsum("j,k->", w_phi, grid.w_psi))
    ok = abs(s2 - FOUR_PI / 3) <= 1e-8 and abs(total - FOUR_PI) <= 1e-10
    results.append(("quadrature", ok, f"|sin|^2={s2:.12f} measure={total:.12f}"))

    cfg = MilneConfig(0.1, fixed_point_tol=1e-12)
    prof = CurvatureProfile.constant(1.0, 2.0)
    pb = MilneProblem(cfg, prof, h=3.7, n_eta=32, n_phi=8, n_psi=8)
    geo = pb.geometry
    rng = np.random.default_rng(0)
    drift_e = drift_z = 0.0
    L = geo.slab_length
    for _ in range(100):
        eta = rng.uniform(0, L)
        phi = rng.uniform(-1.5, 1.5)
        psi = rng.uniform(-np.pi, np.pi)
        pt = classify(geo, eta, phi, psi)
        if pt.region == "III":
            continue
        target = rng.uniform(0, L)
        if pt.region == "II" and np.sin(phi) < 0 and target < eta:
            target = eta + (L - eta) * rng.uniform()
        if pt.region == "I" and target < eta:
            target = eta * rng.uniform()
        try:
            new = trace(geo, pt, target - eta)
        except ValueError:
            continue
        drift_e = max(drift_e, abs(float(energy(geo, new.eta, new.phi, psi)) - pt.energy))
        drift_z = max(drift_z, abs(float(geo.zeta(new.eta, new.phi, psi)) - float(geo.zeta(eta, phi, psi))))
    ok = drift_e <= 1e-10 and drift_z <= 1e-8
    results.append(("invariance", ok, f"energy drift {drift_e:.2e}, zeta drift {drift_z:.2e}"))

    sol = solve_inflow(pb)
    err = float(np.max(np.abs(sol.f.values - 3.7)))
    ok = err <= 1e-9 and abs(sol.f_L - 3.7) <= 1e-8
    results.append(("constant-solution", ok, f"max|f-3.7|={err:.2e} f_L={sol.f_L:.12f}"))

    hcs = lambda phi, psi: np.cos(phi) * np.sin(psi)  # noqa: E731
    pb2 = MilneProblem(cfg, prof, h=hcs, n_eta=32, n_phi=8, n_psi=8)
    a = solve_inflow(pb2)
    b = solve_diffusive(pb2.replace(boundary_kind="diffusive"))
    diff = float(np.max(np.abs(a.f.values - b.f.values)))
    results.append(("reduction-lemma", diff <= 1e-9, f"max diff {diff:.2e}"))
    return results


def cmd_selftest(cfg: dict, out: Outputs) -> dict:
    fault = cfg.get("selftest", {}).get("fault_injection")
    res = selftest(fault)
    out.csv("selftest.csv", ["check", "passed", "detail"], res)
    failed = [name for name, ok, _ in res if not ok]
    return {"checks": {name: {"passed": ok, "detail": d} for name, ok, d in res}, "failed": failed}


_DISPATCH: dict[str, Callable] = {
    "milne-solve": cmd_milne_solve,
    "decay-fit": cmd_decay_fit,
    "regularity-probe": cmd_regularity_probe,
    "tangent-check": cmd_tangent_check,
    "limit-study": cmd_limit_study,
    "selftest": cmd_selftest,
}


def _set_threads(n: Optional[int]) -> None:
    if n is None:
        env = os.environ.get("MILNE_BL_THREADS")
        n = int(env) if env else None
    if n is None:
        return
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))


def run(command: str, config_path, output_dir=None, threads: Optional[int] = None) -> int:
    """Execute one run; returns the process exit status."""
    try:
        cfg = load_config(config_path)
        if cfg.get("command", command) != command:
            raise ConfigError(f"config is for {cfg['command']!r}, not {command!r}")
        if command not in _DISPATCH:
            raise ConfigError(f"unknown command {command!r}")
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _set_threads(threads)
    out_dir = Path(output_dir or cfg.get("output_dir", "milne_bl_out"))
    out = Outputs(out_dir, cfg.get("formats", ["csv", "json", "svg"]), config_hash(cfg))
    status, summary = EXIT_OK, {}
    try:
        summary = _DISPATCH[command](cfg, out)
        if command == "selftest" and summary["failed"]:
            status = EXIT_CONFIG
            print("selftest failed: " + ", ".join(summary["failed"]), file=sys.stderr)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status, summary = EXIT_CONFIG, {"error": str(exc)}
    except IncompatibilityError as exc:
        print(f"incompatible data: {exc}", file=sys.stderr)
        status, summary = EXIT_INCOMPATIBLE, {"error": "incompatible", "defect": exc.defect}
    except NonConvergenceError as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        status, summary = EXIT_NONCONVERGENCE, {"error": "non-convergence", "iterations": exc.iterations,
                                                "residuals": exc.history}
    out.json("summary.json", {"command": command, "status": status, **summary})
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="milne-bl", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return run(args.command, args.config, args.output_dir, args.threads)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
