"""Scenario pipeline: geometry, certificates, barriers, profile, solve, reports."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import barriers as bar
from .comparison import build_psi_star_lower, build_psi_star_upper, certify_coeff_bound
from .config import ConfigError, Scenario
from .geometry import (Euclidean, ExpPower, Hyperbolic, ModelManifold, PowerLaw, RadialGrid,
                       sigma_of_gamma)
from .profile import asymptotic_exponent, integrate_profile, rescale_profile
from .solver import Boundary, barenblatt, barenblatt_study, blowup_exponent, solve

__all__ = ["RunResult", "build_manifold", "scenario_sigma", "run_scenario", "run_sweep",
           "SUBCOMMAND_STAGES"]

SUBCOMMAND_STAGES = {
    "geometry": ["geometry"],
    "certify": ["geometry", "certify"],
    "barrier-check": ["certify", "barrier"],
    "profile": ["profile"],
}

SWEEP_COLUMNS = ["index", "axis", "value", "status", "t_est", "t_est_ratio", "c_prime",
                 "c_doubleprime", "profile_exponent", "expected_exponent", "ok", "error"]


@dataclass
class RunResult:
    metrics: dict
    assertions: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def failed(self, strict: bool = False) -> bool:
        bad = any(ok is False for _, _, ok in self.assertions)
        return bad or (strict and bool(self.warnings))


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.10g}"
    return "" if x is None else str(x)


def build_manifold(sc: Scenario) -> ModelManifold:
    warp = sc.get("manifold", "warp")
    n = int(sc.get("manifold", "dim"))
    rho_max = float(sc.get("manifold", "rho_max", 1000.0))
    if warp == "euclidean":
        w = Euclidean()
    elif warp == "hyperbolic":
        w = Hyperbolic()
    elif warp == "exp_power":
        w = ExpPower(float(sc.get("manifold", "c", 1.0)), float(sc.get("manifold", "sigma", 1.0)))
    elif warp == "power_law":
        w = PowerLaw(float(sc.get("manifold", "delta", 1.0)))
    elif warp == "psi_star_lower":
        w = build_psi_star_lower(float(sc.get("curvature", "c0")), float(sc.get("curvature", "gamma")),
                                 n, rho_max)
    elif warp == "psi_star_upper":
        w = build_psi_star_upper(float(sc.get("curvature", "c1")), float(sc.get("curvature", "gamma")),
                                 float(sc.get("curvature", "r1")), n, rho_max)
    else:
        raise ConfigError(f"unknown warp {warp!r}", "manifold", "warp")
    return ModelManifold(n, w)


def scenario_sigma(sc: Scenario) -> float:
    gamma = sc.get("curvature", "gamma")
    if gamma is not None:
        return sigma_of_gamma(float(gamma))
    warp = sc.get("manifold", "warp")
    if warp == "hyperbolic":
        return 1.0
    if warp == "exp_power":
        return float(sc.get("manifold", "sigma", 1.0))
    return 2.0


class _Ctx:
    def __init__(self, sc: Scenario, out: Path):
        self.sc = sc
        self.out = out
        self.man = build_manifold(sc)
        self.m = float(sc.get("pme", "m"))
        self.sigma = scenario_sigma(sc)
        self.metrics: dict = {"scenario": sc.name, "sigma": self.sigma, "m": self.m}
        self.warnings: list = []
        self.files: list = []
        self.profile = None

    def write(self, name: str, text: str):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)
        self.files.append(name)

    @property
    def cert_rho_max(self) -> float:
        radii = self.sc.get("solver", "radii") or [50.0]
        top = float(self.sc.get("manifold", "rho_max", 1000.0))
        return min(top, max(100.0, 2 * max(radii)))


def _stage_geometry(c: _Ctx):
    rho = np.geomspace(1e-3, min(c.cert_rho_max, 100.0), 200)
    w = c.man.warp
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["rho", "log_psi", "dlog_psi", "curvature_ratio", "b"])
    for row in zip(rho, w.log_psi(rho), w.dlog_psi(rho), w.curvature_ratio(rho), c.man.coeff(rho)):
        wr.writerow([_fmt(float(x)) for x in row])
    c.write("geometry.csv", buf.getvalue())
    try:
        chk = w.check_class_a()
        class_a = bool(chk.get("ok", False))
    except Exception as exc:  # a warp outside the class is reported, not fatal
        chk, class_a = {"error": str(exc)}, False
    c.metrics["class_a"] = class_a
    c.metrics["cartan_hadamard"] = bool(w.is_cartan_hadamard)
    c.write("geometry.json", json.dumps({"spec": c.man.spec(), "class_a": chk,
                                         "cartan_hadamard": c.metrics["cartan_hadamard"]},
                                        sort_keys=True, indent=2, default=str))
    if not class_a:
        c.warnings.append("warp fails the class-A check")


def _certificates(c: _Ctx):
    if "c_prime" in c.metrics:
        return
    up = certify_coeff_bound(c.man, "upper", c.sigma, rho_max=c.cert_rho_max)
    lo = certify_coeff_bound(c.man, "lower", c.sigma, rho_max=c.cert_rho_max)
    c.metrics["c_prime"] = up.constant
    c.metrics["c_doubleprime"] = lo.constant
    c._certs = (up, lo)


def _stage_certify(c: _Ctx):
    _certificates(c)
    up, lo = c._certs
    c.write("certificates.json", json.dumps({"upper": up.to_record(), "lower": lo.to_record()},
                                            sort_keys=True, indent=2))
    a = bar.super_amplitude(up.constant, c.sigma, c.m)
    r, a_sub = bar.sub_parameters(lo.constant, c.sigma, c.man.dim, c.m)
    c.metrics.update(super_a=a, sub_r=r, sub_a=a_sub)


def _stage_barrier(c: _Ctx):
    _certificates(c)
    up, lo = c._certs
    R = float(c.sc.get("solver", "barrier_R", 50.0))
    grid = RadialGrid(c.man, R, 800)
    sup = bar.PowerBarrier(bar.super_amplitude(up.constant, c.sigma, c.m), 1.0, c.sigma, c.m)
    r, a_sub = bar.sub_parameters(lo.constant, c.sigma, c.man.dim, c.m)
    sub = bar.PowerBarrier(a_sub, r, c.sigma, c.m, role="sub")
    for name, b in (("super", sup), ("sub", sub)):
        rep = bar.barrier_residual(c.man, b, grid)
        c.write(f"barrier_{name}.csv", rep.to_csv())
        c.metrics[f"{name}_ok"] = rep.ok
        if not rep.ok:
            c.warnings.append(f"{name} barrier residual violates its sign at rho = {rep.worst_radius:.6g}")
    e = bar.eta_select(c.sigma, 1.0, T=1.0, t0=0.2, m=c.m, n=c.man.dim)
    er = bar.eta_residual(c.man, e, RadialGrid(c.man, 20.0, 400), np.linspace(0.0, 1.0, 6))
    c.metrics["eta_worst"] = er.worst
    c.metrics["eta_ok"] = er.ok
    shell = bar.harmonic_shell(c.man.dim, 5.0, 1.0)
    _, lap, tol = bar.harmonic_laplacian(ModelManifold(c.man.dim, Euclidean()), shell)
    c.metrics["harmonic_ok"] = bool(float(shell(5.0)) == 0.0 and np.max(np.abs(lap)) <= tol)
    for k in ("eta_ok", "harmonic_ok"):
        if not c.metrics[k]:
            c.warnings.append(f"{k[:-3]} residual above tolerance")


def _get_profile(c: _Ctx):
    if c.profile is None:
        alpha = float(c.sc.get("datum", "alpha", 1.0))
        rho_max = float(c.sc.get("solver", "profile_rho_max", 1000.0))
        c.profile = integrate_profile(c.man, alpha, c.m, rho_max)
    return c.profile


def _stage_profile(c: _Ctx):
    p = _get_profile(c)
    T = float(c.sc.get("datum", "T", 1 / (c.m - 1)))
    out = rescale_profile(p, T)
    c.write("profile.csv", out.to_csv())
    c.metrics["expected_exponent"] = c.sigma / (c.m - 1)
    c.metrics["profile_reached"] = p.reached
    try:
        fit = asymptotic_exponent(p)
        c.metrics["profile_exponent"] = fit.exponent
        c.metrics["profile_exponent_width"] = fit.width
    except ValueError as exc:
        c.metrics["profile_exponent"] = None
        c.warnings.append(str(exc))


def _datum(c: _Ctx):
    d = c.sc.data.get("datum", {})
    gen = d.get("generator", "zero")
    amp = float(d.get("amplitude", 1.0))
    if gen == "zero":
        return lambda r: np.zeros_like(np.asarray(r, dtype=float))
    if gen == "constant":
        return lambda r: amp + 0 * np.asarray(r, dtype=float)
    if gen == "power":
        s = float(d.get("exponent", 1.0))
        return lambda r: amp * np.asarray(r, dtype=float) ** s
    if gen == "profile":
        p = rescale_profile(_get_profile(c), float(d.get("T", 1.0)))
        return lambda r: amp * p(r)
    if gen in ("super_barrier", "sub_barrier"):
        _certificates(c)
        up, lo = c._certs
        T = float(d.get("T", 1.0))
        if gen == "super_barrier":
            b = bar.PowerBarrier(bar.super_amplitude(up.constant, c.sigma, c.m), 1.0, c.sigma, c.m, T=T)
        else:
            r, a = bar.sub_parameters(lo.constant, c.sigma, c.man.dim, c.m)
            b = bar.PowerBarrier(a, r, c.sigma, c.m, T=T, role="sub")
        return lambda r: amp * b(r)
    if gen == "barenblatt":
        t0, C = float(d.get("t0", 1.0)), float(d.get("C", 1.0))
        return lambda r: amp * barenblatt(r, t0, c.man.dim, c.m, C)
    if gen == "csv":
        base = Path(c.sc.source).parent if c.sc.source else Path(".")
        path = base / d["path"]
        rows = list(csv.DictReader(path.open()))
        rr = np.array([float(x["rho"]) for x in rows])
        uu = np.array([float(x["u0"]) for x in rows])
        return lambda r: np.interp(r, rr, uu)
    raise ConfigError(f"unknown generator {gen!r}", "datum", "generator")


def _boundary(c: _Ctx, f, grid: RadialGrid) -> Boundary:
    kind = c.sc.get("solver", "boundary", "dirichlet")
    if kind == "essinf":
        return Boundary.dirichlet(float(np.min(f(grid.centers))))
    if kind == "tail_slope":
        R, e = grid.R, 1e-6 * grid.R
        lo, hi = float(f(R - e)), float(f(R + e))
        if lo <= 0 or hi <= 0:
            return Boundary.dirichlet(0.0)
        return Boundary.tail_slope((math.log(hi) - math.log(lo)) / (2 * e))
    return Boundary.dirichlet(float(c.sc.get("solver", "boundary_value", 0.0)))


def _stage_solve(c: _Ctx):
    d = c.sc.data.get("datum", {})
    s = c.sc.data.get("solver", {})
    if d.get("generator") == "barenblatt":
        levels = tuple(int(x) for x in s.get("levels", [100, 200, 400]))
        R = float((s.get("radii") or [8.0])[0])
        errs, contr = barenblatt_study(levels, R=R, n=c.man.dim, m=c.m, t0=float(d.get("t0", 1.0)),
                                       t1=float(d.get("t0", 1.0)) + float(s.get("horizon", 1.0)),
                                       C=float(d.get("C", 1.0)))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cells", "l1_error", "contraction"])
        for i, (n, e) in enumerate(zip(levels, errs)):
            w.writerow([n, _fmt(e), _fmt(contr[i - 1]) if i else ""])
        c.write("convergence.csv", buf.getvalue())
        c.metrics["final_error"] = errs[-1]
        c.metrics["min_contraction"] = min(contr) if contr else None
        c.metrics["order"] = float(math.log2(min(contr))) if contr else None
        return
    f = _datum(c)
    radii = s.get("radii") or [20.0]
    horizon = float(s.get("horizon", 1.0))
    cpu = float(s.get("cells_per_unit", 20.0))
    norm = bar.WeightedNorm(float(s.get("norm_r", 1.0)), c.sigma, c.m)
    T_datum = float(d.get("T", 1.0))
    is_profile = d.get("generator") == "profile"
    outs = (np.arange(1, 9) / 10 * T_datum / float(d.get("amplitude", 1.0)) ** (c.m - 1)
            if is_profile else np.linspace(0, horizon, 11)[1:])
    outs = [float(x) for x in outs if x <= horizon]
    for R in radii:
        grid = RadialGrid(c.man, R, max(4, int(round(cpu * R))))
        u0 = np.asarray(f(grid.centers), dtype=float)
        rep = solve(c.man, grid, u0, c.m, horizon, norm, _boundary(c, f, grid), output_times=outs,
                    rel_change=float(s.get("rel_change", 0.01)), dt0=s.get("dt"))
        tag = f"R{R:g}"
        c.write(f"trajectory_{tag}.csv", rep.trajectory_csv())
        c.write(f"report_{tag}.json", rep.to_json())
        c.metrics[f"status_{tag}"] = rep.status
        c.metrics[f"t_est_{tag}"] = rep.t_est
        c.metrics["status"] = rep.status
        c.metrics["t_est"] = rep.t_est
        c.metrics["max_u_final"] = float(rep.max_u[-1])
        c.metrics["max_u_initial"] = float(rep.max_u[0])
        if is_profile and u0.min() > 0:
            spread = 0.0
            for t, snap in rep.snapshots.items():
                if t <= 0.8 * T_datum:
                    q = snap / u0
                    spread = max(spread, float((q.max() - q.min()) / q.mean()))
            c.metrics["separable_spread"] = spread
        if rep.status == "BlowUp":
            try:
                c.metrics["blowup_exponent"] = blowup_exponent(rep, rep.t_est)
            except ValueError:
                pass


STAGE_FUNCS = {
    "geometry": _stage_geometry,
    "certify": _stage_certify,
    "barrier": _stage_barrier,
    "profile": _stage_profile,
    "solve": _stage_solve,
}


def run_scenario(sc: Scenario, out, stages=None) -> RunResult:
    """Run ``stages`` (default: the scenario pipeline) and write artifacts to ``out``."""
    out = Path(out)
    c = _Ctx(sc, out)
    for st in stages or sc.pipeline or ["solve"]:
        STAGE_FUNCS[st](c)
    results = [(a.label, a.text(), a.check(c.metrics)) for a in sc.assertions]
    c.metrics["warnings"] = list(c.warnings)
    c.write("metrics.json", json.dumps(c.metrics, sort_keys=True, indent=2, default=_fmt))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "assertion", "result"])
    for label, text, ok in results:
        w.writerow([label, text, {True: "pass", False: "fail", None: "skipped"}[ok]])
    c.write("assertions.csv", buf.getvalue())
    return RunResult(c.metrics, results, c.warnings, c.files)


def _sweep_worker(job):
    idx, axis, value, sc, out = job
    try:
        res = run_scenario(sc.with_value(axis, value), out)
        m = res.metrics
        return {"index": idx, "axis": axis, "value": value, "status": m.get("status"),
                "t_est": m.get("t_est"), "c_prime": m.get("c_prime"),
                "c_doubleprime": m.get("c_doubleprime"),
                "profile_exponent": m.get("profile_exponent"),
                "expected_exponent": m.get("expected_exponent"),
                "ok": not res.failed(), "error": ""}
    except Exception as exc:  # partial failures are recorded per row
        return {"index": idx, "axis": axis, "value": value, "ok": False,
                "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(sc: Scenario, out, axis: str | None = None, values=None, workers: int | None = None):
    """Run one scenario per axis value and merge key metrics into ``sweep.csv``."""
    out = Path(out)
    axis = axis or sc.get("sweep", "axis")
    if values is None:
        values = sc.get("sweep", "values", [])
    if not axis:
        raise ConfigError("sweep needs an axis", "sweep", "axis")
    if values and axis.split(".")[0] not in sc.data and axis.split(".")[0] != "datum":
        raise ConfigError(f"axis {axis!r} names no scenario section", "sweep", "axis")
    workers = int(workers or sc.get("sweep", "workers", 1))
    jobs = [(i, axis, float(v), sc, out / f"{i:03d}") for i, v in enumerate(values)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(j) for j in jobs]
    rows.sort(key=lambda r: r["index"])
    base = rows[0].get("t_est") if rows else None
    for r in rows:
        t = r.get("t_est")
        r["t_est_ratio"] = t / base if (t is not None and base) else None
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(k)) for k in SWEEP_COLUMNS])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue())
    return rows
