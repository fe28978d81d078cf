"""Order sweeps: continuity in ``s``, difference quotients and derivative checks.

A sweep is described by a JSON config (see :class:`SweepConfig`); each named
check produces rows in one long-format CSV table, and ``manifest.json``
records the config, versions, seed, wall times and a pass/fail summary.
Rows hold no timing information, so CSV bytes depend only on the config.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .domain import DiscreteFunction, Mesh, atomic_write_text, from_spec, poincare_constant
from .forms import cached_assemble, energy, mass
from .functions import resolve
from .quadrature import KernelSpec, Weight
from .solve import dlambda_plus, eig, poisson_solve, s_derivative_solve

BAND = (0.02, 0.98)
PRNG = "MT19937"

COLUMNS = [
    "check", "mesh", "mesh_fingerprint", "kernel", "quad_tol", "s", "sigma", "k",
    "quantity", "value", "reference", "tolerance", "passed",
]

DEFAULT_TOLERANCES = {
    "ratio_low": 1.33,
    "ratio_high": 3.0,
    "order_min": 0.8,
    "gap_factor": 10.0,
    "cluster_slack": 1e-6,
    "gap_tol": 1e-6,
}


@dataclass
class SweepConfig:
    """Parameters of a sweep; JSON keys are the field names."""

    mesh: str = "interval:64"
    s_grid: list = field(default_factory=lambda: [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7])
    sigma_ladder: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    s: list = field(default_factory=lambda: [0.4])
    f: str = "cospix"
    phi: str = "cospix"
    psi: str = "x"
    checks: list = field(default_factory=lambda: list(CHECKS))
    tolerances: dict = field(default_factory=dict)
    out_dir: str = "sweep-out"
    seed: int = 0
    k: int = 3
    probes: int = 200
    probe: float | None = None
    quad_tol: float | None = None

    def __post_init__(self):
        self.s_grid = [float(v) for v in self.s_grid]
        self.sigma_ladder = [float(v) for v in self.sigma_ladder]
        self.s = [float(v) for v in (self.s if isinstance(self.s, (list, tuple)) else [self.s])]
        self.checks = list(self.checks)
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise ValueError(f"unknown check(s) {unknown} (known: {', '.join(CHECKS)})")
        bad_tol = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if bad_tol:
            raise ValueError(f"unknown tolerance key(s) {sorted(bad_tol)}")
        self.tolerances = {**DEFAULT_TOLERANCES, **self.tolerances}
        if any(b <= a for a, b in zip(self.s_grid, self.s_grid[1:])):
            raise ValueError("s_grid must be strictly ascending")
        if any(not v > 0 for v in self.sigma_ladder):
            raise ValueError("sigma_ladder values must be positive")
        if any(b >= a for a, b in zip(self.sigma_ladder, self.sigma_ladder[1:])):
            raise ValueError("sigma_ladder must be strictly decreasing")
        smax = max(self.sigma_ladder, default=0.0)
        for v in self.s_grid + self.s + [v + smax for v in self.s]:
            if not BAND[0] < v < BAND[1]:
                raise ValueError(f"order {v!r} outside the quadrature band {BAND}")
        if self.probe is not None:
            if self.probe not in self.s_grid or self.probe == self.s_grid[-1]:
                raise ValueError("probe must be an s_grid value other than the last")
        if int(self.k) < 1:
            raise ValueError("k must be at least 1")
        if int(self.probes) < 1:
            raise ValueError("probes must be at least 1")
        self.k = int(self.k)
        self.probes = int(self.probes)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, data: dict) -> "SweepConfig":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config key(s) {sorted(extra)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)

    def probe_point(self):
        if len(self.s_grid) < 2:
            raise ValueError("continuity checks need at least two s_grid values")
        i = self.s_grid.index(self.probe) if self.probe is not None else (len(self.s_grid) - 1) // 2
        return self.s_grid[i], self.s_grid[i + 1] - self.s_grid[i]


class Context:
    """Mesh, mass matrix and memoised assemblies shared by the checks of a run."""

    def __init__(self, config: SweepConfig, threads: int | None = None):
        self.config = config
        self.mesh: Mesh = from_spec(config.mesh)
        self.M = mass(self.mesh)
        self.threads = threads
        self._spectra = {}

    def A(self, s: float):
        return cached_assemble(self.mesh, s, Weight.PLAIN, self.config.quad_tol, self.threads)

    def L(self, s: float):
        return cached_assemble(self.mesh, s, Weight.LOG, self.config.quad_tol, self.threads)

    def f(self) -> DiscreteFunction:
        return resolve(self.config.f, self.mesh)

    def u(self, s: float) -> DiscreteFunction:
        return poisson_solve(self.mesh, s, self.f(), self.A(s), self.M)

    def spectrum(self, s: float, k: int):
        key = (round(s, 12), k)
        if key not in self._spectra:
            self._spectra[key] = eig(self.mesh, s, k, self.A(s), self.M,
                                     self.config.tolerances["gap_tol"])
        return self._spectra[key]

    def l2(self, v: np.ndarray) -> float:
        return math.sqrt(max(float(v @ self.M.mat @ v), 0.0))

    def row(self, check, s, quantity, value, *, sigma="", k="", reference="", tolerance="",
            passed=True, weight=Weight.PLAIN):
        kernel = KernelSpec(self.mesh.dim, s, weight).describe() if s != "" else ""
        return {
            "check": check, "mesh": self.config.mesh, "mesh_fingerprint": self.mesh.fingerprint,
            "kernel": kernel, "quad_tol": _fmt(self.config.quad_tol) if self.config.quad_tol else "default",
            "s": _fmt(s), "sigma": _fmt(sigma), "k": k, "quantity": quantity, "value": _fmt(value),
            "reference": _fmt(reference), "tolerance": _fmt(tolerance),
            "passed": "pass" if passed else "fail",
        }


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return ";".join(_fmt(x) for x in v)
    return "" if v is None else str(v)


def _ratio_rows(ctx: Context, check, value_at, distance, k=""):
    """Increment ratio at the probe point for spacings ``h`` and ``h/2``."""
    tol = ctx.config.tolerances
    probe, h = ctx.config.probe_point()
    q0 = value_at(probe)
    coarse = distance(value_at(probe + h), q0)
    fine = distance(value_at(probe + 0.5 * h), q0)
    if coarse == 0.0 and fine == 0.0:
        ratio, ok = float("nan"), True
    else:
        ratio = coarse / fine if fine > 0 else float("inf")
        ok = tol["ratio_low"] <= ratio <= tol["ratio_high"]
    band = [tol["ratio_low"], tol["ratio_high"]]
    return [
        ctx.row(check, probe, "increment_h", coarse, sigma=h, k=k),
        ctx.row(check, probe, "increment_h/2", fine, sigma=0.5 * h, k=k),
        ctx.row(check, probe, "refinement_ratio", ratio, sigma=h, k=k, tolerance=band, passed=ok),
    ]


def run_solution_continuity(ctx: Context) -> list:
    """``||u_{s_{i+1}} - u_{s_i}||`` along the grid and its refinement ratio."""
    cfg = ctx.config
    rows = []
    us = {s: ctx.u(s).coeffs for s in cfg.s_grid}
    for a, b in zip(cfg.s_grid, cfg.s_grid[1:]):
        rows.append(ctx.row("solution_continuity", a, "increment_l2", ctx.l2(us[b] - us[a]), sigma=b - a))
    rows += _ratio_rows(ctx, "solution_continuity", lambda s: ctx.u(s).coeffs,
                        lambda x, y: ctx.l2(x - y))
    return rows


def run_diff_quotient(ctx: Context) -> list:
    """``||v_sigma - w_s||`` along the sigma ladder, with a least-squares order."""
    cfg = ctx.config
    rows = []
    f = ctx.f()
    for s in cfg.s:
        u = ctx.u(s)
        w = s_derivative_solve(ctx.mesh, s, f, u, ctx.A(s), ctx.L(s), ctx.M).w_s
        errs = []
        for sigma in cfg.sigma_ladder:
            v = (ctx.u(s + sigma).coeffs - u.coeffs) / sigma
            errs.append(ctx.l2(v - w.coeffs))
        for i, (sigma, e) in enumerate(zip(cfg.sigma_ladder, errs)):
            ok = i == 0 or e < errs[i - 1] or (e == 0.0 and errs[i - 1] == 0.0)
            rows.append(ctx.row("diff_quotient", s, "error_l2", e, sigma=sigma,
                                reference=errs[i - 1] if i else "", passed=ok))
        rows.append(_order_row(ctx, "diff_quotient", s, cfg.sigma_ladder, errs))
    return rows


def least_squares_order(sigmas, errs) -> float:
    x = np.log(np.asarray(sigmas[-3:], dtype=float))
    y = np.log(np.asarray(errs[-3:], dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def _order_row(ctx, check, s, sigmas, errs):
    floor = ctx.config.tolerances["order_min"]
    if len(errs) < 3:
        return ctx.row(check, s, "ls_order", float("nan"), tolerance=floor, passed=False)
    if all(e == 0.0 for e in errs):
        return ctx.row(check, s, "ls_order", float("nan"), tolerance=floor, passed=True)
    order = least_squares_order(sigmas, errs)
    return ctx.row(check, s, "ls_order", order, tolerance=floor, passed=order >= floor)


def run_eigen_continuity(ctx: Context) -> list:
    """``lambda_{k,s}`` over the grid, with positivity, ordering and refinement ratios."""
    cfg = ctx.config
    rows = []
    for s in cfg.s_grid:
        spec = ctx.spectrum(s, cfg.k)
        lam = spec.eigenvalues
        for i, value in enumerate(lam):
            ok = value > 0 and (i == 0 or lam[i - 1] <= value)
            cl = spec.cluster_of(i)
            rows.append(ctx.row("eigen_continuity", s, "eigenvalue", value, k=i + 1,
                                reference=len(cl), passed=ok))
    for i in range(cfg.k):
        rows += _ratio_rows(ctx, "eigen_continuity",
                            lambda s, i=i: float(ctx.spectrum(s, cfg.k).eigenvalues[i]),
                            lambda x, y: abs(x - y), k=i + 1)
    return rows


def run_dlambda_check(ctx: Context) -> list:
    """Forward quotients of ``lambda_1`` against the right derivative."""
    cfg = ctx.config
    tol = cfg.tolerances
    rows = []
    for s in cfg.s:
        rep = dlambda_plus(ctx.mesh, s, ctx.A(s), ctx.L(s), ctx.M, tol["gap_tol"])
        simple = rep.multiplicity == 1
        rows.append(ctx.row("dlambda", s, "dlambda_plus", rep.dplus_lambda, k=rep.multiplicity))
        gaps = []
        for sigma in cfg.sigma_ladder:
            lam = float(ctx.spectrum(s + sigma, 1).eigenvalues[0])
            q = (lam - rep.lambda1) / sigma
            gap = abs(q - rep.dplus_lambda)
            if simple:
                ok = not gaps or gap < gaps[-1]
                rows.append(ctx.row("dlambda", s, "forward_quotient", q, sigma=sigma, k=1,
                                    reference=rep.dplus_lambda, passed=ok))
                rows.append(ctx.row("dlambda", s, "gap", gap, sigma=sigma, k=1, passed=ok))
            else:
                ok = q >= rep.dplus_lambda - tol["cluster_slack"]
                rows.append(ctx.row("dlambda", s, "forward_quotient_lower_bound", q, sigma=sigma,
                                    k=rep.multiplicity, reference=rep.dplus_lambda,
                                    tolerance=tol["cluster_slack"], passed=ok))
            gaps.append(gap)
        if simple and len(gaps) >= 2:
            factor = gaps[0] / gaps[-1] if gaps[-1] > 0 else float("inf")
            rows.append(ctx.row("dlambda", s, "gap_reduction", factor, k=1,
                                tolerance=tol["gap_factor"], passed=factor >= tol["gap_factor"]))
    return rows


def run_form_continuity(ctx: Context) -> list:
    """``E_a(phi, psi)`` over the grid, with symmetry and refinement ratio."""
    cfg = ctx.config
    phi = resolve(cfg.phi, ctx.mesh)
    psi = resolve(cfg.psi, ctx.mesh)
    rows = []
    for a in cfg.s_grid:
        A = ctx.A(a)
        e1 = energy(phi, psi, A)
        e2 = energy(psi, phi, A)
        scale = math.sqrt(abs(energy(phi, phi, A) * energy(psi, psi, A)))
        ok = abs(e1 - e2) <= 1e-12 * max(scale, 1e-300)
        rows.append(ctx.row("form_continuity", a, "energy", e1, reference=e2, passed=ok))
    rows += _ratio_rows(ctx, "form_continuity", lambda a: energy(phi, psi, ctx.A(a)),
                        lambda x, y: abs(x - y))
    return rows


def run_poincare(ctx: Context) -> list:
    """Seeded zero-mean probes of ``u^T M u <= gamma * u^T A_s u``."""
    cfg = ctx.config
    rng = np.random.Generator(np.random.MT19937(cfg.seed))
    c = ctx.M.mat @ np.ones(ctx.mesh.num_vertices)
    rows = []
    for s in cfg.s:
        A = ctx.A(s).mat
        gamma = poincare_constant(ctx.mesh, s)
        for i in range(cfg.probes):
            u = rng.standard_normal(ctx.mesh.num_vertices)
            u -= (c @ u) / ctx.mesh.measure
            lhs = float(u @ ctx.M.mat @ u)
            rhs = gamma * float(u @ A @ u)
            rows.append(ctx.row("poincare", s, "l2_over_bound", lhs / rhs, k=i,
                                reference=gamma, tolerance=1.0, passed=lhs <= rhs))
    return rows


CHECKS = {
    "solution_continuity": run_solution_continuity,
    "diff_quotient": run_diff_quotient,
    "eigen_continuity": run_eigen_continuity,
    "dlambda": run_dlambda_check,
    "form_continuity": run_form_continuity,
    "poincare": run_poincare,
}


def _sort_key(row):
    def num(v):
        return float(v) if v not in ("", None) else -1.0
    return (row["check"], num(row["s"]), -num(row["sigma"]) if row["sigma"] else 0.0)


def rows_to_csv(rows: list) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\r\n")
    writer.writeheader()
    for row in sorted(rows, key=_sort_key):
        writer.writerow(row)
    return buf.getvalue()


def versions() -> dict:
    return {"fraclap": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run(config: SweepConfig, threads: int | None = None, out_dir=None) -> dict:
    """Run every configured check, write ``<check>.csv`` and ``manifest.json``.

    Returns the manifest.
    """
    out = Path(out_dir if out_dir is not None else config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(config, threads)
    summary, timings = {}, {}
    for name in config.checks:
        start = time.perf_counter()
        rows = CHECKS[name](ctx)
        timings[name] = time.perf_counter() - start
        atomic_write_text(out / f"{name}.csv", rows_to_csv(rows))
        failed = sum(r["passed"] == "fail" for r in rows)
        summary[name] = {"rows": len(rows), "failed": failed, "passed": failed == 0}
    manifest = {
        "config": asdict(config),
        "mesh_fingerprint": ctx.mesh.fingerprint,
        "versions": versions(),
        "seed": config.seed,
        "prng": PRNG,
        "threads": threads,
        "wall_time_seconds": timings,
        "summary": summary,
        "passed": all(v["passed"] for v in summary.values()),
        "notes": "refinement-ratio band and order floor are engineering choices, "
                 "not constants from the analysis",
    }
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def check_suite() -> list:
    """Built-in property suite: (case name, config) pairs."""
    ladder = [1e-1, 1e-2, 1e-3, 1e-4]
    grid = [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7]
    return [
        ("interval-derivatives", SweepConfig(
            mesh="interval:64", s=[0.3, 0.4, 0.6], sigma_ladder=ladder,
            checks=["diff_quotient", "dlambda"])),
        ("interval-continuity", SweepConfig(
            mesh="interval:64", s_grid=grid, probe=0.5, k=3,
            checks=["solution_continuity", "eigen_continuity", "form_continuity"])),
        ("interval-poincare", SweepConfig(
            mesh="interval:32", s=[0.25, 0.5, 0.75], checks=["poincare"])),
        ("square-cluster", SweepConfig(
            mesh="square:4", s=[0.4], sigma_ladder=ladder, checks=["dlambda"])),
        ("square-poincare", SweepConfig(
            mesh="square:4", s=[0.5], checks=["poincare"])),
    ]


def run_check_suite(out_dir, seed: int = 0, threads: int | None = None) -> list:
    """Run the suite into ``out_dir/<case>/``; returns (case, check, passed, failed rows)."""
    out = Path(out_dir)
    results = []
    for case, cfg in check_suite():
        cfg.seed = int(seed)
        cfg.out_dir = str(out / case)
        manifest = run(cfg, threads)
        for name, info in manifest["summary"].items():
            results.append((case, name, info["passed"], info["failed"], info["rows"]))
    lines = ["case,check,passed,failed_rows,rows"]
    lines += [f"{c},{n},{'pass' if p else 'fail'},{f},{r}" for c, n, p, f, r in results]
    atomic_write_text(out / "summary.csv", "\r\n".join(lines) + "\r\n")
    return results
