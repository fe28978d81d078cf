"""Acceptance criteria, one test per criterion.

Each test records a pass/fail line (printed in the terminal summary) before
asserting, so failures still report the measured values.
"""

import csv
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from fraclap.domain import generate_interval, interpolate
from fraclap.forms import assemble, mass
from fraclap.functions import get
from fraclap.quadrature import KernelSpec, Weight
from fraclap.solve import eig, poisson_residual, poisson_solve
from fraclap.specfun import c_ns, c_ns_upper_bound, dc_ns, log_decay_bound, psi_sigma
from fraclap.sweep import SweepConfig, run
from oracles import dense_nontrivial_eigenvalues, load_interval


def test_criterion_01_constant_bounds(criterion):
    t0 = time.perf_counter()
    grid = np.linspace(0.01, 0.99, 99)
    worst_bound, worst_fd = 0.0, 0.0
    ok = True
    for N in (1, 2, 3):
        top = c_ns_upper_bound(N)
        assert top == pytest.approx(4 * math.gamma(N / 2 + 1))
        for s in grid:
            c = c_ns(N, s)
            ok &= 0 < c <= top
            worst_bound = max(worst_bound, c / top)
            h = 1e-6
            fd = (c_ns(N, s + h) - c_ns(N, s - h)) / (2 * h)
            worst_fd = max(worst_fd, abs(dc_ns(N, s) - fd) / abs(fd))
    ok &= worst_fd < 1e-6
    elapsed = time.perf_counter() - t0
    assert criterion(1, "constant bounds", ok,
                     f"max C/(4 Gamma(N/2+1)) = {worst_bound:.4f}, max dC rel err vs FD = {worst_fd:.1e}",
                     elapsed, 1.0)


def test_criterion_02_psi_identity(criterion):
    t0 = time.perf_counter()
    rng = np.random.Generator(np.random.MT19937(2))
    r = 10.0 ** rng.uniform(-2, 2, 10_000)
    sigma = rng.uniform(0, 0.5, 10_000)
    err = np.abs(r ** (-2 * sigma) - 1 + 2 * sigma * psi_sigma(r, sigma) * np.log(r))
    worst = float(err.max())
    decay_ok = True
    for rr in np.logspace(-6, 6, 1201):
        for eps0 in (0.1, 0.5, 1.0):
            lhs, bound = log_decay_bound(rr, eps0, 1.0)
            decay_ok &= lhs <= (min(bound) if isinstance(bound, tuple) else bound)
    elapsed = time.perf_counter() - t0
    assert criterion(2, "psi_sigma identity", worst < 1e-12 and decay_ok,
                     f"max abs identity error {worst:.1e} on 10^4 pairs, log decay holds: {decay_ok}",
                     elapsed, 1.0)


def test_criterion_03_assembly_oracle(criterion):
    t0 = time.perf_counter()
    ref = load_interval()
    worst_entry, worst_null, min_gap = 0.0, 0.0, np.inf
    psd = True
    for n in (8, 16, 32):
        mesh = generate_interval(n)
        for s in (0.25, 0.5, 0.75):
            for weight, key in ((Weight.PLAIN, "A"), (Weight.LOG, "L")):
                got = assemble(mesh, KernelSpec(1, s, weight)).mat
                R = ref[f"{key}_n{n}_s{s}"]
                worst_entry = max(worst_entry, float(np.max(np.abs(got - R) / np.abs(R))))
                if weight is Weight.PLAIN:
                    worst_null = max(worst_null, float(np.max(np.abs(got.sum(axis=1))) / np.abs(got).max()))
                    ev = np.linalg.eigvalsh(got)
                    psd &= ev[0] > -1e-12 * ev[-1] and abs(ev[0]) < 1e-10 * ev[-1]
                    min_gap = min(min_gap, ev[1] / ev[-1])
    ok = worst_entry < 1e-6 and worst_null < 1e-8 and psd and min_gap > 1e-8
    elapsed = time.perf_counter() - t0
    assert criterion(3, "assembly oracle equivalence", ok,
                     f"max entry rel err {worst_entry:.1e}, |A1|/|A| {worst_null:.1e}, "
                     f"PSD with 1-dim null space: {psd and min_gap > 1e-8} (min lambda_2/lambda_max {min_gap:.1e})",
                     elapsed, 120.0)


def test_criterion_04_weak_residual(criterion):
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for n in (16, 64):
        mesh = generate_interval(n)
        M = mass(mesh)
        for s in (0.25, 0.5, 0.75):
            A = assemble(mesh, KernelSpec(1, s))
            for name in ("cospix", "legendre2", "bump"):
                f = interpolate(mesh, get(name, mesh), zero_mean=True)
                u = poisson_solve(mesh, s, f, A, M)
                worst = max(worst, poisson_residual(u, f, A, M))
                count += 1
    elapsed = time.perf_counter() - t0
    assert criterion(4, "weak-formulation residual", worst < 1e-9,
                     f"max zero-mean residual {worst:.1e} over {count} (n, s, f) cases", elapsed, 10.0)


def test_criterion_05_poincare(criterion, tmp_path):
    t0 = time.perf_counter()
    total, failed = 0, 0
    for mesh_spec in ("interval:32", "square:4", "disc:10"):
        cfg = SweepConfig(mesh=mesh_spec, s=[0.25, 0.5, 0.75], checks=["poincare"], probes=200, seed=5)
        run(cfg, out_dir=tmp_path / mesh_spec.replace(":", "_"))
        rows = list(csv.DictReader((tmp_path / mesh_spec.replace(":", "_") / "poincare.csv").open()))
        total += len(rows)
        failed += sum(r["passed"] != "pass" for r in rows)
    elapsed = time.perf_counter() - t0
    assert criterion(5, "discrete Poincare", failed == 0 and total == 1800,
                     f"{total - failed}/{total} probes pass (200 per mesh and s)", elapsed, 30.0)


def test_criterion_06_difference_quotients(criterion, tmp_path):
    t0 = time.perf_counter()
    cfg = SweepConfig(mesh="interval:64", s=[0.3, 0.4, 0.6], sigma_ladder=[1e-1, 1e-2, 1e-3, 1e-4],
                      f="cospix", checks=["diff_quotient"])
    run(cfg, out_dir=tmp_path)
    rows = list(csv.DictReader((tmp_path / "diff_quotient.csv").open()))
    details, ok = [], True
    for s in ("0.3", "0.4", "0.6"):
        errs = [float(r["value"]) for r in rows if r["s"] == s and r["quantity"] == "error_l2"]
        order = [float(r["value"]) for r in rows if r["s"] == s and r["quantity"] == "ls_order"][0]
        decreasing = all(b < a for a, b in zip(errs, errs[1:]))
        ok &= decreasing and order >= 0.8 and len(errs) == 4
        details.append(f"s={s}: errors {' > '.join(f'{e:.2e}' for e in errs)}, order {order:.3f}")
    elapsed = time.perf_counter() - t0
    assert criterion(6, "solution derivative", ok, "; ".join(details), elapsed, 120.0)


def test_criterion_07_eigenvalue_derivative(criterion, tmp_path):
    t0 = time.perf_counter()
    ladder = [1e-1, 1e-2, 1e-3, 1e-4]
    run(SweepConfig(mesh="interval:64", s=[0.4], sigma_ladder=ladder, checks=["dlambda"]),
        out_dir=tmp_path / "interval")
    rows = list(csv.DictReader((tmp_path / "interval" / "dlambda.csv").open()))
    mult = [r for r in rows if r["quantity"] == "dlambda_plus"][0]["k"]
    gaps = {float(r["sigma"]): float(r["value"]) for r in rows if r["quantity"] == "gap"}
    factor = gaps[1e-1] / gaps[1e-4]
    simple_ok = mult == "1" and factor >= 10

    run(SweepConfig(mesh="square:4", s=[0.4], sigma_ladder=ladder, checks=["dlambda"]),
        out_dir=tmp_path / "square")
    rows = list(csv.DictReader((tmp_path / "square" / "dlambda.csv").open()))
    head = [r for r in rows if r["quantity"] == "dlambda_plus"][0]
    dplus = float(head["value"])
    quotients = [float(r["value"]) for r in rows if r["quantity"] == "forward_quotient_lower_bound"]
    margin = min(q - (dplus - 1e-6) for q in quotients)
    cluster_ok = int(head["k"]) >= 2 and len(quotients) == 4 and margin >= 0
    elapsed = time.perf_counter() - t0
    assert criterion(7, "first-eigenvalue right derivative", simple_ok and cluster_ok,
                     f"interval gap reduction x{factor:.0f} (multiplicity {mult}); square cluster of "
                     f"{head['k']}, min quotient - (dlambda_plus - 1e-6) = {margin:.2e}",
                     elapsed, 300.0)


def test_criterion_08_eigen_oracle(criterion):
    t0 = time.perf_counter()
    mesh = generate_interval(12)
    s = 0.5
    A = assemble(mesh, KernelSpec(1, s))
    M = mass(mesh)
    spec = eig(mesh, s, 3, A, M)
    ref = dense_nontrivial_eigenvalues(0.5 * c_ns(1, s) * A.mat, M.mat)
    rel = float(np.max(np.abs(spec.eigenvalues - ref[:3]) / ref[:3]))
    V = spec.matrix
    ortho = float(np.max(np.abs(V.T @ M.mat @ V - np.eye(3))))
    full = eig(mesh, s, mesh.num_vertices - 2, A, M).eigenvalues
    positive = bool(np.all(full > 0))
    ok = rel < 1e-8 and ortho < 1e-10 and positive
    elapsed = time.perf_counter() - t0
    assert criterion(8, "eigen oracle", ok,
                     f"max rel err {rel:.1e} on first three, M-orthonormality {ortho:.1e}, "
                     f"all {len(full)} nontrivial eigenvalues positive: {positive}", elapsed, 10.0)


def test_criterion_09_continuity_scans(criterion, tmp_path):
    t0 = time.perf_counter()
    grid = [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7]
    run(SweepConfig(mesh="interval:64", s_grid=grid, probe=0.5, k=3,
                    checks=["form_continuity", "eigen_continuity"]), out_dir=tmp_path)
    ratios = []
    for name in ("form_continuity", "eigen_continuity"):
        for r in csv.DictReader((tmp_path / f"{name}.csv").open()):
            if r["quantity"] == "refinement_ratio":
                label = "E_s" if name == "form_continuity" else f"lambda_{r['k']}"
                ratios.append((label, float(r["value"])))
    ok = len(ratios) == 4 and all(1.33 <= v <= 3.0 for _, v in ratios)
    elapsed = time.perf_counter() - t0
    assert criterion(9, "continuity scans", ok,
                     ", ".join(f"{k} ratio {v:.3f}" for k, v in ratios) + " (band [1.33, 3.0])",
                     elapsed, 120.0)


def test_criterion_10_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    outs = {}
    for threads in (1, 8):
        out = tmp_path / f"threads{threads}"
        proc = subprocess.run([sys.executable, "-m", "fraclap", "check", "--out", str(out), "--seed", "0",
                               "--threads", str(threads)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        outs[threads] = out
    files = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*.csv"))
    other = sorted(p.relative_to(outs[8]) for p in outs[8].rglob("*.csv"))
    same = files == other and all((outs[1] / f).read_bytes() == (outs[8] / f).read_bytes() for f in files)
    elapsed = time.perf_counter() - t0
    assert criterion(10, "determinism", same and len(files) > 0,
                     f"{len(files)} CSVs byte-identical between 1 and 8 threads: {same}", elapsed, 600.0)
