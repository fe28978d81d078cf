"""Command-line front end.

Exit status is 0 on success, 1 on a domain or validation error (one-line
diagnostic on stderr) and 2 on a usage error.  Files are written to a
temporary name and renamed on success.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

import numpy as np

from . import __version__
from .domain import MeshError, atomic_write_text, from_spec
from .forms import assemble, export_matrix_market, mass, pv_apply
from .functions import get as get_function
from .functions import names as function_names
from .functions import resolve
from .quadrature import KernelSpec, QuadratureError, Weight
from .solve import SolverError, dlambda_plus, eig, poisson_solve
from .specfun import validate_order
from .sweep import SweepConfig, run, run_check_suite


def _order(text: str) -> float:
    try:
        return validate_order(float(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _ladder(text: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad sigma ladder {text!r}") from None
    if not vals or any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("sigma ladder needs positive comma-separated values")
    return vals


def _points(text: str) -> list:
    try:
        pts = [[float(c) for c in p.split(",")] for p in text.split(";") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad point list {text!r}") from None
    if not pts:
        raise argparse.ArgumentTypeError("need at least one point")
    return pts


def _mesh_spec(text: str) -> str:
    kind, _, rest = text.partition(":")
    if kind in ("interval", "square", "disc"):
        parts = rest.split(":")
        try:
            int(parts[0])
            if kind == "interval":
                [float(p) for p in parts[1:]]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad mesh spec {text!r}") from None
    return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclap", description="Regional fractional Laplacian: assembly, solves and order derivatives.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version", version=f"fraclap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    def common(p, with_s=True):
        p.add_argument("--mesh", type=_mesh_spec, default="interval:64",
                       help="interval:N[:a:b], square:N[:diagonal], disc:N or a mesh file")
        if with_s:
            p.add_argument("--s", type=_order, default=0.5, help="fractional order in (0, 1)")
        p.add_argument("--tol", type=_positive_float, default=None,
                       help="per-pair quadrature tolerance (default 1e-9 in 1D, 1e-7 in 2D)")
        p.add_argument("--threads", type=_positive_int, default=None,
                       help="worker threads (default: FRACLAP_THREADS, else CPU count)")

    p = sub.add_parser("assemble", help="write A_s or L_s in Matrix Market format", formatter_class=fmt)
    common(p)
    p.add_argument("--weight", choices=["plain", "log"], default="plain")
    p.add_argument("--out", required=True, help="output .mtx path")

    p = sub.add_parser("solve", help="zero-mean Poisson solve, nodal values as CSV", formatter_class=fmt)
    common(p)
    p.add_argument("--f", default="cospix", help=f"named function ({', '.join(function_names())}) or nodal CSV")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("eig", help="first k nontrivial eigenpairs", formatter_class=fmt)
    common(p)
    p.add_argument("--k", type=_positive_int, default=3)
    p.add_argument("--gap-tol", type=_positive_float, default=1e-6, help="cluster gap relative to lambda_1")
    p.add_argument("--out", default=None, help="optional CSV of eigenvectors")

    p = sub.add_parser("dlambda", help="right derivative of lambda_1 in s", formatter_class=fmt)
    common(p)
    p.add_argument("--gap-tol", type=_positive_float, default=1e-6, help="cluster gap relative to lambda_1")
    p.add_argument("--sigma-ladder", type=_ladder, default=None,
                   help="comma-separated sigma values for forward quotients")

    p = sub.add_parser("pv", help="principal-value operator of a named function", formatter_class=fmt)
    common(p)
    p.add_argument("--phi", default="quadratic", help=f"named function ({', '.join(function_names())})")
    p.add_argument("--points", type=_points, required=True, help="points as 'x[,y];x[,y];...'")
    p.add_argument("--radius", type=_positive_float, default=None, help="ball radius (default: automatic)")

    p = sub.add_parser("sweep", help="run a JSON sweep config", formatter_class=fmt)
    p.add_argument("--config", required=True, help="JSON config path")
    p.add_argument("--out", default=None, help="output directory (overrides out_dir)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: FRACLAP_THREADS, else CPU count)")

    p = sub.add_parser("check", help="run the built-in property suite", formatter_class=fmt)
    p.add_argument("--out", default="fraclap-check", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: FRACLAP_THREADS, else CPU count)")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FRACLAP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"FRACLAP_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"FRACLAP_THREADS must be positive, got {n}")
        return n
    return os.cpu_count() or 1


def _nodal_csv(mesh, columns: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    coord = ["x", "y"][: mesh.dim]
    writer.writerow(["vertex", *coord, *columns])
    for i in range(mesh.num_vertices):
        writer.writerow([i, *(repr(float(c)) for c in mesh.vertices[i]),
                         *(repr(float(col[i])) for col in columns.values())])
    return buf.getvalue()


def _cmd_assemble(args, out):
    mesh = from_spec(args.mesh)
    A = assemble(mesh, KernelSpec(mesh.dim, args.s, Weight(args.weight)), args.tol, _threads(args))
    export_matrix_market(A, args.out)
    print(f"wrote {args.out} ({mesh.num_vertices}x{mesh.num_vertices}, {A.kernel.describe()})", file=out)


def _cmd_solve(args, out):
    mesh = from_spec(args.mesh)
    f = resolve(args.f, mesh)
    A = assemble(mesh, KernelSpec(mesh.dim, args.s), args.tol, _threads(args))
    u = poisson_solve(mesh, args.s, f, A, mass(mesh))
    atomic_write_text(args.out, _nodal_csv(mesh, {"u": u.coeffs}))
    print(f"wrote {args.out} ({mesh.num_vertices} nodal values)", file=out)


def _cmd_eig(args, out):
    mesh = from_spec(args.mesh)
    if not args.k < mesh.num_vertices - 1:
        raise ValueError(f"k must be below {mesh.num_vertices - 1} on this mesh")
    A = assemble(mesh, KernelSpec(mesh.dim, args.s), args.tol, _threads(args))
    spec = eig(mesh, args.s, args.k, A, mass(mesh), args.gap_tol)
    for i, lam in enumerate(spec.eigenvalues):
        print(f"lambda_{i + 1} {float(lam)!r} cluster={len(spec.cluster_of(i))}", file=out)
    if args.out:
        cols = {f"v{i + 1}": v.coeffs for i, v in enumerate(spec.eigenvectors)}
        atomic_write_text(args.out, _nodal_csv(mesh, cols))


def _cmd_dlambda(args, out):
    mesh = from_spec(args.mesh)
    ladder = args.sigma_ladder or []
    for sigma in ladder:
        if not args.s + sigma < 1.0:
            raise ValueError(f"s + sigma = {args.s + sigma!r} leaves (0, 1)")
    threads = _threads(args)
    M = mass(mesh)
    A = assemble(mesh, KernelSpec(mesh.dim, args.s), args.tol, threads)
    L = assemble(mesh, KernelSpec(mesh.dim, args.s, Weight.LOG), args.tol, threads)
    rep = dlambda_plus(mesh, args.s, A, L, M, args.gap_tol)
    print(f"dlambda_plus {rep.dplus_lambda!r} multiplicity={rep.multiplicity} lambda_1={rep.lambda1!r}",
          file=out)
    for sigma in ladder:
        s2 = args.s + sigma
        A2 = assemble(mesh, KernelSpec(mesh.dim, s2), args.tol, threads)
        lam = float(eig(mesh, s2, 1, A2, M, args.gap_tol).eigenvalues[0])
        q = (lam - rep.lambda1) / sigma
        print(f"sigma {sigma!r} quotient {q!r} gap {abs(q - rep.dplus_lambda)!r}", file=out)


def _cmd_pv(args, out):
    mesh = from_spec(args.mesh)
    phi = get_function(args.phi, mesh)
    for p in args.points:
        if len(p) != mesh.dim:
            raise ValueError(f"point {p} needs {mesh.dim} coordinate(s)")
        value = pv_apply(phi, np.array(p), args.s, mesh, args.radius)
        print(f"{','.join(repr(c) for c in p)} {value!r}", file=out)


def _cmd_sweep(args, out):
    cfg = SweepConfig.from_json(args.config)
    manifest = run(cfg, _threads(args), args.out)
    for name, info in manifest["summary"].items():
        print(f"{name:22s} {'pass' if info['passed'] else 'FAIL'} ({info['failed']}/{info['rows']} rows failed)",
              file=out)
    return 0 if manifest["passed"] else 1


def _cmd_check(args, out):
    results = run_check_suite(args.out, args.seed, _threads(args))
    print(f"{'case':22s} {'check':20s} result", file=out)
    for case, name, ok, failed, rows in results:
        print(f"{case:22s} {name:20s} {'pass' if ok else 'FAIL'} ({failed}/{rows} rows failed)", file=out)
    return 0 if all(r[2] for r in results) else 1


COMMANDS = {
    "assemble": _cmd_assemble, "solve": _cmd_solve, "eig": _cmd_eig, "dlambda": _cmd_dlambda,
    "pv": _cmd_pv, "sweep": _cmd_sweep, "check": _cmd_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        status = COMMANDS[args.command](args, sys.stdout)
    except (ValueError, MeshError, QuadratureError, SolverError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"fraclap {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
