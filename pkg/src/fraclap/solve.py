r"""Zero-mean Poisson solves, eigenpairs and order derivatives.

All problems live on the zero-mean subspace ``{u : 1^T M u = 0}``.  With
``K = C_{N,s}/2 * A_s`` and ``c = M 1`` the Poisson problem is the symmetric
saddle system

.. math::

    \begin{pmatrix} K & c \\ c^T & 0 \end{pmatrix}
    \begin{pmatrix} u \\ \mu \end{pmatrix}
    = \begin{pmatrix} M f \\ 0 \end{pmatrix}.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .domain import DiscreteFunction, Mesh, interpolate
from .forms import MassMatrix, NonlocalMatrix, mass
from .quadrature import Weight
from .specfun import c_ns, dlog_c_ns, validate_order

GAP_TOL = 1e-6
MEAN_TOL = 1e-10
NORM_TOL = 1e-8


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Spectrum:
    s: float
    eigenvalues: np.ndarray
    eigenvectors: list
    clusters: list
    residuals: np.ndarray
    gap_tol: float

    @property
    def matrix(self) -> np.ndarray:
        """Eigenvectors as columns."""
        return np.column_stack([v.coeffs for v in self.eigenvectors])

    def cluster_of(self, i: int = 0) -> tuple:
        for c in self.clusters:
            if i in c:
                return c
        raise IndexError(i)


@dataclass(frozen=True, eq=False)
class DerivativeReport:
    s: float
    residual: float
    multiplicity: int = 1
    w_s: DiscreteFunction | None = None
    dplus_lambda: float | None = None
    eigenfunction: DiscreteFunction | None = None
    lambda1: float | None = None
    cluster_values: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _check_mats(mesh: Mesh, s: float, A: NonlocalMatrix, M, weight=Weight.PLAIN):
    if A.mesh_id != mesh.fingerprint:
        raise ValueError(f"matrix belongs to mesh {A.mesh_id}, not {mesh.fingerprint}")
    if A.kernel.weight is not weight:
        raise ValueError(f"expected a {weight.value}-weight matrix, got {A.kernel.weight.value}")
    if abs(A.kernel.s - s) > 1e-14:
        raise ValueError(f"matrix assembled at s={A.kernel.s!r}, requested s={s!r}")
    Mm = M.mat if isinstance(M, MassMatrix) else np.asarray(M, dtype=float)
    if Mm.shape != A.mat.shape:
        raise ValueError("mass and stiffness matrices differ in size")
    return Mm


def _as_function(mesh: Mesh, f) -> DiscreteFunction:
    if isinstance(f, DiscreteFunction):
        if f.mesh.fingerprint != mesh.fingerprint:
            raise ValueError("right-hand side lives on a different mesh")
        return f
    if callable(f):
        return interpolate(mesh, f)
    return DiscreteFunction(mesh, f)


def zero_mean_residual(r: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Residual functional restricted to zero-mean test vectors."""
    return r - c * (c @ r) / (c @ c)


def _saddle_solve(K: np.ndarray, c: np.ndarray, b: np.ndarray):
    n = len(c)
    S = np.zeros((n + 1, n + 1))
    S[:n, :n] = K
    S[:n, n] = c
    S[n, :n] = c
    rhs = np.concatenate([b, [0.0]])
    try:
        sol = linalg.solve(S, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise SolverError(f"internal error: singular saddle system ({exc})") from exc
    u = sol[:n]
    res = zero_mean_residual(K @ u - b, c)
    return u, float(np.max(np.abs(res), initial=0.0))


def poisson_solve(mesh: Mesh, s: float, f, A_s: NonlocalMatrix, M,
                  project_mean: bool = True) -> DiscreteFunction:
    """Zero-mean ``u_s`` with ``E_s(u_s, v) = <f, v>`` for all zero-mean ``v``.

    ``f`` must have zero mean up to ``1e-10 * ||f||``.  Larger means are
    projected off with a warning, or rejected when ``project_mean`` is false.
    """
    s = validate_order(s)
    Mm = _check_mats(mesh, s, A_s, M)
    fh = _as_function(mesh, f)
    fc = fh.coeffs
    c = Mm @ np.ones(mesh.num_vertices)
    total = float(c @ fc)
    scale = float(np.sqrt(max(fc @ Mm @ fc, 0.0) * mesh.measure))
    if abs(total) > MEAN_TOL * scale:
        msg = f"right-hand side has mean mass {total:.3e} (norm scale {scale:.3e})"
        if not project_mean:
            raise ValueError(msg)
        warnings.warn(msg + "; projecting it off", RuntimeWarning, stacklevel=2)
    fc = fc - total / mesh.measure
    K = 0.5 * c_ns(mesh.dim, s) * A_s.mat
    u, res = _saddle_solve(K, c, Mm @ fc)
    bscale = max(float(np.max(np.abs(Mm @ fc), initial=0.0)), 1e-300)
    if res > 1e-8 * bscale and res > 1e-13:
        raise SolverError(f"Poisson residual {res:.3e} above tolerance")
    return DiscreteFunction(mesh, u - (c @ u) / mesh.measure, zero_mean=True)


def poisson_residual(u: DiscreteFunction, f, A_s: NonlocalMatrix, M) -> float:
    """Max-norm of ``K u - M f`` over zero-mean test vectors."""
    mesh = u.mesh
    Mm = M.mat if isinstance(M, MassMatrix) else np.asarray(M)
    fh = _as_function(mesh, f)
    K = 0.5 * c_ns(mesh.dim, A_s.kernel.s) * A_s.mat
    c = Mm @ np.ones(mesh.num_vertices)
    r = zero_mean_residual(K @ u.coeffs - Mm @ fh.coeffs, c)
    return float(np.max(np.abs(r)))


def reference_direction(mesh: Mesh, Mm: np.ndarray) -> np.ndarray:
    """First coordinate projected to zero mean."""
    x = mesh.vertices[:, 0].copy()
    c = Mm @ np.ones(mesh.num_vertices)
    return x - (c @ x) / mesh.measure


def _fix_sign(v: np.ndarray, Mm: np.ndarray, ref: np.ndarray) -> np.ndarray:
    proj = float(v @ Mm @ ref)
    if abs(proj) > 1e-10 * np.sqrt(max(ref @ Mm @ ref, 1e-300)):
        return v if proj > 0 else -v
    big = np.flatnonzero(np.abs(v) > 1e-8 * np.max(np.abs(v)))
    return v if v[big[0]] > 0 else -v


def _clusters(lam: np.ndarray, tol: float) -> list:
    groups = [[0]]
    for i in range(1, len(lam)):
        if lam[i] - lam[i - 1] < tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return [tuple(g) for g in groups]


def eig(mesh: Mesh, s: float, k: int, A_s: NonlocalMatrix, M,
        gap_tol: float | None = None) -> Spectrum:
    """First ``k`` nontrivial eigenpairs of ``C/2 A_s v = lambda M v`` on zero-mean ``v``.

    ``gap_tol`` is relative to ``lambda_1`` (default ``1e-6``).
    """
    s = validate_order(s)
    Mm = _check_mats(mesh, s, A_s, M)
    nv = mesh.num_vertices
    k = int(k)
    if not 1 <= k < nv - 1:
        raise ValueError(f"k must satisfy 1 <= k < {nv - 1}, got {k}")
    K = 0.5 * c_ns(mesh.dim, s) * A_s.mat
    c = Mm @ np.ones(nv)
    Z = linalg.null_space(c[None, :])
    Kz = Z.T @ K @ Z
    Mz = Z.T @ Mm @ Z
    try:
        lam, Y = linalg.eigh(0.5 * (Kz + Kz.T), 0.5 * (Mz + Mz.T), subset_by_index=[0, k - 1])
    except linalg.LinAlgError as exc:
        raise SolverError(f"eigensolver failed: {exc}") from exc
    V = Z @ Y
    ref = reference_direction(mesh, Mm)
    V = np.column_stack([_fix_sign(V[:, i], Mm, ref) for i in range(k)])
    R = K @ V - (Mm @ V) * lam
    Rz = np.column_stack([zero_mean_residual(R[:, i], c) for i in range(k)])
    scale = np.maximum(np.linalg.norm(K @ V, axis=0), 1e-300)
    residuals = np.linalg.norm(Rz, axis=0) / scale
    if np.any(residuals > 1e-8):
        raise SolverError(f"eigenpair residuals {residuals.max():.3e} above 1e-8")
    if not lam[0] > 0:
        raise SolverError(f"nonpositive first eigenvalue {lam[0]!r}")
    rel = GAP_TOL if gap_tol is None else float(gap_tol)
    vecs = [DiscreteFunction(mesh, V[:, i], zero_mean=True) for i in range(k)]
    return Spectrum(s, lam, vecs, _clusters(lam, rel * lam[0]), residuals, rel)


def s_derivative_solve(mesh: Mesh, s: float, f, u_s: DiscreteFunction, A_s: NonlocalMatrix,
                       L_s: NonlocalMatrix, M) -> DerivativeReport:
    r"""Order derivative ``w_s`` of the Poisson solution.

    Solves ``C/2 A_s w = -(dC/C) M f + C L_s u_s`` on the zero-mean subspace;
    on a fixed mesh ``w_s`` is exactly ``d u_s / ds`` of the discrete solution.
    """
    s = validate_order(s)
    Mm = _check_mats(mesh, s, A_s, M)
    _check_mats(mesh, s, L_s, M, Weight.LOG)
    fh = _as_function(mesh, f)
    fc = fh.coeffs
    c = Mm @ np.ones(mesh.num_vertices)
    fc = fc - (c @ fc) / mesh.measure
    C = c_ns(mesh.dim, s)
    b = -dlog_c_ns(mesh.dim, s) * (Mm @ fc) + C * (L_s.mat @ u_s.coeffs)
    K = 0.5 * C * A_s.mat
    w, res = _saddle_solve(K, c, b)
    bscale = max(float(np.max(np.abs(zero_mean_residual(b, c)), initial=0.0)), 1e-300)
    rel = res / bscale if bscale > 1e-300 else res
    if rel > 1e-8 and res > 1e-13:
        raise SolverError(f"derivative residual {rel:.3e} above tolerance")
    w_s = DiscreteFunction(mesh, w - (c @ w) / mesh.measure, zero_mean=True)
    return DerivativeReport(s=s, residual=rel, w_s=w_s)


def j_s(u: DiscreteFunction, s: float, lam: float, L_s: NonlocalMatrix, M=None) -> float:
    """``J_s(u) = (dC/C) lambda - C u^T L_s u`` for an L2-normalised zero-mean ``u``."""
    s = validate_order(s)
    mesh = u.mesh
    Mm = (mass(mesh).mat if M is None else (M.mat if isinstance(M, MassMatrix) else np.asarray(M)))
    _check_mats(mesh, s, L_s, Mm, Weight.LOG)
    cu = u.coeffs
    norm = float(cu @ Mm @ cu)
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError(f"u must be L2-normalised, got u^T M u = {norm!r}")
    c = Mm @ np.ones(mesh.num_vertices)
    mean = float(c @ cu)
    if abs(mean) > NORM_TOL * np.sqrt(mesh.measure):
        raise ValueError(f"u must have zero mean, got integral {mean!r}")
    C = c_ns(mesh.dim, s)
    return dlog_c_ns(mesh.dim, s) * lam - C * float(cu @ (L_s.mat @ cu))


def first_cluster(mesh: Mesh, s: float, A_s: NonlocalMatrix, M, gap_tol: float | None = None):
    """Spectrum whose first cluster is complete (not cut off by ``k``)."""
    nv = mesh.num_vertices
    kmax = nv - 2
    k = min(4, kmax)
    while True:
        spec = eig(mesh, s, k, A_s, M, gap_tol)
        if len(spec.clusters[0]) < k or k == kmax:
            return spec
        k = min(2 * k, kmax)


def cluster_infimum(V: np.ndarray, s: float, lam: float, L_s: NonlocalMatrix):
    """Infimum of ``J_s`` over unit vectors in the span of the M-orthonormal columns of ``V``.

    Returns ``(value, y, top)``: the infimum, the coefficients of a minimiser
    in the basis ``V`` and the eigenvalues of ``V^T L_s V``.
    """
    G = V.T @ L_s.mat @ V
    top, Y = linalg.eigh(0.5 * (G + G.T))
    N = L_s.kernel.N
    value = dlog_c_ns(N, s) * lam - c_ns(N, s) * float(top[-1])
    return float(value), Y[:, -1], top


def dlambda_plus(mesh: Mesh, s: float, A_s: NonlocalMatrix, L_s: NonlocalMatrix, M,
                 gap_tol: float | None = None) -> DerivativeReport:
    r"""Right derivative of ``lambda_1`` in ``s``.

    The infimum of ``J_s`` over unit vectors of the first eigen-cluster span
    is ``(dC/C) lambda_1 - C * max eig(V^T L_s V)``.
    """
    s = validate_order(s)
    Mm = _check_mats(mesh, s, A_s, M)
    _check_mats(mesh, s, L_s, Mm, Weight.LOG)
    spec = first_cluster(mesh, s, A_s, Mm, gap_tol)
    idx = list(spec.clusters[0])
    lam1 = float(spec.eigenvalues[0])
    if len(idx) == 1:
        u = spec.eigenvectors[0]
        value = j_s(u, s, lam1, L_s, Mm)
        top = np.array([float(u.coeffs @ L_s.mat @ u.coeffs)])
    else:
        value, y, top = cluster_infimum(spec.matrix[:, idx], s, lam1, L_s)
        u = DiscreteFunction(mesh, _fix_sign(spec.matrix[:, idx] @ y, Mm, reference_direction(mesh, Mm)))
    return DerivativeReport(
        s=s, residual=float(np.max(spec.residuals[idx])), multiplicity=len(idx),
        dplus_lambda=float(value), eigenfunction=u, lambda1=lam1,
        cluster_values=np.asarray(top, dtype=float),
    )
