r"""Global matrices of the nonlocal bilinear forms.

``A_s`` and ``L_s`` are the raw double integrals

.. math::

    (A_s)_{ij} = \int_\Omega\int_\Omega
        \frac{(\varphi_i(x)-\varphi_i(y))(\varphi_j(x)-\varphi_j(y))}{|x-y|^{N+2s}}
        \,dy\,dx,

and the same with an extra ``ln|x - y|`` factor for ``L_s``.  Neither carries
the normalisation constant; ``E_s(u, v) = C_{N,s}/2 * u^T A_s v``.
"""

from __future__ import annotations

import io
import math
import os
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.io import mmwrite
from scipy.sparse import coo_matrix
from scipy.special import roots_jacobi

from .domain import DiscreteFunction, Mesh, atomic_write_text
from .quadrature import (
    DEFAULT_TOL,
    KernelSpec,
    QuadratureError,
    Weight,
    _shape_gradients,
    gauss_legendre01,
    local_matrices,
)
from .specfun import c_ns, validate_order

PAIR_CHUNK = {1: 4096, 2: 256}


def default_threads() -> int:
    env = os.environ.get("FRACLAP_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"FRACLAP_THREADS must be positive, got {env!r}")
        return n
    return 1


@dataclass(frozen=True, eq=False)
class NonlocalMatrix:
    kernel: KernelSpec
    mat: np.ndarray
    quad_tol: float
    mesh_id: str
    max_error: float = 0.0

    def __post_init__(self):
        self.mat.setflags(write=False)

    @property
    def shape(self):
        return self.mat.shape

    def __matmul__(self, other):
        return self.mat @ other


@dataclass(frozen=True, eq=False)
class MassMatrix:
    mat: np.ndarray
    lumped: bool = False
    mesh_id: str = ""

    def __post_init__(self):
        self.mat.setflags(write=False)

    def __matmul__(self, other):
        return self.mat @ other


def element_pairs(mesh: Mesh):
    """Unordered element pairs ``a <= b`` and their multiplicity."""
    ea, eb = np.triu_indices(mesh.num_elements)
    return ea, eb, np.where(ea == eb, 1.0, 2.0)


def assemble(mesh: Mesh, kernel: KernelSpec, tol: float | None = None,
             threads: int | None = None) -> NonlocalMatrix:
    """Assemble ``A_s`` (plain weight) or ``L_s`` (log weight) on ``mesh``.

    Pairs are processed in fixed chunks; chunk results are merged in chunk
    order, so the matrix is bitwise identical for any thread count.
    """
    if kernel.N != mesh.dim:
        raise ValueError(f"kernel dimension {kernel.N} does not match mesh dimension {mesh.dim}")
    tol = DEFAULT_TOL[mesh.dim] if tol is None else float(tol)
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ValueError(f"threads must be positive, got {threads!r}")
    ea, eb, mult = element_pairs(mesh)
    grads = _shape_gradients(mesh)
    step = PAIR_CHUNK[mesh.dim]
    chunks = [slice(lo, lo + step) for lo in range(0, len(ea), step)]

    def work(sl):
        index, K, err = local_matrices(mesh, ea[sl], eb[sl], kernel, tol, grads)
        return index, K * mult[sl, None, None], float(np.max(err * mult[sl]))

    nv = mesh.num_vertices
    A = np.zeros((nv, nv))
    max_err = 0.0

    def merge(result):
        nonlocal max_err
        index, K, err = result
        S = index.shape[1]
        rows = np.repeat(index, S, axis=1).ravel()
        cols = np.tile(index, (1, S)).ravel()
        np.add.at(A, (rows, cols), K.ravel())
        max_err = max(max_err, err)

    if threads == 1 or len(chunks) == 1:
        for sl in chunks:
            merge(work(sl))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for result in pool.map(work, chunks):
                merge(result)
    A = 0.5 * (A + A.T)
    return NonlocalMatrix(kernel, A, tol, mesh.fingerprint, max_err)


def mass(mesh: Mesh, lumped: bool = False) -> MassMatrix:
    """P1 mass matrix, consistent by default."""
    nv = mesh.num_vertices
    k = mesh.dim + 1
    local = (np.ones((k, k)) + np.eye(k)) / ((k + 1) * k)
    vals = mesh.element_measures[:, None, None] * local[None]
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    M = np.zeros((nv, nv))
    np.add.at(M, (rows, cols), vals.ravel())
    if lumped:
        M = np.diag(M.sum(axis=1))
    return MassMatrix(0.5 * (M + M.T), lumped, mesh.fingerprint)


def _coeffs(u, mesh_id: str, what: str) -> np.ndarray:
    if isinstance(u, DiscreteFunction):
        if u.mesh.fingerprint != mesh_id:
            raise ValueError(f"{what} lives on mesh {u.mesh.fingerprint}, matrix on {mesh_id}")
        return u.coeffs
    return np.asarray(u, dtype=float)


def energy(u, v, A: NonlocalMatrix, s: float | None = None, N: int | None = None) -> float:
    """``E_s(u, v) = C_{N,s}/2 * u^T A_s v``."""
    if A.kernel.weight is not Weight.PLAIN:
        raise ValueError("energy needs a plain-weight matrix")
    s = A.kernel.s if s is None else validate_order(s)
    N = A.kernel.N if N is None else N
    if abs(s - A.kernel.s) > 1e-14 or N != A.kernel.N:
        raise ValueError(f"matrix was assembled for {A.kernel.describe()}, not N={N} s={s!r}")
    cu = _coeffs(u, A.mesh_id, "u")
    cv = _coeffs(v, A.mesh_id, "v")
    return 0.5 * c_ns(N, s) * float(cu @ (A.mat @ cv))


_SEMINORM_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def cached_assemble(mesh: Mesh, t: float, weight: Weight = Weight.PLAIN,
                    tol: float | None = None, threads: int | None = None) -> NonlocalMatrix:
    """Assembly memoised on (mesh fingerprint, order rounded to 12 digits, weight, tol)."""
    t = validate_order(t)
    key = (mesh.fingerprint, round(t, 12), Weight(weight), tol)
    with _CACHE_LOCK:
        hit = _SEMINORM_CACHE.get(key)
    if hit is None:
        hit = assemble(mesh, KernelSpec(mesh.dim, t, weight), tol, threads)
        with _CACHE_LOCK:
            _SEMINORM_CACHE[key] = hit
    return hit


def clear_cache() -> None:
    with _CACHE_LOCK:
        _SEMINORM_CACHE.clear()


def seminorm(u: DiscreteFunction, t: float, mesh: Mesh | None = None) -> float:
    """Gagliardo seminorm ``sqrt(u^T A_t u)`` (no normalisation constant)."""
    mesh = u.mesh if mesh is None else mesh
    A = cached_assemble(mesh, t)
    c = _coeffs(u, A.mesh_id, "u")
    return math.sqrt(max(float(c @ (A.mat @ c)), 0.0))


def export_matrix_market(A: NonlocalMatrix, path) -> None:
    """Write ``A`` in symmetric Matrix Market coordinate format."""
    comment = f" fraclap kernel: {A.kernel.describe()} quad_tol={A.quad_tol!r} mesh={A.mesh_id}"
    buf = io.BytesIO()
    mmwrite(buf, coo_matrix(A.mat), comment=comment, field="real",
            precision=17, symmetry="symmetric")
    atomic_write_text(path, buf.getvalue().decode("ascii"))


# ---------------------------------------------------------------- pointwise operator


PV_RADIAL = 24
PV_ANGULAR = 48
PV_OUTER = 16


def _jacobi_ball(n: int, s: float):
    """Nodes/weights on [0, 1] for the weight t**(1 - 2s)."""
    x, w = roots_jacobi(n, 0.0, 1.0 - 2.0 * s)
    return 0.5 * (x + 1.0), w / 2.0 ** (2.0 - 2.0 * s)


def _graded(lo, hi, n: int, ratio: float = 2.0):
    """Gauss-Legendre nodes on ``[lo, hi]`` split geometrically from ``lo > 0``."""
    g, w = gauss_legendre01(n)
    pieces = max(1, int(math.ceil(math.log(hi / lo) / math.log(ratio))))
    edges = lo * (hi / lo) ** (np.arange(pieces + 1) / pieces)
    edges[-1] = hi
    width = np.diff(edges)
    return (edges[:-1, None] + width[:, None] * g).ravel(), (width[:, None] * w).ravel()


def _phi_values(phi, pts):
    return np.asarray(phi(pts), dtype=float).reshape(pts.shape[:-1])


def pv_apply(phi, x, s: float, mesh: Mesh, ball_radius: float | None = None) -> float:
    r"""Regional fractional Laplacian of a smooth ``phi`` at an interior point.

    The ball part uses the symmetric second difference
    ``2 phi(x) - phi(x + t w) - phi(x - t w)`` (which removes the gradient
    term exactly) with a Gauss-Jacobi rule in ``t``; the outer part follows
    rays from ``x`` through ``Omega``.  ``phi`` takes points of shape
    ``(..., dim)``.
    """
    s = validate_order(s)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dim = mesh.dim
    if x.shape != (dim,):
        raise ValueError(f"point must have {dim} coordinates")
    if not mesh.contains(x):
        raise ValueError("point lies outside the mesh")
    dist = mesh.distance_to_boundary(x)
    if ball_radius is None:
        ball_radius = min(0.5 * dist, float(np.max(mesh.element_diameters())))
    r = float(ball_radius)
    if not (r > 0 and r < dist):
        raise ValueError(f"ball radius {r!r} must be positive and below the distance {dist!r} to the boundary")
    phix = float(_phi_values(phi, x[None, :])[0])

    t, wt = _jacobi_ball(PV_RADIAL, s)
    t = r * t
    wt = wt * r ** (2.0 - 2.0 * s)
    if dim == 1:
        dirs = np.array([[1.0]])
        wdir = np.array([1.0])
    else:
        theta = math.pi * np.arange(PV_ANGULAR) / PV_ANGULAR
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
        wdir = np.full(PV_ANGULAR, math.pi / PV_ANGULAR)
    offs = t[None, :, None] * dirs[:, None, :]
    second = 2.0 * phix - _phi_values(phi, x + offs) - _phi_values(phi, x - offs)
    ball = float(np.sum(wdir[:, None] * wt[None, :] * second / t[None, :] ** 2))

    outer = _outer_1d(phi, phix, x, s, mesh, r) if dim == 1 else _outer_2d(phi, phix, x, s, mesh, r)
    return c_ns(dim, s) * (ball + outer)


def _outer_1d(phi, phix, x, s, mesh, r):
    """Adaptive integral over the two intervals left of and right of the ball."""
    verts = np.sort(mesh.vertices[:, 0])
    total = 0.0
    for lo, hi in ((float(verts[0]), x[0] - r), (x[0] + r, float(verts[-1]))):
        if hi <= lo:
            continue
        def f(y):
            return (phix - float(_phi_values(phi, np.array([[y]]))[0])) * abs(x[0] - y) ** (-1.0 - 2.0 * s)

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=400)
        if err > 1e-8 * max(abs(val), 1.0):
            raise QuadratureError("outer principal-value integral did not converge",
                                  pairs=None, estimate=float(err))
        total += val
    return total


def _ray_triangle(x, omega, tri):
    """Parameter intervals of rays ``x + tau*omega`` inside triangles.

    omega (m, 2), tri (ne, 3, 2) -> lo, hi (m, ne); empty where lo >= hi.
    """
    lo = np.zeros((len(omega), len(tri)))
    hi = np.full((len(omega), len(tri)), np.inf)
    for i in range(3):
        a = tri[:, i]
        b = tri[:, (i + 1) % 3]
        c = tri[:, (i + 2) % 3]
        e = b - a
        n = np.column_stack([-e[:, 1], e[:, 0]])
        # orient n towards the opposite vertex
        n *= np.sign(np.einsum("ij,ij->i", c - a, n))[:, None]
        base = np.einsum("ij,ij->i", x[None, :] - a, n)
        rate = omega @ n.T
        # constraint: base + tau * rate >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = -base[None, :] / rate
        pos = rate > 0
        neg = rate < 0
        lo = np.where(pos, np.maximum(lo, bound), lo)
        hi = np.where(neg, np.minimum(hi, bound), hi)
        hi = np.where((rate == 0) & (base[None, :] < 0), -np.inf, hi)
    return lo, hi


def _outer_2d(phi, phix, x, s, mesh, r):
    tri = mesh.vertices[mesh.elements]
    bverts = mesh.vertices[np.unique(mesh.boundary_facets())]
    kinks = np.sort(np.mod(np.arctan2(bverts[:, 1] - x[1], bverts[:, 0] - x[0]), 2.0 * math.pi))
    edges = np.concatenate([[0.0], kinks, [2.0 * math.pi]])
    edges = edges[np.concatenate([[True], np.diff(edges) > 1e-14])]
    g, w = gauss_legendre01(8)
    width = np.diff(edges)
    theta = (edges[:-1, None] + width[:, None] * g).ravel()
    wtheta = (width[:, None] * w).ravel()
    omega = np.column_stack([np.cos(theta), np.sin(theta)])
    lo, hi = _ray_triangle(x, omega, tri)
    lo = np.maximum(lo, r)
    ray, el = np.nonzero(hi > lo * (1.0 + 1e-14))
    a = lo[ray, el]
    b = hi[ray, el]
    gq, wq = gauss_legendre01(PV_OUTER)
    # pieces short relative to their distance from x need no grading
    ratio = b / a
    idx = np.flatnonzero(ratio <= 2.0)
    tau = a[idx, None] + (b - a)[idx, None] * gq
    pts = x + tau[..., None] * omega[ray[idx], None, :]
    integrand = (phix - _phi_values(phi, pts)) * tau ** (-1.0 - 2.0 * s)
    total = float(np.sum(wtheta[ray[idx]] * (b - a)[idx] * (integrand @ wq)))
    for k in np.flatnonzero(ratio > 2.0):
        tau, wt = _graded(a[k], b[k], PV_OUTER)
        pts = x + tau[:, None] * omega[ray[k]]
        vals = _phi_values(phi, pts)
        total += float(wtheta[ray[k]] * np.sum(wt * (phix - vals) * tau ** (-1.0 - 2.0 * s)))
    return total
