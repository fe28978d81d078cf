r"""Element-pair integrals of the singular nonlocal kernels.

For two elements ``E_a``, ``E_b`` and the union of their vertices, the local
matrix is

.. math::

    K_{pq} = \int_{E_a}\int_{E_b} d_p(x, y)\, d_q(x, y)\, k(x, y)\,dy\,dx,
    \qquad d_p(x, y) = \varphi_p(x) - \varphi_p(y),

with ``k = |x-y|**-(N+2s)`` (plain) or ``k = |x-y|**-(N+2s) * log|x-y|``
(log).  Each ``d_p`` is affine in ``(x, y)`` on ``E_a x E_b`` and vanishes on
the diagonal, which is what keeps every entry finite for touching pairs.

1D pairs are reduced to an integral over ``t = y - x``; pieces of the
``t``-range that touch ``t = 0`` are integrated in closed form, the others by
Gauss-Legendre on geometrically graded subintervals.  2D identical pairs use
the overlap area of a triangle with its translate and a closed-form radial
integral; vertex- and edge-adjacent pairs use Duffy-type maps over a
staircase triangulation of ``T_a x T_b``; disjoint pairs use adaptive tensor
Gauss rules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .domain import Mesh
from .specfun import validate_dim, validate_order

DEFAULT_TOL = {1: 1e-9, 2: 1e-7}
ENDPOINT_BAND = 0.02


class Weight(str, Enum):
    PLAIN = "plain"
    LOG = "log"


class PairClass(str, Enum):
    IDENTICAL = "identical"
    ADJACENT = "adjacent"
    DISJOINT = "disjoint"


class QuadratureError(RuntimeError):
    def __init__(self, message: str, pairs=None, estimate: float = float("nan")):
        super().__init__(message)
        self.pairs = pairs
        self.estimate = estimate


@dataclass(frozen=True)
class KernelSpec:
    """Which singular kernel a matrix discretises."""

    N: int
    s: float
    weight: Weight = Weight.PLAIN

    def __post_init__(self):
        object.__setattr__(self, "N", validate_dim(self.N))
        object.__setattr__(self, "s", validate_order(self.s))
        object.__setattr__(self, "weight", Weight(self.weight))

    @property
    def exponent(self) -> float:
        return self.N + 2.0 * self.s

    @property
    def endpoint_flag(self) -> bool:
        """True when ``s`` is in the band where quadrature constants degrade."""
        return self.s < ENDPOINT_BAND or self.s > 1.0 - ENDPOINT_BAND

    def describe(self) -> str:
        tag = " endpoint-band" if self.endpoint_flag else ""
        return f"N={self.N} s={self.s!r} weight={self.weight.value}{tag}"


# ---------------------------------------------------------------- rules


@lru_cache(maxsize=None)
def gauss_legendre01(n: int):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _jacobi01(n: int, alpha: int):
    """Nodes/weights on [0, 1] for the weight (1 - u)**alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def _tri_children(T):
    p0, p1, p2 = T
    m01, m12, m20 = (p0 + p1) / 2, (p1 + p2) / 2, (p2 + p0) / 2
    return [np.array(c) for c in ((p0, m01, m20), (m01, p1, m12), (m20, m12, p2), (m01, m12, m20))]


def _tet_children(T):
    x = list(T)
    m = {(i, j): (x[i] + x[j]) / 2 for i in range(4) for j in range(i + 1, 4)}
    kids = [
        (x[0], m[0, 1], m[0, 2], m[0, 3]), (m[0, 1], x[1], m[1, 2], m[1, 3]),
        (m[0, 2], m[1, 2], x[2], m[2, 3]), (m[0, 3], m[1, 3], m[2, 3], x[3]),
        (m[0, 1], m[0, 2], m[0, 3], m[1, 3]), (m[0, 1], m[0, 2], m[1, 2], m[1, 3]),
        (m[0, 2], m[0, 3], m[1, 3], m[2, 3]), (m[0, 2], m[1, 2], m[1, 3], m[2, 3]),
    ]
    return [np.array(k) for k in kids]


def _composite(base_pts, base_w, ref, children, levels):
    cells = [ref]
    for _ in range(levels):
        cells = [c for cell in cells for c in children(cell)]
    pts, wts = [], []
    vol = abs(np.linalg.det((ref[1:] - ref[0]).T))
    for c in cells:
        J = (c[1:] - c[0]).T
        pts.append(c[0] + base_pts @ J.T)
        wts.append(base_w * abs(np.linalg.det(J)) / vol)
    return np.concatenate(pts), np.concatenate(wts)


@lru_cache(maxsize=None)
def triangle_rule(m: int, levels: int = 0):
    """Collapsed Gauss rule on the reference triangle (weights sum to 1/2)."""
    u, wu = _jacobi01(m, 1)
    v, wv = gauss_legendre01(m)
    U, V = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([U.ravel(), (V * (1.0 - U)).ravel()])
    wts = np.outer(wu, wv).ravel()
    if levels:
        pts, wts = _composite(pts, wts, np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                              _tri_children, levels)
    return pts, wts


@lru_cache(maxsize=None)
def tetrahedron_rule(m: int, levels: int = 0):
    """Collapsed Gauss rule on the reference tetrahedron (weights sum to 1/6)."""
    u, wu = _jacobi01(m, 2)
    v, wv = _jacobi01(m, 1)
    w, ww = gauss_legendre01(m)
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    pts = np.column_stack([
        U.ravel(),
        (V * (1.0 - U)).ravel(),
        (W * (1.0 - U) * (1.0 - V)).ravel(),
    ])
    wts = (wu[:, None, None] * wv[None, :, None] * ww[None, None, :]).ravel()
    if levels:
        pts, wts = _composite(pts, wts, np.vstack([np.zeros(3), np.eye(3)]), _tet_children, levels)
    return pts, wts


# ---------------------------------------------------------------- classification


def classify_pair(a: int, b: int, mesh: Mesh) -> PairClass:
    """Identical, adjacent (at least one shared vertex) or disjoint."""
    ne = mesh.num_elements
    for idx in (a, b):
        if not 0 <= idx < ne:
            raise IndexError(f"element index {idx} out of range 0..{ne - 1}")
    if a == b:
        return PairClass.IDENTICAL
    shared = np.intersect1d(mesh.elements[a], mesh.elements[b])
    return PairClass.ADJACENT if shared.size else PairClass.DISJOINT


# ---------------------------------------------------------------- local basis


def _shape_gradients(mesh: Mesh) -> np.ndarray:
    """Gradients of the barycentric functions, shape (ne, k, dim)."""
    pts = mesh.vertices[mesh.elements]
    if mesh.dim == 1:
        h = pts[:, 1, 0] - pts[:, 0, 0]
        return np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
    T = np.stack([pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]], axis=-1)
    Tinv = np.linalg.inv(T)
    return np.concatenate([-(Tinv[:, 0] + Tinv[:, 1])[:, None, :], Tinv], axis=1)


def pair_slots(mesh: Mesh, ea: np.ndarray, eb: np.ndarray, grads: np.ndarray | None = None):
    """Difference functions ``d_p`` for a batch of element pairs.

    Returns ``(index, c0, cx, cy)``: ``index`` (P, 2k) global vertex ids and
    coefficients such that ``d_p = c0 + cx.(x - o) + cy.(y - o)`` where the
    origin ``o`` is the first vertex of ``E_a``.  Slots of ``E_b`` vertices
    already present in ``E_a`` are merged into the ``E_a`` slot and left
    identically zero.
    """
    if grads is None:
        grads = _shape_gradients(mesh)
    ea = np.asarray(ea)
    eb = np.asarray(eb)
    ia = mesh.elements[ea]
    ib = mesh.elements[eb]
    k = ia.shape[1]
    P = len(ea)
    ga = grads[ea]
    gb = grads[eb]
    origin = mesh.vertices[ia[:, 0]]
    shift = origin - mesh.vertices[ib[:, 0]]  # (P, dim)
    # barycentric lambda_m(y) of E_b in terms of y' = y - origin
    alpha_b = np.zeros((P, k))
    alpha_b[:, 0] = 1.0
    alpha_b = alpha_b + np.einsum("pmd,pd->pm", gb, shift)
    alpha_a = np.zeros((P, k))
    alpha_a[:, 0] = 1.0

    match = ia[:, :, None] == ib[:, None, :]  # (P, k, k)
    alive_b = ~match.any(axis=1)
    dim = mesh.dim
    c0 = np.zeros((P, 2 * k))
    cx = np.zeros((P, 2 * k, dim))
    cy = np.zeros((P, 2 * k, dim))
    c0[:, :k] = alpha_a - np.einsum("pim,pm->pi", match.astype(float), alpha_b)
    cx[:, :k] = ga
    cy[:, :k] = -np.einsum("pim,pmd->pid", match.astype(float), gb)
    c0[:, k:] = -alive_b.astype(float) * alpha_b
    cy[:, k:] = -alive_b.astype(float)[:, :, None] * gb
    index = np.concatenate([ia, ib], axis=1)
    return index, c0, cx, cy


def _eval_slots(c0, cx, cy, x, y):
    """``d`` at points: c0 (P,S), cx/cy (P,S,dim), x/y (P,n,dim) -> (P,n,S)."""
    return (c0[:, None, :]
            + np.einsum("psd,pnd->pns", cx, x)
            + np.einsum("psd,pnd->pns", cy, y))


def _kernel_values(r, kernel: KernelSpec):
    k = r ** (-kernel.exponent)
    if kernel.weight is Weight.LOG:
        k = k * np.log(r)
    return k


# ---------------------------------------------------------------- 1D


_GL_FAR = (10, 14)
_GRADE = 2.5
_INV_SQRT3 = 1.0 / math.sqrt(3.0)


def _q1d(xa, xb, c0, cx, cy, t):
    """Q(t) = integral over x of d(x, x+t) d(x, x+t)^T; t has shape (P, m)."""
    lo = np.maximum(xa[:, :1], xb[:, :1] - t)
    hi = np.minimum(xa[:, 1:], xb[:, 1:] - t)
    L = np.clip(hi - lo, 0.0, None)
    mid = 0.5 * (lo + hi)
    off = 0.5 * _INV_SQRT3 * L
    Q = 0.0
    for sgn in (-1.0, 1.0):
        x = mid + sgn * off
        d = c0[:, None, :] + cx[:, None, :] * x[..., None] + cy[:, None, :] * (x + t)[..., None]
        Q = Q + (0.5 * L)[..., None, None] * d[..., :, None] * d[..., None, :]
    return Q


def local_1d(xa, xb, c0, cx, cy, kernel: KernelSpec):
    """Local matrices for 1D pairs of intervals (coordinates relative to the origin).

    ``xa``/``xb`` are (P, 2) sorted endpoints; ``cx``/``cy`` are (P, S).
    Returns ``(K, err)`` with an absolute error estimate per pair.
    """
    P, S = c0.shape
    out = np.zeros((P, S, S))
    err = np.zeros(P)
    bp = np.sort(np.stack([xb[:, 0] - xa[:, 1], xb[:, 0] - xa[:, 0],
                           xb[:, 1] - xa[:, 1], xb[:, 1] - xa[:, 0]], axis=1), axis=1)
    beta0 = 2.0 - 2.0 * kernel.s
    beta1 = 3.0 - 2.0 * kernel.s
    log = kernel.weight is Weight.LOG
    far_pieces = []
    for piece in range(3):
        t0 = bp[:, piece]
        t1 = bp[:, piece + 1]
        nonempty = t1 > t0
        if np.any(nonempty & (t0 < 0) & (t1 > 0)):
            raise QuadratureError("overlapping elements in 1D pair integral")
        touch = nonempty & ((t0 == 0) | (t1 == 0))
        far = nonempty & ~touch
        if np.any(touch):
            idx = np.flatnonzero(touch)
            T = np.maximum(np.abs(t0[idx]), np.abs(t1[idx]))
            sign = np.where(t1[idx] > 0, 1.0, -1.0)
            tau = np.stack([T / 3.0, 2.0 * T / 3.0], axis=1)
            Q = _q1d(xa[idx], xb[idx], c0[idx], cx[idx], cy[idx], sign[:, None] * tau)
            R = Q / (tau ** 2)[..., None, None]
            r1 = (R[:, 1] - R[:, 0]) / (tau[:, 1] - tau[:, 0])[:, None, None]
            r0 = R[:, 0] - r1 * tau[:, 0][:, None, None]
            if log:
                lnT = np.log(T)
                m0 = T ** beta0 * (lnT / beta0 - 1.0 / beta0 ** 2)
                m1 = T ** beta1 * (lnT / beta1 - 1.0 / beta1 ** 2)
            else:
                m0 = T ** beta0 / beta0
                m1 = T ** beta1 / beta1
            out[idx] += r0 * m0[:, None, None] + r1 * m1[:, None, None]
        if np.any(far):
            idx = np.flatnonzero(far)
            a = np.minimum(np.abs(t0[idx]), np.abs(t1[idx]))
            b = np.maximum(np.abs(t0[idx]), np.abs(t1[idx]))
            sign = np.where(t1[idx] > 0, 1.0, -1.0)
            far_pieces.append((idx, a, b, sign))
    if far_pieces:
        idx = np.concatenate([p[0] for p in far_pieces])
        a = np.concatenate([p[1] for p in far_pieces])
        b = np.concatenate([p[2] for p in far_pieces])
        sign = np.concatenate([p[3] for p in far_pieces])
        nsub = np.maximum(1, np.ceil(np.log(b / a) / math.log(_GRADE) - 1e-12)).astype(int)
        rep = np.repeat(np.arange(len(idx)), nsub)
        j = np.arange(len(rep)) - np.repeat(np.cumsum(nsub) - nsub, nsub)
        ratio = (b / a)[rep]
        lo = a[rep] * ratio ** (j / nsub[rep])
        hi = a[rep] * ratio ** ((j + 1) / nsub[rep])
        hi = np.where(j + 1 == nsub[rep], b[rep], hi)
        pid = idx[rep]
        sg = sign[rep]
        results = []
        for n in _GL_FAR:
            g, w = gauss_legendre01(n)
            tau = lo[:, None] + (hi - lo)[:, None] * g[None, :]
            Q = _q1d(xa[pid], xb[pid], c0[pid], cx[pid], cy[pid], sg[:, None] * tau)
            kv = _kernel_values(tau, kernel) * (hi - lo)[:, None] * w[None, :]
            results.append(np.einsum("pm,pmij->pij", kv, Q))
        coarse, fine = results
        np.add.at(out, pid, fine)
        np.add.at(err, pid, np.max(np.abs(fine - coarse), axis=(1, 2)))
    return out, err


# ---------------------------------------------------------------- 2D


_STAIRCASE = []
for _moves in ("RRUU", "RURU", "RUUR", "URRU", "URUR", "UURR"):
    _pts = [(0, 0)]
    for _m in _moves:
        i, j = _pts[-1]
        _pts.append((i + 1, j) if _m == "R" else (i, j + 1))
    _STAIRCASE.append(tuple(_pts))
del _moves, _pts, _m


def _radial_factors(kernel: KernelSpec):
    beta = 1.0 - 2.0 * kernel.s
    fp = 2.0 / ((beta + 1.0) * (beta + 2.0) * (beta + 3.0))
    fl = -(1.0 / (beta + 1.0) ** 2 - 2.0 / (beta + 2.0) ** 2 + 1.0 / (beta + 3.0) ** 2)
    return beta, fp, fl


def local_identical(area, g, kernel: KernelSpec, m: int):
    r"""Identical triangle pairs.

    ``g`` (P, S, 2) are the slot gradients so that ``d = g.(x - y)``.  With
    ``z = y - x`` the overlap ``|T cap (T - z)| = |T| (1 - G(z))**2``, where
    ``G(z) = sum_i |grad(lambda_i).z| / 2``, turns the 4D integral into an
    angular integral with a closed-form radial part.
    """
    P = g.shape[0]
    lam_g = g[:, :3]  # first three slots carry the barycentric gradients
    beta, fp, fl = _radial_factors(kernel)
    kinks = np.mod(np.arctan2(lam_g[..., 1], lam_g[..., 0]) + 0.5 * math.pi, math.pi)
    edges = np.concatenate([np.zeros((P, 1)), np.sort(kinks, axis=1), np.full((P, 1), math.pi)], axis=1)
    x, w = gauss_legendre01(m)
    lo = edges[:, :-1, None]
    width = (edges[:, 1:] - edges[:, :-1])[..., None]
    theta = (lo + width * x).reshape(P, -1)
    wt = (width * w).reshape(P, -1)
    omega = np.stack([np.cos(theta), np.sin(theta)], axis=-1)  # (P, n, 2)
    dots = np.einsum("psd,pnd->pns", g, omega)
    G = 0.5 * np.abs(np.einsum("pkd,pnd->pnk", lam_g, omega)).sum(axis=-1)
    R = 1.0 / G
    radial = R ** (beta + 1.0)
    if kernel.weight is Weight.LOG:
        radial = radial * (fp * np.log(R) + fl)
    else:
        radial = radial * fp
    return 2.0 * area[:, None, None] * np.einsum("pn,pni,pnj->pij", wt * radial, dots, dots)


def _duffy_factors(kernel: KernelSpec, edge: bool):
    s = kernel.s
    if edge:
        plain = 1.0 / (3.0 - 2.0 * s) - 1.0 / (4.0 - 2.0 * s)
        logc = -1.0 / (3.0 - 2.0 * s) ** 2 + 1.0 / (4.0 - 2.0 * s) ** 2
    else:
        plain = 1.0 / (4.0 - 2.0 * s)
        logc = -1.0 / (4.0 - 2.0 * s) ** 2
    return plain, logc


@lru_cache(maxsize=None)
def _moment_basis(pts_key, n, k):
    pts = np.frombuffer(pts_key).reshape(n, k)
    e = np.concatenate([np.ones((n, 1)), pts], axis=1)
    return (e[:, :, None] * e[:, None, :]).reshape(n, (k + 1) ** 2)


def _moments(wf, pts):
    """Sum_n wf[:, n] e_n e_n^T with e = (1, pts): (P, n) -> (P, k+1, k+1)."""
    n, k = pts.shape
    EE = _moment_basis(np.ascontiguousarray(pts).tobytes(), n, k)
    return (wf @ EE).reshape(-1, k + 1, k + 1)


def _sandwich(C, M):
    """C M C^T for batches: C (P, S, k), M (P, k, k)."""
    return C @ M @ np.swapaxes(C, 1, 2)


def _simplex_integral(X0, Q, c0, cx, cy, kernel, rule, plain, logc, extra_edge=None):
    """One Duffy-mapped 4-simplex.  Q: list of facet vertices, each (P, 4).

    ``d`` is affine in the facet coordinates, so the local matrix is
    ``C M C^T`` with ``M`` the kernel-weighted moments of ``(1, eta)``.
    """
    pts, wts = rule
    base = Q[0]
    D = np.stack([q - base for q in Q[1:]], axis=-1)  # (P, 4, k)
    cols = ([extra_edge - X0] if extra_edge is not None else []) + [q - X0 for q in Q]
    det = np.abs(np.linalg.det(np.stack(cols, axis=-1)))
    delta0 = base[:, :2] - base[:, 2:]
    Ddelta = D[:, :2] - D[:, 2:]
    dx = delta0[:, None, 0] + Ddelta[:, 0] @ pts.T  # (P, n)
    dy = delta0[:, None, 1] + Ddelta[:, 1] @ pts.T
    log_r = 0.5 * np.log(dx * dx + dy * dy)
    f = np.exp(-kernel.exponent * log_r)
    if kernel.weight is Weight.LOG:
        f *= plain * log_r + logc
    else:
        f *= plain
    M = _moments(f * (wts * 1.0)[None, :] * det[:, None], pts)
    g0 = c0 + np.einsum("psd,pd->ps", cx, base[:, :2]) + np.einsum("psd,pd->ps", cy, base[:, 2:])
    G = cx @ D[:, :2] + cy @ D[:, 2:]
    return _sandwich(np.concatenate([g0[:, :, None], G], axis=2), M)


def local_touching(A, B, c0, cx, cy, kernel: KernelSpec, m: int, shared: int, levels: int = 0):
    """Vertex- (``shared=1``) or edge-adjacent (``shared=2``) triangle pairs.

    ``A``/``B`` (P, 3, 2) list shared vertices first and in the same order.
    The facet rules are composite collapsed Gauss rules on ``levels`` times
    uniformly refined reference simplices.
    """
    tet = tetrahedron_rule(m, levels)
    tri = triangle_rule(m, levels)
    chunk = max(1, 2 ** 21 // len(tet[1]))
    out = np.zeros((len(A), c0.shape[1], c0.shape[1]))
    for lo in range(0, len(A), chunk):
        sl = slice(lo, lo + chunk)
        args = (c0[sl], cx[sl], cy[sl], kernel)
        for path in _STAIRCASE:
            verts = [np.concatenate([A[sl, i], B[sl, j]], axis=1) for i, j in path]
            if shared == 2 and (1, 1) in path:
                k = path.index((1, 1))
                facet = [v for n, v in enumerate(verts) if n not in (0, k)]
                plain, logc = _duffy_factors(kernel, edge=True)
                out[sl] += _simplex_integral(verts[0], facet, *args, tri, plain, logc, extra_edge=verts[k])
            else:
                plain, logc = _duffy_factors(kernel, edge=False)
                out[sl] += _simplex_integral(verts[0], verts[1:], *args, tet, plain, logc)
    return out


def local_disjoint(A, B, c0, cx, cy, kernel: KernelSpec, m: int):
    """Tensor Gauss on ``T_a x T_b`` for pairs with no common point."""
    pts, w = triangle_rule(m)
    n = len(w)

    def mapped(T):
        J = np.stack([T[:, 1] - T[:, 0], T[:, 2] - T[:, 0]], axis=-1)
        area2 = np.abs(np.linalg.det(J))
        return T[:, None, 0] + pts @ np.swapaxes(J, 1, 2), area2[:, None] * w[None, :], J

    x, wx, Ja = mapped(A)
    y, wy, Jb = mapped(B)
    dx = x[:, :, None, 0] - y[:, None, :, 0]
    dy = x[:, :, None, 1] - y[:, None, :, 1]
    log_r = 0.5 * np.log(dx * dx + dy * dy)
    Kw = np.exp(-kernel.exponent * log_r)
    if kernel.weight is Weight.LOG:
        Kw *= log_r
    Kw *= wx[:, :, None] * wy[:, None, :]
    # d = ga0 + Ga eta_x - (gb0 + Gb eta_y), affine in both reference points
    e = np.concatenate([np.ones((n, 1)), pts], axis=1)  # (n, 3)
    Mxx = _moments(Kw.sum(axis=2), pts)
    Myy = _moments(Kw.sum(axis=1), pts)
    Mxy = (e.T @ Kw) @ e
    ga = np.concatenate([(c0 + np.einsum("psd,pd->ps", cx, A[:, 0]))[:, :, None], cx @ Ja], axis=2)
    gb = np.concatenate([(-np.einsum("psd,pd->ps", cy, B[:, 0]))[:, :, None], -(cy @ Jb)], axis=2)
    cross = ga @ Mxy @ np.swapaxes(gb, 1, 2)
    return _sandwich(ga, Mxx) + _sandwich(gb, Myy) - cross - np.swapaxes(cross, 1, 2)


def _split_triangles(T):
    """Red refinement: (P, 3, 2) -> (P, 4, 3, 2)."""
    p0, p1, p2 = T[:, 0], T[:, 1], T[:, 2]
    m01, m12, m20 = 0.5 * (p0 + p1), 0.5 * (p1 + p2), 0.5 * (p2 + p0)
    return np.stack([
        np.stack([p0, m01, m20], 1),
        np.stack([m01, p1, m12], 1),
        np.stack([m20, m12, p2], 1),
        np.stack([m01, m12, m20], 1),
    ], axis=1)


def _triangle_distance(A, B):
    """Distance between two batches of disjoint triangles."""
    def pt_seg(p, a, b):
        ab = b - a
        t = np.clip(np.einsum("pd,pd->p", p - a, ab) / np.einsum("pd,pd->p", ab, ab), 0.0, 1.0)
        return np.linalg.norm(a + t[:, None] * ab - p, axis=1)

    best = np.full(len(A), np.inf)
    for S, T in ((A, B), (B, A)):
        for i in range(3):
            for j in range(3):
                best = np.minimum(best, pt_seg(S[:, i], T[:, j], T[:, (j + 1) % 3]))
    return best


DISJOINT_MAX_DEPTH = 4


def disjoint_adaptive(A, B, c0, cx, cy, kernel: KernelSpec, tol: float, depth: int = 0):
    """Disjoint pairs with order grading by separation and red refinement."""
    P = len(A)
    diam = np.maximum(_tri_diam(A), _tri_diam(B))
    sep = _triangle_distance(A, B) / diam
    m = np.where(sep >= 1.0, 5, np.where(sep >= 0.4, 7, 9))
    out = np.zeros((P, c0.shape[1], c0.shape[1]))
    err = np.zeros(P)
    for order in np.unique(m):
        idx = np.flatnonzero(m == order)
        coarse = local_disjoint(A[idx], B[idx], c0[idx], cx[idx], cy[idx], kernel, int(order))
        fine = local_disjoint(A[idx], B[idx], c0[idx], cx[idx], cy[idx], kernel, int(order) + 2)
        out[idx] = fine
        err[idx] = np.max(np.abs(fine - coarse), axis=(1, 2))
    scale = np.maximum(np.max(np.abs(out), axis=(1, 2)), 1e-300)
    bad = np.flatnonzero(err > tol * scale)
    if bad.size:
        if depth >= DISJOINT_MAX_DEPTH:
            raise QuadratureError(
                f"disjoint pair quadrature did not converge after {depth} refinements",
                pairs=bad, estimate=float(np.max(err[bad] / scale[bad])),
            )
        ca = _split_triangles(A[bad])
        cb = _split_triangles(B[bad])
        ia, ib = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        nb = len(bad)
        sub_a = ca[:, ia].reshape(nb * 16, 3, 2)
        sub_b = cb[:, ib].reshape(nb * 16, 3, 2)
        rep = np.repeat(bad, 16)
        sub, sub_err = disjoint_adaptive(sub_a, sub_b, c0[rep], cx[rep], cy[rep], kernel, tol, depth + 1)
        out[bad] = sub.reshape(nb, 16, *sub.shape[1:]).sum(axis=1)
        err[bad] = sub_err.reshape(nb, 16).sum(axis=1)
    return out, err


def _tri_diam(T):
    return np.max(np.stack([np.linalg.norm(T[:, 0] - T[:, 1], axis=1),
                            np.linalg.norm(T[:, 1] - T[:, 2], axis=1),
                            np.linalg.norm(T[:, 2] - T[:, 0], axis=1)]), axis=0)


TOUCHING_ORDER = 7
TOUCHING_LEVELS = {1: (1, 2), 2: (2, 3)}
IDENTICAL_ORDER = 24


def _checked(coarse, fine, tol, what):
    err = np.max(np.abs(fine - coarse), axis=(1, 2))
    scale = np.maximum(np.max(np.abs(fine), axis=(1, 2)), 1e-300)
    bad = err > tol * scale
    if np.any(bad):
        raise QuadratureError(f"{what} quadrature error estimate above tolerance",
                              pairs=np.flatnonzero(bad), estimate=float(np.max(err / scale)))
    return fine, err


def _shared_order(ia, ib):
    """Reorder local vertices so shared ones come first in matching order."""
    P, k = ia.shape
    perm_a = np.zeros((P, k), dtype=int)
    perm_b = np.zeros((P, k), dtype=int)
    nshared = np.zeros(P, dtype=int)
    for p in range(P):
        shared = [v for v in ia[p] if v in ib[p]]
        rest_a = [i for i in range(k) if ia[p, i] not in shared]
        rest_b = [i for i in range(k) if ib[p, i] not in shared]
        perm_a[p] = [list(ia[p]).index(v) for v in shared] + rest_a
        perm_b[p] = [list(ib[p]).index(v) for v in shared] + rest_b
        nshared[p] = len(shared)
    return perm_a, perm_b, nshared


def local_matrices(mesh: Mesh, ea, eb, kernel: KernelSpec, tol: float | None = None, grads=None):
    """Local matrices for a batch of element pairs of ``mesh``.

    Returns ``(index, K, err)``: global vertex ids per slot (P, S), the local
    matrices (P, S, S) and absolute error estimates (P,).
    """
    if kernel.N != mesh.dim:
        raise ValueError(f"kernel dimension {kernel.N} does not match mesh dimension {mesh.dim}")
    tol = DEFAULT_TOL[mesh.dim] if tol is None else float(tol)
    ea = np.atleast_1d(np.asarray(ea, dtype=np.int64))
    eb = np.atleast_1d(np.asarray(eb, dtype=np.int64))
    index, c0, cx, cy = pair_slots(mesh, ea, eb, grads)
    origin = mesh.vertices[mesh.elements[ea, 0]]
    A = mesh.vertices[mesh.elements[ea]] - origin[:, None, :]
    B = mesh.vertices[mesh.elements[eb]] - origin[:, None, :]
    P, S = c0.shape
    if mesh.dim == 1:
        K, err = local_1d(A[..., 0], B[..., 0], c0, cx[..., 0], cy[..., 0], kernel)
        scale = np.maximum(np.max(np.abs(K), axis=(1, 2)), 1e-300)
        bad = err > tol * scale
        if np.any(bad):
            raise QuadratureError("1D pair quadrature error estimate above tolerance",
                                  pairs=np.flatnonzero(bad), estimate=float(np.max(err / scale)))
        return index, K, err

    K = np.zeros((P, S, S))
    err = np.zeros(P)
    ia = mesh.elements[ea]
    ib = mesh.elements[eb]
    nshared = (ia[:, :, None] == ib[:, None, :]).any(axis=2).sum(axis=1)

    idx = np.flatnonzero(nshared == 3)
    if idx.size:
        area = mesh.element_measures[ea[idx]]
        coarse = local_identical(area, cx[idx], kernel, IDENTICAL_ORDER - 8)
        fine = local_identical(area, cx[idx], kernel, IDENTICAL_ORDER)
        K[idx], err[idx] = _checked(coarse, fine, tol, "identical-pair")

    for shared in (1, 2):
        idx = np.flatnonzero(nshared == shared)
        if not idx.size:
            continue
        pa, pb, _ = _shared_order(ia[idx], ib[idx])
        rows = np.arange(len(idx))[:, None]
        Aa = A[idx][rows, pa]
        Bb = B[idx][rows, pb]
        todo = np.arange(len(idx))
        ladder = TOUCHING_LEVELS[shared]
        for step, levels in enumerate(ladder):
            args = (Aa[todo], Bb[todo], c0[idx[todo]], cx[idx[todo]], cy[idx[todo]], kernel)
            coarse = local_touching(*args, TOUCHING_ORDER - 2, shared, levels)
            fine = local_touching(*args, TOUCHING_ORDER, shared, levels)
            e = np.max(np.abs(fine - coarse), axis=(1, 2))
            scale = np.maximum(np.max(np.abs(fine), axis=(1, 2)), 1e-300)
            K[idx[todo]] = fine
            err[idx[todo]] = e
            bad = e > tol * scale
            if not np.any(bad):
                break
            if step == len(ladder) - 1:
                raise QuadratureError("adjacent-pair quadrature error estimate above tolerance",
                                      pairs=idx[todo[bad]], estimate=float(np.max(e / scale)))
            todo = todo[bad]

    idx = np.flatnonzero(nshared == 0)
    if idx.size:
        K[idx], err[idx] = disjoint_adaptive(A[idx], B[idx], c0[idx], cx[idx], cy[idx], kernel, tol)
    return index, K, err


def pair_integral(a: int, b: int, i: int, j: int, kernel: KernelSpec, mesh: Mesh,
                  tol: float | None = None) -> float:
    """Contribution of the ordered element pair ``(a, b)`` to the ``(i, j)`` entry."""
    classify_pair(a, b, mesh)
    index, K, _ = local_matrices(mesh, [a], [b], kernel, tol)
    sel_i = index[0] == i
    sel_j = index[0] == j
    return float(K[0][np.ix_(sel_i, sel_j)].sum())
