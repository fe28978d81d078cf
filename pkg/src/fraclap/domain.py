"""Simplicial meshes of bounded domains and P1 nodal functions on them.

Meshes are 1D interval partitions or 2D triangulations.  They are immutable
once built and carry their diameter, measure and a content fingerprint.
"""

from __future__ import annotations

import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, Delaunay
from scipy.spatial.distance import pdist

from .specfun import validate_order

MESH_HEADER = "fraclap-mesh v1"


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class MeshParseError(MeshError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DegenerateElementError(MeshError):
    def __init__(self, index: int, measure: float):
        super().__init__(f"element {index} is degenerate (measure {measure:.3e})")
        self.index = index


@dataclass(frozen=True, eq=False)
class Mesh:
    """A conforming simplicial mesh.

    ``vertices`` has shape ``(nv, dim)`` and ``elements`` shape ``(ne, dim + 1)``
    with 0-based vertex indices.  Construction validates the mesh and derives
    the geometry; the arrays are made read-only.
    """

    vertices: np.ndarray
    elements: np.ndarray
    element_measures: np.ndarray = field(init=False, repr=False)
    diameter: float = field(init=False)
    measure: float = field(init=False)
    fingerprint: str = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        e = np.array(self.elements, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (1, 2):
            raise MeshError("vertices must be an (nv, 1) or (nv, 2) array")
        dim = v.shape[1]
        if e.ndim != 2 or e.shape[1] != dim + 1:
            raise MeshError(f"elements of a {dim}D mesh need {dim + 1} vertex indices")
        if len(e) == 0:
            raise MeshError("mesh has no elements")
        if e.min() < 0 or e.max() >= len(v):
            raise MeshError("element vertex index out of range")
        if dim == 1:
            # store intervals left-to-right
            swap = v[e[:, 0], 0] > v[e[:, 1], 0]
            e[swap] = e[swap][:, ::-1]
        measures = _element_measures(v, e)
        scale = _bbox_scale(v)
        for k, m in enumerate(measures):
            if not m > 1e-14 * scale ** dim:
                raise DegenerateElementError(k, float(m))
        _check_conforming(v, e)
        _check_connected(len(v), e)
        v.setflags(write=False)
        e.setflags(write=False)
        measures.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "elements", e)
        object.__setattr__(self, "element_measures", measures)
        object.__setattr__(self, "diameter", _diameter(v))
        object.__setattr__(self, "measure", float(measures.sum()))
        digest = hashlib.sha256()
        digest.update(str(v.shape).encode())
        digest.update(np.ascontiguousarray(v).tobytes())
        digest.update(np.ascontiguousarray(e).tobytes())
        object.__setattr__(self, "fingerprint", digest.hexdigest()[:16])

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_elements(self) -> int:
        return self.elements.shape[0]

    def element_diameters(self) -> np.ndarray:
        pts = self.vertices[self.elements]
        k = pts.shape[1]
        d = np.zeros(len(pts))
        for i in range(k):
            for j in range(i + 1, k):
                d = np.maximum(d, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        return d

    def boundary_facets(self) -> np.ndarray:
        """Vertex indices of boundary facets (points in 1D, edges in 2D)."""
        if self.dim == 1:
            counts = np.bincount(self.elements.ravel(), minlength=self.num_vertices)
            return np.flatnonzero(counts == 1)[:, None]
        edges = np.sort(self.elements[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(edges, axis=0, return_counts=True)
        return uniq[counts == 1]

    def distance_to_boundary(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        facets = self.boundary_facets()
        if self.dim == 1:
            return float(np.min(np.abs(self.vertices[facets[:, 0], 0] - x[0])))
        a = self.vertices[facets[:, 0]]
        b = self.vertices[facets[:, 1]]
        ab = b - a
        t = np.clip(np.einsum("ij,ij->i", x - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        closest = a + t[:, None] * ab
        return float(np.min(np.linalg.norm(closest - x, axis=1)))

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.dim == 1:
            lo = self.vertices[self.elements[:, 0], 0]
            hi = self.vertices[self.elements[:, 1], 0]
            return bool(np.any((lo - tol <= x[0]) & (x[0] <= hi + tol)))
        lam = barycentric(self, x[None, :])[0]
        return bool(np.any(np.all(lam >= -tol, axis=1)))


def _bbox_scale(v: np.ndarray) -> float:
    return float(np.max(v.max(axis=0) - v.min(axis=0))) or 1.0


def _element_measures(v: np.ndarray, e: np.ndarray) -> np.ndarray:
    if v.shape[1] == 1:
        return v[e[:, 1], 0] - v[e[:, 0], 0]
    p0, p1, p2 = v[e[:, 0]], v[e[:, 1]], v[e[:, 2]]
    cross = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    return 0.5 * np.abs(cross)


def _check_conforming(v: np.ndarray, e: np.ndarray) -> None:
    if v.shape[1] == 1:
        order = np.argsort(v[e[:, 0], 0], kind="stable")
        lo = v[e[order, 0], 0]
        hi = v[e[order, 1], 0]
        bad = np.flatnonzero(lo[1:] < hi[:-1])
        if bad.size:
            raise MeshError(f"elements {order[bad[0]]} and {order[bad[0] + 1]} overlap")
        return
    # every edge has at most two triangles, and those lie on opposite sides
    local = np.array([[0, 1, 2], [1, 2, 0], [2, 0, 1]])
    tri = e[:, local]  # (ne, 3 edges, [a, b, opposite])
    edges = np.sort(tri[:, :, :2], axis=2).reshape(-1, 2)
    opposite = tri[:, :, 2].reshape(-1)
    owner = np.repeat(np.arange(len(e)), 3)
    uniq, inverse, counts = np.unique(edges, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        k = int(np.flatnonzero(counts > 2)[0])
        raise MeshError(f"edge {tuple(uniq[k])} is shared by more than two elements")
    for k in np.flatnonzero(counts == 2):
        i, j = np.flatnonzero(inverse == k)
        a, b = v[edges[i, 0]], v[edges[i, 1]]
        side_i = _orient(a, b, v[opposite[i]])
        side_j = _orient(a, b, v[opposite[j]])
        if side_i * side_j >= 0:
            raise MeshError(f"elements {owner[i]} and {owner[j]} overlap across a shared edge")


def _orient(a, b, c) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def _check_connected(nv: int, e: np.ndarray) -> None:
    used = np.unique(e)
    if len(used) != nv:
        raise MeshError("mesh has vertices that belong to no element")
    k = e.shape[1]
    rows = np.repeat(e[:, 0], k - 1)
    cols = e[:, 1:].ravel()
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv))
    ncomp, _ = connected_components(graph, directed=False)
    if ncomp != 1:
        raise MeshError(f"mesh is not connected ({ncomp} components)")


def _diameter(v: np.ndarray) -> float:
    pts = v
    if v.shape[1] == 2 and len(v) > 16:
        pts = v[ConvexHull(v).vertices]
    if len(pts) < 2:
        return 0.0
    return float(pdist(pts).max())


def barycentric(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points`` (m, 2) in every triangle: shape (m, ne, 3)."""
    p0 = mesh.vertices[mesh.elements[:, 0]]
    p1 = mesh.vertices[mesh.elements[:, 1]]
    p2 = mesh.vertices[mesh.elements[:, 2]]
    T = np.stack([p1 - p0, p2 - p0], axis=-1)  # (ne, 2, 2)
    Tinv = np.linalg.inv(T)
    rel = points[:, None, :] - p0[None]
    l12 = np.einsum("eij,mej->mei", Tinv, rel)
    return np.concatenate([1.0 - l12.sum(axis=-1, keepdims=True), l12], axis=-1)


# ---------------------------------------------------------------- generators


def generate_interval(n: int, a: float = 0.0, b: float = 1.0) -> Mesh:
    """Uniform partition of ``(a, b)`` into ``n`` elements."""
    if int(n) != n or n < 2:
        raise ValueError(f"interval mesh needs n >= 2 elements, got {n!r}")
    if not a < b:
        raise ValueError(f"interval mesh needs a < b, got a={a!r}, b={b!r}")
    n = int(n)
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    return Mesh(x[:, None], elements)


def generate_square(n: int, pattern: str = "unionjack") -> Mesh:
    """Structured triangulation of the unit square with ``2 n**2`` triangles.

    With ``pattern="unionjack"`` cell diagonals alternate in a checkerboard,
    so for even ``n`` the mesh keeps the full symmetry group of the square.
    ``pattern="diagonal"`` cuts every cell along the same diagonal, which
    leaves only the reflection in ``y = x`` and the half turn.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"square mesh needs n >= 1, got {n!r}")
    if pattern not in ("unionjack", "diagonal"):
        raise ValueError(f"unknown square pattern {pattern!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            if pattern == "diagonal" or (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]
    return Mesh(vertices, np.array(tris))


def generate_disc(n: int) -> Mesh:
    """Polygonal approximation of the unit disc with ``n`` boundary segments."""
    if int(n) != n or n < 1:
        raise ValueError(f"disc mesh needs n >= 1, got {n!r}")
    n = max(int(n), 3)
    rings = max(1, int(round(n / (2.0 * math.pi))))
    pts = [np.zeros((1, 2))]
    for k in range(1, rings + 1):
        count = n if k == rings else max(3, int(round(n * k / rings)))
        theta = 2.0 * math.pi * np.arange(count) / count + (0.5 * math.pi / count) * (k % 2)
        pts.append((k / rings) * np.column_stack([np.cos(theta), np.sin(theta)]))
    vertices = np.vstack(pts)
    tri = Delaunay(vertices, qhull_options="Qbb Qc Qz Q12")
    simplices = tri.simplices
    area = _element_measures(vertices, simplices)
    return Mesh(vertices, simplices[area > 1e-12])


def from_spec(spec: str) -> Mesh:
    """Build a mesh from ``interval:<n>[:a:b]``, ``square:<n>[:diagonal]``, ``disc:<n>`` or a file path."""
    kind, _, rest = spec.partition(":")
    if kind == "interval" and rest:
        parts = rest.split(":")
        n = int(parts[0])
        if len(parts) == 3:
            return generate_interval(n, float(parts[1]), float(parts[2]))
        if len(parts) != 1:
            raise ValueError(f"bad interval mesh spec {spec!r}")
        return generate_interval(n)
    if kind == "square" and rest:
        parts = rest.split(":")
        if len(parts) == 2:
            return generate_square(int(parts[0]), parts[1])
        if len(parts) != 1:
            raise ValueError(f"bad square mesh spec {spec!r}")
        return generate_square(int(parts[0]))
    if kind == "disc" and rest:
        return generate_disc(int(rest))
    if os.path.exists(spec):
        return load_mesh(spec)
    raise ValueError(f"unknown mesh spec {spec!r} (use interval:N, square:N, disc:N or a file path)")


# ---------------------------------------------------------------- file format


def load_mesh(path) -> Mesh:
    """Read a mesh in the ``fraclap-mesh v1`` text format."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            rows.append((lineno, text))
    if not rows:
        raise MeshParseError(1, "empty mesh file")

    lineno, header = rows[0]
    parts = header.split()
    if " ".join(parts[:2]) != MESH_HEADER or len(parts) != 3 or not parts[2].startswith("dim="):
        raise MeshParseError(lineno, f"expected header '{MESH_HEADER} dim=<1|2>'")
    try:
        dim = int(parts[2][4:])
    except ValueError:
        raise MeshParseError(lineno, f"bad dimension {parts[2]!r}") from None
    if dim not in (1, 2):
        raise MeshParseError(lineno, f"dimension must be 1 or 2, got {dim}")

    pos = 1

    def section(name: str, width: int, cast):
        nonlocal pos
        if pos >= len(rows):
            raise MeshParseError(rows[-1][0], f"missing '{name}' section")
        ln, text = rows[pos]
        head = text.split()
        if len(head) != 2 or head[0] != name:
            raise MeshParseError(ln, f"expected '{name} <count>'")
        try:
            count = int(head[1])
        except ValueError:
            raise MeshParseError(ln, f"bad {name} count {head[1]!r}") from None
        if count < 0:
            raise MeshParseError(ln, f"negative {name} count")
        pos += 1
        out = []
        for _ in range(count):
            if pos >= len(rows):
                raise MeshParseError(rows[-1][0], f"expected {count} {name}, file ended early")
            ln, text = rows[pos]
            fields = text.split()
            if len(fields) != width:
                raise MeshParseError(ln, f"expected {width} values, got {len(fields)}")
            try:
                out.append([cast(f) for f in fields])
            except ValueError:
                raise MeshParseError(ln, f"cannot parse {text!r}") from None
            out[-1].append(ln)
            pos += 1
        return out

    verts = section("vertices", dim, float)
    elems = section("elements", dim + 1, int)
    if pos != len(rows):
        raise MeshParseError(rows[pos][0], "unexpected trailing content")
    nv = len(verts)
    for row in elems:
        ln = row[-1]
        if any(i < 0 or i >= nv for i in row[:-1]):
            raise MeshParseError(ln, f"vertex index out of range 0..{nv - 1}")
    vertices = np.array([r[:-1] for r in verts], dtype=float).reshape(nv, dim)
    elements = np.array([r[:-1] for r in elems], dtype=np.int64).reshape(len(elems), dim + 1)
    return Mesh(vertices, elements)


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"{MESH_HEADER} dim={mesh.dim}", f"vertices {mesh.num_vertices}"]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines.append(f"elements {mesh.num_elements}")
    lines += [" ".join(str(int(i)) for i in row) for row in mesh.elements]
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="")
    os.replace(tmp, path)


# ---------------------------------------------------------------- geometry


def poincare_constant(mesh: Mesh, s: float) -> float:
    """Constant ``|Omega|**-1 * d_Omega**(N + 2s)`` of the fractional Poincare inequality."""
    s = validate_order(s)
    return mesh.diameter ** (mesh.dim + 2.0 * s) / mesh.measure


# ---------------------------------------------------------------- nodal functions


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """Continuous piecewise-linear function given by its nodal values."""

    mesh: Mesh
    coeffs: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.shape[0] != self.mesh.num_vertices:
            raise ValueError(
                f"expected {self.mesh.num_vertices} nodal values, got {c.shape[0]}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.zero_mean:
            total = integral(self)
            limit = 1e-12 * self.mesh.measure * max(float(np.max(np.abs(c), initial=0.0)), 1e-300)
            if abs(total) > limit:
                raise ValueError(f"function flagged zero-mean has integral {total:.3e}")

    def __neg__(self):
        return DiscreteFunction(self.mesh, -self.coeffs, self.zero_mean)

    def integral(self) -> float:
        return integral(self)

    def __call__(self, points) -> np.ndarray:
        return evaluate(self, points)


def lumped_weights(mesh: Mesh) -> np.ndarray:
    """Integrals of the nodal basis functions (row sums of the mass matrix)."""
    k = mesh.dim + 1
    w = np.zeros(mesh.num_vertices)
    np.add.at(w, mesh.elements.ravel(), np.repeat(mesh.element_measures / k, k))
    return w


def integral(u: DiscreteFunction) -> float:
    return float(lumped_weights(u.mesh) @ u.coeffs)


def interpolate(mesh: Mesh, func, zero_mean: bool = False) -> DiscreteFunction:
    """Nodal interpolant of a vectorised callable ``func(points) -> values``.

    ``points`` has shape ``(nv, dim)``.  With ``zero_mean=True`` the mean is
    removed after interpolation.
    """
    values = np.asarray(func(mesh.vertices), dtype=float).reshape(-1)
    if values.shape[0] != mesh.num_vertices:
        values = np.broadcast_to(values, (mesh.num_vertices,)).copy()
    if zero_mean:
        values = values - integral(DiscreteFunction(mesh, values)) / mesh.measure
    return DiscreteFunction(mesh, values, zero_mean=zero_mean)


def evaluate(u: DiscreteFunction, points) -> np.ndarray:
    """Evaluate ``u`` at points inside the mesh."""
    mesh = u.mesh
    pts = np.asarray(points, dtype=float)
    if mesh.dim == 1:
        x = pts.reshape(-1)
        order = np.argsort(mesh.vertices[:, 0])
        return np.interp(x, mesh.vertices[order, 0], u.coeffs[order])
    pts = pts.reshape(-1, 2)
    lam = barycentric(mesh, pts)
    inside = np.all(lam >= -1e-10, axis=2)
    if not np.all(inside.any(axis=1)):
        raise ValueError("evaluation point outside the mesh")
    elem = np.argmax(inside, axis=1)
    rows = np.arange(len(pts))
    return np.einsum("mi,mi->m", lam[rows, elem], u.coeffs[mesh.elements[elem]])
