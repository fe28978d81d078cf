"""Named analytic functions for right-hand sides and test functions.

Every entry is a factory ``make(mesh) -> func`` where ``func`` maps points of
shape ``(..., dim)`` to values of shape ``(...)``.  Factories see the mesh so
that, for instance, the bump can be centred inside the domain.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from .domain import DiscreteFunction, Mesh, interpolate


def _cospix(mesh):
    return lambda p: np.cos(np.pi * p[..., 0])


def _sinpix(mesh):
    return lambda p: np.sin(np.pi * p[..., 0])


def _legendre2(mesh):
    def f(p):
        t = 2.0 * p[..., 0] - 1.0
        return 0.5 * (3.0 * t * t - 1.0)
    return f


def _x(mesh):
    return lambda p: p[..., 0]


def _xy(mesh):
    return lambda p: p[..., 0] * p[..., -1]


def _quadratic(mesh):
    return lambda p: p[..., 0] * (1.0 - p[..., 0])


def _zero(mesh):
    return lambda p: np.zeros(p.shape[:-1])


def _one(mesh):
    return lambda p: np.ones(p.shape[:-1])


def _bump(mesh):
    """Smooth bump centred at the vertex centroid, radius a quarter of the diameter."""
    center = mesh.vertices.mean(axis=0)
    rho = 0.25 * mesh.diameter

    def f(p):
        r2 = np.sum((p - center) ** 2, axis=-1) / rho ** 2
        out = np.zeros(r2.shape)
        inside = r2 < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out
    return f


REGISTRY = {
    "cospix": _cospix,
    "sinpix": _sinpix,
    "legendre2": _legendre2,
    "bump": _bump,
    "x": _x,
    "xy": _xy,
    "quadratic": _quadratic,
    "zero": _zero,
    "one": _one,
}


def names() -> list:
    return sorted(REGISTRY)


def get(name: str, mesh: Mesh):
    try:
        return REGISTRY[name](mesh)
    except KeyError:
        raise ValueError(f"unknown function {name!r} (known: {', '.join(names())})") from None


def read_nodal_csv(path, mesh: Mesh) -> DiscreteFunction:
    """Nodal values from a CSV whose last column holds one value per vertex."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and not _is_number(rows[0][-1]):
        rows = rows[1:]
    values = [float(r[-1]) for r in rows if r]
    if len(values) != mesh.num_vertices:
        raise ValueError(f"{path}: expected {mesh.num_vertices} nodal values, found {len(values)}")
    return DiscreteFunction(mesh, np.array(values))


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def resolve(spec: str, mesh: Mesh) -> DiscreteFunction:
    """Interpolate a named function, or read nodal values from a CSV path."""
    if spec in REGISTRY:
        return interpolate(mesh, get(spec, mesh))
    if os.path.exists(spec):
        return read_nodal_csv(spec, mesh)
    raise ValueError(f"unknown function {spec!r} (known: {', '.join(names())}, or a nodal CSV path)")
