import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import mmread

from fraclap.domain import Mesh, generate_interval, generate_square, interpolate
from fraclap.forms import (
    assemble,
    cached_assemble,
    clear_cache,
    energy,
    export_matrix_market,
    mass,
    pv_apply,
    seminorm,
)
from fraclap.functions import get
from fraclap.quadrature import KernelSpec, Weight, gauss_legendre01
from fraclap.specfun import c_ns
from oracles import load_interval, load_scalars


def test_mass_single_element():
    M = mass(Mesh(np.array([[0.0], [1.0]]), np.array([[0, 1]]))).mat
    assert np.allclose(M, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], rtol=1e-15)


@pytest.mark.parametrize("mesh", [generate_interval(9), generate_square(1), generate_square(5)])
def test_mass_integrates_one(mesh):
    one = np.ones(mesh.num_vertices)
    assert one @ mass(mesh).mat @ one == pytest.approx(mesh.measure, rel=1e-12)
    assert one @ mass(mesh, lumped=True).mat @ one == pytest.approx(mesh.measure, rel=1e-12)
    assert np.all(np.linalg.eigvalsh(mass(mesh).mat) > 0)


@pytest.mark.parametrize("mesh", [generate_interval(16), generate_square(3)], ids=["interval", "square"])
def test_plain_matrix_structure(mesh):
    A = assemble(mesh, KernelSpec(mesh.dim, 0.45)).mat
    assert np.array_equal(A, A.T)
    assert np.max(np.abs(A @ np.ones(mesh.num_vertices))) < 1e-8 * np.max(np.abs(A))
    ev = np.linalg.eigvalsh(A)
    assert abs(ev[0]) < 1e-10 * ev[-1] and ev[1] > 1e-6 * ev[-1]


def test_matrices_are_read_only():
    A = assemble(generate_interval(4), KernelSpec(1, 0.5))
    with pytest.raises(ValueError):
        A.mat[0, 0] = 1.0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble(generate_interval(4), KernelSpec(2, 0.5))


@pytest.mark.parametrize("weight", ["plain", "log"])
def test_linear_energy_against_global_oracle_interval(weight):
    mesh = generate_interval(16)
    u = interpolate(mesh, lambda p: p[..., 0] - 0.5)
    for s in (0.1, 0.5, 0.9):
        A = assemble(mesh, KernelSpec(1, s, weight)).mat
        ref = load_scalars()[f"interval linear s={s} {weight}"]
        assert u.coeffs @ A @ u.coeffs == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("weight", ["plain", "log"])
def test_linear_energy_against_overlap_oracle_square(weight):
    mesh = generate_square(4)
    u = interpolate(mesh, lambda p: p[..., 0])
    for s in (0.1, 0.5, 0.9):
        A = assemble(mesh, KernelSpec(2, s, weight)).mat
        ref = load_scalars()[f"square linear s={s} {weight}"]
        assert u.coeffs @ A @ u.coeffs == pytest.approx(ref, rel=1e-6)


def test_entries_against_interval_oracle_small():
    ref = load_interval()
    mesh = generate_interval(8)
    for s in (0.25, 0.75):
        for weight, key in ((Weight.PLAIN, "A"), (Weight.LOG, "L")):
            got = assemble(mesh, KernelSpec(1, s, weight)).mat
            R = ref[f"{key}_n8_s{s}"]
            assert np.allclose(got, R, rtol=1e-6, atol=0)


def test_energy_properties(rng):
    mesh = generate_interval(20)
    A = assemble(mesh, KernelSpec(1, 0.6))
    one = np.ones(mesh.num_vertices)
    for _ in range(100):
        u = rng.standard_normal(mesh.num_vertices)
        v = rng.standard_normal(mesh.num_vertices)
        assert energy(u, u, A) >= 0
        assert energy(u, v, A) == pytest.approx(energy(v, u, A), rel=1e-12, abs=1e-14)
        assert abs(energy(u, one, A)) < 1e-8 * np.linalg.norm(u) * np.abs(A.mat).max()
    assert energy(u, v, A) == pytest.approx(0.5 * c_ns(1, 0.6) * u @ A.mat @ v)


def test_energy_rejects_wrong_inputs():
    mesh = generate_interval(6)
    L = assemble(mesh, KernelSpec(1, 0.5, Weight.LOG))
    A = assemble(mesh, KernelSpec(1, 0.5))
    u = interpolate(mesh, lambda p: p[..., 0])
    with pytest.raises(ValueError):
        energy(u, u, L)
    with pytest.raises(ValueError):
        energy(u, u, A, s=0.4)
    other = interpolate(generate_interval(5), lambda p: p[..., 0])
    with pytest.raises(ValueError):
        energy(other, other, A)


def test_seminorm_examples():
    clear_cache()
    mesh = generate_interval(16)
    assert seminorm(interpolate(mesh, lambda p: np.ones(p.shape[:-1])), 0.5) < 1e-7
    u = interpolate(mesh, lambda p: p[..., 0])
    ref = load_scalars()["interval linear s=0.5 plain"]
    assert seminorm(u, 0.5) == pytest.approx(math.sqrt(ref), rel=1e-6)
    assert cached_assemble(mesh, 0.5) is cached_assemble(mesh, 0.5 + 1e-14)


def test_seminorm_monotonicity_surrogate(rng):
    mesh = generate_interval(4, 0.0, 1.7)
    ts = [0.1, 0.3, 0.5, 0.7, 0.9]
    for _ in range(20):
        u = interpolate(mesh, lambda p: np.zeros(p.shape[:-1]))
        u = type(u)(mesh, rng.standard_normal(mesh.num_vertices))
        norms = [seminorm(u, t) for t in ts]
        for (t, a), (t2, b) in zip(zip(ts, norms), zip(ts[1:], norms[1:])):
            assert a <= mesh.diameter ** (t2 - t) * b * (1 + 1e-12)


def test_matrix_market_export(tmp_path):
    mesh = generate_interval(5)
    A = assemble(mesh, KernelSpec(1, 0.3, Weight.LOG))
    p = tmp_path / "L.mtx"
    export_matrix_market(A, p)
    text = p.read_text()
    assert text.startswith("%%MatrixMarket matrix coordinate real symmetric")
    assert "weight=log" in text and "quad_tol=1e-09" in text and mesh.fingerprint in text
    back = mmread(str(p)).toarray()
    assert np.array_equal(back, A.mat)


def test_pv_quadratic_against_reference():
    mesh = generate_interval(16)
    phi = get("quadratic", mesh)
    ref = load_scalars()["pv quadratic s=0.3 x=0.5"]
    assert pv_apply(phi, np.array([0.5]), 0.3, mesh) == pytest.approx(ref, rel=1e-6)
    closed = c_ns(1, 0.3) * 2 * 0.5 ** 1.4 / 1.4
    assert ref == pytest.approx(closed, rel=1e-10)


@pytest.mark.parametrize("mesh", [generate_interval(8), generate_square(4)], ids=["interval", "square"])
def test_pv_constant_and_radius_independence(mesh):
    x = np.full(mesh.dim, 0.4)
    assert pv_apply(get("one", mesh), x, 0.5, mesh) == pytest.approx(0.0, abs=1e-12)
    phi = get("bump", mesh)
    vals = [pv_apply(phi, x, 0.55, mesh, r) for r in (0.02, 0.05, 0.1)]
    assert max(vals) - min(vals) < 1e-8 * max(abs(v) for v in vals)


def test_pv_rejects_points_near_boundary():
    mesh = generate_interval(8)
    with pytest.raises(ValueError):
        pv_apply(get("quadratic", mesh), np.array([0.05]), 0.5, mesh, ball_radius=0.1)


@pytest.mark.parametrize("s", [0.3, 0.7])
def test_pv_duality_with_energy(s):
    """``int u_h (-Delta)^s phi`` approaches ``E_s(u_h, phi_h)`` as the mesh is refined."""
    x, w = gauss_legendre01(4)
    errs = []
    for n in (8, 64):
        mesh = generate_interval(n)
        phi = get("bump", mesh)
        u = interpolate(mesh, lambda p: p[..., 0] ** 2)
        total = 0.0
        for e in range(n):
            a, b = mesh.vertices[mesh.elements[e], 0]
            for xi, wi in zip(a + (b - a) * x, (b - a) * w):
                total += wi * u(np.array([xi]))[0] * pv_apply(phi, np.array([xi]), s, mesh)
        E = energy(u, interpolate(mesh, phi), assemble(mesh, KernelSpec(1, s)))
        errs.append(abs(total - E) / abs(E))
    assert errs[-1] < 2e-3
    assert errs[-1] < errs[0] / 10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(2, 12))
def test_plain_matrix_invariants_property(s, n):
    A = assemble(generate_interval(n), KernelSpec(1, s)).mat
    assert np.array_equal(A, A.T)
    assert np.max(np.abs(A.sum(axis=1))) < 1e-8 * np.abs(A).max()
    assert np.all(np.diag(A) > 0)
