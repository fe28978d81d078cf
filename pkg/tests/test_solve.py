import numpy as np
import pytest
from scipy.stats import ortho_group

from fraclap.domain import DiscreteFunction, generate_interval, generate_square, interpolate
from fraclap.forms import assemble, energy, mass
from fraclap.quadrature import KernelSpec
from fraclap.solve import (
    cluster_infimum,
    dlambda_plus,
    eig,
    j_s,
    poisson_residual,
    poisson_solve,
    s_derivative_solve,
)
from fraclap.specfun import c_ns, dlog_c_ns
from oracles import c_ns_reference, dense_nontrivial_eigenvalues, load_interval


def cospi(p):
    return np.cos(np.pi * p[..., 0])


def zero_mean_random(mesh, M, rng):
    u = rng.standard_normal(mesh.num_vertices)
    c = M.mat @ np.ones(mesh.num_vertices)
    return u - (c @ u) / mesh.measure


def test_zero_data_gives_zero(interval64, mats):
    A, L, M = mats(interval64, 0.5)
    u = poisson_solve(interval64, 0.5, np.zeros(65), A, M)
    assert np.all(u.coeffs == 0)
    w = s_derivative_solve(interval64, 0.5, np.zeros(65), u, A, L, M).w_s
    assert np.all(w.coeffs == 0)


def test_linearity(interval64, mats, rng):
    A, _, M = mats(interval64, 0.5)
    for _ in range(5):
        f1 = zero_mean_random(interval64, M, rng)
        f2 = zero_mean_random(interval64, M, rng)
        u1 = poisson_solve(interval64, 0.5, f1, A, M).coeffs
        u2 = poisson_solve(interval64, 0.5, f2, A, M).coeffs
        u12 = poisson_solve(interval64, 0.5, f1 + f2, A, M).coeffs
        assert np.max(np.abs(u12 - u1 - u2)) < 1e-10 * np.max(np.abs(u12))


def test_weak_form_residual_and_half_resolution_oracle(interval64, mats):
    A, _, M = mats(interval64, 0.5)
    u = poisson_solve(interval64, 0.5, cospi, A, M)
    assert u.zero_mean
    assert poisson_residual(u, cospi, A, M) < 1e-9
    coarse = generate_interval(32)
    M2 = mass(coarse).mat
    K = 0.5 * c_ns_reference(1, 0.5) * load_interval()["A_n32_s0.5"]
    c = M2.sum(axis=1)
    S = np.block([[K, c[:, None]], [c[None, :], np.zeros((1, 1))]])
    ref = np.linalg.solve(S, np.concatenate([M2 @ cospi(coarse.vertices), [0.0]]))[:-1]
    n_fine = np.sqrt(u.coeffs @ M.mat @ u.coeffs)
    n_coarse = np.sqrt(ref @ M2 @ ref)
    assert abs(n_fine - n_coarse) < (1 / 32) * n_fine


def test_weak_form_on_basis_combinations(square4, mats, rng):
    A, _, M = mats(square4, 0.5)
    f = interpolate(square4, lambda p: p[..., 0] * p[..., 1], zero_mean=True)
    u = poisson_solve(square4, 0.5, f, A, M)
    for _ in range(20):
        phi = zero_mean_random(square4, M, rng)
        assert abs(energy(u, phi, A) - f.coeffs @ M.mat @ phi) < 1e-9 * np.linalg.norm(phi)


def test_nonzero_mean_is_projected_or_rejected(mats):
    mesh = generate_interval(16)
    A, _, M = mats(mesh, 0.5)
    with pytest.warns(RuntimeWarning, match="mean"):
        u = poisson_solve(mesh, 0.5, lambda p: cospi(p) + 1.0, A, M)
    v = poisson_solve(mesh, 0.5, cospi, A, M)
    assert np.allclose(u.coeffs, v.coeffs, atol=1e-12)
    with pytest.raises(ValueError):
        poisson_solve(mesh, 0.5, lambda p: cospi(p) + 1.0, A, M, project_mean=False)


def test_matrix_checks(mats):
    mesh = generate_interval(16)
    A, L, M = mats(mesh, 0.5)
    with pytest.raises(ValueError):
        poisson_solve(mesh, 0.4, cospi, A, M)
    with pytest.raises(ValueError):
        poisson_solve(mesh, 0.5, cospi, L, M)
    with pytest.raises(ValueError):
        poisson_solve(generate_interval(8), 0.5, cospi, A, M)


def test_eig_oracle_small_interval():
    mesh = generate_interval(12)
    A = assemble(mesh, KernelSpec(1, 0.5))
    M = mass(mesh)
    spec = eig(mesh, 0.5, 3, A, M)
    ref = dense_nontrivial_eigenvalues(0.5 * c_ns(1, 0.5) * A.mat, M.mat)[:3]
    assert np.allclose(spec.eigenvalues, ref, rtol=1e-8, atol=0)
    V = spec.matrix
    assert np.allclose(V.T @ M.mat @ V, np.eye(3), atol=1e-10)
    assert np.all(spec.eigenvalues > 0)
    assert np.max(spec.residuals) < 1e-8


def test_rayleigh_bound(interval64, mats, rng):
    A, _, M = mats(interval64, 0.3)
    lam1 = eig(interval64, 0.3, 1, A, M).eigenvalues[0]
    for _ in range(100):
        v = zero_mean_random(interval64, M, rng)
        assert energy(v, v, A) / (v @ M.mat @ v) >= lam1 - 1e-9


def test_eig_rejects_bad_k(mats):
    mesh = generate_interval(4)
    A, _, M = mats(mesh, 0.5)
    for k in (0, 4):
        with pytest.raises(ValueError):
            eig(mesh, 0.5, k, A, M)
    assert len(eig(mesh, 0.5, 3, A, M).eigenvalues) == 3


def test_square_first_eigenvalue_is_clustered(square4, mats):
    A, _, M = mats(square4, 0.5)
    spec = eig(square4, 0.5, 3, A, M)
    assert len(spec.cluster_of(0)) >= 2
    lam = spec.eigenvalues
    assert lam[1] - lam[0] < 1e-6 * lam[0]


def test_eigenvector_sign_convention(interval64, mats):
    A, _, M = mats(interval64, 0.4)
    v = eig(interval64, 0.4, 1, A, M).eigenvectors[0]
    x = interval64.vertices[:, 0] - 0.5
    assert v.coeffs @ M.mat @ x > 0


def test_derivative_residual_and_fd_rate(interval64, mats):
    s = 0.4
    A, L, M = mats(interval64, s)
    u = poisson_solve(interval64, s, cospi, A, M)
    rep = s_derivative_solve(interval64, s, cospi, u, A, L, M)
    assert rep.residual < 1e-9
    w = rep.w_s.coeffs
    errs = []
    for sigma in (1e-1, 1e-2, 1e-3, 1e-4):
        A2, _, _ = mats(interval64, s + sigma)
        v = (poisson_solve(interval64, s + sigma, cospi, A2, M).coeffs - u.coeffs) / sigma
        errs.append(np.sqrt((v - w) @ M.mat @ (v - w)))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    ratios = [a / b for a, b in zip(errs[1:], errs[2:])]
    assert all(5 <= r <= 15 for r in ratios)


def test_j_s_properties(mats):
    mesh = generate_interval(16)
    A, L, M = mats(mesh, 0.5)
    spec = eig(mesh, 0.5, 1, A, M)
    u, lam = spec.eigenvectors[0], spec.eigenvalues[0]
    assert j_s(u, 0.5, lam, L, M) == j_s(-u, 0.5, lam, L, M)
    Lref = load_interval()["L_n16_s0.5"]
    ref = dlog_c_ns(1, 0.5) * lam - c_ns_reference(1, 0.5) * u.coeffs @ Lref @ u.coeffs
    assert j_s(u, 0.5, lam, L, M) == pytest.approx(ref, rel=1e-6)
    with pytest.raises(ValueError):
        j_s(DiscreteFunction(mesh, 2 * u.coeffs), 0.5, lam, L, M)


def test_j_s_varies_over_cluster():
    mesh = generate_square(4, "diagonal")
    s = 0.5
    A = assemble(mesh, KernelSpec(2, s))
    L = assemble(mesh, KernelSpec(2, s, "log"))
    M = mass(mesh)
    spec = eig(mesh, s, 3, A, M, gap_tol=0.05)
    assert spec.cluster_of(0) == (0, 1)
    lam1 = spec.eigenvalues[0]
    j0 = j_s(spec.eigenvectors[0], s, lam1, L, M)
    j1 = j_s(spec.eigenvectors[1], s, lam1, L, M)
    assert abs(j0 - j1) > 1e-3 * abs(j0)


def test_dlambda_simple_reduces_to_j_s(interval64, mats):
    A, L, M = mats(interval64, 0.4)
    rep = dlambda_plus(interval64, 0.4, A, L, M)
    assert rep.multiplicity == 1
    assert rep.dplus_lambda == j_s(rep.eigenfunction, 0.4, rep.lambda1, L, M)
    spec = eig(interval64, 0.4, 1, A, M)
    again = j_s(spec.eigenvectors[0], 0.4, spec.eigenvalues[0], L, M)
    assert rep.dplus_lambda == pytest.approx(again, rel=1e-12)


def test_dlambda_cluster_infimum(square4, mats, rng):
    s = 0.4
    A, L, M = mats(square4, s)
    rep = dlambda_plus(square4, s, A, L, M)
    assert rep.multiplicity == 2
    spec = eig(square4, s, 2, A, M)
    V = spec.matrix
    for _ in range(200):
        y = rng.standard_normal(2)
        y /= np.linalg.norm(y)
        u = DiscreteFunction(square4, V @ y)
        assert rep.dplus_lambda <= j_s(u, s, rep.lambda1, L, M) + 1e-12
    assert j_s(rep.eigenfunction, s, rep.lambda1, L, M) == pytest.approx(rep.dplus_lambda, rel=1e-10)


def test_dlambda_basis_invariance(rng):
    mesh = generate_square(4, "diagonal")
    s = 0.5
    A = assemble(mesh, KernelSpec(2, s))
    L = assemble(mesh, KernelSpec(2, s, "log"))
    M = mass(mesh)
    spec = eig(mesh, s, 2, A, M, gap_tol=0.05)
    V = spec.matrix
    lam = spec.eigenvalues[0]
    base, _, _ = cluster_infimum(V, s, lam, L)
    for seed in range(5):
        Q = ortho_group.rvs(2, random_state=seed)
        other, _, _ = cluster_infimum(V @ Q, s, lam, L)
        assert other == pytest.approx(base, rel=1e-10)
    assert dlambda_plus(mesh, s, A, L, M, gap_tol=0.05).dplus_lambda == pytest.approx(base, rel=1e-12)
