from math import comb

import numpy as np
import pytest
import scipy.sparse as sp

from bhphase.fock import (E_matrix, HamiltonianParams, Propagator, build_hamiltonian, check_density,
                          enumerate_basis, expectation_fock, gibbs, number_operator, propagate,
                          random_density, single_particle_matrix)


@pytest.mark.parametrize("M,N", [(1, 3), (2, 0), (2, 5), (3, 4), (4, 3), (5, 2)])
def test_basis_size_and_order(M, N):
    b = enumerate_basis(M, N)
    assert b.size == comb(N + M - 1, M - 1)
    assert np.all(b.states.sum(axis=1) == N)
    # descending lexicographic
    keys = [tuple(s) for s in b.states.tolist()]
    assert keys == sorted(keys, reverse=True)
    assert all(b.index[k] == i for i, k in enumerate(keys))


def test_basis_limits():
    with pytest.raises(ValueError):
        enumerate_basis(0, 3)
    with pytest.raises(ValueError):
        enumerate_basis(2, -1)
    with pytest.raises(ValueError):
        enumerate_basis(6, 40, max_size=1000)


def test_two_site_basis_explicit():
    assert enumerate_basis(2, 2).states.tolist() == [[2, 0], [1, 1], [0, 2]]


@pytest.mark.parametrize("M,N", [(2, 4), (3, 3)])
def test_E_algebra(M, N):
    b = enumerate_basis(M, N)
    E = {(j, k): E_matrix(j, k, b).toarray() for j in range(M) for k in range(M)}
    for (j, k), A in E.items():
        np.testing.assert_allclose(A.conj().T, E[k, j], atol=1e-14)
    # [E_ij, E_kl] = delta_jk E_il - delta_il E_kj
    for i in range(M):
        for j in range(M):
            for k in range(M):
                for l in range(M):
                    lhs = E[i, j] @ E[k, l] - E[k, l] @ E[i, j]
                    rhs = (j == k) * E[i, l] - (i == l) * E[k, j]
                    np.testing.assert_allclose(lhs, rhs, atol=1e-12)
    np.testing.assert_allclose(number_operator(b).toarray(), N * np.eye(b.size))


def test_hamiltonian_single_particle_limit():
    p = HamiltonianParams((0.3, -0.1, 0.7), 0.8, 5.0, periodic=True)
    H = build_hamiltonian(p, enumerate_basis(3, 1)).toarray()
    h = np.diag([0.3, -0.1, 0.7])
    for a, c in ((0, 1), (1, 2), (2, 0)):
        h[a, c] = h[c, a] = -0.8
    np.testing.assert_allclose(H, h)


def test_hamiltonian_interaction_diagonal():
    H = build_hamiltonian(HamiltonianParams((0, 0), 0.0, 2.0), enumerate_basis(2, 3))
    # U/2 n(n-1) for (3,0), (2,1), (1,2), (0,3)
    np.testing.assert_allclose(H.diagonal(), [6, 2, 2, 6])
    assert sp.issparse(H)


def test_hamiltonian_mismatch():
    with pytest.raises(ValueError):
        build_hamiltonian(HamiltonianParams((0, 0), 1, 0), enumerate_basis(3, 2))
    with pytest.raises(ValueError):
        HamiltonianParams((0, np.nan), 1, 0)


def test_periodic_ignored_for_two_sites():
    b = enumerate_basis(2, 3)
    a = build_hamiltonian(HamiltonianParams((0, 0), 1, 0.2, True), b)
    c = build_hamiltonian(HamiltonianParams((0, 0), 1, 0.2, False), b)
    assert abs(a - c).max() == 0


def test_propagation_conservation(rng):
    p = HamiltonianParams((0.1, -0.2, 0.4), 1.0, 0.6)
    b = enumerate_basis(3, 6)
    H = build_hamiltonian(p, b)
    v = rng.standard_normal(b.size) + 1j * rng.standard_normal(b.size)
    v /= np.linalg.norm(v)
    e0 = np.vdot(v, H @ v).real
    for t in (0.5, 3.0, 10.0):
        w = propagate(v, H, t)
        assert abs(np.linalg.norm(w) - 1) < 1e-10
        assert abs(np.vdot(w, H @ w).real - e0) / abs(e0) < 1e-9


def test_dense_and_krylov_agree(rng):
    p = HamiltonianParams((0.0, 0.3, 0.1), 1.0, 0.4)
    b = enumerate_basis(3, 5)
    H = build_hamiltonian(p, b)
    v = rng.standard_normal(b.size) + 0j
    v /= np.linalg.norm(v)
    a = Propagator(H).evolve(v, 1.7)
    c = Propagator(H, dense_limit=1).evolve(v, 1.7)
    np.testing.assert_allclose(a, c, atol=1e-10)


def test_gibbs_semigroup():
    H = build_hamiltonian(HamiltonianParams((0, 0.5), 1, 0.1), enumerate_basis(2, 6))
    np.testing.assert_allclose(gibbs(H, 0.0), np.eye(7), atol=1e-13)
    np.testing.assert_allclose(gibbs(H, 0.3) @ gibbs(H, 0.4), gibbs(H, 0.7), atol=1e-11)
    with pytest.raises(ValueError):
        gibbs(H, -1)


@pytest.mark.parametrize("M,N", [(2, 4), (3, 3)])
def test_expectation_trace_and_hermiticity(rng, M, N):
    b = enumerate_basis(M, N)
    rho = random_density(b.size, rng)
    check_density(rho)
    assert abs(sum(expectation_fock(rho, j, j, b) for j in range(M)) - N) < 1e-12
    sig = single_particle_matrix(rho, b)
    np.testing.assert_allclose(sig, sig.conj().T, atol=1e-14)
    assert abs(np.trace(sig) - 1) < 1e-12


def test_check_density_rejects():
    with pytest.raises(ValueError):
        check_density(np.array([[1, 1j], [0, 0]]))
    with pytest.raises(ValueError):
        check_density(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        expectation_fock(np.zeros((3, 3)), 0, 0, enumerate_basis(2, 2))
