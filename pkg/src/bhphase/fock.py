"""Brute-force Fock-space oracle for the fixed-(M, N) Bose-Hubbard sector.

Site indices are 0-based throughout: ``E(j, k)`` is ``a_j^dagger a_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

MAX_BASIS_SIZE = 200_000
DENSE_LIMIT = 4000


@dataclass(frozen=True)
class FockBasis:
    """Occupation-number basis, lexicographically descending in n_1."""

    M: int
    N: int
    states: np.ndarray = field(repr=False)
    index: dict = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.states)

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class HamiltonianParams:
    eps: tuple
    delta: float
    U: float
    periodic: bool = False

    def __post_init__(self):
        eps = tuple(float(e) for e in np.atleast_1d(self.eps))
        object.__setattr__(self, "eps", eps)
        if not (np.all(np.isfinite(eps)) and np.isfinite(self.delta) and np.isfinite(self.U)):
            raise ValueError("Hamiltonian parameters must be finite")

    @property
    def M(self) -> int:
        return len(self.eps)

    @classmethod
    def uniform(cls, M, delta=1.0, U=0.0, eps=0.0, periodic=False):
        return cls(eps=(eps,) * M, delta=delta, U=U, periodic=periodic)


def _compositions(N, M):
    if M == 1:
        yield (N,)
        return
    for n in range(N, -1, -1):
        for rest in _compositions(N - n, M - 1):
            yield (n,) + rest


def enumerate_basis(M: int, N: int, max_size: int = MAX_BASIS_SIZE) -> FockBasis:
    if M < 1:
        raise ValueError("M must be >= 1")
    if N < 0:
        raise ValueError("N must be >= 0")
    size = comb(N + M - 1, M - 1)
    if size > max_size:
        raise ValueError(f"sector size {size} exceeds limit {max_size}")
    states = np.array(list(_compositions(N, M)), dtype=np.int64).reshape(size, M)
    index = {tuple(s): i for i, s in enumerate(states.tolist())}
    return FockBasis(M=M, N=N, states=states, index=index)


def E_matrix(j: int, k: int, basis: FockBasis) -> sp.csr_matrix:
    """Sparse matrix of a_j^dagger a_k in the given sector."""
    states = basis.states
    if j == k:
        return sp.diags(states[:, j].astype(float), format="csr")
    rows, cols, vals = [], [], []
    for col, s in enumerate(states):
        nk = s[k]
        if nk == 0:
            continue
        t = s.copy()
        t[k] -= 1
        t[j] += 1
        rows.append(basis.index[tuple(t.tolist())])
        cols.append(col)
        vals.append(np.sqrt(nk * (s[j] + 1.0)))
    n = basis.size
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def apply_E(j: int, k: int, v: np.ndarray, basis: FockBasis) -> np.ndarray:
    if not (0 <= j < basis.M and 0 <= k < basis.M):
        raise IndexError(f"site pair ({j}, {k}) out of range for M={basis.M}")
    return E_matrix(j, k, basis) @ np.asarray(v)


def number_operator(basis: FockBasis) -> sp.csr_matrix:
    return sum(E_matrix(j, j, basis) for j in range(basis.M))


def build_hamiltonian(params: HamiltonianParams, basis: FockBasis) -> sp.csr_matrix:
    if params.M != basis.M:
        raise ValueError(f"params describe {params.M} sites, basis has {basis.M}")
    n = basis.states.astype(float)
    diag = n @ np.asarray(params.eps) + 0.5 * params.U * np.sum(n * (n - 1.0), axis=1)
    H = sp.diags(diag).tocsr()
    bonds = [(i, i + 1) for i in range(basis.M - 1)]
    if params.periodic and basis.M > 2:
        bonds.append((basis.M - 1, 0))
    for i, j in bonds:
        hop = E_matrix(i, j, basis)
        H = H - params.delta * (hop + hop.T)
    return H.tocsr()


def _as_dense(H):
    return H.toarray() if sp.issparse(H) else np.asarray(H)


def _check_hermitian(H, tol=1e-12):
    diff = H - H.conj().T
    err = abs(diff).max() if sp.issparse(H) else np.max(np.abs(diff), initial=0.0)
    scale = max(1.0, abs(H).max() if sp.issparse(H) else np.max(np.abs(H), initial=0.0))
    if err > tol * scale:
        raise ValueError(f"matrix is not Hermitian (max deviation {err:.3e})")


class Propagator:
    """Caches the spectral decomposition of H for repeated exp(-iHt) / exp(-beta H).

    Sectors larger than ``dense_limit`` fall back to ``expm_multiply`` on the
    sparse matrix; ``density`` and ``gibbs`` need the dense route.
    """

    def __init__(self, H, dense_limit: int = DENSE_LIMIT):
        _check_hermitian(H)
        self.H = H
        self.dim = H.shape[0]
        self.dense = self.dim <= dense_limit
        if self.dense:
            self.energies, self.vectors = np.linalg.eigh(_as_dense(H))
        else:
            self._Hs = sp.csr_matrix(H)

    def evolve(self, v, t: float) -> np.ndarray:
        v = np.asarray(v, dtype=complex)
        if not np.isfinite(t):
            raise ValueError("t must be finite")
        if t == 0:
            return v.copy()
        if self.dense:
            W = self.vectors
            return W @ (np.exp(-1j * self.energies * t) * (W.conj().T @ v))
        return expm_multiply(-1j * t * self._Hs, v)

    def evolve_density(self, rho, t: float) -> np.ndarray:
        self._need_dense()
        W = self.vectors
        phase = np.exp(-1j * self.energies * t)
        r = W.conj().T @ rho @ W
        r = phase[:, None] * r * phase.conj()[None, :]
        return W @ r @ W.conj().T

    def gibbs(self, beta: float) -> np.ndarray:
        if beta < 0:
            raise ValueError("beta must be non-negative")
        self._need_dense()
        W = self.vectors
        return (W * np.exp(-beta * self.energies)) @ W.conj().T

    def _need_dense(self):
        if not self.dense:
            raise ValueError("density-matrix operations need a dense decomposition")


def propagate(v, H, t: float, dense_limit: int = DENSE_LIMIT) -> np.ndarray:
    """exp(-iHt) v."""
    if H.shape[0] > dense_limit:
        _check_hermitian(H)
        return expm_multiply(-1j * t * sp.csr_matrix(H), np.asarray(v, dtype=complex))
    return Propagator(H, dense_limit).evolve(v, t)


def gibbs(H, beta: float) -> np.ndarray:
    """Unnormalized exp(-beta H) by eigendecomposition."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return Propagator(H, dense_limit=np.inf).gibbs(beta)


def check_density(rho, physical: bool = True, tol: float = 1e-12) -> None:
    rho = np.asarray(rho)
    scale = max(1.0, np.max(np.abs(rho), initial=0.0))
    if np.max(np.abs(rho - rho.conj().T), initial=0.0) > tol * scale:
        raise ValueError("density matrix is not Hermitian")
    if physical and np.linalg.eigvalsh(rho).min() < -1e-10 * scale:
        raise ValueError("density matrix is not positive semidefinite")


def expectation_fock(rho, j: int, k: int, basis: FockBasis) -> complex:
    """Tr(E_jk rho) / Tr(rho)."""
    rho = np.asarray(rho)
    tr = np.trace(rho).real
    if tr <= 0:
        raise ValueError("density matrix must have positive trace")
    E = E_matrix(j, k, basis)
    return complex((E.multiply(rho.T)).sum() / tr)


def single_particle_matrix(rho, basis: FockBasis) -> np.ndarray:
    """sigma[j, k] = <E_kj> / N, a unit-trace M x M matrix."""
    M = basis.M
    sigma = np.empty((M, M), dtype=complex)
    for j in range(M):
        for k in range(M):
            sigma[j, k] = expectation_fock(rho, k, j, basis)
    return sigma / max(basis.N, 1)


def projector(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return np.outer(v, v.conj())


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Trace-one density matrix from a complex Ginibre matrix of the given rank."""
    rank = dim if rank is None else rank
    G = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real
