"""SU(M) coherent states: parametrizations, Fock realization, Husimi Q, sampling.

Amplitudes ``x`` are complex arrays whose last axis has length M. The phase
convention fixes ``x[..., 0]`` real and non-negative; the (p, q) chart is
``x_0 = sqrt(p_0)``, ``x_k = sqrt(p_k) exp(-i q_k)`` with ``q_0 = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.special import gammaln

from .fock import FockBasis

DEGENERATE_P = 1e-14
_BLOCK = 4096


@dataclass(frozen=True)
class PhasePoint:
    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("p and q must be 1-D arrays of equal length")
        if np.any(p < -1e-15) or np.any(p > 1 + 1e-15) or abs(p.sum() - 1) > 1e-12:
            raise ValueError("p must lie on the probability simplex")
        if q[0] != 0:
            raise ValueError("q_1 must be exactly 0")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", np.mod(q, 2 * np.pi))

    @property
    def M(self):
        return len(self.p)

    @property
    def x(self):
        return pq_to_x(self.p, self.q)


@dataclass(frozen=True)
class MeasureSample:
    """Points uniform w.r.t. the invariant measure; ``weight * sum |x><x| -> I``."""

    M: int
    N: int
    x: np.ndarray
    weight: float
    seed: int

    @property
    def count(self):
        return len(self.x)

    @property
    def p(self):
        return np.abs(self.x) ** 2

    @property
    def q(self):
        return x_to_pq(self.x)[1]


def sector_dim(M: int, N: int) -> int:
    return comb(N + M - 1, M - 1)


def normalize_phase(x):
    """Rotate the global phase so that x[..., 0] is real and >= 0."""
    x = np.asarray(x, dtype=complex)
    a = np.abs(x[..., :1])
    phase = np.where(a > 0, x[..., :1].conj() / np.where(a > 0, a, 1.0), 1.0)
    out = x * phase
    out[..., 0] = out[..., 0].real
    return out


def y_to_x(y):
    """Coset coordinates (length M-1) to amplitudes (length M)."""
    y = np.asarray(y, dtype=complex)
    r = np.sqrt(np.sum(np.abs(y) ** 2, axis=-1))
    if np.any(r > np.pi / 2 + 1e-12):
        raise ValueError("coset coordinates must satisfy ||y|| <= pi/2")
    x0 = np.cos(r)[..., None].astype(complex)
    return np.concatenate([x0, np.sinc(r / np.pi)[..., None] * y], axis=-1)


def x_to_y(x):
    x = normalize_phase(x)
    r = np.arccos(np.clip(x[..., 0].real, -1.0, 1.0))
    return x[..., 1:] / np.sinc(r / np.pi)[..., None]


def x_to_pq(x):
    """Returns (p, q, degenerate); q_k is set to 0 where p_k < 1e-14."""
    x = normalize_phase(x)
    p = np.abs(x) ** 2
    degenerate = p < DEGENERATE_P
    q = np.mod(-np.angle(x), 2 * np.pi)
    q = np.where(degenerate, 0.0, q)
    q[..., 0] = 0.0
    return p, q, degenerate


def pq_to_x(p, q):
    p = np.asarray(p, dtype=float)
    q = np.array(q, dtype=float)
    q[..., 0] = 0.0
    return np.sqrt(np.clip(p, 0.0, None)) * np.exp(-1j * q)


def log_multinomial(basis: FockBasis) -> np.ndarray:
    n = basis.states
    return gammaln(basis.N + 1) - np.sum(gammaln(n + 1), axis=1)


def coherent_fock(x, basis: FockBasis) -> np.ndarray:
    """Fock coefficients sqrt(N!/prod n_i!) prod x_i^{n_i}; extra leading axes of x broadcast."""
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] != basis.M:
        raise ValueError(f"amplitudes have {x.shape[-1]} components, basis has M={basis.M}")
    n = basis.states
    mag = np.abs(x)[..., None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        logmag = np.where(n > 0, n * np.log(mag), 0.0)
    logmag = np.sum(logmag, axis=-1) + 0.5 * log_multinomial(basis)
    phase = np.sum(n * np.angle(x)[..., None, :], axis=-1)
    return np.exp(logmag + 1j * phase)


def overlap(x, x2, N: int):
    """<x|x2> = (sum_k conj(x_k) x2_k)^N."""
    return np.sum(np.conj(x) * x2, axis=-1) ** N


def husimi(rho, x, basis: FockBasis):
    """<x|rho|x> evaluated for every amplitude vector in x."""
    V = coherent_fock(x, basis)
    rho = np.asarray(rho)
    Q = np.real(np.einsum("...i,...i->...", V.conj(), V @ rho.T))
    scale = max(1.0, np.abs(np.trace(rho)))
    if np.min(Q, initial=0.0) < -1e-12 * scale:
        raise ValueError("negative Husimi value: density matrix is not physical")
    return Q


def _block_rng(seed: int, block: int):
    return np.random.default_rng([int(seed), block])


def _uniform_amplitudes(M: int, count: int, seed: int) -> np.ndarray:
    out = np.empty((count, M), dtype=complex)
    for b, start in enumerate(range(0, count, _BLOCK)):
        stop = min(start + _BLOCK, count)
        g = _block_rng(seed, b).standard_normal((_BLOCK, 2 * M))[: stop - start]
        z = g[:, :M] + 1j * g[:, M:]
        out[start:stop] = z / np.linalg.norm(z, axis=1, keepdims=True)
    return normalize_phase(out)


def sample_measure(M: int, N: int, count: int, seed: int) -> MeasureSample:
    """Monte Carlo points for the invariant (Fubini-Study) measure on CP^{M-1}."""
    if count < 1:
        raise ValueError("count must be >= 1")
    x = _uniform_amplitudes(M, count, seed)
    return MeasureSample(M=M, N=N, x=x, weight=sector_dim(M, N) / count, seed=seed)


def sample_husimi_coherent(x0, N: int, count: int, seed: int) -> np.ndarray:
    """Exact draws from the normalized Husimi density |<x|x0>|^{2N} of a coherent state.

    |<x|x0>|^2 follows Beta(N+1, M-1); the remainder is uniform on the
    orthogonal complement of x0.
    """
    x0 = np.asarray(x0, dtype=complex)
    x0 = x0 / np.linalg.norm(x0)
    M = len(x0)
    if M == 1:
        return np.ones((count, 1), dtype=complex)
    out = np.empty((count, M), dtype=complex)
    for b, start in enumerate(range(0, count, _BLOCK)):
        stop = min(start + _BLOCK, count)
        rng = _block_rng(seed, b)
        c = rng.beta(N + 1, M - 1, size=_BLOCK)[: stop - start]
        g = rng.standard_normal((_BLOCK, 2 * M))[: stop - start]
        u = g[:, :M] + 1j * g[:, M:]
        u -= np.outer(u @ x0.conj(), x0)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        out[start:stop] = np.sqrt(c)[:, None] * x0 + np.sqrt(1 - c)[:, None] * u
    return normalize_phase(out)


def identity_reconstruction(sample: MeasureSample, basis: FockBasis) -> np.ndarray:
    """weight * sum_i |x_i><x_i|, which should approach the identity."""
    V = coherent_fock(sample.x, basis)
    return sample.weight * (V.T @ V.conj())
