"""Exact Fock-space references evaluated on phase-space grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coherent import coherent_fock, husimi
from .fock import HamiltonianParams, Propagator, build_hamiltonian, enumerate_basis
from .grid import PhaseGrid2, calculus, l2_norm, mesh


def _grid_amplitudes(n_p, n_q):
    P, Q = mesh(n_p, n_q)
    return np.stack([np.sqrt(1 - P), np.sqrt(P) * np.exp(-1j * Q)], axis=-1).reshape(-1, 2)


@dataclass
class FockOracle:
    params: HamiltonianParams
    N: int

    def __post_init__(self):
        self.basis = enumerate_basis(self.params.M, self.N)
        self.H = build_hamiltonian(self.params, self.basis)
        self.prop = Propagator(self.H)

    def coherent_density(self, x0):
        v = coherent_fock(np.asarray(x0), self.basis)
        return np.outer(v, v.conj())

    def rho_t(self, rho0, t):
        return self.prop.evolve_density(rho0, t)

    def gibbs(self, beta):
        """Unnormalized exp(-beta H)."""
        return self.prop.gibbs(beta)

    def husimi_grid(self, rho, n_p, n_q, **meta) -> PhaseGrid2:
        if self.params.M != 2:
            raise ValueError("grid oracle needs M = 2")
        vals = husimi(rho, _grid_amplitudes(n_p, n_q), self.basis)
        return PhaseGrid2(vals.reshape(n_p, n_q), meta)


def relative_residual(dQ, LQ):
    calc = calculus(dQ.shape)
    return l2_norm(dQ - LQ, calc) / l2_norm(dQ, calc)


def realtime_residual(spec, rho0, t, delta, shape):
    """Centered-difference residual of the real-time generator on exact Q(t)."""
    orc = FockOracle(spec.params, spec.N)
    Qs = [orc.husimi_grid(orc.rho_t(rho0, t + s * delta), *shape) for s in (-1, 0, 1)]
    dQ = (Qs[2].values - Qs[0].values) / (2 * delta)
    fld = spec.coefficients(*Qs[1].chart())
    LQ = calculus(shape).apply(fld, Qs[1].values)
    return relative_residual(dQ, LQ)
