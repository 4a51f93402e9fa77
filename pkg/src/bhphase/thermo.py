"""Imaginary-time (Bloch) generators, the classical Gibbs weight and crossover diagnostics.

The Q and P operators default to the oracle-verified coefficients. Passing
``as_printed=True`` to :class:`BlochSpec` reproduces the literal published
coefficients instead, which fail the Fock residual test for U or Delta nonzero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .coherent import PhasePoint, coherent_fock
from .dynamics import hamiltonian_pq
from .errors import NumericalError
from .fock import HamiltonianParams, build_hamiltonian, enumerate_basis
from .grid import PhaseGrid2, calculus, mesh, stable_step
from .operators import CoefficientField, FieldBuilder, bonds, chart_from_z

BLOCH_KINDS = ("Q", "P", "classical")
STIFFNESS_LIMIT = 1e12
ACCURACY_CAP = 0.05


@dataclass(frozen=True)
class BlochSpec:
    kind: str
    params: HamiltonianParams
    N: int
    as_printed: bool = False

    def __post_init__(self):
        if self.kind not in BLOCH_KINDS:
            raise ValueError(f"kind must be one of {BLOCH_KINDS}")
        if self.N < 1:
            raise ValueError("N must be positive")

    @property
    def M(self):
        return self.params.M

    def coefficients(self, p, q) -> CoefficientField:
        if self.kind == "classical":
            B = FieldBuilder(p, q)
            B.const(-self.N * np.real(hamiltonian_pq(B.p, B.q, self.params, self.N)))
            return B.field()
        return _bloch_field(p, q, self.params, self.N, self.kind, self.as_printed)

    def on_z(self, z) -> CoefficientField:
        return self.coefficients(*chart_from_z(z, self.M))


def _bloch_field(p, q, params, N, kind, printed):
    B = FieldBuilder(p, q)
    p, q = B.p, B.q
    M, D, U = params.M, params.delta, params.U
    eps = np.asarray(params.eps, dtype=float)
    s = 1.0 if kind == "Q" else -1.0  # sign of the operator-ordering dependent terms
    L = N if kind == "Q" else N + M   # leading particle-number factor

    Ep = p @ eps
    B.const(-L * Ep + (0.0 if kind == "Q" else eps.sum()))
    for k in range(1, M):
        B.dp(k, s * (Ep * p[:, k] - eps[k] * p[:, k]))

    for j, l in bonds(M, params.periodic):
        C = 2 * D * np.sqrt(p[:, j] * p[:, l]) * np.cos(q[:, l] - q[:, j])
        B.const((-L if printed and kind == "P" else L) * C)
        for k in range(1, M):
            B.dp(k, -s * C * p[:, k])
        B.dp(j, s * C / 2)
        B.dp(l, s * C / 2)
        sn = s * D / 2 * np.sin(q[:, l] - q[:, j])
        if printed:
            r = np.sqrt(p[:, j] / p[:, l])
            B.dq(j, sn * r)
            B.dq(l, -sn * r)
        else:
            B.dq(j, sn * np.sqrt(p[:, l] / p[:, j]))
            B.dq(l, -sn * np.sqrt(p[:, j] / p[:, l]))

    if U != 0:
        S = np.sum(p * p, axis=1)
        if kind == "Q":
            B.const(-U * N * (N - 1) / 2 * S)
            for k in range(1, M):
                B.dp(k, U * (N - 1) * (S - p[:, k]) * p[:, k])
        else:
            B.const(-U * L * (L + 1) / 2 * S + U * (2 * N + M))
            for k in range(1, M):
                # -2U p_k and +2U (sum p) p_k cancel; kept explicit for readability
                B.dp(k, -2 * U * p[:, k] + 2 * U * p[:, k] - U * (L + 1) * S * p[:, k])
                if not printed:
                    B.dp(k, U * (L + 1) * p[:, k] ** 2)
        for k in range(1, M):
            B.dpp(k, k, -U / 2 * p[:, k] ** 2)
            for kp in range(1, M):
                B.dpp(kp, k, U * p[:, k] ** 2 * p[:, kp] - U / 2 * S * p[:, k] * p[:, kp])
                B.dqq(k, kp, U / 8)
        for k in (range(1, 2) if printed else range(1, M)):
            B.dqq(k, k, U / 8)
    return B.field()


def _apply(grid: PhaseGrid2, spec: BlochSpec, kind):
    if spec.M != 2:
        raise ValueError("grid Bloch operators need M = 2")
    if spec.kind != kind:
        raise ValueError(f"spec kind is {spec.kind}, expected {kind}")
    fld = spec.coefficients(*grid.chart())
    return grid.with_values(calculus(grid).apply(fld, grid.values))


def apply_bloch_Q(grid: PhaseGrid2, spec: BlochSpec) -> PhaseGrid2:
    return _apply(grid, spec, "Q")


def apply_bloch_P(grid: PhaseGrid2, spec: BlochSpec) -> PhaseGrid2:
    return _apply(grid, spec, "P")


def classical_gibbs(pt: PhasePoint, beta: float, params: HamiltonianParams, N: int) -> float:
    """Unnormalized exp(-beta N H) at a phase point."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    H = np.real(hamiltonian_pq(pt.p, pt.q, params, N)[0])
    return float(np.exp(-beta * N * H))


def classical_gibbs_grid(beta, params, N, n_p, n_q) -> PhaseGrid2:
    P, Q = mesh(n_p, n_q)
    p = np.stack([1 - P.ravel(), P.ravel()], axis=1)
    q = np.stack([np.zeros(P.size), Q.ravel()], axis=1)
    H = np.real(hamiltonian_pq(p, q, params, N)).reshape(P.shape)
    return PhaseGrid2(np.exp(-beta * N * H), {"beta": beta, "kind": "classical"})


def evolve_bloch(grid0: PhaseGrid2, spec: BlochSpec, beta_final: float, dbeta=None, c=0.5,
                 project="auto", max_halvings=12) -> PhaseGrid2:
    """Explicit RK4 in beta for the unnormalized Bloch flow.

    A step whose result is non-finite, or for kind Q dips below -1e-10 times
    the current maximum, is retried with half the step size. The run aborts
    once max/min of the field exceeds the stiffness limit.
    """
    if beta_final < 0:
        raise ValueError("beta_final must be non-negative")
    if spec.M != 2:
        raise ValueError("grid evolution needs M = 2")
    if beta_final == 0:
        return grid0.with_values(grid0.values.copy())
    calc = calculus(grid0)
    fld = spec.coefficients(*grid0.chart())
    if project == "auto":
        project = spec.kind in ("Q", "P")
    deg = spec.N if project else None
    h_max = stable_step(fld, grid0.shape, c, max_mode=deg)
    # accuracy cap: the zeroth-order term alone would otherwise allow steps too coarse for RK4
    h_max = min(h_max, ACCURACY_CAP / max(np.abs(fld.c0).max(), 1e-300))
    h_max = min(h_max, beta_final) if dbeta is None else min(dbeta, h_max)

    if deg is None:
        rhs = lambda v: calc.apply(fld, v)
        y = grid0.values.copy()
    else:
        rhs = lambda v: calc.project(calc.apply(fld, v, deg), deg)
        y = calc.project(grid0.values, deg)

    def step(y, h):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    def acceptable(v):
        if not np.all(np.isfinite(v)):
            return False
        return spec.kind != "Q" or v.min() >= -1e-10 * np.abs(v).max()

    beta, h, nsteps = 0.0, h_max, 0
    while beta < beta_final * (1 - 1e-14):
        h_try = min(h, beta_final - beta)
        for _ in range(max_halvings + 1):
            y_new = step(y, h_try)
            if acceptable(y_new):
                break
            h_try /= 2
        else:
            raise NumericalError(f"no acceptable step at beta={beta:.4g}")
        y, beta, nsteps = y_new, beta + h_try, nsteps + 1
        lo = np.abs(y).min()
        if lo == 0 or np.abs(y).max() / lo > STIFFNESS_LIMIT:
            raise NumericalError(f"stiffness limit exceeded at beta={beta:.4g}")
    b0 = grid0.meta.get("beta", 0.0)
    return grid0.with_values(y, beta=b0 + beta_final, steps=nsteps)


def log_husimi_gibbs(params: HamiltonianParams, N: int, beta: float, x) -> np.ndarray:
    """log <x|exp(-beta H)|x>, stable at large N and beta."""
    basis = enumerate_basis(params.M, N)
    E, V = np.linalg.eigh(build_hamiltonian(params, basis).toarray())
    c = np.atleast_2d(coherent_fock(x, basis)).conj() @ V
    with np.errstate(divide="ignore"):
        return logsumexp(-beta * E + np.log(np.abs(c) ** 2), axis=-1)


def crossover_gap(N: int, UN: float, beta: float, delta=1.0, eps=(0.0, 0.5), n=64):
    """Compare (1/N) log of normalized classical and quantum Gibbs weights on a grid.

    Returns the quantum-weighted RMS of the difference (the primary measure)
    together with the unweighted RMS and supremum.
    """
    params = HamiltonianParams(tuple(eps), delta, UN / N)
    P, Q = mesh(n, n)
    x = np.stack([np.sqrt(1 - P), np.sqrt(P) * np.exp(-1j * Q)], axis=-1).reshape(-1, 2)
    calc = calculus((n, n))
    lq = log_husimi_gibbs(params, N, beta, x).reshape(P.shape)
    lc = np.log(classical_gibbs_grid(beta, params, N, n, n).values)

    def normalized(l):
        shift = l.max()
        return l - shift - np.log(calc.mean(np.exp(l - shift)))

    lq, lc = normalized(lq), normalized(lc)
    d = (lq - lc) / N
    w = np.exp(lq)
    return {
        "N": N,
        "weighted_rms": float(np.sqrt(calc.mean(w * d * d) / calc.mean(w))),
        "rms": float(np.sqrt(calc.mean(d * d))),
        "sup": float(np.abs(d).max()),
    }
