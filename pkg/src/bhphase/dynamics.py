"""Real-time phase-space dynamics: Q/P generators, GPE flow, grid PDE evolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .coherent import PhasePoint, normalize_phase, x_to_pq, pq_to_x
from .errors import NumericalError
from .fock import HamiltonianParams
from .grid import PhaseGrid2, calculus, rk4, stable_step
from .operators import CoefficientField, FieldBuilder, bonds, chart_from_z, z_from_chart

KINDS = ("Q", "P", "Liouville")
ORDERS = ("full", "first_order")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    params: HamiltonianParams
    N: int
    order: str = "full"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}")

    @property
    def M(self):
        return self.params.M

    @property
    def interaction_prefactor(self):
        """U times N for Q and Liouville, U times (N + M) for P."""
        return self.params.U * (self.N + self.M if self.kind == "P" else self.N)

    @property
    def has_second_order(self):
        return self.kind != "Liouville" and self.order == "full" and self.params.U != 0

    def coefficients(self, p, q) -> CoefficientField:
        if self.kind == "Liouville":
            return liouville_field(p, q, self.params, self.N)
        return _realtime_field(p, q, self.params, self.interaction_prefactor,
                               sign=1.0 if self.kind == "Q" else -1.0,
                               second=self.order == "full")

    def on_z(self, z) -> CoefficientField:
        return self.coefficients(*chart_from_z(z, self.M))


def _realtime_field(p, q, params, g, sign, second):
    B = FieldBuilder(p, q)
    p, q = B.p, B.q
    D, U = params.delta, params.U
    for j, l in bonds(params.M, params.periodic):
        s = 2 * D * np.sqrt(p[:, j] * p[:, l]) * np.sin(q[:, j] - q[:, l])
        B.dp(j, s)
        B.dp(l, -s)
        c = D * np.cos(q[:, l] - q[:, j])
        B.dq(l, c * np.sqrt(p[:, j] / p[:, l]))
        B.dq(j, c * np.sqrt(p[:, l] / p[:, j]))
    for k in range(1, params.M):
        B.dq(k, g * (p[:, 0] - p[:, k]) + params.eps[0] - params.eps[k])
        if second and U != 0:
            B.dpq(k, k, -sign * U * p[:, k])
            for kp in range(1, params.M):
                B.dpq(kp, k, sign * U * (p[:, k] - p[:, 0]) * p[:, kp])
    return B.field()


def hamiltonian_pq(p, q, params: HamiltonianParams, N: int):
    """Mean-field energy per particle; accepts complex inputs (complex-step safe)."""
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    H = p @ np.asarray(params.eps) + 0.5 * params.U * N * np.sum(p * p, axis=1)
    for j, l in bonds(params.M, params.periodic):
        H = H - 2 * params.delta * np.sqrt(p[:, j] * p[:, l]) * np.cos(q[:, l] - q[:, j])
    return H


def hamiltonian_function(pt: PhasePoint, params: HamiltonianParams, N: int) -> float:
    return float(np.real(hamiltonian_pq(pt.p, pt.q, params, N)[0]))


def hamiltonian_gradient(z, params: HamiltonianParams, N: int, h=1e-30):
    """d(mean-field energy)/dz on the independent chart, by complex-step differentiation."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    grad = np.empty_like(z)
    for a in range(z.shape[1]):
        zc = z.astype(complex)
        zc[:, a] += 1j * h
        grad[:, a] = np.imag(hamiltonian_pq(*chart_from_z(zc, params.M), params, N)) / h
    return grad


def liouville_field(p, q, params, N) -> CoefficientField:
    """Poisson-bracket operator {H, .}: dH/dq_k d/dp_k - dH/dp_k d/dq_k."""
    z = z_from_chart(p, q)
    m = params.M - 1
    g = hamiltonian_gradient(z, params, N)
    b = np.concatenate([g[:, m:], -g[:, :m]], axis=1)
    n = len(z)
    return CoefficientField(np.zeros(n), b, np.zeros((n, 2 * m, 2 * m)))


def _apply(grid: PhaseGrid2, spec, expected_kind):
    if spec.M != 2:
        raise ValueError("grid generators need M = 2; use operators.apply_on_cloud for M > 2")
    if spec.kind != expected_kind:
        raise ValueError(f"spec kind is {spec.kind}, expected {expected_kind}")
    fld = spec.coefficients(*grid.chart())
    return grid.with_values(calculus(grid).apply(fld, grid.values))


def apply_generator_Q(grid: PhaseGrid2, spec: GeneratorSpec) -> PhaseGrid2:
    return _apply(grid, spec, "Q")


def apply_generator_P(grid: PhaseGrid2, spec: GeneratorSpec) -> PhaseGrid2:
    return _apply(grid, spec, "P")


def apply_liouville(grid: PhaseGrid2, spec: GeneratorSpec) -> PhaseGrid2:
    return _apply(grid, spec, "Liouville")


def evolve_grid(grid0: PhaseGrid2, fld: CoefficientField, t_final, dt=None, c=0.5,
                project_N=None, growth_limit=10.0, extra_monitor=None):
    """RK4 integration of dF/dt = L F on a two-site grid.

    With ``project_N`` the state and every stage derivative are projected onto
    the N-particle harmonic subspace, which suppresses the grid modes that the
    indefinite second-order terms would otherwise amplify.
    """
    calc = calculus(grid0)
    dt_max = stable_step(fld, grid0.shape, c, max_mode=project_N)
    if dt is None:
        dt = dt_max
    elif dt > dt_max * (1 + 1e-9):
        raise ValueError(f"dt={dt:.3e} exceeds the stability bound {dt_max:.3e}")
    if t_final == 0:
        return grid0.with_values(grid0.values.copy()), 0
    v0 = grid0.values
    if project_N is not None:
        v0 = calc.project(v0, project_N)
        rhs = lambda v: calc.project(calc.apply(fld, v, project_N), project_N)
    else:
        rhs = lambda v: calc.apply(fld, v)
    limit = growth_limit * max(np.abs(v0).max(), 1e-300)

    def monitor(v, step):
        if np.abs(v).max() > limit:
            raise NumericalError(f"field grew more than {growth_limit}x by step {step + 1}")
        if extra_monitor is not None:
            extra_monitor(v, step)

    v, nsteps = rk4(v0, rhs, t_final, dt, monitor)
    return grid0.with_values(v), nsteps


def filter_degree(spec: GeneratorSpec, shape, project="auto"):
    """Harmonic degree kept by the stage filter of evolve_pde (None = unfiltered).

    The full Q and P generators preserve the N-particle sector, so their
    evolution is filtered onto it. Truncated flows leave the sector; they get
    a smoothing cutoff at degree 3*sqrt(n) instead (RK4 runs stayed stable up
    to about 4*sqrt(n), limited by the pole resolution of the staggered grid).
    """
    if project == "none" or project is None:
        return None
    if project != "auto":
        return int(project)
    if spec.kind in ("Q", "P") and spec.order == "full":
        return spec.N
    return max(spec.N, int(3 * np.sqrt(min(shape))))


def evolve_pde(grid0: PhaseGrid2, spec: GeneratorSpec, t_final: float, dt=None, c=0.5,
               project="auto") -> PhaseGrid2:
    """Integrate the Q, P or Liouville equation on a two-site grid up to t_final."""
    if spec.M != 2:
        raise ValueError("grid evolution needs M = 2")
    fld = spec.coefficients(*grid0.chart())
    out, nsteps = evolve_grid(grid0, fld, t_final, dt, c, filter_degree(spec, grid0.shape, project))
    t0 = grid0.meta.get("time", 0.0)
    return out.with_values(out.values, time=t0 + t_final, steps=nsteps)


def gpe_rhs(x, params: HamiltonianParams, N: int, prefactor=None):
    """dx/dt of the discrete Gross-Pitaevskii equation; extra leading axes broadcast."""
    x = np.asarray(x, dtype=complex)
    g = params.U * N if prefactor is None else prefactor
    hx = np.asarray(params.eps) * x + g * np.abs(x) ** 2 * x
    nb = np.zeros_like(x)
    nb[..., :-1] += x[..., 1:]
    nb[..., 1:] += x[..., :-1]
    if params.periodic and params.M > 2:
        nb[..., 0] += x[..., -1]
        nb[..., -1] += x[..., 0]
    return -1j * (hx - params.delta * nb)


def single_particle_hamiltonian(params: HamiltonianParams) -> np.ndarray:
    M = params.M
    h = np.diag(np.asarray(params.eps, dtype=float))
    for j, l in bonds(M, params.periodic):
        h[j, l] -= params.delta
        h[l, j] -= params.delta
    return h


def integrate_gpe(x0, params: HamiltonianParams, N: int, t_final: float, dt: float,
                  prefactor=None, rtol=1e-12, atol=1e-13):
    """Adaptive DOP853 integration; returns (times, x) sampled every dt.

    x0 may hold several initial vectors along leading axes; the returned x
    has shape (len(times),) + x0.shape.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=complex)
    shape = x0.shape
    n = max(1, int(round(abs(t_final) / dt)))
    times = np.linspace(0.0, t_final, n + 1)
    if t_final == 0:
        return times[:1], x0[None].copy()
    f = lambda t, y: gpe_rhs(y.reshape(shape), params, N, prefactor).ravel()
    sol = solve_ivp(f, (0.0, t_final), x0.ravel(), method="DOP853", t_eval=times,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise NumericalError(f"GPE integration failed: {sol.message}")
    return sol.t, sol.y.T.reshape((len(sol.t),) + shape)


def hamilton_rhs(z, params, N):
    """(dp/dt, dq/dt) = (-dH/dq, dH/dp) on the independent chart."""
    m = params.M - 1
    g = hamiltonian_gradient(z, params, N)
    return np.concatenate([-g[:, m:], g[:, :m]], axis=1)


@dataclass(frozen=True)
class TrajectoryEnsemble:
    x: np.ndarray
    weights: np.ndarray
    time: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = normalize_phase(np.atleast_2d(self.x))
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(x),) or np.any(w < 0):
            raise ValueError("weights must be non-negative, one per point")
        if abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, x, **kw):
        x = np.atleast_2d(x)
        return cls(x, np.full(len(x), 1.0 / len(x)), **kw)

    @property
    def M(self):
        return self.x.shape[1]

    @property
    def points(self):
        p, q, _ = x_to_pq(self.x)
        return p, q


def ensemble_propagate(ens: TrajectoryEnsemble, params: HamiltonianParams, N: int,
                       t_final: float, dt: float, prefactor=None, chart="x",
                       rtol=1e-12, atol=1e-13) -> TrajectoryEnsemble:
    """Advance every point along the mean-field flow; weights are carried unchanged.

    ``prefactor`` sets the interaction strength (default U*N, the Liouville
    truncation of Q; use U*(N+M) for the truncated P dynamics).
    """
    if chart == "x":
        _, xs = integrate_gpe(ens.x, params, N, t_final, dt, prefactor, rtol, atol)
        x = xs[-1]
    elif chart == "pq":
        if prefactor is not None:
            params_eff, N_eff = HamiltonianParams(params.eps, params.delta, prefactor, params.periodic), 1
        else:
            params_eff, N_eff = params, N
        p, q, _ = x_to_pq(ens.x)
        z0 = z_from_chart(p, q)
        shape = z0.shape
        f = lambda t, y: hamilton_rhs(y.reshape(shape), params_eff, N_eff).ravel()
        sol = solve_ivp(f, (0.0, t_final), z0.ravel(), method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise NumericalError(f"Hamilton integration failed: {sol.message}")
        pz, qz = chart_from_z(sol.y[:, -1].reshape(shape), params.M)
        x = pq_to_x(pz, qz)
    else:
        raise ValueError("chart must be 'x' or 'pq'")
    return TrajectoryEnsemble(x, ens.weights, ens.time + t_final, dict(ens.meta))


def ensemble_from_density(rho, basis, count: int, seed: int) -> TrajectoryEnsemble:
    """Importance-weighted ensemble for the Husimi density of rho (uniform proposal)."""
    from .coherent import husimi, sample_measure

    s = sample_measure(basis.M, basis.N, count, seed)
    Q = husimi(rho, s.x, basis)
    return TrajectoryEnsemble(s.x, Q / Q.sum())


def apply_generator_cloud(spec, z, values, neighbors=None):
    """Apply a generator (any M) to values sampled at scattered chart points z."""
    from .operators import apply_on_cloud

    return apply_on_cloud(spec.on_z, z, values, neighbors)
