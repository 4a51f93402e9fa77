import numpy as np
import pytest
from scipy.linalg import expm

from bhphase.coherent import PhasePoint, coherent_fock, husimi, pq_to_x, sample_husimi_coherent, x_to_pq
from bhphase.dynamics import (GeneratorSpec, TrajectoryEnsemble, apply_generator_P, apply_generator_Q,
                              apply_generator_cloud, apply_liouville, ensemble_propagate, evolve_grid,
                              evolve_pde, gpe_rhs, hamiltonian_function, hamiltonian_pq, integrate_gpe,
                              single_particle_hamiltonian)
from bhphase.errors import NumericalError
from bhphase.expectation import expect_from_ensemble
from bhphase.fock import HamiltonianParams, build_hamiltonian, enumerate_basis, expectation_fock
from bhphase.grid import PhaseGrid2, l2_norm, mesh
from bhphase.operators import CoefficientField, apply_to_callable, chart_from_z
from bhphase.oracle import FockOracle, realtime_residual
from conftest import random_amplitudes

X0 = np.array([0.8, 0.6 * np.exp(0.3j)])


# --- mean-field flow -------------------------------------------------------

def test_gpe_rhs_examples(rng):
    p = HamiltonianParams((0.4,) * 3, 0.0, 0.0)
    x = random_amplitudes(rng, 3)
    np.testing.assert_allclose(gpe_rhs(x, p, 5), -0.4j * x)
    p2 = HamiltonianParams((0.0, 0.0), 1.3, 0.0)
    np.testing.assert_allclose(gpe_rhs(np.array([1, 0]), p2, 5), [0, 1.3j])


@pytest.mark.parametrize("periodic", [False, True])
def test_gpe_norm_derivative_vanishes(rng, periodic):
    p = HamiltonianParams((0.1, -0.5, 0.3, 0.2), 0.9, 0.7, periodic)
    x = random_amplitudes(rng, 4, 50)
    d = 2 * np.real(np.sum(x.conj() * gpe_rhs(x, p, 12), axis=-1))
    assert np.abs(d).max() < 1e-14


def test_hamiltonian_function_examples():
    p = HamiltonianParams((0, 0), 1.5, 0.2)
    assert hamiltonian_function(PhasePoint([1, 0], [0, 1.0]), p, 10) == pytest.approx(1.0)
    assert hamiltonian_function(PhasePoint([0.5, 0.5], [0, 0]), p, 10) == pytest.approx(-1.5 + 0.5)


@pytest.mark.parametrize("N", [4, 8, 16])
def test_hamiltonian_function_vs_fock(rng, N):
    p = HamiltonianParams((0.2, -0.1, 0.3), 1.0, 0.5)
    x = random_amplitudes(rng, 3)
    b = enumerate_basis(3, N)
    v = coherent_fock(x, b)
    quantum = np.vdot(v, build_hamiltonian(p, b) @ v).real / N
    pp, qq, _ = x_to_pq(x)
    classical = hamiltonian_pq(pp, qq, p, N)[0].real
    # normal ordering: <n(n-1)> = N(N-1) p^2, so the gap is exactly -(U/2) sum p^2
    assert quantum - classical == pytest.approx(-0.5 * p.U * np.sum(pp**2), abs=1e-12)


def test_rabi_oscillation():
    p = HamiltonianParams((0, 0), 0.7, 0.0)
    t, xs = integrate_gpe(np.array([1, 0]), p, 10, 5.0, 0.05)
    np.testing.assert_allclose(np.abs(xs[:, 1]) ** 2, np.sin(0.7 * t) ** 2, atol=1e-10)


def test_noninteracting_matches_matrix_exponential(rng):
    p = HamiltonianParams((0.3, -0.2, 0.5, 0.0), 1.1, 0.0, periodic=True)
    x0 = random_amplitudes(rng, 4)
    t, xs = integrate_gpe(x0, p, 7, 6.0, 0.5)
    h = single_particle_hamiltonian(p)
    for ti, xi in zip(t, xs):
        np.testing.assert_allclose(xi, expm(-1j * h * ti) @ x0, atol=1e-8)


def test_gpe_conservation_long_time():
    p = HamiltonianParams((0, 0.3, -0.2), 1.0, 0.4)
    x0 = np.array([0.7, 0.5j, 0.3])
    x0 /= np.linalg.norm(x0)
    _, xs = integrate_gpe(x0, p, 10, 100.0, 0.5)
    pp, qq, _ = x_to_pq(xs)
    H = hamiltonian_pq(pp, qq, p, 10).real
    assert np.abs(np.linalg.norm(xs, axis=1) - 1).max() < 1e-10
    assert np.abs(H - H[0]).max() / abs(H[0]) < 1e-8


def test_gpe_rejects_bad_step():
    with pytest.raises(ValueError):
        integrate_gpe(X0, HamiltonianParams((0, 0), 1, 0), 2, 1.0, 0.0)


def test_self_trapping():
    N = 64
    p = HamiltonianParams((0, 0), 1.0, 10.0 / N)
    x0 = np.array([np.sqrt(0.95), np.sqrt(0.05)])
    t, xs = integrate_gpe(x0, p, N, 50.0, 0.1)
    assert np.mean(np.abs(xs[:, 1]) ** 2) < 0.5
    # and the N=64 many-body dynamics is trapped too over the same window
    orc = FockOracle(p, N)
    rho0 = orc.coherent_density(x0)
    occ = [expectation_fock(orc.rho_t(rho0, s), 1, 1, orc.basis).real / N for s in t[::25]]
    assert np.mean(occ) < 0.5


# --- generators ------------------------------------------------------------

def test_constant_is_stationary():
    g = PhaseGrid2(np.ones((32, 16)))
    for U in (0.0, 0.3):
        p = HamiltonianParams((0.2, 0.2), 1.0, U)
        assert np.abs(apply_generator_Q(g, GeneratorSpec("Q", p, 6)).values).max() < 1e-11
        assert np.abs(apply_generator_P(g, GeneratorSpec("P", p, 6)).values).max() < 1e-11


def test_spec_kind_checked(ref_params):
    g = PhaseGrid2(np.ones((16, 16)))
    with pytest.raises(ValueError):
        apply_generator_Q(g, GeneratorSpec("P", ref_params, 4))
    with pytest.raises(ValueError):
        GeneratorSpec("X", ref_params, 4)


@pytest.mark.parametrize("M,periodic", [(2, False), (3, False), (4, True)])
def test_first_order_equals_liouville(rng, M, periodic):
    p = HamiltonianParams(tuple(rng.normal(size=M)), 0.7, 0.3, periodic)
    z = np.column_stack([rng.uniform(0.02, 1.0 / M, (40, M - 1)), rng.uniform(0, 2 * np.pi, (40, M - 1))])
    pp, qq = chart_from_z(z, M)
    a = GeneratorSpec("Q", p, 12, "first_order").coefficients(pp, qq)
    b = GeneratorSpec("Liouville", p, 12).coefficients(pp, qq)
    assert np.abs(a.b - b.b).max() < 1e-12
    assert np.abs(a.A).max() == 0 and np.abs(b.c0).max() == 0


def test_first_order_grid_matches_liouville(rng, ref_params):
    g = FockOracle(ref_params, 6).husimi_grid(np.eye(7) + 0.1 * np.ones((7, 7)), 64, 32)
    a = apply_generator_Q(g, GeneratorSpec("Q", ref_params, 6, "first_order")).values
    b = apply_liouville(g, GeneratorSpec("Liouville", ref_params, 6)).values
    assert np.abs(a - b).max() < 1e-12 * max(1.0, np.abs(a).max())


def test_P_equals_Q_without_interaction(rng):
    p = HamiltonianParams((0.0, 0.4), 1.2, 0.0)
    g = PhaseGrid2(rng.random((32, 32)))
    a = apply_generator_Q(g, GeneratorSpec("Q", p, 9)).values
    b = apply_generator_P(g, GeneratorSpec("P", p, 9)).values
    assert np.abs(a - b).max() == 0.0


def test_second_order_terms_scale_as_one_over_N():
    g = FockOracle(HamiltonianParams((0, 0), 1, 0), 4).husimi_grid(np.diag([1, 2, 3, 2, 1.0]), 64, 32)
    ratios = []
    for N in (16, 32, 64, 128):
        p = HamiltonianParams((0, 0.3), 1.0, 1.0 / N)
        full = apply_generator_Q(g, GeneratorSpec("Q", p, N)).values
        first = apply_generator_Q(g, GeneratorSpec("Q", p, N, "first_order")).values
        ratios.append(l2_norm(full - first) / l2_norm(first))
    r = np.array(ratios)
    np.testing.assert_allclose(r[:-1] / r[1:], 2.0, rtol=0.1)


def test_onsite_only_residual():
    p = HamiltonianParams((0.0, 0.8), 0.0, 0.0)
    orc = FockOracle(p, 6)
    rho0 = orc.coherent_density(X0)
    spec = GeneratorSpec("Q", p, 6)
    r1 = realtime_residual(spec, rho0, 0.4, 2e-2, (32, 32))
    r2 = realtime_residual(spec, rho0, 0.4, 1e-2, (32, 32))
    assert r2 < 1e-4
    assert r1 / r2 == pytest.approx(4.0, rel=0.05)


def test_periodic_three_site_generator_vs_fock(rng):
    """Point check of the real-time Q and Liouville-free P duality on a ring."""
    p = HamiltonianParams((0.1, -0.3, 0.4), 0.8, 0.5, periodic=True)
    N = 5
    orc = FockOracle(p, N)
    A = rng.standard_normal((21, 21)) + 1j * rng.standard_normal((21, 21))
    rho0 = A @ A.conj().T
    rho0 /= np.trace(rho0).real

    def Q_at(t):
        r = orc.rho_t(rho0, t)
        return lambda z: husimi(r, pq_to_x(*chart_from_z(z, 3)), orc.basis)

    z = np.column_stack([rng.uniform(0.2, 0.4, (15, 2)), rng.uniform(0, 2 * np.pi, (15, 2))])
    d = 1e-4
    dQ = (Q_at(0.3 + d)(z) - Q_at(0.3 - d)(z)) / (2 * d)
    LQ = apply_to_callable(GeneratorSpec("Q", p, N).on_z, Q_at(0.3), z)
    assert np.abs(dQ - LQ).max() < 1e-6 * np.abs(dQ).max() + 1e-9


def test_cloud_generator_three_sites(rng):
    p = HamiltonianParams((0.0, 0.2, -0.1), 1.0, 0.0)
    N = 4
    orc = FockOracle(p, N)
    rho = np.eye(orc.basis.size) + 0.5 * np.diag(np.arange(orc.basis.size))
    rho /= np.trace(rho)
    f = lambda z: husimi(rho, pq_to_x(*chart_from_z(z, 3)), orc.basis)
    n = 6000
    z = np.column_stack([rng.uniform(0.05, 0.45, (n, 2)), rng.uniform(0, 2 * np.pi, (n, 2))])
    spec = GeneratorSpec("Q", p, N)
    approx = apply_generator_cloud(spec, z, f(z))[:30]
    exact = apply_to_callable(spec.on_z, f, z[:30])
    assert np.abs(approx - exact).max() < 0.1 * np.abs(exact).max()


# --- grid evolution --------------------------------------------------------

def test_zero_time_is_identity(ref_params):
    g = FockOracle(ref_params, 10).husimi_grid(np.eye(11), 32, 32)
    out = evolve_pde(g, GeneratorSpec("Q", ref_params, 10), 0.0)
    assert np.array_equal(out.values, g.values)


def test_step_above_bound_rejected(ref_params):
    g = PhaseGrid2(np.ones((32, 32)))
    with pytest.raises(ValueError):
        evolve_pde(g, GeneratorSpec("Q", ref_params, 10), 1.0, dt=1.0)


def test_instability_detector():
    n = 16 * 16
    grow = CoefficientField(np.full(n, 5.0), np.zeros((n, 2)), np.zeros((n, 2, 2)))
    with pytest.raises(NumericalError):
        evolve_grid(PhaseGrid2(np.ones((16, 16))), grow, 1.0)


def test_pde_matches_fock():
    N = 20
    p = HamiltonianParams((0.0, 0.5), 1.0, 1.0 / N)
    orc = FockOracle(p, N)
    rho0 = orc.coherent_density(X0)
    g0 = orc.husimi_grid(rho0, 64, 64)
    g1 = evolve_pde(g0, GeneratorSpec("Q", p, N), 1.0)
    ref = orc.husimi_grid(orc.rho_t(rho0, 1.0), 64, 64)
    assert l2_norm(g1.values - ref.values) / l2_norm(ref.values) < 1e-2
    assert g1.meta["time"] == 1.0


def test_noninteracting_transport_along_characteristics():
    p = HamiltonianParams((0.0, 0.3), 1.0, 0.0)
    N = 8
    orc = FockOracle(p, N)
    A = np.diag(np.linspace(1, 2, N + 1)) + 0.2
    rho0 = A / np.trace(A)
    n = 256
    g0 = orc.husimi_grid(rho0, n, n)
    g1 = evolve_pde(g0, GeneratorSpec("Liouville", p, N), 1.0)
    P, Q = mesh(n, n)
    xg = np.stack([np.sqrt(1 - P), np.sqrt(P) * np.exp(-1j * Q)], axis=-1).reshape(-1, 2)
    _, back = integrate_gpe(xg, p, N, -1.0, 1.0)
    ref = husimi(rho0, back[-1], orc.basis).reshape(n, n)
    assert l2_norm(g1.values - ref) / l2_norm(ref) < 1e-3


def test_time_reversal(ref_params):
    N = 10
    orc = FockOracle(ref_params, N)
    rho0 = orc.coherent_density(X0)
    g0 = orc.husimi_grid(rho0, 64, 64)
    spec = GeneratorSpec("Q", ref_params, N)
    g1 = evolve_pde(g0, spec, 0.5)
    one_way = l2_norm(g1.values - orc.husimi_grid(orc.rho_t(rho0, 0.5), 64, 64).values)
    back = evolve_pde(g1, spec, -0.5)
    assert l2_norm(back.values - g0.values) <= 2 * one_way + 1e-12


# --- ensembles -------------------------------------------------------------

def test_single_point_ensemble_is_gpe():
    p = HamiltonianParams((0.0, 0.2), 1.0, 0.0)
    ens = TrajectoryEnsemble.uniform(X0[None, :])
    out = ensemble_propagate(ens, p, 6, 2.0, 0.1)
    _, xs = integrate_gpe(X0, p, 6, 2.0, 0.1)
    np.testing.assert_allclose(out.x[0], xs[-1] * np.exp(-1j * np.angle(xs[-1][0])), atol=1e-12)
    assert out.time == 2.0 and np.array_equal(out.weights, ens.weights)


def test_chart_covariance(rng):
    p = HamiltonianParams((0.0, 0.3, -0.2), 1.0, 0.4)
    x = random_amplitudes(rng, 3, 8)
    w = rng.random(8)
    ens = TrajectoryEnsemble(x, w / w.sum())
    a = ensemble_propagate(ens, p, 10, 2.0, 0.1, chart="x")
    b = ensemble_propagate(ens, p, 10, 2.0, 0.1, chart="pq")
    assert np.abs(a.x - b.x).max() < 1e-8


def test_ensemble_validation():
    with pytest.raises(ValueError):
        TrajectoryEnsemble(np.ones((2, 2)) / np.sqrt(2), np.array([0.7, 0.7]))
    with pytest.raises(ValueError):
        TrajectoryEnsemble(np.ones((2, 2)) / np.sqrt(2), np.array([1.5, -0.5]))


def test_noninteracting_ensemble_tracks_fock():
    p = HamiltonianParams((0.0, 0.4), 1.0, 0.0)
    N = 12
    xs = sample_husimi_coherent(X0, N, 40000, seed=4)
    out = ensemble_propagate(TrajectoryEnsemble.uniform(xs), p, N, 1.5, 1.5)
    orc = FockOracle(p, N)
    r = orc.rho_t(orc.coherent_density(X0), 1.5)
    for jk in [(0, 0), (0, 1), (1, 1)]:
        rep = expect_from_ensemble(out, jk, N, identity="Q")
        assert rep.within(expectation_fock(r, *jk, orc.basis), nsigma=4)
