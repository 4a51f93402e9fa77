"""Single-particle observables <E_jk> from phase-space representations."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .coherent import MeasureSample, husimi
from .fock import FockBasis, enumerate_basis, expectation_fock

ESTIMATORS = ("Q_integral", "P_integral", "ensemble", "fock")
JACKKNIFE_BLOCKS = 20


@dataclass(frozen=True)
class ObservableReport:
    jk: tuple
    value: complex
    estimator: str
    mc_stderr: float = 0.0
    N: int | None = None
    M: int | None = None
    t: float = 0.0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if not self.mc_stderr >= 0:
            raise ValueError("mc_stderr must be non-negative")
        if self.estimator == "fock" and self.mc_stderr != 0:
            raise ValueError("fock reports are exact")

    def within(self, reference, nsigma=3.0, floor=1e-12):
        return abs(self.value - reference) <= nsigma * self.mc_stderr + floor

    def to_row(self) -> dict:
        return {"jk": list(self.jk), "re": float(np.real(self.value)), "im": float(np.imag(self.value)),
                "stderr": self.mc_stderr, "estimator": self.estimator, "N": self.N, "M": self.M,
                "t": self.t}

    def to_json(self) -> str:
        return json.dumps(self.to_row())


def jackknife(values, weights=None, blocks=JACKKNIFE_BLOCKS):
    """Delete-one-block jackknife of a (weighted) mean; returns (mean, stderr).

    Complex inputs get the combined error sqrt(var_re + var_im).
    """
    v = np.asarray(values)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    full = np.sum(w * v) / w.sum()
    nb = min(blocks, len(v))
    if nb < 2:
        return full, 0.0
    idx = np.array_split(np.arange(len(v)), nb)
    sw = np.array([w[i].sum() for i in idx])
    sv = np.array([np.sum(w[i] * v[i]) for i in idx])
    loo = (sv.sum() - sv) / (sw.sum() - sw)
    var = (nb - 1) / nb * np.sum(np.abs(loo - loo.mean()) ** 2)
    return full, float(np.sqrt(var))


def _bilinear(x, j, k):
    """x_k conj(x_j), built so that swapping j and k conjugates exactly."""
    if j == k:
        return (np.abs(x[:, j]) ** 2).astype(complex)
    a, b = min(j, k), max(j, k)
    g = x[:, b] * x[:, a].conj()
    return g if (j, k) == (a, b) else g.conj()


def _check_jk(jk, M):
    j, k = (int(i) for i in jk)
    if not (0 <= j < M and 0 <= k < M):
        raise ValueError(f"site pair {jk} out of range for M={M}")
    return j, k


def expect_from_Q(rho, jk, sample: MeasureSample, basis: FockBasis | None = None) -> ObservableReport:
    """(N+M) * integral of x_k x_j^* Q  minus delta_jk, by Monte Carlo over the sample."""
    M, N = sample.M, sample.N
    basis = basis or enumerate_basis(M, N)
    j, k = _check_jk(jk, M)
    rho = np.asarray(rho) / np.trace(rho).real
    Q = husimi(rho, sample.x, basis)
    # integral = dim * mean over uniform points; dim/count is the per-point weight
    g = sample.weight * len(Q) * _bilinear(sample.x, j, k) * Q
    mean, err = jackknife(g)
    return ObservableReport((j, k), complex((N + M) * mean - (j == k)), "Q_integral",
                            (N + M) * err, N, M)


def expect_from_P_delta(x0, jk, N: int) -> ObservableReport:
    x0 = np.asarray(x0, dtype=complex)
    j, k = _check_jk(jk, len(x0))
    return ObservableReport((j, k), complex(N * x0[k] * np.conj(x0[j])), "P_integral", 0.0, N, len(x0))


def expect_from_ensemble(ens, jk, N: int, identity="classical") -> ObservableReport:
    """Weighted ensemble average of x_k x_j^*.

    ``identity='classical'`` gives N * sum w x_k x_j^* (delta-P reading, exact for
    coherent points). ``identity='Q'`` treats the ensemble as a sample of the
    Husimi density and applies the (N+M) identity, which is exact at t=0.
    """
    M = ens.M
    j, k = _check_jk(jk, M)
    g = _bilinear(ens.x, j, k)
    mean, err = jackknife(g, ens.weights)
    if identity == "classical":
        value, err = N * mean, N * err
    elif identity == "Q":
        value, err = (N + M) * mean - (j == k), (N + M) * err
    else:
        raise ValueError("identity must be 'classical' or 'Q'")
    return ObservableReport((j, k), complex(value), "ensemble", err, N, M, ens.time)


def expect_fock(rho, jk, basis: FockBasis, t=0.0) -> ObservableReport:
    j, k = _check_jk(jk, basis.M)
    return ObservableReport((j, k), complex(expectation_fock(rho, j, k, basis)), "fock", 0.0,
                            basis.N, basis.M, t)


def observable_matrix(report_fn, M):
    """Assemble the M x M matrix [<E_jk>] from a report callable f(jk)."""
    out = np.empty((M, M), dtype=complex)
    for j in range(M):
        for k in range(M):
            out[j, k] = report_fn((j, k)).value
    return out
