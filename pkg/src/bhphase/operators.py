"""Second-order differential operators on the (p, q) chart as coefficient fields.

An operator acts as ``L f = c0 f + sum_a b_a d_a f + sum_ab A_ab d_a d_b f``
where the independent variables are ordered ``(p_2..p_M, q_2..q_M)`` and
``A`` is symmetric. The dependent site 1 follows the conventions
``p_1 = 1 - sum p_k``, ``q_1 = 0``, ``d_{p_1} = 0``, ``d_{q_1} = -sum d_{q_k}``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class CoefficientField:
    c0: np.ndarray  # (n,)
    b: np.ndarray   # (n, d)
    A: np.ndarray   # (n, d, d)

    @property
    def dim(self):
        return self.b.shape[1]

    def first_order(self) -> "CoefficientField":
        return CoefficientField(self.c0, self.b, np.zeros_like(self.A))

    def __sub__(self, other):
        return CoefficientField(self.c0 - other.c0, self.b - other.b, self.A - other.A)

    def max_abs(self) -> float:
        return float(max(np.abs(self.c0).max(initial=0), np.abs(self.b).max(initial=0),
                         np.abs(self.A).max(initial=0)))


class FieldBuilder:
    """Accumulates operator terms written with 0-based site indices."""

    def __init__(self, p, q):
        self.p = np.atleast_2d(p)
        self.q = np.atleast_2d(q)
        n, M = self.p.shape
        self.M = M
        self.m = M - 1
        self.c0 = np.zeros(n)
        self.b = np.zeros((n, 2 * self.m))
        self.A = np.zeros((n, 2 * self.m, 2 * self.m))

    def _q_slots(self, k):
        if k == 0:
            return [(self.m + j, -1.0) for j in range(self.m)]
        return [(self.m + k - 1, 1.0)]

    def _p_slots(self, k):
        return [] if k == 0 else [(k - 1, 1.0)]

    def const(self, coef):
        self.c0 += coef

    def dp(self, k, coef):
        for a, s in self._p_slots(k):
            self.b[:, a] += s * coef

    def dq(self, k, coef):
        for a, s in self._q_slots(k):
            self.b[:, a] += s * coef

    def _second(self, slots_a, slots_b, coef):
        for a, sa in slots_a:
            for b, sb in slots_b:
                c = 0.5 * sa * sb * coef
                self.A[:, a, b] += c
                self.A[:, b, a] += c

    def dpp(self, k, l, coef):
        self._second(self._p_slots(k), self._p_slots(l), coef)

    def dpq(self, k, l, coef):
        """coef * d_{p_k} d_{q_l}."""
        self._second(self._p_slots(k), self._q_slots(l), coef)

    def dqq(self, k, l, coef):
        self._second(self._q_slots(k), self._q_slots(l), coef)

    def field(self) -> CoefficientField:
        return CoefficientField(self.c0, self.b, self.A)


def bonds(M: int, periodic: bool = False):
    out = [(k, k + 1) for k in range(M - 1)]
    if periodic and M > 2:
        out.append((M - 1, 0))
    return out


def chart_from_z(z, M):
    """Independent coordinates (n, 2(M-1)) -> full (p, q) arrays of shape (n, M)."""
    z = np.atleast_2d(z)
    m = M - 1
    p = np.concatenate([1.0 - z[:, :m].sum(axis=1, keepdims=True), z[:, :m]], axis=1)
    q = np.concatenate([np.zeros((len(z), 1), dtype=z.dtype), z[:, m:]], axis=1)
    return p, q


def z_from_chart(p, q):
    p = np.atleast_2d(p)
    q = np.atleast_2d(q)
    return np.concatenate([p[:, 1:], q[:, 1:]], axis=1)


def apply_field(field: CoefficientField, value, grad, hess):
    """Combine coefficients with value (n,), gradient (n, d), Hessian (n, d, d)."""
    return (field.c0 * value + np.einsum("na,na->n", field.b, grad)
            + np.einsum("nab,nab->n", field.A, hess))


def derivatives_of_callable(f, z, h=1e-4):
    """Central-difference value, gradient and Hessian of a vectorized f(z)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    n, d = z.shape
    f0 = f(z)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    E = np.eye(d) * h
    for a in range(d):
        fp, fm = f(z + E[a]), f(z - E[a])
        grad[:, a] = (fp - fm) / (2 * h)
        hess[:, a, a] = (fp - 2 * f0 + fm) / h**2
        for b in range(a + 1, d):
            v = (f(z + E[a] + E[b]) - f(z + E[a] - E[b]) - f(z - E[a] + E[b])
                 + f(z - E[a] - E[b])) / (4 * h * h)
            hess[:, a, b] = hess[:, b, a] = v
    return f0, grad, hess


def apply_to_callable(coefficients, f, z, h=1e-4):
    """Apply an operator (callable z -> CoefficientField) to a function via finite differences."""
    f0, grad, hess = derivatives_of_callable(f, z, h)
    return apply_field(coefficients(np.atleast_2d(z)), f0, grad, hess)


def _wrap(dz, m):
    dz = dz.copy()
    dz[..., m:] = (dz[..., m:] + np.pi) % (2 * np.pi) - np.pi
    return dz


def apply_on_cloud(coefficients, z, values, neighbors=None):
    """Apply an operator to values sampled on a scattered point cloud.

    Derivatives come from a weighted least-squares quadratic fit over the
    nearest neighbours of each point (q coordinates periodic).
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    values = np.asarray(values, dtype=float)
    n, d = z.shape
    m = d // 2
    nterms = 1 + d + d * (d + 1) // 2
    k = neighbors or min(n, 3 * nterms)
    box = np.r_[np.full(m, 1e6), np.full(m, 2 * np.pi)]
    tree = cKDTree(np.mod(z, box), boxsize=box)
    _, idx = tree.query(np.mod(z, box), k=k)
    iu = np.triu_indices(d)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    f0 = np.empty(n)
    for i in range(n):
        dz = _wrap(z[idx[i]] - z[i], m)
        scale = np.sqrt(np.mean(np.sum(dz**2, axis=1))) or 1.0
        quad = (dz[:, :, None] * dz[:, None, :])[:, iu[0], iu[1]]
        quad = quad * np.where(iu[0] == iu[1], 0.5, 1.0)
        X = np.hstack([np.ones((k, 1)), dz, quad])
        w = np.exp(-np.sum(dz**2, axis=1) / scale**2)
        coef, *_ = np.linalg.lstsq(X * w[:, None], values[idx[i]] * w, rcond=None)
        f0[i] = coef[0]
        grad[i] = coef[1:1 + d]
        H = np.zeros((d, d))
        H[iu] = coef[1 + d:]
        hess[i] = H + np.triu(H, 1).T
    return apply_field(coefficients(z), f0, grad, hess)
