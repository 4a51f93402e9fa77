"""Two-site phase-space grids over (p_2, q_2) and their differential calculus.

q is periodic and differentiated spectrally. p nodes sit at (i + 1/2)/n_p so
no node touches the poles p_2 in {0, 1}. A smooth function on the sphere has
Fourier modes of the form (p(1-p))^{|m|/2} * smooth(p); each mode is
differentiated in p by applying a 4th-order stencil to the smooth factor and
the product rule to the prefactor, which keeps 4th-order accuracy up to the
poles. Stencils are shifted away from the nearer pole so the prefactor
ratios stay bounded.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
import numpy as np
from numpy.polynomial import chebyshev, legendre

from .errors import NumericalError
from .operators import CoefficientField

_RATIO_LIMIT = np.log(1e3)


@dataclass(frozen=True)
class PhaseGrid2:
    values: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("grid values must be a 2-D (n_p, n_q) array")
        if v.shape[1] % 2:
            raise ValueError("n_q must be even")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n_p, n_q, **meta):
        return cls(np.zeros((n_p, n_q)), dict(meta))

    @classmethod
    def from_function(cls, f, n_p, n_q, **meta):
        """Sample f(p2, q2) (broadcasting arrays) on the grid nodes."""
        P, Q = mesh(n_p, n_q)
        return cls(np.broadcast_to(f(P, Q), P.shape).copy(), dict(meta))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_p(self):
        return self.values.shape[0]

    @property
    def n_q(self):
        return self.values.shape[1]

    @property
    def p(self):
        return p_nodes(self.n_p)

    @property
    def q(self):
        return q_nodes(self.n_q)

    def mesh(self):
        return mesh(self.n_p, self.n_q)

    def chart(self):
        """Full (p, q) arrays of shape (n_p * n_q, 2)."""
        P, Q = self.mesh()
        p = np.stack([1 - P.ravel(), P.ravel()], axis=1)
        q = np.stack([np.zeros(P.size), Q.ravel()], axis=1)
        return p, q

    def amplitudes(self):
        P, Q = self.mesh()
        return np.stack([np.sqrt(1 - P), np.sqrt(P) * np.exp(-1j * Q)], axis=-1)

    def with_values(self, values, **meta):
        return replace(self, values=values, meta={**self.meta, **meta})


def p_nodes(n_p):
    return (np.arange(n_p) + 0.5) / n_p


def q_nodes(n_q):
    return 2 * np.pi * np.arange(n_q) / n_q


def mesh(n_p, n_q):
    return np.meshgrid(p_nodes(n_p), q_nodes(n_q), indexing="ij")


def _fd_weights(offsets, order):
    """Finite-difference weights (unit spacing) for the given derivative order."""
    offsets = np.asarray(offsets, dtype=float)
    W = len(offsets)
    V = np.vander(offsets, W, increasing=True).T
    rhs = np.zeros(W)
    rhs[order] = float(np.prod(np.arange(1, order + 1)))
    return np.linalg.solve(V, rhs)


@lru_cache(maxsize=None)
def _mode_stencils(n_p, s2):
    """Banded p-derivative operators for Fourier modes with |m| = s2.

    Returns (start, w1, w2), each row i acting on nodes start[i]..start[i]+5.
    """
    s = s2 / 2.0
    h = 1.0 / n_p
    p = p_nodes(n_p)
    logw = s * (np.log(p) + np.log1p(-p))
    g = (1 - 2 * p) / (p * (1 - p))
    wpp = s * s * g * g - s * (1 - 2 * p + 2 * p * p) / (p * (1 - p)) ** 2
    width = 6
    start = np.zeros(n_p, dtype=int)
    w1 = np.zeros((n_p, width))
    w2 = np.zeros((n_p, width))
    for i in range(n_p):
        left = i < n_p / 2
        back = 0
        for k in (1, 2):
            j = i - k if left else i + k
            if 0 <= j < n_p and logw[i] - logw[j] <= _RATIO_LIMIT:
                back = k
            else:
                break
        if n_p < width:
            raise ValueError("grid needs at least 6 p nodes")
        if back == 2:
            lo = i - 2
            npts = 5
        else:
            npts = 6
            lo = i - back if left else i + back - 5
        lo = min(max(lo, 0), n_p - npts)
        nodes = np.arange(lo, lo + npts)
        off = nodes - i
        c1 = _fd_weights(off, 1) / h
        c2 = _fd_weights(off, 2) / (h * h)
        ratio = np.exp(logw[i] - logw[nodes])
        d1 = c1 * ratio
        d2 = c2 * ratio + 2 * s * g[i] * d1
        d1[i - lo] += s * g[i]
        d2[i - lo] += wpp[i]
        start[i] = lo
        w1[i, :npts] = d1
        w2[i, :npts] = d2
    return start, w1, w2


class GridCalculus:
    """Derivatives, projection and quadrature for a fixed (n_p, n_q)."""

    def __init__(self, n_p, n_q):
        if n_q % 2:
            raise ValueError("n_q must be even")
        self.n_p, self.n_q = n_p, n_q
        self.modes = np.arange(n_q // 2 + 1)
        starts, w1s, w2s = zip(*(_mode_stencils(n_p, int(m)) for m in self.modes))
        idx = np.stack(starts)[:, :, None] + np.arange(6)
        self._idx = np.minimum(idx, n_p - 1).reshape(len(self.modes), -1)
        self._w1 = np.stack(w1s)
        self._w2 = np.stack(w2s)
        self._ik = 1j * self.modes.astype(float)
        self._ik[-1] = 0.0  # Nyquist mode carries no odd derivative
        self.quad_p = _quadrature_weights(n_p)

    def _band(self, F, w):
        nm = F.shape[1]
        Ft = F.T  # (modes, n_p)
        gathered = np.take_along_axis(Ft, self._idx[:nm], axis=1).reshape(w[:nm].shape)
        return np.einsum("mik,mik->mi", w[:nm], gathered).T

    def derivatives(self, values, max_mode=None, second=True):
        """Returns dict with keys f, p, q and, if ``second``, pp, qq, pq.

        ``max_mode`` skips Fourier modes above it (caller guarantees they vanish).
        """
        F = np.fft.rfft(values, axis=1)
        if max_mode is not None and max_mode + 1 < F.shape[1]:
            F = F[:, : max_mode + 1]
        nm = F.shape[1]
        ik = self._ik[:nm]
        Fp = self._band(F, self._w1)
        n = self.n_q
        irfft = lambda G: np.fft.irfft(G, n=n, axis=1)
        out = {"f": values, "p": irfft(Fp), "q": irfft(F * ik)}
        if second:
            m2 = self.modes[:nm].astype(float) ** 2
            out.update(pp=irfft(self._band(F, self._w2)), qq=irfft(F * -m2), pq=irfft(Fp * ik))
        return out

    def apply(self, fld: CoefficientField, values, max_mode=None):
        second = bool(np.any(fld.A))
        d = self.derivatives(values, max_mode, second)
        grad = np.stack([d["p"].ravel(), d["q"].ravel()], axis=1)
        out = fld.c0 * values.ravel() + np.einsum("na,na->n", fld.b, grad)
        if second:
            out += (fld.A[:, 0, 0] * d["pp"].ravel() + fld.A[:, 1, 1] * d["qq"].ravel()
                    + 2 * fld.A[:, 0, 1] * d["pq"].ravel())
        return out.reshape(values.shape)

    def mean(self, values):
        """Average over the invariant measure (uniform in p and q)."""
        return float(self.quad_p @ values.mean(axis=1))

    def projector(self, N):
        return _harmonic_projector(self.n_p, self.n_q, N)

    def project(self, values, N):
        """Orthogonal projection onto functions of an N-particle two-site sector.

        These are Fourier modes |m| <= N whose p-profile is
        (p(1-p))^{|m|/2} times a polynomial of degree N - |m|.
        """
        bases = self.projector(N)
        F = np.fft.rfft(values, axis=1)
        G = np.zeros_like(F)
        s = np.sqrt(self.quad_p)[:, None]
        for m, B in enumerate(bases):
            G[:, m] = (B @ (B.T @ (s * F[:, [m]]))).ravel() / s.ravel()
        return np.fft.irfft(G, n=self.n_q, axis=1)


@lru_cache(maxsize=None)
def _calculus(n_p, n_q):
    return GridCalculus(n_p, n_q)


def calculus(grid_or_shape) -> GridCalculus:
    shape = grid_or_shape.shape if hasattr(grid_or_shape, "shape") else grid_or_shape
    return _calculus(int(shape[0]), int(shape[1]))


@lru_cache(maxsize=None)
def _harmonic_projector(n_p, n_q, N):
    p = p_nodes(n_p)
    out = []
    for m in range(min(N, n_q // 2) + 1):
        w = np.exp(0.5 * m * (np.log(p) + np.log1p(-p)))
        V = chebyshev.chebvander(2 * p - 1, N - m) * w[:, None]
        # orthonormal in the quadrature inner product, so projection keeps the mass
        Qm, _ = np.linalg.qr(V * np.sqrt(_quadrature_weights(n_p))[:, None])
        out.append(Qm)
    return tuple(out)


@lru_cache(maxsize=None)
def _quadrature_weights(n_p, K=5):
    """Midpoint rule with symmetric end corrections, exact for polynomials of degree < 2K."""
    h = 1.0 / n_p
    w = np.full(n_p, h)
    if n_p < 4 * K:
        return w
    p = p_nodes(n_p)
    idx = np.arange(K)
    A = np.empty((K, K))
    rhs = np.empty(K)
    for d in range(K):
        c = np.zeros(2 * d + 1)
        c[-1] = 1
        P = legendre.legval(2 * p - 1, c)
        rhs[d] = (1.0 if d == 0 else 0.0) - h * P.sum()
        A[d] = P[idx] + P[n_p - 1 - idx]
    corr = np.linalg.solve(A, rhs)
    w[idx] += corr
    w[n_p - 1 - idx] += corr
    return w


def mass(grid: PhaseGrid2, dim: int = 1) -> float:
    """Integral over the invariant measure normalized to total volume ``dim``."""
    return dim * calculus(grid).mean(grid.values)


def l2_norm(values, calc: GridCalculus | None = None):
    values = np.asarray(values)
    calc = calc or calculus(values.shape)
    return float(np.sqrt(calc.mean(values**2)))


def stable_step(fld: CoefficientField, shape, c=0.5, max_mode=None):
    """Largest RK4 step allowed by a coefficient-weighted spectral-radius bound."""
    n_p, n_q = shape
    k1 = 2.0 * n_p
    k2 = 16.0 / 3.0 * n_p**2
    kq = n_q / 2 if max_mode is None else min(max_mode, n_q / 2)
    rad = (np.abs(fld.c0) + np.abs(fld.b[:, 0]) * k1 + np.abs(fld.b[:, 1]) * kq
           + np.abs(fld.A[:, 0, 0]) * k2 + 2 * np.abs(fld.A[:, 0, 1]) * k1 * kq
           + np.abs(fld.A[:, 1, 1]) * kq**2)
    r = rad.max()
    return np.inf if r == 0 else c * 2.78 / r


def rk4(values, rhs, t_final, dt, monitor=None):
    """Fixed-step classical RK4 from 0 to t_final (either sign) with |step| <= dt."""
    if t_final == 0:
        return values.copy(), 0
    n = int(np.ceil(abs(t_final) / dt - 1e-12))
    h = t_final / n
    y = values.copy()
    for step in range(n):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * h * k1)
        k3 = rhs(y + 0.5 * h * k2)
        k4 = rhs(y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite values after step {step + 1}")
        if monitor is not None:
            monitor(y, step)
    return y, n
