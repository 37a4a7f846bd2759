"""Pointwise algebra of traceless symmetric 3x3 tensors.

Every constitutive function works on stacked matrices of shape ``(..., 3, 3)``
so the same code serves single points, random batches and whole grids.
Spatial gradients of a tensor field are stored as ``(..., 3, 3, 3)`` with
index order ``[k, a, b] = d_k Q_ab``; velocity gradients as ``(..., 3, 3)``
with ``[i, j] = d_j u_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

I3 = np.eye(3)
A0 = np.diag([2.0, -1.0, -1.0])

_s2 = np.sqrt(2.0)
_s6 = np.sqrt(6.0)

# Frobenius-orthonormal basis of the traceless symmetric matrices.  The first
# element is A0/|A0| so a uniaxial field q*A0 lives in coefficient 0 alone.
BASIS = np.array([
    np.diag([2.0, -1.0, -1.0]) / _s6,
    np.diag([0.0, 1.0, -1.0]) / _s2,
    [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
    [[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]],
])
BASIS[2:] /= _s2


class ConstraintViolation(ValueError):
    """Input outside the admissible class (e.g. a velocity gradient with trace)."""


@dataclass(frozen=True)
class BulkParams:
    """Physical parameters of the regularized Beris-Edwards system."""

    L: float = 1.0
    mu: float = 1.0
    Gamma: float = 1.0
    a: float = 0.0
    b: float = 0.0
    c: float = 1.0
    xi: float = 0.0
    eps: float = 0.0

    def __post_init__(self):
        for name in ("L", "mu", "Gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.eps >= 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")

    @property
    def stable(self) -> bool:
        return self.c > 0

    def as_tuple(self):
        return (self.L, self.mu, self.Gamma, self.a, self.b, self.c, self.xi, self.eps)


@dataclass(frozen=True)
class TracelessSym3:
    """A single point of S^3_0 held as five basis coefficients."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (5,):
            raise ValueError(f"expected 5 coefficients, got shape {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_matrix(cls, m) -> "TracelessSym3":
        return cls(to_coeffs(m))

    @property
    def matrix(self) -> np.ndarray:
        return from_coeffs(self.coeffs)

    def __array__(self, dtype=None, copy=None):
        m = self.matrix
        return m if dtype is None else m.astype(dtype)


def to_coeffs(m):
    """Coefficients of the traceless symmetric part of ``m`` (trailing axis 5)."""
    return np.einsum("...ij,cij->...c", np.asarray(m, dtype=float), BASIS)


def from_coeffs(c):
    return np.einsum("...c,cij->...ij", np.asarray(c, dtype=float), BASIS)


def project_traceless_sym(m):
    """Orthogonal projection onto S^3_0: sym(m) - tr(m)/3 I."""
    m = np.asarray(m, dtype=float)
    s = 0.5 * (m + np.swapaxes(m, -1, -2))
    return s - (trace(s) / 3.0)[..., None, None] * I3


def trace(m):
    return np.einsum("...ii->...", m)


def frob(x, y):
    x, y = np.broadcast_arrays(x, y)
    return np.einsum("...i,...i->...", x.reshape(x.shape[:-2] + (9,)), y.reshape(y.shape[:-2] + (9,)))


def _t(m):
    return np.swapaxes(m, -1, -2)


def split_gradient(grad_u):
    """Return (D, Omega), the symmetric and skew parts of grad u."""
    gt = _t(grad_u)
    return 0.5 * (grad_u + gt), 0.5 * (grad_u - gt)


def bulk_force(q, p: BulkParams):
    q = np.asarray(q, dtype=float)
    q2 = q @ q
    trq2 = trace(q2)[..., None, None]
    return p.b * (q2 - trq2 / 3.0 * I3) - p.c * q * trq2


def molecular_field(q, lap_q, p: BulkParams):
    q = np.asarray(q, dtype=float)
    return p.L * np.asarray(lap_q, dtype=float) - p.a * q + bulk_force(q, p)


def stretching(grad_u, q, xi, *, check=True, tol=1e-8):
    grad_u = np.asarray(grad_u, dtype=float)
    q = np.asarray(q, dtype=float)
    if check:
        tr = np.abs(trace(grad_u))
        scale = np.maximum(1.0, np.sqrt(frob(grad_u, grad_u)))
        if np.any(tr > tol * scale):
            raise ConstraintViolation(
                f"velocity gradient is not trace-free (max |tr| = {tr.max():.3e})")
    d, w = split_gradient(grad_u)
    g = q + I3 / 3.0
    trqgu = trace(q @ grad_u)[..., None, None]
    return xi * (d @ g + g @ d) - 2.0 * xi * g * trqgu + (w @ q - q @ w)


def gradq_odot(grad_q):
    """(grad Q . grad Q)_ij = d_i Q_ab d_j Q_ab."""
    g9 = np.asarray(grad_q, dtype=float)
    g9 = g9.reshape(g9.shape[:-2] + (9,))
    return g9 @ np.swapaxes(g9, -1, -2)


def stress_tau(q, h, grad_q, p: BulkParams):
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    g = q + I3 / 3.0
    trqh = frob(q, h)[..., None, None]
    xi = p.xi
    return (-xi * (g @ h) - xi * (h @ g) + 2.0 * xi * g * trqh
            - p.L * gradq_odot(grad_q))


def stress_sigma(q, h):
    q = np.asarray(q, dtype=float)
    h = np.asarray(h, dtype=float)
    return q @ h - h @ q


def cancellation_terms(q, h, grad_u, grad_q, p: BulkParams):
    """The three terms whose sum vanishes: (tau+sigma):grad u, H:S, L(gQ.gQ):grad u."""
    t1 = frob(stress_tau(q, h, grad_q, p) + stress_sigma(q, h), grad_u)
    t2 = frob(h, stretching(grad_u, q, p.xi))
    t3 = p.L * frob(gradq_odot(grad_q), grad_u)
    return t1, t2, t3


def cancellation_residual(q, h, grad_u, grad_q, p: BulkParams):
    t1, t2, t3 = cancellation_terms(q, h, grad_u, grad_q, p)
    return t1 + t2 + t3


def bulk_density(q, p: BulkParams):
    q = np.asarray(q, dtype=float)
    q2 = frob(q, q)
    trq3 = trace(q @ q @ q)
    return 0.5 * p.a * q2 - p.b / 3.0 * trq3 + 0.25 * p.c * q2 ** 2


def energy_density(q, grad_q, p: BulkParams):
    grad_q = np.asarray(grad_q, dtype=float)
    gq2 = np.einsum("...kab,...kab->...", grad_q, grad_q)
    return 0.5 * p.L * gq2 + bulk_density(q, p)


def coercivity_constants(p: BulkParams):
    """Constants (C, c0) with bulk(Q) >= -C|Q|^2 + c0|Q|^4 on S^3_0.

    Uses |tr Q^3| <= |Q|^3/sqrt(6) and Young's inequality.
    """
    if not p.c > 0:
        raise ValueError("coercivity needs c > 0")
    return abs(p.a) / 2.0 + 2.0 * p.b ** 2 / (3.0 * p.c), p.c / 8.0


def low_order_potential_and_force(q, p: BulkParams):
    """g(Q) = (1-a)/2 |Q|^2 + b/3 tr Q^3 - c/4 |Q|^4 and A(Q) = Dg(Q)."""
    q = np.asarray(q, dtype=float)
    q2 = frob(q, q)
    g = 0.5 * (1.0 - p.a) * q2 + p.b / 3.0 * trace(q @ q @ q) - 0.25 * p.c * q2 ** 2
    return g, (1.0 - p.a) * q + bulk_force(q, p)


def random_traceless(rng, size=(), scale=1.0):
    """Random S^3_0 matrices with i.i.d. normal basis coefficients."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    return from_coeffs(scale * rng.standard_normal(shape + (5,)))


def random_tracefree_gradient(rng, size=(), scale=1.0):
    m = scale * rng.standard_normal(((size,) if np.isscalar(size) else tuple(size)) + (3, 3))
    return m - (trace(m) / 3.0)[..., None, None] * I3
