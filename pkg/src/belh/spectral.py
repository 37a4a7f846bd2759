"""Periodic-box pseudo-spectral machinery.

The torus has side ``2*pi*R_i`` along axis ``i``; wavenumbers are ``n/R_i``.
Transforms are real-to-complex with orthonormal scaling.  The Nyquist
wavenumber is set to zero in every derivative symbol so that discrete
Green's identities (div grad = laplacian, Parseval pairings) are exact.
"""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft

from . import tensor as ta


def _triple(v, cast):
    if np.ndim(v) == 0:
        return (cast(v),) * 3
    v = tuple(cast(x) for x in v)
    if len(v) != 3:
        raise ValueError(f"expected a scalar or 3 values, got {v}")
    return v


class Grid:
    """Uniform periodic grid on [0, 2 pi R_1) x [0, 2 pi R_2) x [0, 2 pi R_3)."""

    def __init__(self, n, box=1.0, workers=1):
        self.shape = _triple(n, int)
        self.box = _triple(box, float)
        self.workers = max(1, int(workers))
        for m in self.shape:
            if m < 8 or m % 2:
                raise ValueError(f"grid size must be even and >= 8, got {self.shape}")
        if min(self.box) <= 0:
            raise ValueError(f"box half-period must be positive, got {self.box}")
        self.lengths = tuple(2 * np.pi * r for r in self.box)
        self.dx = tuple(l / m for l, m in zip(self.lengths, self.shape))
        self.dV = float(np.prod(self.dx))
        self.volume = float(np.prod(self.lengths))
        self.spectral_shape = self.shape[:2] + (self.shape[2] // 2 + 1,)

        idx = []
        for ax, m in enumerate(self.shape):
            if ax < 2:
                n_ax = np.fft.fftfreq(m, 1.0 / m)
            else:
                n_ax = np.arange(m // 2 + 1, dtype=float)
            idx.append(n_ax)
        self.mode_index = [np.abs(v) for v in idx]
        k = []
        for ax, (n_ax, r, m) in enumerate(zip(idx, self.box, self.shape)):
            kk = n_ax / r
            kk[np.abs(n_ax) == m // 2] = 0.0
            sh = [1, 1, 1]
            sh[ax] = -1
            k.append(kk.reshape(sh))
        self.k = k
        self.k2 = k[0] ** 2 + k[1] ** 2 + k[2] ** 2
        self.k4 = self.k2 ** 2
        self.k2_safe = np.where(self.k2 == 0, 1.0, self.k2)

        keep = [(np.abs(n_ax) <= m / 3.0).reshape([-1 if i == ax else 1 for i in range(3)])
                for ax, (n_ax, m) in enumerate(zip(idx, self.shape))]
        self.dealias_mask = keep[0] & keep[1] & keep[2]
        # rfft half-spectrum weights for Parseval sums
        w = np.full(self.spectral_shape[2], 2.0)
        w[0] = 1.0
        if self.shape[2] % 2 == 0:
            w[-1] = 1.0
        self.half_weights = w.reshape(1, 1, -1)

    def __repr__(self):
        return f"Grid(n={self.shape}, box={self.box})"

    def same_as(self, other) -> bool:
        return self.shape == other.shape and np.allclose(self.box, other.box, rtol=0, atol=0)

    def coords(self):
        """Physical coordinates as three broadcastable arrays."""
        out = []
        for ax, (m, d) in enumerate(zip(self.shape, self.dx)):
            sh = [1, 1, 1]
            sh[ax] = -1
            out.append((np.arange(m) * d).reshape(sh))
        return out

    def center(self):
        return tuple(l / 2.0 for l in self.lengths)

    # transforms -----------------------------------------------------------
    def _check(self, f, spectral):
        want = self.spectral_shape if spectral else self.shape
        if tuple(f.shape[-3:]) != want:
            raise ValueError(f"field shape {f.shape} does not match grid {want}")

    def forward(self, f):
        f = np.asarray(f, dtype=float)
        self._check(f, False)
        return sfft.rfftn(f, axes=(-3, -2, -1), norm="ortho", workers=self.workers)

    def inverse(self, fh):
        self._check(fh, True)
        return sfft.irfftn(fh, s=self.shape, axes=(-3, -2, -1), norm="ortho",
                           workers=self.workers)

    # spectral operators (component axes lead) ------------------------------
    def grad(self, fh):
        return np.stack([1j * kk * fh for kk in self.k])

    def div(self, vh):
        return 1j * (self.k[0] * vh[0] + self.k[1] * vh[1] + self.k[2] * vh[2])

    def laplacian(self, fh):
        return -self.k2 * fh

    def biharmonic(self, fh):
        return self.k4 * fh

    def dealias(self, fh):
        return fh * self.dealias_mask

    def leray(self, vh):
        kv = (self.k[0] * vh[0] + self.k[1] * vh[1] + self.k[2] * vh[2]) / self.k2_safe
        return np.stack([vh[i] - self.k[i] * kv for i in range(3)])

    # physical-space reductions ----------------------------------------------
    def integrate(self, f):
        return float(np.sum(f) * self.dV)

    def inner(self, f, g):
        return float(np.sum(f * g) * self.dV)

    def spectral_norm2(self, fh):
        """L^2 norm squared on the torus from the half spectrum."""
        return float(np.sum(self.half_weights * np.abs(fh) ** 2) * self.dV)


# module-level aliases mirroring the operation names
def transform_forward(grid: Grid, f):
    return grid.forward(f)


def transform_inverse(grid: Grid, fh):
    return grid.inverse(fh)


def leray_project(grid: Grid, vh):
    return grid.leray(vh)


def dealias(grid: Grid, fh):
    return grid.dealias(fh)


def solve_pressure(grid: Grid, u, stress):
    """Mean-free p with -lap p = d_i d_j (u_i u_j - stress_ij).

    ``u`` is physical with shape (3, *grid); ``stress`` is physical with
    shape (*grid, 3, 3).
    """
    u = np.asarray(u, dtype=float)
    x = np.einsum("i...,j...->ij...", u, u) - np.moveaxis(np.asarray(stress, float), (-2, -1), (0, 1))
    xh = grid.forward(x)
    rhs = np.zeros(grid.spectral_shape, dtype=complex)
    for i in range(3):
        for j in range(3):
            rhs -= grid.k[i] * grid.k[j] * xh[i, j]
    ph = rhs / grid.k2_safe
    ph[0, 0, 0] = 0.0
    return grid.inverse(ph)


class FieldSet:
    """Coupled state (Q, u, p) with lazily synchronised physical/spectral views.

    Q is held as five basis-coefficient fields (see ``tensor.BASIS``), u as
    three velocity components.  ``p`` is optional and only filled on demand.
    """

    def __init__(self, grid: Grid, *, Q=None, u=None, Q_hat=None, u_hat=None, t=0.0, p=None):
        self.grid = grid
        self.t = float(t)
        self.p = p
        self._Q, self._u, self._Qh, self._uh = Q, u, Q_hat, u_hat
        if Q is None and Q_hat is None:
            raise ValueError("FieldSet needs Q or Q_hat")
        if (u is None) and (u_hat is None):
            raise ValueError("FieldSet needs u or u_hat")
        for arr, spectral in ((Q, False), (u, False), (Q_hat, True), (u_hat, True)):
            if arr is not None:
                grid._check(arr, spectral)
        self.projected = False
        self.raw_Q = self.raw_u = None

    @classmethod
    def from_physical(cls, grid, Q, u, t=0.0, *, project=True, dealias=True):
        """Build the canonical state from physical arrays.

        Spectral views are derived once (dealiased, Leray-projected); the
        physical views are then synthesised from them.  The input arrays are
        kept as ``raw_Q``/``raw_u`` so a state rebuilt from the same bytes is
        identical bit for bit (this is what checkpoints store).
        """
        Q = np.ascontiguousarray(Q, dtype=float)
        u = np.ascontiguousarray(u, dtype=float)
        Qh = grid.forward(Q)
        uh = grid.forward(u)
        if dealias:
            Qh, uh = grid.dealias(Qh), grid.dealias(uh)
        if project:
            uh = grid.leray(uh)
        fs = cls(grid, Q_hat=Qh, u_hat=uh, t=t)
        fs.raw_Q, fs.raw_u = Q, u
        fs.projected = project
        return fs

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls.from_physical(grid, np.zeros((5,) + grid.shape), np.zeros((3,) + grid.shape), t)

    @property
    def Q(self):
        if self._Q is None:
            self._Q = self.grid.inverse(self._Qh)
        return self._Q

    @property
    def u(self):
        if self._u is None:
            self._u = self.grid.inverse(self._uh)
        return self._u

    @property
    def Q_hat(self):
        if self._Qh is None:
            self._Qh = self.grid.forward(self._Q)
        return self._Qh

    @property
    def u_hat(self):
        if self._uh is None:
            self._uh = self.grid.forward(self._u)
        return self._uh

    @property
    def views_valid(self):
        return {"Q": (self._Q is not None, self._Qh is not None),
                "u": (self._u is not None, self._uh is not None)}

    def Q_matrix(self):
        """Q as stacked matrices (*grid, 3, 3)."""
        return np.einsum("c...,cij->...ij", self.Q, ta.BASIS)

    def div_ratio(self):
        """||div u|| / ||grad u|| evaluated spectrally."""
        g = self.grid
        d = g.spectral_norm2(g.div(self.u_hat))
        gu = sum(g.spectral_norm2(x) for x in g.grad(self.u_hat))
        return np.sqrt(d / gu) if gu > 0 else np.sqrt(d)

    def div_norm(self):
        g = self.grid
        return np.sqrt(g.spectral_norm2(g.div(self.u_hat)))

    def q_constraint_drift(self):
        """Max pointwise |tr Q| and |Q - Q^T| of the reconstructed matrices."""
        m = self.Q_matrix()
        tr = np.abs(ta.trace(m)).max(initial=0.0)
        asym = np.abs(m - np.swapaxes(m, -1, -2)).max(initial=0.0)
        return float(tr), float(asym)

    def physical_payload(self):
        """The physical arrays that determine this state exactly."""
        Q = self.raw_Q if self.raw_Q is not None else self.Q
        u = self.raw_u if self.raw_u is not None else self.u
        return Q, u


_B59 = ta.BASIS.reshape(5, 9)


def coeff_field_to_matrix(c):
    """(5, *grid) coefficient fields -> (*grid, 3, 3) matrices."""
    c = np.asarray(c)
    gshape = c.shape[1:]
    return (c.reshape(5, -1).T @ _B59).reshape(gshape + (3, 3))


def matrix_to_coeff_field(m):
    """(*grid, 3, 3) matrices -> (5, *grid) coefficients of the S^3_0 part."""
    m = np.asarray(m)
    gshape = m.shape[:-2]
    return (_B59 @ m.reshape(-1, 9).T).reshape((5,) + gshape)
