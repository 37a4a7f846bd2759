"""Evaluation of all pointwise quantities of a state on the physical grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as ta
from .spectral import Grid, coeff_field_to_matrix


@dataclass
class LocalFields:
    """Physical-space fields; matrices carry trailing (3, 3) axes."""

    Q: np.ndarray        # (*g, 3, 3)
    gradQ: np.ndarray    # (*g, 3, 3, 3), [k, a, b] = d_k Q_ab
    lapQ: np.ndarray     # (*g, 3, 3)
    u: np.ndarray        # (3, *g)
    gradu: np.ndarray    # (*g, 3, 3), [i, j] = d_j u_i
    B: np.ndarray
    H: np.ndarray
    S: np.ndarray
    tau: np.ndarray
    sigma: np.ndarray
    lapu: np.ndarray | None = None

    @property
    def transport(self):
        """u . grad Q."""
        return np.einsum("k...,...kab->...ab", self.u, self.gradQ)

    @property
    def advection(self):
        """(u . grad u) with components leading."""
        return np.einsum("...ij,j...->i...", self.gradu, self.u)


def _vector_grad(grid: Grid, fh):
    """Physical gradient of leading-component spectral fields.

    Returns shape (*g, C, 3) with [..., c, k] = d_k f_c.
    """
    g = grid.inverse(grid.grad(fh))            # (3, C, *g)
    return np.moveaxis(g, (0, 1), (-1, -2))


def evaluate(grid: Grid, Q_hat, u_hat, p: ta.BulkParams, *, with_lapu=False) -> LocalFields:
    Qc = grid.inverse(Q_hat)
    Q = coeff_field_to_matrix(Qc)
    gQc = grid.inverse(grid.grad(Q_hat))       # (3, 5, *g)
    gradQ = np.stack([coeff_field_to_matrix(gQc[k]) for k in range(3)], axis=-3)
    lapQ = coeff_field_to_matrix(grid.inverse(grid.laplacian(Q_hat)))
    u = grid.inverse(u_hat)
    gradu = _vector_grad(grid, u_hat)
    B = ta.bulk_force(Q, p)
    H = p.L * lapQ - p.a * Q + B
    S = ta.stretching(gradu, Q, p.xi, check=False)
    tau = ta.stress_tau(Q, H, gradQ, p)
    sigma = ta.stress_sigma(Q, H)
    lapu = grid.inverse(grid.laplacian(u_hat)) if with_lapu else None
    return LocalFields(Q=Q, gradQ=gradQ, lapQ=lapQ, u=u, gradu=gradu, B=B, H=H, S=S,
                       tau=tau, sigma=sigma, lapu=lapu)


def stress_divergence_hat(grid: Grid, T):
    """Spectral div of a (*g, 3, 3) stress: (div T)_i = d_j T_ij."""
    Th = grid.forward(np.moveaxis(T, (-2, -1), (0, 1)))
    return 1j * (grid.k[0] * Th[:, 0] + grid.k[1] * Th[:, 1] + grid.k[2] * Th[:, 2])
