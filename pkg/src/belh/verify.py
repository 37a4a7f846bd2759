"""Randomized identity suite behind ``belh verify``.

Each check samples admissible inputs, evaluates an identity that must hold
exactly (or to finite-difference accuracy) and reports the worst residual.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as ta
from .diagnostics import select_M
from .spectral import Grid, coeff_field_to_matrix

MUTATIONS = ("tau-sign",)

DEFAULT_XI = (-1.0, -0.3, 0.0, 0.3, 1.0)

# (a, b, c) triples for the constant checks; two have a < 0 and b != 0
CONSTANT_TRIPLES = ((-1.0, 2.0, 1.0), (-0.5, -1.5, 0.3), (2.0, 0.7, 4.0))


@dataclass
class CheckResult:
    name: str
    residual: float
    tol: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(np.isfinite(self.residual) and self.residual <= self.tol)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} max residual {self.residual:.3e} (tol {self.tol:.0e})"


def _random_grad_q(rng, n, scale=1.0):
    """Random (n, 3, 3, 3) gradients with every slot in S^3_0."""
    return ta.random_traceless(rng, (n, 3), scale)


def cancellation(rng, xi_values=DEFAULT_XI, n=10_000, L_values=(0.1, 1.0), mutate=None):
    """|(tau+sigma):grad u + H:S + L(gQ.gQ):grad u| / sum of term sizes."""
    worst, per_xi = 0.0, {}
    for xi in xi_values:
        w_xi = 0.0
        for L in L_values:
            p = ta.BulkParams(L=L, a=rng.normal(), b=rng.normal(), c=abs(rng.normal()) + 0.1, xi=xi)
            scale = np.exp(rng.uniform(-2, 2, size=(n, 1, 1)))
            q = ta.random_traceless(rng, n) * scale
            h = ta.random_traceless(rng, n)
            gu = ta.random_tracefree_gradient(rng, n)
            gq = _random_grad_q(rng, n)
            tau = ta.stress_tau(q, h, gq, p)
            if mutate == "tau-sign":
                tau = -tau
            t1 = ta.frob(tau + ta.stress_sigma(q, h), gu)
            t2 = ta.frob(h, ta.stretching(gu, q, xi))
            t3 = L * np.einsum("nkab,nlab,nkl->n", gq, gq, gu)
            rel = np.abs(t1 + t2 + t3) / (np.abs(t1) + np.abs(t2) + np.abs(t3) + 1e-300)
            w_xi = max(w_xi, float(rel.max()))
        per_xi[xi] = w_xi
        worst = max(worst, w_xi)
    return CheckResult("cancellation", worst, 1e-12, {"per_xi": per_xi, "mutation": mutate})


def stretching_closure(rng, n=10_000):
    """S(grad u, Q) is symmetric and traceless for trace-free grad u."""
    worst = 0.0
    for xi in DEFAULT_XI:
        q = ta.random_traceless(rng, n)
        gu = ta.random_tracefree_gradient(rng, n)
        s = ta.stretching(gu, q, xi)
        size = np.sqrt(ta.frob(s, s)) + 1e-300
        bad = np.maximum(np.abs(ta.trace(s)), np.abs(s - np.swapaxes(s, -1, -2)).max(axis=(-2, -1)))
        worst = max(worst, float((bad / size).max()))
    return CheckResult("stretching closure", worst, 1e-12)


def sigma_skew(rng, n=10_000):
    q, h = ta.random_traceless(rng, n), ta.random_traceless(rng, n)
    s = ta.stress_sigma(q, h)
    d = ta.random_traceless(rng, n) + np.eye(3) * rng.normal(size=(n, 1, 1))
    size = np.sqrt(ta.frob(s, s) * ta.frob(d, d)) + 1e-300
    worst = max(float(np.abs(s + np.swapaxes(s, -1, -2)).max()),
                float((np.abs(ta.frob(s, d)) / size).max()))
    return CheckResult("sigma skew", worst, 1e-12)


def discrete_free_energy(grid: Grid, qc, p: ta.BulkParams):
    """Spectral-gradient quadrature of the free energy of coefficient fields."""
    qh = grid.forward(qc)
    gq = grid.inverse(grid.grad(qh))
    q = coeff_field_to_matrix(qc)
    return 0.5 * p.L * grid.integrate(gq ** 2) + grid.integrate(ta.bulk_density(q, p))


def discrete_H(grid: Grid, qc, p: ta.BulkParams):
    qh = grid.forward(qc)
    q = coeff_field_to_matrix(qc)
    lap = coeff_field_to_matrix(grid.inverse(grid.laplacian(qh)))
    return ta.molecular_field(q, lap, p)


def variational(rng, n=16, ndir=20, step=1e-5, p=None):
    """Central differences of the discrete F against -(H, dQ)."""
    p = p or ta.BulkParams(L=0.7, a=-0.4, b=1.3, c=0.9)
    grid = Grid(n)
    # unit-scale smooth field: a few low modes per coefficient
    qh = grid.forward(rng.standard_normal((5,) + grid.shape))
    qh *= np.exp(-grid.k2 / 4.0)
    qc = grid.inverse(qh)
    qc /= np.abs(qc).max()
    H = discrete_H(grid, qc, p)
    worst = 0.0
    for _ in range(ndir):
        dh = grid.forward(rng.standard_normal((5,) + grid.shape)) * np.exp(-grid.k2 / 4.0)
        dq = grid.inverse(dh)
        dq /= np.abs(dq).max()
        fd = (discrete_free_energy(grid, qc + step * dq, p)
              - discrete_free_energy(grid, qc - step * dq, p)) / (2 * step)
        exact = -grid.integrate(ta.frob(H, coeff_field_to_matrix(dq)))
        worst = max(worst, abs(fd - exact) / max(abs(exact), 1e-300))
    return CheckResult("variational H = -dF/dQ", worst, 1e-6)


def low_order_structure(rng, n=10_000, step=1e-5):
    """A = Dg by central differences, [A, Q] = 0 and A:(WQ - QW) = 0."""
    p = ta.BulkParams(a=-0.6, b=1.1, c=0.8, xi=0.4)
    q = ta.random_traceless(rng, n)
    P = ta.random_traceless(rng, n)
    _, A = ta.low_order_potential_and_force(q, p)
    gp, _ = ta.low_order_potential_and_force(q + step * P, p)
    gm, _ = ta.low_order_potential_and_force(q - step * P, p)
    fd = (gp - gm) / (2 * step)
    ex = ta.frob(A, P)
    fd_err = float((np.abs(fd - ex) / np.maximum(np.abs(ex), 1.0)).max())
    w = rng.standard_normal((n, 3, 3))
    w = w - np.swapaxes(w, -1, -2)
    scale = np.sqrt(ta.frob(A, A) * ta.frob(q, q) * ta.frob(w, w)) + 1e-300
    rot = float((np.abs(ta.frob(A, w @ q - q @ w)) / scale).max())
    comm = A @ q - q @ A
    com = float((np.abs(comm).max(axis=(-2, -1)) / scale).max())
    # (A, S) directly and through the expanded two-term form
    gu = ta.random_tracefree_gradient(rng, n)
    S = ta.stretching(gu, q, p.xi)
    G = q + ta.I3 / 3.0
    trqgu = ta.trace(q @ gu)
    direct = ta.frob(A, S)
    expanded = 2 * p.xi * ta.frob(A @ G, gu) - 2 * p.xi * ta.frob(A, G) * trqgu
    # |S| <= C |grad u| (1 + |Q|)^2, so this scale cannot cancel
    qn = np.sqrt(ta.frob(q, q))
    bound = np.sqrt(ta.frob(A, A) * ta.frob(gu, gu)) * (1.0 + qn) ** 2 + 1e-300
    exp_err = float((np.abs(direct - expanded) / bound).max())
    return [CheckResult("chain-rule force A = Dg", fd_err, 1e-6),
            CheckResult("A commutes with Q", max(rot, com), 1e-12),
            CheckResult("(A,S) expansion", exp_err, 1e-12)]


def uniaxial_closure(rng, n=10_000):
    """B(q A0) and H(q A0, lap q A0) stay on the A0 line with the scalar law."""
    p = ta.BulkParams(L=rng.uniform(0.1, 2), a=rng.normal(), b=rng.normal(), c=rng.normal())
    q = rng.uniform(-3, 3, size=(n, 1, 1))
    lq = rng.uniform(-3, 3, size=(n, 1, 1))
    B = ta.bulk_force(q * ta.A0, p)
    H = ta.molecular_field(q * ta.A0, lq * ta.A0, p)
    wantB = (p.b * q ** 2 - 6 * p.c * q ** 3) * ta.A0
    wantH = (p.L * lq - p.a * q + p.b * q ** 2 - 6 * p.c * q ** 3) * ta.A0
    err = max(float((np.abs(B - wantB) / (1 + np.abs(wantB))).max()),
              float((np.abs(H - wantH) / (1 + np.abs(wantH))).max()))
    return CheckResult("uniaxial closure", err, 1e-13)


def sample_tensors(rng, n, qmax=10.0):
    """Random S^3_0 samples: uniform radius in [0, qmax], plus the A0 line."""
    dirs = ta.random_traceless(rng, n)
    dirs /= np.sqrt(ta.frob(dirs, dirs))[..., None, None]
    r = rng.uniform(0.0, qmax, size=(n, 1, 1))
    q = r * dirs
    m = min(n, 2001)
    line = np.linspace(-qmax, qmax, m)[:, None, None] * ta.A0 / np.sqrt(6.0)
    q[:m] = line
    return q


def coercivity(rng, triples=CONSTANT_TRIPLES, n=1_000_000, chunk=200_000):
    """bulk(Q) >= -C|Q|^2 + c0|Q|^4 on sampled Q; worst normalised violation."""
    worst, detail = -np.inf, {}
    for a, b, c in triples:
        p = ta.BulkParams(a=a, b=b, c=c)
        C, c0 = ta.coercivity_constants(p)
        w = -np.inf
        for k in range(0, n, chunk):
            q = sample_tensors(rng, min(chunk, n - k))
            s = ta.frob(q, q)
            slack = ta.bulk_density(q, p) - (-C * s + c0 * s ** 2)
            w = max(w, float((-slack / (1.0 + s ** 2)).max()))
        detail[(a, b, c)] = (C, c0, w)
        worst = max(worst, w)
    return CheckResult("coercivity constants", max(worst, 0.0) + 0.0, 1e-13, detail)


def tail_constants(rng, triples=CONSTANT_TRIPLES, n=1_000_000, chunk=200_000, L=0.5):
    """Modified bound with M: e + M|Q|^2/2 >= c0(|u|^2 + |gQ|^2 + |Q|^2 + |Q|^4)."""
    worst, detail = -np.inf, {}
    for a, b, c in triples:
        p = ta.BulkParams(L=L, a=a, b=b, c=c)
        tc = select_M(p)
        w = -np.inf
        for k in range(0, n, chunk):
            m = min(chunk, n - k)
            q = sample_tensors(rng, m)
            s = ta.frob(q, q)
            u2 = rng.uniform(0, 100, m)
            g2 = rng.uniform(0, 100, m)
            lhs = 0.5 * u2 + 0.5 * p.L * g2 + ta.bulk_density(q, p) + 0.5 * tc.M * s
            rhs = tc.c0 * (u2 + g2 + s + s ** 2)
            w = max(w, float(((rhs - lhs) / (1.0 + u2 + g2 + s ** 2)).max()))
        detail[(a, b, c)] = (tc.M, tc.c0, w)
        worst = max(worst, w)
    return CheckResult("tail constant M", max(worst, 0.0) + 0.0, 1e-13, detail)


def run_suite(seed=0, xi_values=DEFAULT_XI, mutate=None, samples=1_000_000):
    if mutate is not None and mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}; choose from {MUTATIONS}")
    rng = np.random.default_rng(seed)
    out = [cancellation(rng, xi_values, mutate=mutate), stretching_closure(rng), sigma_skew(rng),
           variational(rng)]
    out += low_order_structure(rng)
    out += [uniaxial_closure(rng), coercivity(rng, n=samples), tail_constants(rng, n=samples)]
    return out
