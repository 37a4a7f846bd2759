"""Energy ledgers evaluated along discrete trajectories.

A record holds instantaneous integrals; the ledger functions turn a series of
records into residual curves using trapezoidal time integrals, so every
residual is a linear combination of recorded columns.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import tensor as ta
from .fields import LocalFields, evaluate
from .spectral import FieldSet, Grid, solve_pressure


@dataclass(frozen=True)
class TailConstants:
    M: float
    c0: float


def select_M(p: ta.BulkParams) -> TailConstants:
    """Choose M >= 1 and c0 > 0 for the modified pointwise coercivity bound.

    bulk(Q) >= (a/2 - 2b^2/(3c))|Q|^2 + (c/8)|Q|^4, so with
    c0 = min(1/2, L/2, c/8) any M >= 2(c0 + 2b^2/(3c) - a/2) works.
    """
    if not p.c > 0:
        raise ValueError("tail constants need c > 0")
    c0 = min(0.5, 0.5 * p.L, p.c / 8.0)
    M = max(1.0, 2.0 * (c0 + 2.0 * p.b ** 2 / (3.0 * p.c) - 0.5 * p.a))
    return TailConstants(M=M, c0=c0)


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _smoothstep_d1(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 30.0 * s ** 2 * (1.0 - s) ** 2, 0.0)


def _smoothstep_d2(s):
    inside = (s > 0) & (s < 1)
    return np.where(inside, 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s), 0.0)


class CutoffProfile:
    """eta_R: 0 on the ball of radius R about the box centre, 1 beyond 2R.

    The ramp is the quintic smoothstep in |x - centre|.  ``R = 0`` gives
    eta = 1 everywhere.  Derivatives are analytic, not spectral.
    """

    def __init__(self, grid: Grid, R: float):
        self.R = float(R)
        self.grid = grid
        shape = grid.shape
        if self.R == 0:
            self.eta = np.ones(shape)
            self.grad = np.zeros((3,) + shape)
            self.lap = np.zeros(shape)
            self.constant = 0.0
            self.periodic_ok = True
            return
        x = grid.coords()
        c = grid.center()
        d = [np.broadcast_to(xi - ci, shape) for xi, ci in zip(x, c)]
        r = np.sqrt(sum(di ** 2 for di in d))
        s = (r - self.R) / self.R
        self.eta = _smoothstep(s)
        d1 = _smoothstep_d1(s) / self.R
        d2 = _smoothstep_d2(s) / self.R ** 2
        rs = np.where(r > 0, r, 1.0)
        self.grad = np.stack([d1 * di / rs for di in d])
        self.lap = d2 + 2.0 * d1 / rs
        gmax = np.sqrt((self.grad ** 2).sum(0)).max()
        self.constant = float(max(self.R * gmax, self.R ** 2 * np.abs(self.lap).max()))
        # once the ramp reaches the box edge eta is no longer periodic-smooth
        self.periodic_ok = 2 * self.R <= min(grid.lengths) / 2

    @property
    def support_grad(self):
        return np.sqrt((self.grad ** 2).sum(0)) > 0


@dataclass
class TailRecord:
    R: float
    Y: float
    local_energy: float
    local_diss: float
    flux: float
    hyp_comm: float
    hyp_weighted: float
    hyp_edge: float


@dataclass
class DiagnosticsRecord:
    time: float
    kinetic: float
    free_energy: float
    gradu_sq: float
    lapu_sq: float
    H_sq: float
    diss_visc: float
    diss_hyper: float
    diss_relax: float
    q_sq: float
    gradq_sq: float
    lapq_sq: float
    q4: float
    G: float
    A_S: float
    A_S_expanded: float
    A_H: float
    B_Q: float
    B_lapQ: float
    xi_line1: float
    xi_line2: float
    tails: list = field(default_factory=list)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "tails":
                continue
            if not np.isfinite(getattr(self, f.name)):
                raise FloatingPointError(f"non-finite diagnostic {f.name}")


BASE_COLUMNS = [f.name for f in fields(DiagnosticsRecord) if f.name != "tails"]
TAIL_COLUMNS = ["Y", "local_energy", "local_diss", "flux", "hyp_comm", "hyp_weighted", "hyp_edge"]


def csv_header(radii):
    cols = list(BASE_COLUMNS)
    for R in radii:
        cols += [f"{c}_R{R:g}" for c in TAIL_COLUMNS]
    return cols


def csv_row(rec: DiagnosticsRecord):
    vals = [getattr(rec, c) for c in BASE_COLUMNS]
    for tr in rec.tails:
        vals += [getattr(tr, c) for c in TAIL_COLUMNS]
    return ["%.17g" % v for v in vals]


def write_csv(records, fh, radii=None):
    radii = radii if radii is not None else [t.R for t in records[0].tails] if records else []
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(csv_header(radii))
    for r in records:
        w.writerow(csv_row(r))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    write_csv(records, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# instantaneous functionals

def free_energy(state: FieldSet, p: ta.BulkParams) -> float:
    f = evaluate(state.grid, state.Q_hat, state.u_hat, p)
    return state.grid.integrate(ta.energy_density(f.Q, f.gradQ, p))


def _energy_density_full(f: LocalFields, p):
    return 0.5 * np.sum(f.u ** 2, axis=0) + ta.energy_density(f.Q, f.gradQ, p)


def tail_energy(state: FieldSet, cutoff: CutoffProfile, tc: TailConstants, p: ta.BulkParams,
                fields_=None) -> float:
    f = fields_ or evaluate(state.grid, state.Q_hat, state.u_hat, p)
    dens = _energy_density_full(f, p) + 0.5 * tc.M * ta.frob(f.Q, f.Q)
    return state.grid.integrate(cutoff.eta * dens)


def energy_flux_vector(grid: Grid, f: LocalFields, p: ta.BulkParams, pressure=None):
    """J = -u e - p u + mu (grad u)^T u + (tau+sigma)^T u + L grad Q : (S + Gamma H).

    Component index leads: shape (3, *g).
    """
    T = f.tau + f.sigma
    if pressure is None:
        pressure = solve_pressure(grid, f.u, T)
    e = _energy_density_full(f, p)
    J = -f.u * e - pressure * f.u
    J += p.mu * np.einsum("i...,...ik->k...", f.u, f.gradu)
    J += np.einsum("...ik,i...->k...", T, f.u)
    J += p.L * np.einsum("...kab,...ab->k...", f.gradQ, f.S + p.Gamma * f.H)
    return J


def flux_integral(state: FieldSet, cutoff: CutoffProfile, p: ta.BulkParams, fields_=None,
                  pressure=None) -> float:
    f = fields_ or evaluate(state.grid, state.Q_hat, state.u_hat, p)
    J = energy_flux_vector(state.grid, f, p, pressure)
    return state.grid.integrate(np.sum(J * cutoff.grad, axis=0))


def hyperviscous_commutator(grid: Grid, f: LocalFields, cutoff: CutoffProfile, eps: float):
    """-eps * int (2 d_k eta d_k u_i + lap(eta) u_i) lap u_i."""
    if eps == 0 or cutoff.R == 0:
        return 0.0
    gu = np.einsum("k...,...ik->i...", cutoff.grad, f.gradu)
    return -eps * grid.integrate(np.sum((2.0 * gu + cutoff.lap * f.u) * f.lapu, axis=0))


def compute_record(state: FieldSet, p: ta.BulkParams, radii=(), cutoffs=None) -> DiagnosticsRecord:
    g = state.grid
    f = evaluate(g, state.Q_hat, state.u_hat, p, with_lapu=True)
    I = g.integrate
    qq = ta.frob(f.Q, f.Q)
    gradu_sq = I(ta.frob(f.gradu, f.gradu))
    lapu_sq = I(np.sum(f.lapu ** 2, axis=0))
    H_sq = I(ta.frob(f.H, f.H))
    gq_sq = I(np.einsum("...kab,...kab->...", f.gradQ, f.gradQ))
    bulk = I(ta.bulk_density(f.Q, p))
    _, A = ta.low_order_potential_and_force(f.Q, p)
    G = f.Q + ta.I3 / 3.0
    trqgu = ta.trace(f.Q @ f.gradu)
    A_S = I(ta.frob(A, f.S))
    A_S_exp = I(2 * p.xi * ta.frob(A @ G, f.gradu) - 2 * p.xi * ta.frob(A, G) * trqgu)
    line1 = I(ta.frob(f.Q @ G, f.gradu) - qq * trqgu)
    line2 = I(ta.frob(f.B @ G, f.gradu) - ta.frob(f.B, f.Q) * trqgu)
    rec = DiagnosticsRecord(
        time=state.t,
        kinetic=0.5 * I(np.sum(f.u ** 2, axis=0)),
        free_energy=0.5 * p.L * gq_sq + bulk,
        gradu_sq=gradu_sq, lapu_sq=lapu_sq, H_sq=H_sq,
        diss_visc=p.mu * gradu_sq, diss_hyper=p.eps * lapu_sq, diss_relax=p.Gamma * H_sq,
        q_sq=I(qq), gradq_sq=gq_sq, lapq_sq=I(ta.frob(f.lapQ, f.lapQ)), q4=I(qq ** 2),
        G=0.5 * I(qq) - bulk,
        A_S=A_S, A_S_expanded=A_S_exp, A_H=I(ta.frob(A, f.H)),
        B_Q=I(ta.frob(f.B, f.Q)), B_lapQ=I(ta.frob(f.B, f.lapQ)),
        xi_line1=line1, xi_line2=line2,
    )
    if radii:
        cutoffs = cutoffs or [CutoffProfile(g, R) for R in radii]
        tc = select_M(p) if p.c > 0 else None
        pressure = solve_pressure(g, f.u, f.tau + f.sigma)
        e = _energy_density_full(f, p)
        J = energy_flux_vector(g, f, p, pressure)
        dens_diss = (p.mu * ta.frob(f.gradu, f.gradu) + p.Gamma * ta.frob(f.H, f.H)
                     + p.eps * np.sum(f.lapu ** 2, axis=0))
        grad_u2 = ta.frob(f.gradu, f.gradu)
        u2 = np.sum(f.u ** 2, axis=0)
        for cut in cutoffs:
            Y = (I(cut.eta * (e + 0.5 * tc.M * qq)) if tc is not None else float("nan"))
            eg2 = np.sum(cut.grad ** 2, axis=0)
            rec.tails.append(TailRecord(
                R=cut.R, Y=Y,
                local_energy=I(cut.eta * e),
                local_diss=I(cut.eta * dens_diss),
                flux=I(np.sum(J * cut.grad, axis=0)),
                hyp_comm=hyperviscous_commutator(g, f, cut, p.eps),
                hyp_weighted=p.eps * I(cut.eta * np.sum(f.lapu ** 2, axis=0)),
                hyp_edge=p.eps * I(eg2 * grad_u2 + cut.lap ** 2 * u2),
            ))
    return rec


# ---------------------------------------------------------------------------
# ledgers over a series

def column(records, name):
    return np.array([getattr(r, name) for r in records], dtype=float)


def tail_column(records, i, name):
    return np.array([getattr(r.tails[i], name) for r in records], dtype=float)


def _cumint(records, y):
    t = column(records, "time")
    if len(t) == 1:
        return np.zeros(1)
    return cumulative_trapezoid(y, t, initial=0.0)


def physical_energy_residual(records):
    E = column(records, "kinetic") + column(records, "free_energy")
    D = column(records, "diss_visc") + column(records, "diss_hyper") + column(records, "diss_relax")
    return E + _cumint(records, D) - E[0]


def total_energy(records):
    return column(records, "kinetic") + column(records, "free_energy")


def chain_rule_residual(records, p: ta.BulkParams):
    G = column(records, "G")
    return (G - G[0] - _cumint(records, column(records, "A_S"))
            - p.Gamma * _cumint(records, column(records, "A_H")))


def lh_expanded_sides(records, p: ta.BulkParams):
    """(LHS, RHS) of the expanded Leray-Hopf energy inequality at each record."""
    u2 = 2.0 * column(records, "kinetic")
    q2 = column(records, "q_sq")
    gq2 = column(records, "gradq_sq")
    ci = lambda name: _cumint(records, column(records, name))
    lhs = (u2 + q2 + p.L * gq2 + 2 * p.mu * ci("gradu_sq") + 2 * p.a * p.Gamma * ci("q_sq")
           + 2 * (p.a + 1) * p.Gamma * p.L * ci("gradq_sq") + 2 * p.Gamma * p.L ** 2 * ci("lapq_sq"))
    bq = column(records, "B_Q") - p.L * column(records, "B_lapQ")
    rhs = (u2[0] + q2[0] + p.L * gq2[0] + 2 * p.Gamma * _cumint(records, bq)
           + 4 * (1 - p.a) * p.xi * ci("xi_line1") + 4 * p.xi * ci("xi_line2"))
    return lhs, rhs


def lh_expanded_gap(records, p: ta.BulkParams):
    lhs, rhs = lh_expanded_sides(records, p)
    return rhs - lhs


def lh_combination(records, p: ta.BulkParams):
    """gap predicted from the physical and chain-rule residuals.

    gap = 2 eps int ||lap u||^2 - 2 r_phys - 2 r_chain; at eps = 0 and exact
    identities this is zero, i.e. equality.
    """
    hyper = _cumint(records, column(records, "lapu_sq"))
    return (2 * p.eps * hyper - 2 * physical_energy_residual(records)
            - 2 * chain_rule_residual(records, p))


def local_energy_residual(records, i):
    """[int eta e]_0^t + int_0^t (int eta diss + int J.grad eta - E_hyp) ds."""
    le = tail_column(records, i, "local_energy")
    src = (tail_column(records, i, "local_diss") + tail_column(records, i, "flux")
           - tail_column(records, i, "hyp_comm"))
    return le - le[0] + _cumint(records, src)


def cumulative_flux(records, i):
    return _cumint(records, tail_column(records, i, "flux"))


def hyperviscous_family_norm(records, eps):
    """sqrt(eps) * ||lap u||_{L^2(0,T;L^2)}."""
    return float(np.sqrt(eps * _cumint(records, column(records, "lapu_sq"))[-1]))


def fitted_hyper_increment(grid: Grid, uh0, uh1, eps, lam, dt):
    """eps * int ||lap u||^2 over one step, exact for the linear damped flow.

    The trapezoid rule is scaled per mode by tanh(lam dt)/(lam dt), the ratio
    of the exact integral of a decaying exponential to its trapezoid value.
    With lam = 0 this is the plain trapezoid rule.
    """
    z = -lam * dt
    fit = np.where(z > 1e-12, np.tanh(z) / np.where(z > 1e-12, z, 1.0), 1.0)
    dens = 0.5 * (np.abs(uh0) ** 2 + np.abs(uh1) ** 2).sum(axis=0)
    return float(eps * dt * np.sum(grid.half_weights * grid.k4 * fit * dens) * grid.dV)
