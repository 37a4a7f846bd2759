"""Time integration of the hyperviscous Beris-Edwards system on a torus.

Stiff linear terms (Gamma*L*lap Q, mu*lap u, -eps*lap^2 u) are integrated
exactly with a per-mode integrating factor; everything else is explicit.
Order 1 is integrating-factor Euler, order 2 the integrating-factor Heun
scheme.
"""
from __future__ import annotations

import logging
import struct
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import tensor as ta
from .fields import evaluate, stress_divergence_hat
from .spectral import FieldSet, Grid, matrix_to_coeff_field

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"BELH"
CHECKPOINT_VERSION = 1


class NumericalFailure(RuntimeError):
    def __init__(self, msg, t=None):
        super().__init__(msg if t is None else f"{msg} (t={t!r})")
        self.t = t


class StepRejected(NumericalFailure):
    pass


@dataclass(frozen=True)
class InitialData:
    """Descriptor of the initial state.

    kind: ``random`` (seeded smooth spectrum), ``gaussian`` (localized blob),
    ``uniaxial`` (q(x1) A0 with a sine profile), ``zero`` or ``checkpoint``.
    """

    kind: str = "random"
    seed: int = 0
    u_rms: float = 0.1
    q_rms: float = 0.1
    u_k0: float = 2.0
    q_k0: float = 2.0
    width: float = 1.0
    u_amp: float = 0.1
    q_amp: float = 0.1
    path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("random", "gaussian", "uniaxial", "zero", "checkpoint"):
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.kind == "checkpoint" and not self.path:
            raise ValueError("checkpoint initial data needs a path")


@dataclass(frozen=True)
class SolverConfig:
    params: ta.BulkParams = field(default_factory=ta.BulkParams)
    n: tuple = (16, 16, 16)
    box: tuple = (1.0, 1.0, 1.0)
    dt: float = 1e-2
    T: float = 0.1
    order: int = 2
    dealias: bool = True
    initial: InitialData = field(default_factory=InitialData)
    cadence: int = 1
    tail_radii: tuple = ()
    cfl_max: float = 0.4
    div_tol: float = 1e-10
    q_tol: float = 1e-12
    freeze_velocity: bool = False
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.T < 0 or (self.T > 0 and self.T < self.dt * (1 - 1e-12)):
            raise ValueError("T must be 0 or at least dt")
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")

    def grid(self) -> Grid:
        return Grid(self.n, self.box, workers=self.workers)

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class StepReport:
    time: float
    cfl: float
    max_q: float
    max_u: float
    div_norm: float
    q_trace_drift: float
    q_asym_drift: float
    tail_fraction: float
    wall: float
    flagged: bool = False


# ---------------------------------------------------------------------------
# right-hand sides

def linear_symbols(grid: Grid, p: ta.BulkParams):
    """Per-mode stiff linear rates (Q, u)."""
    return -p.Gamma * p.L * grid.k2, -p.mu * grid.k2 - p.eps * grid.k4


def _check_finite(arr, what, t):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in {what}", t)


def explicit_tendencies(grid: Grid, Q_hat, u_hat, p: ta.BulkParams, *, dealias=True,
                        freeze_velocity=False, t=None):
    """Explicit spectral tendencies (dQ, du) without the stiff linear terms."""
    f = evaluate(grid, Q_hat, u_hat, p)
    nq = -f.transport + f.S + p.Gamma * (-p.a * f.Q + f.B)
    nq_h = grid.forward(matrix_to_coeff_field(nq))
    if freeze_velocity:
        nu_h = np.zeros_like(u_hat)
    else:
        nu_h = stress_divergence_hat(grid, f.tau + f.sigma) - grid.forward(f.advection)
    if dealias:
        nq_h, nu_h = grid.dealias(nq_h), grid.dealias(nu_h)
    nu_h = grid.leray(nu_h)
    _check_finite(nq_h, "Q tendency", t)
    _check_finite(nu_h, "u tendency", t)
    return nq_h, nu_h


def rhs_Q(state: FieldSet, p: ta.BulkParams, dealias=True):
    """(explicit Q tendency, stiff linear symbol) in spectral space."""
    nq, _ = explicit_tendencies(state.grid, state.Q_hat, state.u_hat, p, dealias=dealias,
                                freeze_velocity=True, t=state.t)
    return nq, linear_symbols(state.grid, p)[0]


def rhs_u(state: FieldSet, p: ta.BulkParams, dealias=True):
    """(projected explicit u tendency, stiff linear symbol) in spectral space."""
    _, nu = explicit_tendencies(state.grid, state.Q_hat, state.u_hat, p, dealias=dealias, t=state.t)
    return nu, linear_symbols(state.grid, p)[1]


# ---------------------------------------------------------------------------
# stepping

class Solver:
    """Owns the cached operators for one configuration.

    ``forcing(t)`` may return additive spectral sources (fQ_hat, fu_hat); it is
    used by manufactured-solution tests.
    """

    def __init__(self, cfg: SolverConfig, grid: Grid | None = None,
                 forcing: Callable | None = None):
        self.cfg = cfg
        self.grid = grid or cfg.grid()
        self.forcing = forcing
        lq, lu = linear_symbols(self.grid, cfg.params)
        self._eq = np.exp(lq * cfg.dt)
        # a frozen velocity is held fixed, not left to decay viscously
        self._eu = np.ones_like(lu) if cfg.freeze_velocity else np.exp(lu * cfg.dt)
        self._dxmin = min(self.grid.dx)

    def tendencies(self, Qh, uh, t):
        c = self.cfg
        nq, nu = explicit_tendencies(self.grid, Qh, uh, c.params, dealias=c.dealias,
                                     freeze_velocity=c.freeze_velocity, t=t)
        if self.forcing is not None:
            fq, fu = self.forcing(t)
            nq = nq + fq
            if not c.freeze_velocity:
                nu = nu + fu
        return nq, nu

    def cfl(self, state: FieldSet):
        p = self.cfg.params
        umax = float(np.sqrt(np.sum(state.u ** 2, axis=0)).max())
        qmax = float(np.sqrt(np.sum(state.Q ** 2, axis=0)).max())
        stiff = p.Gamma * (abs(p.a) + 2 * abs(p.b) * qmax + 3 * abs(p.c) * qmax ** 2)
        return umax * self.cfg.dt / self._dxmin + stiff * self.cfg.dt, umax, qmax

    def step(self, state: FieldSet):
        t0 = time.perf_counter()
        c = self.cfg
        dt = c.dt
        cfl, umax, qmax = self.cfl(state)
        if cfl > c.cfl_max:
            raise StepRejected(f"CFL number {cfl:.3g} exceeds bound {c.cfl_max}", state.t)
        Qh, uh = state.Q_hat, state.u_hat
        eq, eu = self._eq, self._eu
        nq0, nu0 = self.tendencies(Qh, uh, state.t)
        Q1 = eq * (Qh + dt * nq0)
        u1 = eu * (uh + dt * nu0)
        if c.order == 1:
            Qn, un = Q1, u1
        else:
            nq1, nu1 = self.tendencies(Q1, u1, state.t + dt)
            Qn = eq * Qh + 0.5 * dt * (eq * nq0 + nq1)
            un = eu * uh + 0.5 * dt * (eu * nu0 + nu1)
        g = self.grid
        new = FieldSet.from_physical(g, g.inverse(Qn), g.inverse(un), state.t + dt,
                                     dealias=c.dealias)
        _check_finite(new.Q_hat, "Q", new.t)
        _check_finite(new.u_hat, "u", new.t)
        rep = self._report(new, cfl, time.perf_counter() - t0)
        if rep.flagged:
            raise StepRejected(
                f"constraint drift: div {rep.div_norm:.3e}, tr Q {rep.q_trace_drift:.3e}, "
                f"asym Q {rep.q_asym_drift:.3e}", new.t)
        return new, rep

    def _report(self, s: FieldSet, cfl, wall):
        g = self.grid
        dn = s.div_norm()
        gu = np.sqrt(sum(g.spectral_norm2(x) for x in g.grad(s.u_hat)))
        tr, asym = s.q_constraint_drift()
        qmax = float(np.sqrt(np.sum(s.Q ** 2, axis=0)).max())
        umax = float(np.sqrt(np.sum(s.u ** 2, axis=0)).max())
        flagged = (dn > self.cfg.div_tol * max(1.0, gu)
                   or max(tr, asym) > self.cfg.q_tol * max(1.0, qmax))
        return StepReport(time=s.t, cfl=cfl, max_q=qmax, max_u=umax, div_norm=dn,
                          q_trace_drift=tr, q_asym_drift=asym,
                          tail_fraction=spectral_tail_fraction(g, s), wall=wall,
                          flagged=bool(flagged))


def spectral_tail_fraction(grid: Grid, s: FieldSet):
    """Share of Q and u energy in the outer third of the retained band."""
    mi = grid.mode_index
    n = np.maximum(np.maximum(mi[0].reshape(-1, 1, 1), mi[1].reshape(1, -1, 1)),
                   mi[2].reshape(1, 1, -1))
    outer = n > (2.0 / 9.0) * min(grid.shape)
    e = grid.half_weights * ((np.abs(s.Q_hat) ** 2).sum(0) + (np.abs(s.u_hat) ** 2).sum(0))
    tot = e.sum()
    return float(e[outer].sum() / tot) if tot > 0 else 0.0


def step(state: FieldSet, cfg: SolverConfig):
    return Solver(cfg, grid=state.grid).step(state)


# ---------------------------------------------------------------------------
# initial data

def _smooth_noise(grid: Grid, rng, ncomp, k0):
    noise = rng.standard_normal((ncomp,) + grid.shape)
    h = grid.forward(noise) * np.exp(-0.5 * grid.k2 / k0 ** 2)
    h[(slice(None), 0, 0, 0)] = 0.0
    return h


def _rescale_rms(grid, h, rms):
    cur = np.sqrt(grid.spectral_norm2(h) / grid.volume)
    return h * (rms / cur) if cur > 0 else h


def initial_state(cfg: SolverConfig, grid: Grid | None = None) -> FieldSet:
    grid = grid or cfg.grid()
    ini = cfg.initial
    zQ = np.zeros((5,) + grid.shape)
    zu = np.zeros((3,) + grid.shape)
    if ini.kind == "zero":
        return FieldSet.from_physical(grid, zQ, zu, dealias=cfg.dealias)
    if ini.kind == "checkpoint":
        fs, _ = read_checkpoint(ini.path, workers=cfg.workers)
        if not fs.grid.same_as(grid):
            raise ValueError(f"checkpoint grid {fs.grid} does not match config grid {grid}")
        return fs
    rng = np.random.default_rng(ini.seed)
    if ini.kind == "random":
        uh = grid.leray(grid.dealias(_smooth_noise(grid, rng, 3, ini.u_k0)))
        qh = grid.dealias(_smooth_noise(grid, rng, 5, ini.q_k0))
        uh = _rescale_rms(grid, uh, ini.u_rms)
        qh = _rescale_rms(grid, qh, ini.q_rms)
        return FieldSet.from_physical(grid, grid.inverse(qh), grid.inverse(uh),
                                      dealias=cfg.dealias)
    x = grid.coords()
    if ini.kind == "uniaxial":
        q = ini.q_amp * np.sin(x[0] / grid.box[0]) * np.ones(grid.shape)
        Q = zQ.copy()
        Q[0] = np.sqrt(6.0) * q
        return FieldSet.from_physical(grid, Q, zu, dealias=cfg.dealias)
    # gaussian blob at the box centre
    c = grid.center()
    r2 = sum((xi - ci) ** 2 for xi, ci in zip(x, c))
    env = np.exp(-0.5 * r2 / ini.width ** 2)
    direction = rng.standard_normal(5)
    direction /= np.linalg.norm(direction)
    Q = ini.q_amp * direction[:, None, None, None] * env
    psi = ini.u_amp * ini.width * env
    psih = grid.forward(psi)
    # u = curl(psi e3) is divergence free and localized
    u = np.stack([grid.inverse(1j * grid.k[1] * psih), grid.inverse(-1j * grid.k[0] * psih),
                  np.zeros(grid.shape)])
    return FieldSet.from_physical(grid, Q, u, dealias=cfg.dealias)


# ---------------------------------------------------------------------------
# checkpoints

_HEADER = struct.Struct("<4sI3I3d8dd")


def write_checkpoint(path, state: FieldSet, p: ta.BulkParams):
    g = state.grid
    Q, u = state.physical_payload()
    head = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, *g.shape, *g.box,
                        *p.as_tuple(), state.t)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(head)
        fh.write(np.ascontiguousarray(Q, dtype="<f8").tobytes(order="C"))
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes(order="C"))
    tmp.replace(path)


def read_checkpoint(path, workers=1):
    """Return (FieldSet, BulkParams) stored at ``path``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint")
    magic, version, n1, n2, n3, r1, r2, r3, *rest = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    params = ta.BulkParams(*rest[:8])
    t = rest[8]
    grid = Grid((n1, n2, n3), (r1, r2, r3), workers=workers)
    npts = n1 * n2 * n3
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 8 * npts:
        raise ValueError(f"{path}: expected {8 * npts} values, found {body.size}")
    arr = body.reshape((8,) + grid.shape).astype(float)
    return FieldSet.from_physical(grid, arr[:5], arr[5:], t), params


# ---------------------------------------------------------------------------
# driver

def run(cfg: SolverConfig, *, state: FieldSet | None = None, on_record=None, on_step=None,
        checkpoint_every=0, checkpoint_path=None, record_fn=None):
    """Integrate to ``cfg.T``.

    Returns (final state, list of diagnostics records).  ``record_fn`` builds
    a record from a state (defaults to ``diagnostics.compute_record``);
    ``on_record`` is called with each record as soon as it exists.
    """
    from . import diagnostics

    solver = Solver(cfg)
    grid = solver.grid
    s = state if state is not None else initial_state(cfg, grid)
    cutoffs = [diagnostics.CutoffProfile(grid, R) for R in cfg.tail_radii]
    make = record_fn or (lambda st: diagnostics.compute_record(st, cfg.params, cfg.tail_radii,
                                                                 cutoffs))
    records = []

    def emit(st):
        rec = make(st)
        records.append(rec)
        if on_record is not None:
            on_record(rec)

    nsteps = int(round((cfg.T - s.t) / cfg.dt)) if cfg.T > s.t else 0
    emit(s)
    for n in range(1, nsteps + 1):
        s, rep = solver.step(s)
        if on_step is not None:
            on_step(rep)
        if n % cfg.cadence == 0 or n == nsteps:
            emit(s)
        if checkpoint_every and checkpoint_path and n % checkpoint_every == 0:
            write_checkpoint(checkpoint_path, s, cfg.params)
    return s, records
