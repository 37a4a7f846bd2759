"""Uniaxial reduction: Q = q A0 with u = 0 on a Dirichlet interval.

The scalar equation is ``q_t = Gamma (L q_xx - a q + b q^2 - 6 c q^3)`` on
``[0, ell]`` with ``q(0) = q(ell) = 0``.  The diffusion uses the second-order
centred stencil, which the type-I sine transform diagonalises, so the stiff
part is integrated exactly with an integrating factor and the reaction is
treated explicitly (the same Heun scheme as the tensor solver).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy.integrate import solve_ivp, trapezoid

from . import tensor as ta
from .dynamics import InitialData, NumericalFailure, Solver, SolverConfig
from .spectral import FieldSet, Grid

log = logging.getLogger(__name__)

_S6 = np.sqrt(6.0)


class AdaptiveFailure(NumericalFailure):
    """The step-halving loop could not produce an admissible step."""


@dataclass(frozen=True)
class ScalarRun:
    """Configuration of a scalar Dirichlet run.

    ``nodes`` is the number of intervals, so there are ``nodes - 1`` interior
    unknowns.  ``profile`` is ``sine`` (amp * sin(pi x / ell)), ``gaussian``
    (amp * exp(-(x - ell/2)^2 / (2 width^2)), tapered to zero at the ends) or
    ``custom`` with the interior values given in ``q0``.
    """

    length: float = np.pi
    nodes: int = 256
    dt: float = 1e-3
    T: float = 1.0
    Gamma: float = 1.0
    L: float = 1.0
    a: float = 0.0
    b: float = 0.0
    c: float = 1.0
    profile: str = "sine"
    amp: float = 1.0
    width: float = 0.5
    q0: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    ceiling: float = 1e6
    rel_bound: float = 0.05
    q_floor: float = 1e-3
    dt_min: float = 1e-18
    min_halvings: int = 3
    adaptive: bool = True
    record_every: int = 1

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"interval length must be positive, got {self.length}")
        if self.nodes < 4:
            raise ValueError(f"need at least 4 intervals, got {self.nodes}")
        if not (self.dt > 0 and self.T >= 0):
            raise ValueError("dt must be positive and T non-negative")
        if not (self.Gamma > 0 and self.L > 0):
            raise ValueError("Gamma and L must be positive")
        if self.profile not in ("sine", "gaussian", "custom"):
            raise ValueError(f"unknown profile {self.profile!r}")
        if self.profile == "custom":
            if self.q0 is None or np.shape(self.q0) != (self.nodes - 1,):
                raise ValueError(f"custom profile needs {self.nodes - 1} interior values")

    @property
    def h(self):
        return self.length / self.nodes

    @property
    def x(self):
        """All nodes including both boundary points."""
        return np.linspace(0.0, self.length, self.nodes + 1)

    @property
    def lambda1(self):
        return (np.pi / self.length) ** 2

    def initial_profile(self):
        """Interior values of q at t = 0."""
        xi = self.x[1:-1]
        if self.profile == "sine":
            return self.amp * np.sin(np.pi * xi / self.length)
        if self.profile == "gaussian":
            g = np.exp(-0.5 * ((xi - 0.5 * self.length) / self.width) ** 2)
            return self.amp * g * np.sin(np.pi * xi / self.length)
        return np.array(self.q0, dtype=float)


@dataclass
class BlowupReport:
    """Outcome of a scalar run; series are sampled at accepted steps."""

    times: np.ndarray
    max_q: np.ndarray
    min_q: np.ndarray
    moment: np.ndarray
    dts: np.ndarray
    lambda1: float
    blowup: bool
    blowup_time: Optional[float]
    threshold: Optional[float]
    threshold_time: Optional[float]
    growth_exponent: Optional[float]
    halvings: int
    comparison: Optional[np.ndarray]
    comparison_valid: bool
    final_q: np.ndarray
    sign: float = 1.0

    @property
    def nonnegative(self):
        return bool(np.all(self.min_q >= -1e-12 * np.maximum(1.0, self.max_q)))

    def dominates_comparison(self, rtol=1e-9):
        """True if m(t) >= comparison(t) at every sample after the threshold."""
        if self.comparison is None or self.threshold_time is None:
            return False
        sel = (self.times >= self.threshold_time) & np.isfinite(self.comparison)
        if not sel.any():
            return False
        m, y = self.sign * self.moment[sel], self.sign * self.comparison[sel]
        return bool(np.all(m >= y - rtol * np.abs(y)))

    def moment_eventually_increasing(self):
        if self.threshold_time is None:
            return False
        m = self.sign * self.moment[self.times >= self.threshold_time]
        return bool(m.size > 1 and np.all(np.diff(m) > 0))

    def csv_rows(self):
        for row in zip(self.times, self.max_q, self.moment, self.dts):
            yield row


# ---------------------------------------------------------------------------
# operators

def _with_boundary(q):
    return np.concatenate(([0.0], np.asarray(q, dtype=float), [0.0]))


def fd_laplacian(q, h):
    """Centred second difference of interior values with zero boundary data."""
    qb = _with_boundary(q)
    return (qb[2:] - 2.0 * qb[1:-1] + qb[:-2]) / h ** 2


def fd_eigenvalues(nodes, h):
    """Eigenvalues of the Dirichlet second-difference matrix, modes 1..nodes-1."""
    j = np.arange(1, nodes)
    return -(4.0 / h ** 2) * np.sin(j * np.pi / (2.0 * nodes)) ** 2


def reaction(q, Gamma, a, b, c):
    return Gamma * (-a * q + b * q ** 2 - 6.0 * c * q ** 3)


def scalar_rhs(q, cfg: ScalarRun):
    """Full tendency Gamma (L q_xx - a q + b q^2 - 6 c q^3) at interior nodes."""
    q = np.asarray(q, dtype=float)
    if q.shape != (cfg.nodes - 1,):
        raise ValueError(f"expected {cfg.nodes - 1} interior values, got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise NumericalFailure("non-finite value in scalar profile")
    out = cfg.Gamma * cfg.L * fd_laplacian(q, cfg.h) + reaction(q, cfg.Gamma, cfg.a, cfg.b, cfg.c)
    if not np.all(np.isfinite(out)):
        raise NumericalFailure("non-finite scalar tendency")
    return out


def kaplan_moment(q, length, *, interior=True):
    """Trapezoid value of the integral of q sin(pi x / ell) over [0, ell]."""
    q = np.asarray(q, dtype=float)
    qb = _with_boundary(q) if interior else q
    x = np.linspace(0.0, length, qb.size)
    return float(trapezoid(qb * np.sin(np.pi * x / length), x))


# ---------------------------------------------------------------------------
# stepping

class _Stepper:
    """Integrating-factor Heun steps in the sine basis; dt may be halved."""

    def __init__(self, cfg: ScalarRun, dt):
        self.cfg = cfg
        self.lam = cfg.Gamma * cfg.L * fd_eigenvalues(cfg.nodes, cfg.h)
        self.set_dt(dt)

    def set_dt(self, dt):
        self.dt = dt
        self.E = np.exp(self.lam * dt)

    def reaction(self, q):
        c = self.cfg
        return reaction(q, c.Gamma, c.a, c.b, c.c)

    def step(self, q, n0=None):
        dst = lambda f: sfft.dst(f, type=1, norm="ortho")
        dt, E = self.dt, self.E
        n0 = self.reaction(q) if n0 is None else n0
        v, w0 = dst(q), dst(n0)
        q1 = dst(E * (v + dt * w0))
        w1 = dst(self.reaction(q1))
        return dst(E * v + 0.5 * dt * (E * w0 + w1))


def _comparison_coefficients(cfg: ScalarRun, q0):
    """Coefficients of m' = Gamma(-k1 m + k2 m^2 + k3 m^3) and the sign of the data.

    Returns (sign, k1, k2, k3, valid).  ``sign`` flips the problem for
    non-positive data in the purely quadratic case; ``valid`` is False when
    the Jensen step does not give a lower bound for the chosen signs.
    """
    phi_int = 2.0 * cfg.length / np.pi
    sign = 1.0
    if cfg.c == 0 and cfg.b < 0:
        sign = -1.0
    data_ok = bool(np.all(sign * q0 >= 0))
    k1 = cfg.L * cfg.lambda1 + cfg.a
    bq = sign * cfg.b
    k2 = bq / phi_int
    k3 = -6.0 * cfg.c / phi_int ** 2
    valid = data_ok and cfg.c <= 0 and bq >= 0 and (cfg.c < 0 or bq > 0)
    return sign, k1, k2, k3, valid


def comparison_threshold(k1, k2, k3):
    """Smallest positive root of -k1 + k2 m + k3 m^2 (None when absent)."""
    if k1 <= 0:
        return 0.0
    if k3 > 0:
        return float((-k2 + np.sqrt(k2 ** 2 + 4.0 * k3 * k1)) / (2.0 * k3))
    if k3 == 0 and k2 > 0:
        return float(k1 / k2)
    return None


def comparison_solution(m0, t, Gamma, k1, k2, k3, cap=1e12):
    """Integrate the moment ODE; entries past its own blow-up are inf.

    With n = |m| the equation keeps its form (k2 picks up the sign of m0),
    and s = n^-2 obeys s' = -2 Gamma (-k1 s + k2 sqrt(s) + k3), which stays
    regular through the blow-up time where s crosses 0.
    """
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, np.inf)
    if t.size == 0:
        return out
    if m0 == 0:
        return np.zeros(t.shape)
    sgn = np.sign(m0)
    kk2 = sgn * k2

    def f(_, s):
        return -2.0 * Gamma * (-k1 * s + kk2 * np.sqrt(np.maximum(s, 0.0)) + k3)

    s0 = m0 ** -2.0
    sol = solve_ivp(f, (t[0], t[-1]), [s0], method="DOP853", dense_output=True,
                    rtol=1e-11, atol=1e-30)
    reach = t[-1]
    if not sol.success:
        # the step size collapses only at the kink where s hits 0
        if sol.y[0, -1] > 1e-6 * s0:
            raise NumericalFailure(f"comparison ODE failed: {sol.message}")
        reach = sol.t[-1]
    ok = t <= reach
    s = sol.sol(t[ok])[0]
    out[ok] = np.where(s > cap ** -2, sgn / np.sqrt(np.maximum(s, cap ** -2)), sgn * np.inf)
    out[~ok] = sgn * np.inf
    return out


def growth_exponent(times, qmax, decades=3.0):
    """Effective p in d|q|_inf/dt ~ |q|_inf^p over the last ``decades`` before the end."""
    times, qmax = np.asarray(times), np.asarray(qmax)
    if qmax.size < 4 or qmax[-1] <= 0:
        return None
    sel = qmax >= qmax[-1] / 10.0 ** decades
    t, y = times[sel], qmax[sel]
    dt, dy = np.diff(t), np.diff(y)
    good = (dt > 0) & (dy > 0)
    if good.sum() < 3:
        return None
    rate = dy[good] / dt[good]
    mid = np.sqrt(y[:-1][good] * y[1:][good])
    return float(np.polyfit(np.log(mid), np.log(rate), 1)[0])


def run_scalar(cfg: ScalarRun) -> BlowupReport:
    q = cfg.initial_profile()
    stepper = _Stepper(cfg, cfg.dt)
    t, n, halvings = 0.0, 0, 0
    times, qmax, qmin, mom, dts = [0.0], [np.abs(q).max()], [q.min()], [kaplan_moment(q, cfg.length)], [cfg.dt]
    blowup, t_blow = False, None
    tol_t = 1e-12 * max(1.0, cfg.T)

    while t < cfg.T - tol_t:
        if stepper.dt > cfg.T - t:
            stepper.set_dt(cfg.T - t)
        n0 = stepper.reaction(q)
        if cfg.adaptive:
            scale = max(np.abs(q).max(), cfg.q_floor)
            while stepper.dt * np.abs(n0).max() > cfg.rel_bound * scale:
                stepper.set_dt(0.5 * stepper.dt)
                halvings += 1
                if stepper.dt < cfg.dt_min:
                    raise AdaptiveFailure(
                        f"time step fell below {cfg.dt_min:g} after {halvings} halvings", t)
        qn = stepper.step(q, n0)
        if not np.all(np.isfinite(qn)):
            raise AdaptiveFailure("non-finite scalar state", t + stepper.dt)
        q, t, n = qn, t + stepper.dt, n + 1
        top = float(np.abs(q).max())
        done = top >= cfg.ceiling and halvings >= cfg.min_halvings
        if n % cfg.record_every == 0 or done or t >= cfg.T - tol_t:
            times.append(t)
            qmax.append(top)
            qmin.append(float(q.min()))
            mom.append(kaplan_moment(q, cfg.length))
            dts.append(stepper.dt)
        if done:
            blowup, t_blow = True, t
            break

    times, qmax, qmin, mom, dts = map(np.asarray, (times, qmax, qmin, mom, dts))
    q0 = cfg.initial_profile()
    sign, k1, k2, k3, valid = _comparison_coefficients(cfg, q0)
    thr = comparison_threshold(k1, k2, k3) if (k2 > 0 or k3 > 0) else None
    comp = comparison_solution(sign * mom[0], times, cfg.Gamma, k1, k2, k3) * sign
    t_thr = None
    if thr is not None:
        above = np.nonzero(sign * mom > thr)[0]
        if above.size:
            # first sample after which the moment stays above the threshold
            below = np.nonzero(sign * mom <= thr)[0]
            first = 0 if below.size == 0 else below[-1] + 1
            if first < mom.size:
                t_thr = float(times[first])
    return BlowupReport(
        times=times, max_q=qmax, min_q=qmin, moment=mom, dts=dts, lambda1=cfg.lambda1,
        blowup=blowup, blowup_time=t_blow, threshold=thr, threshold_time=t_thr,
        growth_exponent=growth_exponent(times, qmax) if blowup else None,
        halvings=halvings, comparison=comp, comparison_valid=valid, final_q=q, sign=sign)


# ---------------------------------------------------------------------------
# embedding into the tensor solver

def embedding_grid(length, n=(64, 8, 8), box_yz=1.0, workers=1) -> Grid:
    """Torus whose first period is twice the interval (odd reflection)."""
    return Grid(n, box=(length / np.pi, box_yz, box_yz), workers=workers)


def _check_compatible(grid: Grid, nodes):
    half = grid.shape[0] // 2
    if nodes % half:
        raise ValueError(f"scalar intervals ({nodes}) must be a multiple of N1/2 = {half}")


def embed_uniaxial(q, grid: Grid, length=None) -> FieldSet:
    """FieldSet with Q = q(x1) A0 and u = 0.

    ``q`` is either a constant (Q = q A0 everywhere) or the full nodal profile
    on ``[0, ell]`` including both zero boundary values; it is sampled at the
    tensor nodes and extended oddly to ``[ell, 2 ell)``.
    """
    n1 = grid.shape[0]
    Qc = np.zeros((5,) + grid.shape)
    if np.ndim(q) == 0:
        Qc[0] = _S6 * float(q)
    else:
        q = np.asarray(q, dtype=float)
        nodes = q.size - 1
        _check_compatible(grid, nodes)
        if length is not None and not np.isclose(grid.lengths[0], 2.0 * length):
            raise ValueError("grid period along x1 must be twice the interval length")
        stride = nodes // (n1 // 2)
        half = q[::stride]                       # n1/2 + 1 samples on [0, ell]
        line = np.concatenate((half[:-1], -half[:0:-1]))
        Qc[0] = _S6 * line[:, None, None]
    u = np.zeros((3,) + grid.shape)
    return FieldSet.from_physical(grid, Qc, u, 0.0)


def extract_uniaxial(state: FieldSet):
    """(q on [0, ell] at tensor nodes, max deviation from the uniaxial class).

    The deviation also measures any dependence on x2, x3.
    """
    Q = state.Q
    n1 = state.grid.shape[0]
    q_line = Q[0, :, 0, 0] / _S6
    off = float(np.abs(Q[1:]).max(initial=0.0))
    transverse = float(np.abs(Q[0] - Q[0, :, :1, :1]).max()) / _S6
    return q_line[: n1 // 2 + 1], max(off, transverse)


@dataclass
class ComparisonResult:
    times: np.ndarray
    max_diff: np.ndarray
    max_nonuniaxial: np.ndarray
    max_u: np.ndarray

    def passed(self, tol=1e-8, uniaxial_tol=1e-10):
        return bool(self.max_diff.max() <= tol and self.max_nonuniaxial.max() <= uniaxial_tol)


def compare_uniaxial(scfg: ScalarRun, n=(64, 8, 8), every=1, workers=1,
                     on_sample=None) -> ComparisonResult:
    """Run the scalar and tensor solvers side by side with the same dt.

    The tensor run uses xi = 0 and a frozen zero velocity.  Only b = 0 is
    accepted: the odd reflection is a solution of the periodic problem only
    when the reaction is odd in q.
    """
    if scfg.b != 0:
        raise ValueError("the odd-reflection embedding needs b = 0")
    grid = embedding_grid(scfg.length, n, workers=workers)
    _check_compatible(grid, scfg.nodes)
    p = ta.BulkParams(L=scfg.L, mu=1.0, Gamma=scfg.Gamma, a=scfg.a, b=scfg.b, c=scfg.c,
                      xi=0.0, eps=0.0)
    tcfg = SolverConfig(params=p, n=tuple(grid.shape), box=grid.box, dt=scfg.dt, T=scfg.T,
                        order=2, initial=InitialData(kind="zero"), freeze_velocity=True,
                        cfl_max=np.inf, workers=workers)
    solver = Solver(tcfg, grid=grid)
    q = scfg.initial_profile()
    state = embed_uniaxial(_with_boundary(q), grid, scfg.length)
    stepper = _Stepper(scfg, scfg.dt)
    stride = scfg.nodes // (grid.shape[0] // 2)
    nsteps = int(round(scfg.T / scfg.dt))

    times, diffs, devs, umax = [], [], [], []

    def sample(t, q, st):
        qt, dev = extract_uniaxial(st)
        d = float(np.abs(_with_boundary(q)[::stride] - qt).max())
        times.append(t)
        diffs.append(d)
        devs.append(dev)
        umax.append(float(np.abs(st.u).max()))
        if on_sample is not None:
            on_sample(t, d, dev)

    sample(0.0, q, state)
    for k in range(1, nsteps + 1):
        q = stepper.step(q)
        state, _ = solver.step(state)
        if k % every == 0 or k == nsteps:
            sample(state.t, q, state)
    return ComparisonResult(np.asarray(times), np.asarray(diffs), np.asarray(devs),
                            np.asarray(umax))
