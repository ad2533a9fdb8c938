"""Dimensionless reactive transport in a channel with an adsorbing wall.

The channel ``[0, length] x [0, height]`` carries a unit-mean half-Poiseuille
flow. Boundaries: inlet ``x = 0`` with ``c = 1``; outlet ``x = length`` and
symmetry line ``y = height`` with zero diffusive flux; reactive wall
``y = 0`` where the flux into the wall equals the surface rate ``dm/dt``.

Space: conservative finite volumes on a uniform cell grid. Time:
Crank-Nicolson, except that the first ``startup_steps`` steps are each taken
as ``startup_substeps`` implicit-Euler substeps (Rannacher startup). Plain CN
rings on the stiff wall-exchange mode after the jump in the inlet data;
the damped startup keeps the discrete solution within the maximum-principle
tolerance at large steps without lowering the global order.
"""

from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
import csv
import math

import numpy as np

from . import _kernels as K
from ._accel import USE_NUMBA
from .errors import ConfigError, SolverError

ISOTHERMS = ("henry", "langmuir")
NEWTON_TOL = 1e-10
NEWTON_MAXIT = 50


@dataclass(frozen=True)
class TransportParams:
    pe: float = 10.0
    da_a: float = 0.0
    da_d: float = 0.0
    m_cap: float = 1000.0
    isotherm: str = "henry"
    length: float = 17.5
    height: float = 1.0
    nx: int = 176
    ny: int = 16
    dt: float = 0.1
    t_end: float = 40.0
    legacy_flux_coupling: bool = False
    startup_steps: int = 2
    startup_substeps: int = 2

    def __post_init__(self):
        if self.isotherm not in ISOTHERMS:
            raise ConfigError(f"isotherm must be one of {ISOTHERMS}, got {self.isotherm!r}")
        for name in ("pe", "length", "height", "dt", "t_end"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("da_a", "da_d"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be >= 0, got {v!r}")
        if self.isotherm == "langmuir" and not (math.isfinite(self.m_cap) and self.m_cap > 0):
            raise ConfigError(f"m_cap must be > 0 for the Langmuir isotherm, got {self.m_cap!r}")
        if self.nx < 4 or self.ny < 4:
            raise ConfigError(f"nx and ny must be >= 4, got nx={self.nx}, ny={self.ny}")
        if self.startup_steps < 0 or self.startup_substeps < 1:
            raise ConfigError("startup_steps must be >= 0 and startup_substeps >= 1")
        ratio = self.t_end / self.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError(f"t_end={self.t_end} is not a whole number of steps dt={self.dt}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def dx(self):
        return self.length / self.nx

    @property
    def dy(self):
        return self.height / self.ny

    @property
    def inv_m(self):
        return 1.0 / self.m_cap if self.isotherm == "langmuir" else 0.0

    @property
    def sink_weight(self):
        """Bulk-mass weight of one unit of adsorbed surface mass."""
        return 1.0 / self.pe if self.legacy_flux_coupling else 1.0

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class VelocityField:
    y: np.ndarray  # cell-centre ordinates
    u1: np.ndarray  # streamwise speed per row; the cross-stream speed is zero


@dataclass
class FieldState:
    c: np.ndarray  # (nx, ny)
    m: np.ndarray  # (nx,)
    t: float = 0.0
    theta: float = 0.5  # weight of the step that produced this state

    def copy(self):
        return FieldState(self.c.copy(), self.m.copy(), self.t, self.theta)


@dataclass
class BreakthroughCurve:
    times: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal lengths")

    def __len__(self):
        return self.times.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "c_out"])
            for t, v in zip(self.times, self.values):
                w.writerow([f"{t:.17g}", f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def u1_profile(y, height=1.0):
    """Unit-mean half-Poiseuille profile: zero at the wall, 1.5 on the symmetry line."""
    eta = np.asarray(y, dtype=float) / height
    return 1.5 * (2.0 * eta - eta * eta)


def poiseuille_velocity(ny, height=1.0):
    """Cell-centred profile rescaled so its discrete cross-section mean is exactly 1."""
    if ny < 4:
        raise ConfigError(f"ny must be >= 4, got {ny}")
    y = (np.arange(ny) + 0.5) * (height / ny)
    u = u1_profile(y, height)
    return VelocityField(y=y, u1=u / u.mean())


def isotherm_rate(c_wall, m, params):
    """Surface rate dm/dt for the Henry or Langmuir law."""
    if params.isotherm == "henry":
        return params.da_a * c_wall - params.da_d * m
    return params.da_a * c_wall * (1.0 - m / params.m_cap) - params.da_d * m


def langmuir_equilibrium(c, params):
    return params.da_a * params.m_cap * c / (params.da_a * c + params.da_d * params.m_cap)


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------


def assemble(params, velocity):
    """Bulk operator ``dc/dt = -L c + bsrc`` as five row-form diagonals."""
    nx, ny = params.nx, params.ny
    dx, dy = params.dx, params.dy
    n = nx * ny
    ax = 1.0 / (params.pe * dx * dx)
    ay = 1.0 / (params.pe * dy * dy)
    offs = np.array([-ny, -1, 0, 1, ny], dtype=np.int64)
    lrow = np.zeros((5, n))
    bsrc = np.zeros(n)
    W_, S_, C_, N_, E_ = 0, 1, 2, 3, 4
    for i in range(nx):
        for j in range(ny):
            p = i * ny + j
            u = velocity.u1[j]
            upwind = u * dx * params.pe > 2.0
            # diffusion in x
            if i > 0:
                lrow[C_, p] += ax
                lrow[W_, p] -= ax
            else:
                lrow[C_, p] += 2.0 * ax
                bsrc[p] += 2.0 * ax
            if i < nx - 1:
                lrow[C_, p] += ax
                lrow[E_, p] -= ax
            # diffusion in y; the wall face flux enters through the isotherm
            if j > 0:
                lrow[C_, p] += ay
                lrow[S_, p] -= ay
            if j < ny - 1:
                lrow[C_, p] += ay
                lrow[N_, p] -= ay
            # convection, outflow face
            if i == nx - 1 or upwind:
                lrow[C_, p] += u / dx
            else:
                lrow[C_, p] += 0.5 * u / dx
                lrow[E_, p] += 0.5 * u / dx
            # convection, inflow face
            if i == 0:
                bsrc[p] += u / dx
            elif upwind:
                lrow[W_, p] -= u / dx
            else:
                lrow[W_, p] -= 0.5 * u / dx
                lrow[C_, p] -= 0.5 * u / dx
    return lrow, offs, bsrc


class Operator:
    """Factorized ``I/dt + theta L`` with its wall block, for one backend."""

    def __init__(self, params, velocity, dt, theta, use_numba):
        self.nx, self.ny = params.nx, params.ny
        self.dt, self.theta = dt, theta
        self.use_numba = use_numba
        self.lrow, self.offs, self.bsrc = assemble(params, velocity)
        n = self.nx * self.ny
        if use_numba:
            k = self.ny
            ab = np.zeros((n, 2 * k + 1))
            for d, off in enumerate(self.offs):
                ab[:, k + off] += theta * self.lrow[d]
            ab[:, k] += 1.0 / dt
            self.ab = ab.copy()
            K.band_factor(ab, k)
            self.lu, self.k = ab, k
            self.w = K.wall_block_nb(ab, k, self.nx, self.ny)
        else:
            self.lmat = K.lrow_to_csr(self.lrow, self.offs)
            self.solver = K.factor_np(self.lmat, dt, theta)
            self.w = K.wall_block_np(self.solver, self.nx, self.ny, n)

    def advance(self, c, m, nsteps, params, keep=False):
        n = c.size
        curve = np.empty(nsteps)
        hist_c = np.empty((nsteps if keep else 0, n))
        hist_m = np.empty((nsteps if keep else 0, self.nx))
        sink = params.sink_weight / params.dy
        common = (params.da_a, params.da_d, params.inv_m, sink, NEWTON_TOL, NEWTON_MAXIT,
                  curve, hist_c, hist_m, keep)
        if params.inv_m == 0.0 and (params.da_a != 0.0 or params.da_d != 0.0):
            return self._advance_linear(c, m, nsteps, params, sink, curve, hist_c, hist_m, keep)
        if self.use_numba:
            out = K.advance_nb(c, m, nsteps, self.dt, self.theta, self.lu, self.k, self.lrow,
                               self.offs, self.bsrc, self.w, self.nx, self.ny, *common)
        else:
            out = K.advance_np(c, m, nsteps, self.dt, self.theta, self.solver, self.lmat,
                               self.bsrc, self.w, self.nx, self.ny, *common)
        return self._check(out, curve, hist_c, hist_m)

    def _advance_linear(self, c, m, nsteps, params, sink, curve, hist_c, hist_m, keep):
        shift = self.theta * sink * params.da_a / (1.0 + self.theta * self.dt * params.da_d)
        args = (params.da_a, params.da_d, sink, curve, hist_c, hist_m, keep)
        if self.use_numba:
            lu = self.ab.copy()
            lu[::self.ny, self.k] += shift
            K.band_factor(lu, self.k)
            out = K.advance_linear_nb(c, m, nsteps, self.dt, self.theta, lu, self.k, self.lrow,
                                      self.offs, self.bsrc, self.nx, self.ny, *args)
        else:
            diag = np.zeros(c.size)
            diag[::self.ny] = shift
            solver = K.factor_np(self.lmat, self.dt, self.theta, diag)
            out = K.advance_linear_np(c, m, nsteps, self.dt, self.theta, solver, self.lmat,
                                      self.bsrc, self.nx, self.ny, *args)
        return self._check(out, curve, hist_c, hist_m)

    def _check(self, out, curve, hist_c, hist_m):
        status, step, res, _, _ = out
        if status == K.NO_CONVERGENCE:
            raise SolverError(
                f"wall iteration did not converge at substep {step} (dt={self.dt:g}): "
                f"residual {res:.3e} after {NEWTON_MAXIT} sweeps", step=step, residual=res)
        if status == K.NON_FINITE:
            raise SolverError(f"non-finite field at substep {step} (dt={self.dt:g})", step=step)
        return curve, hist_c, hist_m


def _operator_key(params, velocity):
    return (params.pe, params.nx, params.ny, params.length, params.height,
            velocity.u1.tobytes())


@lru_cache(maxsize=16)
def _cached_operator(key, dt, theta, use_numba, params, velocity_bytes):
    velocity = VelocityField(y=None, u1=np.frombuffer(velocity_bytes))
    return Operator(params, velocity, dt, theta, use_numba)


def get_operator(params, velocity, dt, theta, use_numba=None):
    if use_numba is None:
        use_numba = USE_NUMBA
    # only the grid/Pe/velocity fields matter; normalize the rest for caching
    base = TransportParams(pe=params.pe, length=params.length, height=params.height,
                           nx=params.nx, ny=params.ny, dt=1.0, t_end=1.0)
    return _cached_operator(_operator_key(params, velocity), float(dt), float(theta),
                            bool(use_numba), base, velocity.u1.tobytes())


def zero_state(params):
    return FieldState(np.zeros((params.nx, params.ny)), np.zeros(params.nx), 0.0, 0.0)


# ---------------------------------------------------------------------------
# time integration
# ---------------------------------------------------------------------------


def step(state, params, velocity=None, theta=0.5, use_numba=None):
    """Advance ``state`` by one step of size ``params.dt`` (Crank-Nicolson by default)."""
    if velocity is None:
        velocity = poiseuille_velocity(params.ny, params.height)
    if state.c.shape != (params.nx, params.ny) or state.m.shape != (params.nx,):
        raise ConfigError("state shape does not match the grid")
    op = get_operator(params, velocity, params.dt, theta, use_numba)
    c = state.c.ravel().copy()
    m = state.m.copy()
    op.advance(c, m, 1, params)
    return FieldState(c.reshape(params.nx, params.ny), m, state.t + params.dt, theta)


def _states(hist_c, hist_m, t0, dt, theta, shape):
    return [FieldState(hist_c[s].reshape(shape), hist_m[s].copy(), t0 + (s + 1) * dt, theta)
            for s in range(hist_c.shape[0])]


def simulate(params, history=None, use_numba=None):
    """Integrate from zero initial data to ``t_end``.

    Returns ``(curve, final_state)``; the curve holds the outlet average after
    every step of size ``dt``. If ``history`` is a list, every intermediate
    state (startup substeps included) is appended to it, starting with the
    initial state.
    """
    velocity = poiseuille_velocity(params.ny, params.height)
    shape = (params.nx, params.ny)
    state = zero_state(params)
    c = state.c.ravel().copy()
    m = state.m.copy()
    keep = history is not None
    if keep:
        history.append(state.copy())
    nsteps = params.n_steps
    values = np.empty(nsteps)
    done = min(params.startup_steps, nsteps)
    if done > 0:
        nsub = params.startup_substeps
        h = params.dt / nsub
        op = get_operator(params, velocity, h, 1.0, use_numba)
        sub_curve, hc, hm = op.advance(c, m, done * nsub, params, keep)
        values[:done] = sub_curve[nsub - 1::nsub]
        if keep:
            history.extend(_states(hc, hm, 0.0, h, 1.0, shape))
    if nsteps > done:
        op = get_operator(params, velocity, params.dt, 0.5, use_numba)
        rest, hc, hm = op.advance(c, m, nsteps - done, params, keep)
        values[done:] = rest
        if keep:
            history.extend(_states(hc, hm, done * params.dt, params.dt, 0.5, shape))
    times = params.dt * np.arange(1, nsteps + 1)
    final = FieldState(c.reshape(shape), m, times[-1], 0.5 if nsteps > done else 1.0)
    return BreakthroughCurve(times, values), final


def outlet_average(state):
    """Mean of ``c`` over the outlet cell column (uniform rows)."""
    return float(np.mean(state.c[-1, :]))


def mass_audit(history, params):
    """Accumulated discrete mass-balance defect of a run, relative to total influx.

    Recomputes, for every consecutive pair of states, the change of bulk mass
    plus weighted surface mass and the inlet/outlet boundary fluxes at the
    step's theta-weighted concentration.
    """
    if len(history) < 2:
        return 0.0
    u = poiseuille_velocity(params.ny, params.height).u1
    dx, dy = params.dx, params.dy
    diff_in = 2.0 / (params.pe * dx)
    w = params.sink_weight
    defect = 0.0
    influx_total = 0.0
    for s0, s1 in zip(history[:-1], history[1:]):
        dt = s1.t - s0.t
        th = s1.theta
        cin = th * s1.c[0] + (1 - th) * s0.c[0]
        cout = th * s1.c[-1] + (1 - th) * s0.c[-1]
        inflow = dt * dy * np.sum(u + diff_in * (1.0 - cin))
        outflow = dt * dy * np.sum(u * cout)
        d_bulk = dx * dy * np.sum(s1.c - s0.c)
        d_surf = dx * np.sum(s1.m - s0.m)
        defect += abs(d_bulk + w * d_surf - (inflow - outflow))
        influx_total += abs(inflow)
    return defect / influx_total if influx_total > 0 else 0.0


def write_field_csv(state, params, path_bulk, path_wall):
    xc = (np.arange(params.nx) + 0.5) * params.dx
    yc = (np.arange(params.ny) + 0.5) * params.dy
    with open(path_bulk, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "y", "c"])
        for i, x in enumerate(xc):
            for j, y in enumerate(yc):
                wr.writerow([f"{x:.17g}", f"{y:.17g}", f"{state.c[i, j]:.17g}"])
    with open(path_wall, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", "m"])
        for i, x in enumerate(xc):
            wr.writerow([f"{x:.17g}", f"{state.m[i]:.17g}"])
