"""Closed-loop time marching: first-order upwind in space, explicit in time."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from sklearn.base import clone

from .numlin import NumericalError
from .plant import CascadeState, Grid, PlantSpec, upwind_operator

__all__ = [
    "NumericalFailure",
    "InitialProfile",
    "Scenario",
    "SimulationTrace",
    "cfl_dt",
    "step",
    "run",
    "read_trace_csv",
    "dump_profiles",
]

INTEGRATORS = ("euler", "rk4")


class NumericalFailure(NumericalError):
    """A non-finite value appeared; ``snapshot`` holds the last finite state."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass(frozen=True)
class InitialProfile:
    """Initial PDE datum by family: ``constant``, ``sine`` or ``samples``."""

    kind: str = "sine"
    value: float = 1.0
    k: int = 1
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "sine", "samples"):
            raise ValueError(f"unknown initial profile kind {self.kind!r}")
        if self.kind == "samples" and self.samples is None:
            raise ValueError("samples profile needs data")

    def sample(self, grid: Grid, channels: int) -> np.ndarray:
        x = grid.nodes
        if self.kind == "constant":
            w = np.full(grid.cells, float(self.value))
        elif self.kind == "sine":
            w = self.value * np.sin(2 * np.pi * self.k * x)
        else:
            data = np.asarray(self.samples, dtype=float)
            data = data[:, None] if data.ndim == 1 else data
            if data.shape[0] == grid.cells:
                out = data
            else:
                xs = (np.arange(data.shape[0]) + 0.5) / data.shape[0]
                out = np.column_stack([np.interp(x, xs, col) for col in data.T])
            if out.shape[1] == 1 and channels > 1:
                out = np.repeat(out, channels, axis=1)
            if out.shape[1] != channels:
                raise ValueError(f"sampled profile has {out.shape[1]} channels, plant has {channels}")
            return out.copy()
        return np.repeat(w[:, None], channels, axis=1)


@dataclass(eq=False)
class Scenario:
    plant: PlantSpec
    grid: Grid
    controller: object
    z0: np.ndarray
    w0: InitialProfile
    t_final: float = 60.0
    cfl_safety: float = 0.9
    record_stride: int = 1
    integrator: str = "euler"
    sabotage: bool = False

    def __post_init__(self):
        self.z0 = np.atleast_1d(np.asarray(self.z0, dtype=float))
        if self.z0.shape != (self.plant.n,):
            raise ValueError(f"z0 must have {self.plant.n} entries")
        if not (self.t_final >= 0 and math.isfinite(self.t_final)):
            raise ValueError("t_final must be finite and >= 0")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be >= 1")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        ctl = self.controller
        if ctl.grid_.cells != self.grid.cells or ctl.plant_.N != self.plant.N:
            raise ValueError("controller was synthesized for a different plant or grid")

    def initial_state(self) -> CascadeState:
        return CascadeState(self.z0.copy(), self.w0.sample(self.grid, self.plant.N), 0.0)

    def with_grid(self, cells: int) -> "Scenario":
        """Same scenario on another grid, controller re-synthesized."""
        grid = Grid(cells)
        ctl = clone(self.controller).fit(self.plant, grid)
        return replace(self, grid=grid, controller=ctl)

    def with_initial(self, z0, w0: InitialProfile) -> "Scenario":
        return replace(self, z0=z0, w0=w0)

    @cached_property
    def _ops(self):
        S_h, Gam = upwind_operator(self.plant, self.grid)
        return S_h, Gam


@dataclass(eq=False)
class SimulationTrace:
    times: np.ndarray
    z: np.ndarray
    u: np.ndarray
    sigma_u: np.ndarray
    V: np.ndarray
    norm_z: np.ndarray
    norm_w: np.ndarray
    w: np.ndarray | None = None
    h: float | None = None
    dt: float | None = None

    def __len__(self):
        return len(self.times)

    @property
    def norm_X(self):
        return self.norm_z + self.norm_w

    def state(self, i) -> CascadeState:
        if self.w is None:
            raise ValueError("trace was recorded without PDE profiles")
        return CascadeState(self.z[i], self.w[i], float(self.times[i]))

    def header(self):
        n, m = self.z.shape[1], self.u.shape[1]
        return (["t"] + [f"z_{i + 1}" for i in range(n)] + [f"u_{i + 1}" for i in range(m)]
                + [f"sigma_u_{i + 1}" for i in range(m)] + ["norm_z", "norm_w_H", "V"])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(self.header())
            for i in range(len(self)):
                row = np.concatenate([[self.times[i]], self.z[i], self.u[i], self.sigma_u[i],
                                      [self.norm_z[i], self.norm_w[i], self.V[i]]])
                wr.writerow([f"{v:.17g}" for v in row])


def read_trace_csv(path) -> SimulationTrace:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    n = sum(h.startswith("z_") for h in head)
    m = sum(h.startswith("u_") for h in head)
    col = 1
    z = data[:, col:col + n]; col += n
    u = data[:, col:col + m]; col += m
    s = data[:, col:col + m]; col += m
    return SimulationTrace(data[:, 0], z, u, s, data[:, col + 2], data[:, col], data[:, col + 1])


def cfl_dt(grid: Grid, plant: PlantSpec, safety=0.9) -> float:
    if not 0 < safety <= 1:
        raise ValueError("safety must lie in (0, 1]")
    return safety * grid.h / float(np.max(np.abs(plant.speeds)))


class _Stepper:
    """Precomputed operators for one scenario."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.ctl = sc.controller
        self.S_h, self.Gam = sc._ops
        self.A, self.B = sc.plant.A, sc.plant.B
        self.shape = (sc.grid.cells, sc.plant.N)
        sign = -1.0 if sc.sabotage else 1.0
        K_z, K_w = self.ctl.linear_gains()
        self.K_z, self.K_w = sign * K_z, sign * K_w

    def control(self, z, wf):
        u = self.K_z @ z + self.K_w @ wf
        return u, self.ctl.actuator_._apply(u)

    def rhs(self, z, wf, cu=None):
        _, s = cu if cu is not None else self.control(z, wf)
        return self.A @ z + self.B @ s, self.S_h @ wf + self.Gam @ z

    def advance(self, z, wf, dt, cu=None):
        """One step; ``cu`` is the already evaluated control at ``(z, wf)``."""
        if self.sc.integrator == "euler":
            # z and w both use the start-of-step z and a frozen u
            dz, dw = self.rhs(z, wf, cu)
            return z + dt * dz, wf + dt * dw
        k1 = self.rhs(z, wf, cu)
        k2 = self.rhs(z + 0.5 * dt * k1[0], wf + 0.5 * dt * k1[1])
        k3 = self.rhs(z + 0.5 * dt * k2[0], wf + 0.5 * dt * k2[1])
        k4 = self.rhs(z + dt * k3[0], wf + dt * k3[1])
        return (z + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
                wf + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]))


def _finite(z, wf):
    return bool(np.isfinite(z).all() and np.isfinite(wf).all())


def step(state: CascadeState, scenario: Scenario, dt: float) -> CascadeState:
    """Advance one explicit step of length ``dt`` (must respect the CFL bound)."""
    limit = cfl_dt(scenario.grid, scenario.plant, 1.0)
    if dt > limit * (1 + 1e-12):
        raise ValueError(f"dt = {dt:.3g} exceeds the CFL bound {limit:.3g}")
    st = _Stepper(scenario)
    z, wf = st.advance(state.z, state.w.ravel(), dt)
    if not _finite(z, wf):
        raise NumericalFailure(f"non-finite state at t = {state.t + dt:.6g}", snapshot=state)
    return CascadeState(z, wf.reshape(st.shape), state.t + dt)


def run(scenario: Scenario) -> SimulationTrace:
    """March to ``t_final`` recording every ``record_stride`` steps and the final state."""
    st = _Stepper(scenario)
    ctl, grid = scenario.controller, scenario.grid
    state0 = scenario.initial_state()
    dt_max = cfl_dt(grid, scenario.plant, scenario.cfl_safety)
    nsteps = int(math.ceil(scenario.t_final / dt_max - 1e-12)) if scenario.t_final > 0 else 0
    dt = scenario.t_final / nsteps if nsteps else 0.0
    stride = int(scenario.record_stride)
    rec = {key: [] for key in ("t", "z", "w", "u", "s", "V", "nz", "nw")}

    weights = ctl.weight_.weights
    M_flat = ctl.M_.as_matrix()

    def record(i, z, wf, cu):
        eta = wf - M_flat @ z
        rec["t"].append(i * dt)
        rec["z"].append(z.copy())
        rec["w"].append(wf.reshape(st.shape).copy())
        rec["u"].append(cu[0])
        rec["s"].append(cu[1])
        rec["V"].append(float(z @ ctl.P_ @ z + grid.h * np.sum(eta.reshape(st.shape) ** 2 * weights)))
        rec["nz"].append(float(np.linalg.norm(z)))
        rec["nw"].append(float(np.sqrt(grid.h * np.sum(wf.reshape(st.shape) ** 2 * weights))))

    z, wf = state0.z.copy(), state0.w.ravel().copy()
    cu = st.control(z, wf)
    record(0, z, wf, cu)
    with np.errstate(over="ignore", invalid="ignore"):
        _march(st, z, wf, cu, dt, nsteps, stride, record)
    arr = lambda key: np.array(rec[key])
    return SimulationTrace(arr("t"), arr("z"), arr("u").reshape(len(rec["t"]), -1),
                           arr("s").reshape(len(rec["t"]), -1), arr("V"), arr("nz"), arr("nw"),
                           w=arr("w"), h=grid.h, dt=dt)


def _march(st, z, wf, cu, dt, nsteps, stride, record):
    for i in range(1, nsteps + 1):
        z_new, wf_new = st.advance(z, wf, dt, cu)
        if not _finite(z_new, wf_new):
            raise NumericalFailure(f"non-finite state at t = {i * dt:.6g}",
                                   snapshot=CascadeState(z, wf.reshape(st.shape), (i - 1) * dt))
        z, wf = z_new, wf_new
        cu = st.control(z, wf)
        if i % stride == 0 or i == nsteps:
            record(i, z, wf, cu)


def dump_profiles(trace: SimulationTrace, grid: Grid, path, every=1):
    """Plain-text dump of ``w`` at every ``every``-th snapshot: blocks of ``x w_1 .. w_N``."""
    if trace.w is None:
        raise ValueError("trace has no profiles")
    with open(path, "w") as fh:
        for i in range(0, len(trace), every):
            fh.write(f"# t = {trace.times[i]:.17g}\n")
            for x, row in zip(grid.nodes, trace.w[i]):
                fh.write(f"{x:.17g} " + " ".join(f"{v:.17g}" for v in row) + "\n")
            fh.write("\n\n")
