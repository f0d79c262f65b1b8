"""Numerical audits: Lyapunov decay, contraction, non-resonance, observability."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numlin import as_matrix, numerical_rank
from .plant import CascadeState, upwind_operator
from .simulate import SimulationTrace, run
from . import sylvester as syl

__all__ = [
    "AuditReport",
    "ObservabilityProbe",
    "ConvergenceReport",
    "decay_audit",
    "contraction_audit",
    "nonresonance_rank",
    "observability_probe",
    "convergence_study",
    "PROBE_ZERO_TOL",
]

PROBE_ZERO_TOL = 1e-8


@dataclass(frozen=True)
class AuditReport:
    name: str
    passed: bool
    worst_violation: float
    context: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.worst_violation):
            raise ValueError("worst_violation must be finite")

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {verdict} worst_violation={self.worst_violation:.6g} {self.context}".rstrip()


def _check_trace(trace: SimulationTrace, ctl):
    if len(trace) < 2:
        raise ValueError("audit needs at least two snapshots")
    if trace.z.shape[1] != ctl.plant_.n or trace.u.shape[1] != ctl.plant_.m:
        raise ValueError(f"trace has n={trace.z.shape[1]}, m={trace.u.shape[1]}; "
                         f"controller expects n={ctl.plant_.n}, m={ctl.plant_.m}")


def decay_audit(trace: SimulationTrace, ctl, kappa_max=50.0, mono_tol=1e-9) -> AuditReport:
    """Check that ``V`` decreases and that its slope obeys the dissipation bound.

    (a) ``V_{k+1} - V_k <= mono_tol * max(1, V_0)``;
    (b) ``(V_{k+1} - V_k)/dt <= -|z_k|^2 - 2 u_k . sigma(u_k) + kappa (h + dt)(1 + V_0)``.
    The smallest ``kappa`` making (b) hold is reported and must not exceed
    ``kappa_max``.  Works on traces read back from CSV (no profiles needed).
    """
    _check_trace(trace, ctl)
    V, t = np.asarray(trace.V), np.asarray(trace.times)
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("trace times must be strictly increasing")
    V0 = float(V[0])
    dV = np.diff(V)
    scale = max(1.0, V0)
    excess_a = dV - mono_tol * scale
    worst_a = float(max(excess_a.max(), 0.0))
    bound = -np.sum(trace.z[:-1] ** 2, axis=1) - 2 * np.sum(trace.u[:-1] * trace.sigma_u[:-1], axis=1)
    excess_b = dV / dt - bound
    h = ctl.grid_.h
    kappa = float(max(np.max(excess_b / ((h + dt) * (1 + V0))), 0.0))
    ok = worst_a == 0.0 and kappa <= kappa_max
    worst = max(worst_a, float(max(excess_b.max(), 0.0)))
    ctx = (f"V0={V0:.6g} V_end={V[-1]:.6g} max_dV={dV.max():.3g} "
           f"kappa={kappa:.3g} (max {kappa_max:g}) h={h:.3g} dt_max={dt.max():.3g}")
    return AuditReport("decay", bool(ok), worst, ctx,
                       {"kappa": kappa, "monotone": worst_a == 0.0, "max_dV": float(dV.max())})


def contraction_audit(traceA: SimulationTrace, traceB: SimulationTrace, ctl, tol=1e-9) -> AuditReport:
    """``v_norm`` of the difference of two trajectories must not grow."""
    for tr in (traceA, traceB):
        _check_trace(tr, ctl)
        if tr.w is None:
            raise ValueError("contraction audit needs traces recorded with profiles")
    if len(traceA) != len(traceB) or not np.allclose(traceA.times, traceB.times, rtol=0, atol=1e-12):
        raise ValueError("time grids of the two traces differ")
    d = np.array([ctl.v_norm(CascadeState(traceA.z[i] - traceB.z[i], traceA.w[i] - traceB.w[i]))
                  for i in range(len(traceA))])
    slack = tol * max(1.0, float(d[0]))
    worst = float(max(np.max(np.diff(d)) - slack, 0.0))
    ctx = f"d0={d[0]:.6g} d_end={d[-1]:.6g} max_step_growth={np.max(np.diff(d)):.3g}"
    return AuditReport("contraction", worst == 0.0, worst, ctx, {"distances": d})


def nonresonance_rank(A, B, C, mu, tol=None) -> bool:
    """True iff ``[[A - mu I, B], [C, 0]]`` has full row rank ``n + p``."""
    A = as_matrix(A, "A", square=True)
    n = A.shape[0]
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    if B.shape[0] != n or C.shape[1] != n:
        raise ValueError(f"inconsistent blocks: A {A.shape}, B {B.shape}, C {C.shape}")
    m, p = B.shape[1], C.shape[0]
    if n + m < n + p:
        return False
    top = np.hstack([A - mu * np.eye(n), B])
    bottom = np.hstack([C, np.zeros((p, m))])
    block = np.vstack([top, bottom])
    rank = numerical_rank(block) if tol is None else numerical_rank(block, tol)
    return rank == n + p


@dataclass(frozen=True)
class ObservabilityProbe:
    mode_index: int
    eigenvalue: complex
    pairing_magnitude: float
    flagged: bool
    caveat: bool

    def __post_init__(self):
        if not self.pairing_magnitude >= 0:
            raise ValueError("pairing magnitude must be >= 0")


def _scalar_orthogonal(plant):
    return plant.N == 1 and plant.K.shape == (1, 1) and abs(abs(plant.K[0, 0]) - 1.0) < 1e-12


def observability_probe(ctl, modes=16) -> list[ObservabilityProbe]:
    """Pairings ``|B^T M^* phi_k|`` for ``k = -modes .. modes``.

    Scalar loop with ``K = +-1``: explicit modes ``exp(i theta_k x)`` with
    ``theta_k = 2 pi k`` (or ``(2k + 1) pi`` for ``K = -1``), eigenvalue
    ``-i theta_k lambda``.  Any other plant: eigenvectors of the upwind
    generator of smallest modulus, unit-normalized, with the
    caveat flag set.  A finite probe can only falsify observability.
    """
    if modes < 0:
        raise ValueError("modes must be >= 0")
    plant, grid = ctl.plant_, ctl.grid_
    Bt = plant.B.T
    wts = ctl.weight_.weights
    vals = ctl.M_.values
    out = []
    if _scalar_orthogonal(plant):
        lam = float(plant.speeds[0])
        shift = 0.0 if plant.K[0, 0] > 0 else math.pi
        x = grid.nodes
        for k in range(-modes, modes + 1):
            theta = 2 * math.pi * k + shift
            phi = np.exp(1j * theta * x)
            pair = Bt @ (grid.h * np.einsum("gn,g->n", vals[:, 0, :], phi) * wts[0])
            mag = float(np.linalg.norm(pair))
            out.append(ObservabilityProbe(k, complex(-1j * theta * lam), mag, mag <= PROBE_ZERO_TOL, False))
        return out
    S_h, _ = upwind_operator(plant, grid)
    mu, vecs = np.linalg.eig(S_h.toarray())
    order = np.lexsort((mu.imag, np.abs(mu)))[: 2 * modes + 1]
    Wflat = np.tile(wts, grid.cells)
    Mflat = vals.reshape(-1, plant.n)
    for idx, j in enumerate(order):
        v = vecs[:, j]
        v = v / math.sqrt(grid.h * float(np.sum(Wflat * np.abs(v) ** 2)))
        pair = Bt @ (grid.h * Mflat.T @ (Wflat * v))
        mag = float(np.linalg.norm(pair))
        out.append(ObservabilityProbe(idx, complex(mu[j]), mag, mag <= PROBE_ZERO_TOL, True))
    return out


@dataclass(frozen=True)
class ConvergenceReport:
    grids: tuple
    m_errors: tuple
    m_orders: tuple | str
    final_norms: tuple
    norm_orders: tuple | str
    reference: str

    def rows(self):
        """One row per grid: ``G, M error, M order, final norm, norm order``."""
        out = []
        for i, G in enumerate(self.grids):
            mo = self.m_orders if isinstance(self.m_orders, str) else (
                self.m_orders[i - 1] if i > 0 else float("nan"))
            no = self.norm_orders if isinstance(self.norm_orders, str) else (
                self.norm_orders[i - 2] if i > 1 else float("nan"))
            out.append((G, self.m_errors[i], mo, self.final_norms[i], no))
        return out


def _orders(errors, ratios, exact_tol=1e-14):
    if all(e <= exact_tol for e in errors):
        return "exact"
    res = []
    for e0, e1, r in zip(errors[:-1], errors[1:], ratios):
        res.append(math.log(e0 / e1) / math.log(r) if e0 > 0 and e1 > 0 else float("nan"))
    return tuple(res)


def convergence_study(scenario, grids) -> ConvergenceReport:
    """Observed orders of the Sylvester gain and of the final state norm.

    The gain is compared with the boundary-value route sampled at the same
    nodes.  The final-norm order uses successive differences, so it needs
    three grids.  Grids must be increasing and each must divide the next.
    """
    grids = [int(G) for G in grids]
    if len(grids) < 3:
        raise ValueError("convergence study needs at least three grids")
    for a, b in zip(grids[:-1], grids[1:]):
        if b <= a or b % a:
            raise ValueError(f"grids must be nested refinements; {b} does not refine {a}")
    m_err, norms = [], []
    for G in grids:
        sc = scenario.with_grid(G)
        ref = syl.solve_bvp(sc.plant, sc.grid)
        m_err.append(float(np.max(np.abs(sc.controller.M_.values - ref.values))))
        tr = run(sc)
        norms.append(float(tr.norm_X[-1]))
    ratios = [b / a for a, b in zip(grids[:-1], grids[1:])]
    m_orders = _orders(m_err, ratios)
    diffs = [abs(b - a) for a, b in zip(norms[:-1], norms[1:])]
    norm_orders = _orders(diffs, ratios[1:])
    return ConvergenceReport(tuple(grids), tuple(m_err), m_orders, tuple(norms), norm_orders,
                             "bvp")
