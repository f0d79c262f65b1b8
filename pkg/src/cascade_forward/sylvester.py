"""Forwarding gain ``M`` solving ``S M - M A = -Gamma C``.

Three routes are provided:

* ``closed``   -- explicit exponential profile, scalar loop plant only;
* ``bvp``      -- the two-point boundary value problem
  ``-Lambda M' - M A = 0`` with ``inflow(M) = K outflow(M) + E``, solved by
  propagating ``vec M`` with a matrix exponential;
* ``discrete`` -- the same Sylvester equation for the upwind generator
  ``S_h``, solved by Kronecker linearization.  This is the gain that is
  exactly compatible with the simulator.

All routes return ``M`` sampled at the cell midpoints, shape ``(G, N, n)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .numlin import NumericalError, SingularSystemError, mat_exp, solve_sylvester
from .plant import Grid, PlantSpec, upwind_operator

__all__ = [
    "AssumptionViolation",
    "SylvesterSolution",
    "closed_form_scalar",
    "solve_closed",
    "solve_bvp",
    "solve_discrete",
    "solve",
    "fixed_point_check",
]


class AssumptionViolation(SingularSystemError):
    """Unique solvability failed: the spectra of the transport generator and A meet."""


@dataclass(frozen=True, eq=False)
class SylvesterSolution:
    values: np.ndarray
    grid: Grid
    method: str
    residual: float | None = None
    closed_form: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("Sylvester solution has non-finite values")

    @property
    def n(self):
        return self.values.shape[2]

    @property
    def N(self):
        return self.values.shape[1]

    def apply(self, z) -> np.ndarray:
        """Profile ``M z`` of shape ``(G, N)``."""
        return np.einsum("gjn,n->gj", self.values, np.atleast_1d(z))

    def as_matrix(self) -> np.ndarray:
        """``(G*N, n)`` matrix acting on flattened profiles."""
        return self.values.reshape(-1, self.n)

    def to_csv(self, path):
        G, N, n = self.values.shape
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["x"] + [f"M_{j + 1}_{c + 1}" for j in range(N) for c in range(n)])
            for x, row in zip(self.grid.nodes, self.values):
                wr.writerow([f"{x:.17g}"] + [f"{v:.17g}" for v in row.ravel()])


def closed_form_scalar(a, lam, c, x):
    """``M(x) = c / (1 - exp(a/lam)) * exp(a x / lam)`` for the scalar loop."""
    if not (a > 0 and lam > 0):
        raise ValueError("closed form needs a > 0 and lam > 0")
    r = a / lam
    if r > 700.0:
        raise NumericalError(f"a/lam = {r:.3g} overflows exp")
    return c / (1.0 - math.exp(r)) * np.exp(r * np.asarray(x, dtype=float))


def solve_closed(plant: PlantSpec, grid: Grid) -> SylvesterSolution:
    a, lam, c = plant.scalar_parameters()
    vals = closed_form_scalar(a, lam, c, grid.nodes).reshape(-1, 1, 1)
    return SylvesterSolution(vals, grid, "closed", None, {"a": a, "lambda": lam, "c": c})


def _trace_selectors(plant):
    """Row selectors so that ``in0 @ M(0) + in1 @ M(1)`` are the inflow traces, ditto outflow."""
    N, k = plant.N, plant.k
    in0 = np.zeros((N, N)); in0[:k, :k] = np.eye(k)
    in1 = np.zeros((N, N)); in1[k:, k:] = np.eye(N - k)
    out0 = np.zeros((N, N)); out0[:N - k, k:] = np.eye(N - k)
    out1 = np.zeros((N, N)); out1[N - k:, :k] = np.eye(k)
    return in0, in1, out0, out1


def solve_bvp(plant: PlantSpec, grid: Grid) -> SylvesterSolution:
    """Solve the boundary value problem by matrix-exponential shooting.

    ``m(x) = vec M(x)`` obeys ``m' = -(A^T kron Lambda^-1) m``; the boundary
    relation is linear in ``m(0)`` once ``m(1) = exp(-(A^T kron Lambda^-1)) m(0)``
    is substituted.
    """
    n, N = plant.n, plant.N
    gen = -np.kron(plant.A.T, np.diag(1.0 / plant.speeds))
    Phi = mat_exp(gen, 1.0)
    in0, in1, out0, out1 = _trace_selectors(plant)
    K = plant.K
    eye = np.eye(n)
    T0 = np.kron(eye, in0 - K @ out0)
    T1 = np.kron(eye, in1 - K @ out1)
    L = T0 + T1 @ Phi
    rhs = plant.E.reshape(-1, order="F")
    if np.linalg.matrix_rank(L) < L.shape[0]:
        raise AssumptionViolation("boundary system is singular: spectra of S and A are not disjoint")
    m0 = np.linalg.solve(L, rhs)
    step = mat_exp(gen, grid.h)
    m = mat_exp(gen, grid.h / 2) @ m0
    cols = []
    for _ in range(grid.cells):
        cols.append(m)
        m = step @ m
    samples = np.array(cols)  # (G, N*n), column-major vec of each M(x_i)
    values = samples.reshape(grid.cells, n, N).transpose(0, 2, 1)
    # boundary residual is exact algebra; propagation residual checks the sampled ODE flow
    bc_res = float(np.max(np.abs(L @ m0 - rhs)))
    exact = np.array([mat_exp(gen, x) @ m0 for x in grid.nodes])
    prop_res = float(np.max(np.abs(exact - samples)))
    fd = _fd_ode_residual(values, plant, grid)
    return SylvesterSolution(values, grid, "bvp", max(bc_res, prop_res),
                             diagnostics={"boundary_residual": bc_res,
                                          "propagation_residual": prop_res,
                                          "fd_ode_residual": fd})


def _fd_ode_residual(values, plant, grid):
    """Max ``|Lambda M' + M A|`` at interior nodes with a centred difference for ``M'``."""
    if grid.cells < 3:
        return 0.0
    dM = (values[2:] - values[:-2]) / (2 * grid.h)
    res = plant.speeds[None, :, None] * dM + np.einsum("gjn,nk->gjk", values[1:-1], plant.A)
    return float(np.max(np.abs(res)))


def solve_discrete(plant: PlantSpec, grid: Grid) -> SylvesterSolution:
    """Solve ``S_h M_h - M_h A = -Gamma_h`` with the simulator's upwind operator."""
    S_h, Gam = upwind_operator(plant, grid)
    try:
        Mh = solve_sylvester(S_h.toarray(), plant.A, -Gam)
    except SingularSystemError as exc:
        raise AssumptionViolation(f"discrete Sylvester system singular; spectra not disjoint ({exc})") from exc
    res = np.linalg.norm(S_h @ Mh - Mh @ plant.A + Gam)
    scale = max(np.linalg.norm(Gam), 1.0)
    values = Mh.reshape(grid.cells, plant.N, plant.n)
    return SylvesterSolution(values, grid, "discrete", float(res / scale))


_ROUTES = {"closed": solve_closed, "bvp": solve_bvp, "discrete": solve_discrete}


def solve(plant: PlantSpec, grid: Grid, method="discrete") -> SylvesterSolution:
    try:
        route = _ROUTES[method]
    except KeyError:
        raise ValueError(f"unknown Sylvester method {method!r}; use one of {sorted(_ROUTES)}") from None
    return route(plant, grid)


def fixed_point_check(sol: SylvesterSolution, plant: PlantSpec, mu=1.0) -> float:
    """Worst relative mismatch of ``M z = (mu - S)^-1 [M (mu - A) z + Gamma C z]``.

    Evaluated with the discrete operator on each canonical basis vector of
    ``R^n``.  Zero for an exact solution of the discrete equation.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    S_h, Gam = upwind_operator(plant, sol.grid)
    R = mu * np.eye(S_h.shape[0]) - S_h.toarray()
    Mh = sol.as_matrix()
    try:
        rhs = np.linalg.solve(R, Mh @ (mu * np.eye(plant.n) - plant.A) + Gam)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"mu I - S_h is singular: {exc}") from exc
    scale = np.linalg.norm(Mh, axis=0)
    diff = np.linalg.norm(Mh - rhs, axis=0)
    worst = 0.0
    for d, s in zip(diff, scale):
        if s > 0:
            worst = max(worst, d / s)
        elif d > 0:
            worst = math.inf
    return float(worst)
