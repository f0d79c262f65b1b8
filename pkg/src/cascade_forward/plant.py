"""Cascade plant: a finite-dimensional ODE feeding a boundary-coupled transport PDE.

State ``(z, w)`` with ``z' = A z + B sigma(u)`` and ``w_t + Lambda w_x = 0`` on
``[0, 1]``.  The first ``k`` channels travel right, the rest travel left.
Inflow traces are linear in the outflow traces plus an ODE injection::

    [w+(0); w-(1)] = K [w-(0); w+(1)] + E z,   K = [[D0, R0], [R1, D1]]

``D0``/``D1`` are the usual cross-boundary couplings, ``R0``/``R1`` carry
same-family recirculation (the scalar periodic loop ``w(0) = w(1) + c z``
is ``R0 = 1``, ``E0 = c``), and ``E = [E0; E1]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .numlin import as_matrix, eig

__all__ = [
    "PlantValidationError",
    "PlantSpec",
    "Grid",
    "PdeState",
    "CascadeState",
    "InnerProductWeight",
    "AssumptionReport",
    "build_plant",
    "scalar_plant",
    "folded_scalar_plant",
    "inner_product_weight",
    "h_inner",
    "h_norm",
    "check_assumption1",
    "fold_scalar",
    "unfold_scalar",
    "upwind_operator",
]


class PlantValidationError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True, eq=False)
class PlantSpec:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    speeds: np.ndarray
    D0: np.ndarray
    D1: np.ndarray
    R0: np.ndarray
    R1: np.ndarray
    E0: np.ndarray
    E1: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def N(self):
        return self.speeds.size

    @property
    def k(self):
        return int(np.sum(self.speeds > 0))

    @property
    def K(self) -> np.ndarray:
        """Boundary matrix from outflow traces ``[w-(0); w+(1)]`` to inflow traces."""
        return np.block([[self.D0, self.R0], [self.R1, self.D1]])

    @property
    def E(self) -> np.ndarray:
        return np.vstack([self.E0, self.E1])

    def is_scalar_loop(self) -> bool:
        """True for ``w(0) = w(1) + c z`` with scalar ``z`` (closed-form case)."""
        return self.N == 1 and self.n == 1 and self.k == 1 and self.R0[0, 0] == 1.0

    def scalar_parameters(self):
        """``(a, lambda, c)`` of the scalar loop plant."""
        if not self.is_scalar_loop():
            raise ValueError("closed-form parameters exist only for the scalar loop plant")
        return -self.A[0, 0], self.speeds[0], self.E0[0, 0]

    def with_(self, **changes) -> "PlantSpec":
        fields = {f: getattr(self, f) for f in self.__dataclass_fields__}
        fields.update(changes)
        return build_plant(**fields)


def _block(X, name, shape):
    if X is None:
        return np.zeros(shape)
    arr = np.array(X, dtype=float)
    if arr.size != shape[0] * shape[1]:
        raise PlantValidationError(name, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise PlantValidationError(name, "non-finite entries")
    return arr.reshape(shape)


def build_plant(A, B, C, speeds, D0=None, D1=None, R0=None, R1=None, E0=None, E1=None) -> PlantSpec:
    """Validate raw matrices and return a :class:`PlantSpec`.

    Channels must be ordered with all positive speeds first.  Missing
    boundary blocks default to zero.
    """
    try:
        A = as_matrix(A, "A", square=True)
    except ValueError as exc:
        raise PlantValidationError("A", str(exc)) from None
    n = A.shape[0]
    try:
        B = as_matrix(B, "B")
        C = as_matrix(C, "C")
    except ValueError as exc:
        raise PlantValidationError("B/C", str(exc)) from None
    if B.shape[0] != n:
        if B.shape == (1, n):
            B = B.T
        else:
            raise PlantValidationError("B", f"expected {n} rows, got shape {B.shape}")
    if C.shape[1] != n:
        raise PlantValidationError("C", f"expected {n} columns, got shape {C.shape}")
    speeds = np.atleast_1d(np.array(speeds, dtype=float))
    if speeds.ndim != 1 or speeds.size == 0:
        raise PlantValidationError("speeds", "need at least one channel")
    if not np.all(np.isfinite(speeds)):
        raise PlantValidationError("speeds", "non-finite speed")
    if np.any(speeds == 0):
        raise PlantValidationError("speeds", "zero transport speed")
    k = int(np.sum(speeds > 0))
    if k < 1:
        raise PlantValidationError("speeds", "at least one positive speed is required")
    if np.any(speeds[:k] <= 0):
        raise PlantValidationError("speeds", "positive speeds must come first")
    N = speeds.size
    blocks = dict(
        D0=_block(D0, "D0", (k, N - k)),
        D1=_block(D1, "D1", (N - k, k)),
        R0=_block(R0, "R0", (k, k)),
        R1=_block(R1, "R1", (N - k, N - k)),
        E0=_block(E0, "E0", (k, n)),
        E1=_block(E1, "E1", (N - k, n)),
    )
    return PlantSpec(A, B, C, speeds, **blocks)


def scalar_plant(a=1.0, lam=1.0, c=1.0) -> PlantSpec:
    """``z' = -a z + sigma(u)``, ``w_t + lam w_x = 0``, ``w(0) = w(1) + c z``."""
    if lam <= 0:
        raise PlantValidationError("lambda", "scalar loop needs a positive speed")
    return build_plant(A=[[-a]], B=[[1.0]], C=[[c]], speeds=[lam], R0=[[1.0]], E0=[[c]])


def folded_scalar_plant(a=1.0, lam=1.0, c=1.0) -> PlantSpec:
    """Two-channel form of :func:`scalar_plant` obtained by cutting the loop at x = 1/2.

    ``w+(s) = w(s/2)`` and ``w-(s) = w(1 - s/2)`` travel at ``+2 lam`` and
    ``-2 lam``; the jump ``c z`` sits at the inflow of ``w+``.
    """
    return build_plant(A=[[-a]], B=[[1.0]], C=[[c]], speeds=[2 * lam, -2 * lam],
                       D0=[[1.0]], D1=[[1.0]], E0=[[c]], E1=[[0.0]])


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on [0, 1]."""

    cells: int

    def __post_init__(self):
        if int(self.cells) != self.cells or self.cells < 8:
            raise ValueError(f"grid needs an integer number of cells >= 8, got {self.cells}")

    @property
    def step(self) -> Fraction:
        return Fraction(1, self.cells)

    @property
    def h(self) -> float:
        return 1.0 / self.cells

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) / self.cells


PdeState = np.ndarray  # shape (G, N)


@dataclass
class CascadeState:
    z: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.z = np.atleast_1d(np.asarray(self.z, dtype=float))
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim == 1:
            self.w = self.w[:, None]
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.w))):
            raise ValueError("state has non-finite entries")

    def __sub__(self, other):
        return CascadeState(self.z - other.z, self.w - other.w, self.t)

    def __mul__(self, a):
        return CascadeState(a * self.z, a * self.w, self.t)

    __rmul__ = __mul__


@dataclass(frozen=True)
class InnerProductWeight:
    mode: str
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(np.asarray(self.weights) <= 0):
            raise ValueError("inner-product weights must be positive")


def inner_product_weight(plant: PlantSpec, mode="auto") -> InnerProductWeight:
    """``plain`` (unit weights) or ``speed_weighted`` (``1/|lambda_i|``).

    ``auto`` picks plain for a single channel and speed-weighted otherwise.
    """
    if mode == "auto":
        mode = "plain" if plant.N == 1 else "speed_weighted"
    if mode == "plain":
        return InnerProductWeight("plain", np.ones(plant.N))
    if mode == "speed_weighted":
        return InnerProductWeight("speed_weighted", 1.0 / np.abs(plant.speeds))
    raise ValueError(f"unknown inner product {mode!r}")


def _as_profile(w):
    w = np.asarray(w)
    return w[:, None] if w.ndim == 1 else w


def h_inner(w1, w2, grid: Grid, wt: InnerProductWeight) -> float:
    """Midpoint-rule weighted L2 product of two grid profiles."""
    w1, w2 = _as_profile(w1), _as_profile(w2)
    if w1.shape != w2.shape or w1.shape != (grid.cells, wt.weights.size):
        raise ValueError(f"profile shapes {w1.shape}, {w2.shape} do not match grid "
                         f"({grid.cells}, {wt.weights.size})")
    return float(grid.h * np.einsum("gj,j,gj->", w1, wt.weights, w2))


def h_norm(w, grid, wt) -> float:
    return float(np.sqrt(max(h_inner(w, w, grid, wt), 0.0)))


@dataclass(frozen=True)
class AssumptionReport:
    contraction: bool
    hurwitz: bool
    disjoint: bool
    disjoint_method: str
    caveat: bool
    boundary_gain: float
    spectral_gap: float
    detail: str = ""

    @property
    def passed(self):
        return self.contraction and self.hurwitz and self.disjoint

    def failures(self):
        names = ("(i) contraction semigroup", "(ii) A Hurwitz", "(iii) disjoint spectra")
        return [nm for nm, ok in zip(names, (self.contraction, self.hurwitz, self.disjoint)) if not ok]


def check_assumption1(plant: PlantSpec, grid: Grid, tol=1e-12) -> AssumptionReport:
    """Numerical verdicts for the three standing assumptions.

    (i) holds iff ``K^T K <= I`` (the speed-weighted energy balance at the
    boundary).  (ii) is an eigenvalue test on ``A``.  (iii) is immediate when
    ``K`` is orthogonal (skew-adjoint transport, imaginary spectrum);
    otherwise it is approximated by the spectrum of the upwind generator and
    the report carries a caveat.
    """
    K = plant.K
    gain = float(np.max(np.linalg.eigvalsh(K.T @ K))) if K.size else 0.0
    contraction = gain <= 1.0 + tol
    spec_A = eig(plant.A)
    hurwitz = spec_A.is_hurwitz()
    orthogonal = K.size > 0 and np.allclose(K.T @ K, np.eye(K.shape[0]), atol=1e-12)
    if orthogonal:
        gap = float(np.min(np.abs(spec_A.eigenvalues.real)))
        disjoint, method, caveat = hurwitz, "skew-adjoint", False
    else:
        S_h, _ = upwind_operator(plant, grid)
        spec_S = eig(S_h.toarray())
        gap = spec_S.distance_to(spec_A)
        scale = max(1.0, float(np.max(np.abs(spec_A.eigenvalues))))
        disjoint, method, caveat = gap > 1e-8 * scale, "discretized", True
    detail = f"max eig(K^T K) = {gain:.6g}; max Re eig(A) = {spec_A.max_real:.6g}; gap = {gap:.3g}"
    return AssumptionReport(contraction, hurwitz, disjoint, method, caveat, gain, gap, detail)


def fold_scalar(w_plus, w_minus) -> np.ndarray:
    """Glue a two-channel profile into one loop profile on a grid twice as fine.

    ``w(x) = w+(2x)`` for ``x < 1/2`` and ``w(x) = w-(2(1 - x))`` for ``x > 1/2``.
    """
    w_plus = np.asarray(w_plus, dtype=float)
    w_minus = np.asarray(w_minus, dtype=float)
    if w_plus.shape != w_minus.shape:
        raise ValueError("w_plus and w_minus need the same number of samples")
    return np.concatenate([w_plus, w_minus[::-1]])


def unfold_scalar(w):
    """Inverse of :func:`fold_scalar`."""
    w = np.asarray(w, dtype=float)
    if w.shape[0] % 2:
        raise ValueError("folded profile must have an even number of samples")
    half = w.shape[0] // 2
    return w[:half], w[half:][::-1]


def upwind_operator(plant: PlantSpec, grid: Grid):
    """First-order upwind generator ``S_h`` and boundary injection ``Gamma_h``.

    Profiles are flattened row-major from shape ``(G, N)``.  The semi-discrete
    transport reads ``w' = S_h w + Gamma_h z``; ``Gamma_h`` is ``E`` scaled by
    ``|lambda_j| / h`` in each channel's inflow cell.
    """
    G, N, k = grid.cells, plant.N, plant.k
    nu = np.abs(plant.speeds) / grid.h
    K, E = plant.K, plant.E

    def idx(i, j):
        return i * N + j

    # outflow trace q -> flat index: [w-(0) channels k..N-1, then w+(1) channels 0..k-1]
    out_idx = [idx(0, j) for j in range(k, N)] + [idx(G - 1, j) for j in range(k)]
    rows, cols, vals = [], [], []
    Gam = np.zeros((G * N, plant.n))
    for j in range(N):
        cells = range(G)
        for i in cells:
            rows.append(idx(i, j)); cols.append(idx(i, j)); vals.append(-nu[j])
            up = i - 1 if j < k else i + 1
            if 0 <= up < G:
                rows.append(idx(i, j)); cols.append(idx(up, j)); vals.append(nu[j])
        inflow = idx(0, j) if j < k else idx(G - 1, j)
        for q, col in enumerate(out_idx):
            if K[j, q] != 0.0:
                rows.append(inflow); cols.append(col); vals.append(nu[j] * K[j, q])
        Gam[inflow] = nu[j] * E[j]
    S_h = sp.csr_matrix((vals, (rows, cols)), shape=(G * N, G * N))
    return S_h, Gam
