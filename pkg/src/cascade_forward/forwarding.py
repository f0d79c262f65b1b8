"""Forwarding controller for the ODE/transport cascade.

The controller is an estimator in the scikit-learn sense: ``fit`` performs
the synthesis (Lyapunov matrix ``P``, Sylvester gain ``M``, norm constants)
for a given plant and grid, and the fitted object maps stacked states
``X = [z, vec(w)]`` to controls (``predict``), Lyapunov values
(``score_samples``) or forwarding coordinates ``[z, w - M z]``
(``transform``).

Feedback law::

    u = -B^T (P z - M^*(w - M z))

where ``M^*`` is the exact discrete adjoint of ``z -> M z`` for the grid
inner product.  With that choice ``V(z, w) = z^T P z + ||w - M z||^2``
satisfies ``dV/dt <= -|z|^2 - 2 u^T sigma(u)`` along the semi-discrete flow.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import sylvester as syl
from .nonlinearity import compose_shaping, linear, parse_nonlinearity
from .numlin import solve_lyapunov
from .plant import (CascadeState, Grid, InnerProductWeight, PlantSpec, build_plant,
                    check_assumption1, h_inner, inner_product_weight)

__all__ = [
    "AssumptionError",
    "ForwardingController",
    "synthesize",
    "adjoint_apply",
    "feedback_u",
    "lyapunov_V",
    "v_norm",
    "norm_equivalence_constants",
    "save_controller",
    "load_controller",
]


class AssumptionError(ValueError):
    def __init__(self, report):
        super().__init__("standing assumptions fail: " + ", ".join(report.failures()))
        self.report = report


def norm_equivalence_constants(p_min, p_max, m_norm2):
    """``(c_lo, c_hi)`` with ``c_lo (|z|^2 + ||w||^2) <= V <= c_hi (|z|^2 + ||w||^2)``.

    Upper: ``V <= p_max|z|^2 + 2||w||^2 + 2||Mz||^2``.  Lower: Young's
    inequality with ``eps = 2||M||^2 / (p_min + 2||M||^2)``.
    """
    c_hi = max(2.0, p_max + 2.0 * m_norm2)
    c_lo = min(p_min / 2.0, p_min / (p_min + 2.0 * m_norm2))
    return c_lo, c_hi


class ForwardingController(TransformerMixin, BaseEstimator):
    """Forwarding feedback synthesized for a cascade plant.

    Parameters
    ----------
    sigma : Nonlinearity, optional
        Actuator nonlinearity. Defaults to the identity on ``R^m``.
    shaping : Nonlinearity, optional
        Extra map ``psi`` applied to the feedback before the actuator, so
        the actuator sees ``sigma(psi(u))``.
    method : {"discrete", "bvp", "closed"}
        Route for the Sylvester gain. ``discrete`` matches the simulator
        exactly; the others are references.
    inner_product : {"auto", "plain", "speed_weighted"}
        Inner product on profiles used for ``V`` and for the adjoint.
    force : bool
        Synthesize even if the standing assumptions fail.
    """

    def __init__(self, sigma=None, shaping=None, method="discrete", inner_product="auto", force=False):
        self.sigma = sigma
        self.shaping = shaping
        self.method = method
        self.inner_product = inner_product
        self.force = force

    def fit(self, plant: PlantSpec, grid: Grid | None = None):
        grid = grid if grid is not None else Grid(200)
        report = check_assumption1(plant, grid)
        if not report.passed and not self.force:
            raise AssumptionError(report)
        sigma = self.sigma if self.sigma is not None else linear(1.0, plant.m)
        for nm, f in (("sigma", sigma), ("shaping", self.shaping)):
            if f is not None and f.dim != plant.m:
                raise ValueError(f"{nm} acts on R^{f.dim} but the plant has {plant.m} inputs")
        self.plant_ = plant
        self.grid_ = grid
        self.assumptions_ = report
        self.sigma_ = sigma
        self.actuator_ = compose_shaping(self.shaping, sigma) if self.shaping is not None else sigma
        self.weight_ = inner_product_weight(plant, self.inner_product)
        self.P_ = solve_lyapunov(plant.A)
        self.M_ = syl.solve(plant, grid, self.method)
        self._finish()
        return self

    def _finish(self):
        vals = self.M_.values
        self.gram_ = self.grid_.h * np.einsum("gjn,j,gjk->nk", vals, self.weight_.weights, vals)
        self.gram_ = 0.5 * (self.gram_ + self.gram_.T)
        self.Mnorm2_ = float(np.max(np.linalg.eigvalsh(self.gram_)))
        p_eigs = np.linalg.eigvalsh(self.P_)
        self.p_min_, self.p_max_ = float(p_eigs[0]), float(p_eigs[-1])
        self.c_lo_, self.c_hi_ = norm_equivalence_constants(self.p_min_, self.p_max_, self.Mnorm2_)
        self.n_features_in_ = self.plant_.n + self.grid_.cells * self.plant_.N

    # -- state-level API -------------------------------------------------

    def adjoint_apply(self, w) -> np.ndarray:
        """``M^* w``: component ``j`` is ``sum_i h (M(x_i) e_j)^T W w(x_i)``."""
        check_is_fitted(self, "M_")
        w = self._profile(w)
        return self.grid_.h * np.einsum("gjn,j,gj->n", self.M_.values, self.weight_.weights, w)

    def raw_feedback(self, z, w) -> np.ndarray:
        """The forwarding law before any shaping."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        eta = self._profile(w) - self.M_.apply(z)
        return -self.plant_.B.T @ (self.P_ @ z - self.adjoint_apply(eta))

    def linear_gains(self):
        """``(K_z, K_w)`` with ``raw_feedback(z, w) = K_z z + K_w vec(w)``."""
        check_is_fitted(self, "M_")
        Bt = self.plant_.B.T
        K_z = -Bt @ (self.P_ + self.gram_)
        MW = self.grid_.h * self.M_.values * self.weight_.weights[None, :, None]
        K_w = Bt @ MW.reshape(-1, self.plant_.n).T
        return K_z, K_w

    def feedback(self, state: CascadeState) -> np.ndarray:
        u = self.raw_feedback(state.z, state.w)
        return self.shaping(u) if self.shaping is not None else u

    def actuate(self, u_raw) -> np.ndarray:
        """What reaches the ODE: ``sigma(psi(u))``."""
        return self.actuator_(u_raw)

    def lyapunov(self, state: CascadeState) -> float:
        z = state.z
        eta = self._profile(state.w) - self.M_.apply(z)
        return float(z @ self.P_ @ z + h_inner(eta, eta, self.grid_, self.weight_))

    def v_norm(self, state: CascadeState) -> float:
        return float(np.sqrt(max(self.lyapunov(state), 0.0)))

    def _profile(self, w):
        w = np.asarray(w, dtype=float)
        if w.ndim == 1 and self.plant_.N == 1:
            w = w[:, None]
        if w.shape != (self.grid_.cells, self.plant_.N):
            raise ValueError(f"profile shape {w.shape} does not match ({self.grid_.cells}, {self.plant_.N})")
        return w

    # -- estimator API on stacked states ---------------------------------

    def _split(self, X):
        check_is_fitted(self, "M_")
        X = check_array(X, ensure_2d=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        n = self.plant_.n
        return X[:, :n], X[:, n:].reshape(len(X), self.grid_.cells, self.plant_.N)

    def stack(self, state: CascadeState) -> np.ndarray:
        """Inverse of the feature layout used by ``predict``/``transform``."""
        return np.concatenate([state.z, self._profile(state.w).ravel()])

    def predict(self, X) -> np.ndarray:
        Z, W = self._split(X)
        U = [self.raw_feedback(z, w) for z, w in zip(Z, W)]
        U = np.array(U).reshape(len(Z), self.plant_.m)
        if self.shaping is not None:
            U = self.shaping(U)
        return U

    def score_samples(self, X) -> np.ndarray:
        Z, W = self._split(X)
        return np.array([self.lyapunov(CascadeState(z, w)) for z, w in zip(Z, W)])

    def transform(self, X) -> np.ndarray:
        Z, W = self._split(X)
        MZ = np.einsum("gjn,sn->sgj", self.M_.values, Z)
        return np.concatenate([Z, (W - MZ).reshape(len(Z), -1)], axis=1)

    def inverse_transform(self, Xt) -> np.ndarray:
        Z, E = self._split(Xt)
        MZ = np.einsum("gjn,sn->sgj", self.M_.values, Z)
        return np.concatenate([Z, (E + MZ).reshape(len(Z), -1)], axis=1)


def synthesize(plant, grid, sigma=None, method="discrete", shaping=None,
               inner_product="auto", force=False) -> ForwardingController:
    return ForwardingController(sigma=sigma, shaping=shaping, method=method,
                                inner_product=inner_product, force=force).fit(plant, grid)


def adjoint_apply(ctl: ForwardingController, w) -> np.ndarray:
    return ctl.adjoint_apply(w)


def feedback_u(ctl: ForwardingController, state: CascadeState) -> np.ndarray:
    return ctl.feedback(state)


def lyapunov_V(ctl: ForwardingController, state: CascadeState) -> float:
    return ctl.lyapunov(state)


def v_norm(ctl: ForwardingController, state: CascadeState) -> float:
    return ctl.v_norm(state)


# -- plain-text export -----------------------------------------------------

def _fmt(a):
    return " ".join(f"{v:.17g}" for v in np.ravel(a))


def save_controller(ctl: ForwardingController, path):
    """Write ``P``, the gain samples and the constants as ``key = value`` lines."""
    check_is_fitted(ctl, "M_")
    pl = ctl.plant_
    lines = [
        "# forwarding controller",
        f"n = {pl.n}", f"m = {pl.m}", f"N = {pl.N}", f"cells = {ctl.grid_.cells}",
        f"method = {ctl.M_.method}",
        f"inner_product = {ctl.weight_.mode}",
        f"weights = {_fmt(ctl.weight_.weights)}",
        f"sigma = {ctl.sigma_.describe()}",
        f"shaping = {ctl.shaping.describe() if ctl.shaping is not None else 'none'}",
    ]
    for nm in ("A", "B", "C", "speeds", "D0", "D1", "R0", "R1", "E0", "E1"):
        lines.append(f"plant.{nm} = {_fmt(getattr(pl, nm))}")
    lines += [
        f"P = {_fmt(ctl.P_)}",
        f"p_min = {ctl.p_min_:.17g}", f"p_max = {ctl.p_max_:.17g}",
        f"Mnorm2 = {ctl.Mnorm2_:.17g}",
        f"c_lo = {ctl.c_lo_:.17g}", f"c_hi = {ctl.c_hi_:.17g}",
        f"sylvester_residual = {ctl.M_.residual if ctl.M_.residual is not None else 'nan'}",
        "[M]  # x, then M(x) row-major",
    ]
    for x, row in zip(ctl.grid_.nodes, ctl.M_.values):
        lines.append(f"{x:.17g} {_fmt(row)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_controller(path) -> ForwardingController:
    """Rebuild a fitted controller from :func:`save_controller` output without re-solving."""
    kv, rows, in_m = {}, [], False
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[M]"):
                in_m = True
                continue
            if in_m:
                rows.append([float(t) for t in line.split()])
            else:
                key, _, val = line.partition("=")
                kv[key.strip()] = val.strip()
    n, m, N, G = (int(kv[k]) for k in ("n", "m", "N", "cells"))
    num = lambda key: np.array([float(t) for t in kv[key].split()]) if kv[key] else np.zeros(0)
    speeds = num("plant.speeds")
    k = int(np.sum(speeds > 0))
    shapes = {"A": (n, n), "B": (n, m), "C": (-1, n), "D0": (k, N - k), "D1": (N - k, k),
              "R0": (k, k), "R1": (N - k, N - k), "E0": (k, n), "E1": (N - k, n)}
    raw = {nm: num(f"plant.{nm}").reshape(shp) for nm, shp in shapes.items()}
    plant = build_plant(speeds=speeds, **raw)
    grid = Grid(G)
    shaping = None if kv["shaping"] == "none" else parse_nonlinearity(kv["shaping"])
    ctl = ForwardingController(sigma=parse_nonlinearity(kv["sigma"]), shaping=shaping,
                               method=kv["method"], inner_product=kv["inner_product"], force=True)
    data = np.array(rows)
    ctl.plant_, ctl.grid_ = plant, grid
    ctl.sigma_ = ctl.sigma
    ctl.actuator_ = compose_shaping(shaping, ctl.sigma) if shaping is not None else ctl.sigma
    ctl.weight_ = InnerProductWeight(kv["inner_product"], num("weights"))
    ctl.P_ = num("P").reshape(n, n)
    ctl.M_ = syl.SylvesterSolution(data[:, 1:].reshape(G, N, n), grid, kv["method"])
    ctl.assumptions_ = check_assumption1(plant, grid)
    ctl._finish()
    return ctl
