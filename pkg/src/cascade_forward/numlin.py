"""Small dense linear-algebra kernels used across the package.

Everything here works on plain ``numpy`` arrays.  Matrix equations are
solved through their Kronecker linearization, which is O(n^6) but exact up
to a single dense solve; the problem sizes in this package are desk scale.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "NumericalError",
    "SingularSystemError",
    "Spectrum",
    "as_matrix",
    "solve_lyapunov",
    "solve_sylvester",
    "mat_exp",
    "eig",
    "numerical_rank",
    "realify",
]

DEFAULT_RANK_TOL = 1e-9


class NumericalError(ArithmeticError):
    """Raised when a numerical kernel cannot produce a trustworthy result."""


class SingularSystemError(NumericalError):
    """Raised when a linearized matrix equation has no unique solution."""


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    source: str = "exact"

    def __len__(self):
        return len(self.eigenvalues)

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))

    def is_hurwitz(self) -> bool:
        return self.max_real < 0.0

    def distance_to(self, other: "Spectrum") -> float:
        """Smallest pairwise distance between two spectra."""
        d = np.abs(self.eigenvalues[:, None] - other.eigenvalues[None, :])
        return float(d.min())


def as_matrix(X, name="matrix", *, square=False, shape=None) -> np.ndarray:
    """Coerce ``X`` to a finite 2-D float array, raising ``ValueError`` otherwise."""
    arr = np.array(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    if square and arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    return arr


def _vec(X):
    return X.reshape(-1, order="F")


def _unvec(x, rows, cols):
    return x.reshape(rows, cols, order="F")


def _solve_dense(K, rhs, what):
    # LAPACK's rcond estimate flags near-singular systems as a warning; promote it.
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        try:
            return scipy.linalg.solve(K, rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning) as exc:
            raise SingularSystemError(f"{what}: {exc}") from exc


def solve_lyapunov(A) -> np.ndarray:
    """Solve ``P A + A^T P = -I`` for symmetric ``P``.

    Uses ``((I kron A^T) + (A^T kron I)) vec(P) = -vec(I)``.  The caller is
    expected to have checked that ``A`` is Hurwitz; when it is, the returned
    ``P`` is symmetric positive definite.
    """
    A = as_matrix(A, "A", square=True)
    n = A.shape[0]
    eye = np.eye(n)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    p = _solve_dense(K, -_vec(eye), "Lyapunov equation")
    P = _unvec(p, n, n)
    return 0.5 * (P + P.T)


def solve_sylvester(S, A, Q) -> np.ndarray:
    """Solve ``S X - X A = Q`` by Kronecker linearization."""
    S = as_matrix(S, "S", square=True)
    A = as_matrix(A, "A", square=True)
    Q = as_matrix(Q, "Q", shape=(S.shape[0], A.shape[0]))
    K = np.kron(np.eye(A.shape[0]), S) - np.kron(A.T, np.eye(S.shape[0]))
    x = _solve_dense(K, _vec(Q), "Sylvester equation")
    return _unvec(x, S.shape[0], A.shape[0])


def mat_exp(X, t=1.0) -> np.ndarray:
    """``exp(t X)`` by scaling and squaring (Pade core)."""
    X = as_matrix(X, "X", square=True)
    tX = t * X
    # exp overflows float64 beyond ~709
    if np.linalg.norm(tX, 1) > 700.0:
        raise NumericalError(f"mat_exp: |t|*||X|| = {np.linalg.norm(tX, 1):.3g} overflows")
    E = scipy.linalg.expm(tX)
    if not np.all(np.isfinite(E)):
        raise NumericalError("mat_exp: non-finite result")
    return E


def eig(X) -> Spectrum:
    X = as_matrix(X, "X", square=True)
    try:
        ev = np.linalg.eigvals(X)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigenvalue iteration did not converge: {exc}") from exc
    order = np.lexsort((ev.imag, ev.real))
    return Spectrum(ev[order], "exact")


def realify(X) -> np.ndarray:
    """Real 2x embedding ``[[Re, -Im], [Im, Re]]`` of a complex matrix."""
    X = np.asarray(X, dtype=complex)
    return np.block([[X.real, -X.imag], [X.imag, X.real]])


def numerical_rank(X, tol=DEFAULT_RANK_TOL) -> int:
    """Count singular values above ``tol`` times the largest one.

    Complex input is handled through :func:`realify`; each complex rank
    unit shows up twice in the embedding, so half the embedded rank is
    returned.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    X = np.asarray(X)
    if X.size == 0:
        raise ValueError("numerical_rank of an empty matrix")
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {X.shape}")
    if np.iscomplexobj(X):
        return numerical_rank(realify(X), tol) // 2
    s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))
