"""Cone-bounded input nonlinearities.

A map ``sigma: R^m -> R^m`` is admissible when ``sigma(0) = 0``, it is
monotone, ``(sigma(s1) - sigma(s2)) . (s1 - s2) >= 0``, and it is linearly
bounded, ``|sigma(s)| <= L |s|``.  The catalog below covers linear gains,
componentwise saturations, the square-root shaped saturation (which is not
locally Lipschitz at ``|s| = 1``), and compositions ``sigma o psi`` used to
shape small controls.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

__all__ = [
    "Nonlinearity",
    "ValidationReport",
    "linear",
    "saturation",
    "sat_phi",
    "custom",
    "compose_shaping",
    "eval_sigma",
    "validate_cone_bounded",
    "parse_nonlinearity",
]

# sup_{s>0} phi(s)/s, attained at s = 1 + (sqrt(2) - 1)^2
SAT_PHI_BOUND = (1.0 + math.sqrt(2.0)) / 2.0


def _phi(s):
    out = np.array(s, dtype=float)
    big = np.abs(out) > 1.0
    out[big] = np.sign(out[big]) * (np.sqrt(np.abs(out[big]) - 1.0) + 1.0)
    return out


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """An input map together with its cone constant ``bound``.

    Build instances with :func:`linear`, :func:`saturation`, :func:`sat_phi`,
    :func:`compose_shaping` or :func:`custom` rather than directly.
    """

    kind: str
    dim: int
    bound: float
    gain: float = 1.0
    levels: tuple = ()
    outer: "Nonlinearity | None" = None
    inner: "Nonlinearity | None" = None
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError(f"cone bound must be positive and finite, got {self.bound}")
        if self.kind == "linear" and not self.gain > 0:
            raise ValueError(f"linear gain must be positive, got {self.gain}")
        if self.kind in ("saturation", "sat_phi"):
            if len(self.levels) != self.dim:
                raise ValueError("one saturation level per input channel is required")
            if any(not (lv > 0 and math.isfinite(lv)) for lv in self.levels):
                raise ValueError("saturation levels must be positive")
            if self.kind == "sat_phi" and any(lv <= 1.0 for lv in self.levels):
                raise ValueError("sat_phi needs every level strictly above 1")
        if self.kind == "composed" and (self.outer is None or self.inner is None):
            raise ValueError("composed nonlinearity needs outer and inner maps")
        if self.kind == "custom" and self.func is None:
            raise ValueError("custom nonlinearity needs func")
        if self.kind not in ("linear", "saturation", "sat_phi", "composed", "custom"):
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")

    def __call__(self, s):
        return eval_sigma(self, s)

    def _apply(self, s):
        if self.kind == "linear":
            return self.gain * s
        if self.kind == "saturation":
            lv = np.asarray(self.levels)
            return np.clip(s, -lv, lv)
        if self.kind == "sat_phi":
            lv = np.asarray(self.levels)
            return np.clip(_phi(s), -lv, lv)
        if self.kind == "composed":
            return self.outer._apply(self.inner._apply(s))
        return np.asarray(self.func(s), dtype=float)

    def describe(self) -> str:
        """Text form accepted by :func:`parse_nonlinearity`."""
        if self.kind == "linear":
            return f"linear({self.gain!r}, dim={self.dim})"
        if self.kind in ("saturation", "sat_phi"):
            return f"{self.kind}({', '.join(repr(float(v)) for v in self.levels)})"
        if self.kind == "composed":
            return f"compose({self.outer.describe()}; {self.inner.describe()})"
        raise ValueError("custom nonlinearities have no text form")


def linear(gain=1.0, dim=1) -> Nonlinearity:
    return Nonlinearity("linear", int(dim), float(gain), gain=float(gain))


def saturation(levels) -> Nonlinearity:
    lv = tuple(float(v) for v in np.atleast_1d(levels))
    return Nonlinearity("saturation", len(lv), 1.0, levels=lv)


def sat_phi(levels) -> Nonlinearity:
    """Saturation of the square-root shaping ``phi``; every level must exceed 1."""
    lv = tuple(float(v) for v in np.atleast_1d(levels))
    return Nonlinearity("sat_phi", len(lv), SAT_PHI_BOUND, levels=lv)


def custom(func, bound, dim=1) -> Nonlinearity:
    """Wrap an arbitrary map; admissibility is up to :func:`validate_cone_bounded`."""
    return Nonlinearity("custom", int(dim), float(bound), func=func)


def compose_shaping(psi: Nonlinearity, sig: Nonlinearity) -> Nonlinearity:
    """Return ``sig o psi`` with cone constant ``L_sig * L_psi``."""
    if psi.dim != sig.dim:
        raise ValueError(f"dimension mismatch: psi has {psi.dim}, sigma has {sig.dim}")
    return Nonlinearity("composed", sig.dim, sig.bound * psi.bound, outer=sig, inner=psi)


def eval_sigma(sig: Nonlinearity, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[-1:] != (sig.dim,) and not (sig.dim == 1 and s.ndim == 0):
        raise ValueError(f"expected input of dimension {sig.dim}, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite input to nonlinearity")
    return sig._apply(s)


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    zero_ok: bool
    worst_monotonicity: float
    worst_ratio: float
    bound: float
    samples: int

    @property
    def monotone(self):
        return self.worst_monotonicity >= -1e-12

    @property
    def bounded(self):
        return self.worst_ratio <= self.bound + 1e-9


def validate_cone_bounded(sig: Nonlinearity, samples=10_000, span=10.0, seed=0) -> ValidationReport:
    """Probe the three cone-bounded conditions on quasi-random sample pairs.

    Pairs are drawn from a scrambled Halton sequence over ``[-span, span]^m``
    with a fixed seed, so the report is reproducible.  Passing is evidence,
    not proof: the conditions quantify over all of ``R^m``.
    """
    if samples < 1 or span <= 0:
        raise ValueError("samples must be >= 1 and span > 0")
    m = sig.dim
    pts = qmc.Halton(d=2 * m, scramble=True, seed=seed).random(samples)
    pts = span * (2.0 * pts - 1.0)
    s1, s2 = pts[:, :m], pts[:, m:]
    f1, f2 = eval_sigma(sig, s1), eval_sigma(sig, s2)
    mono = np.einsum("ij,ij->i", f1 - f2, s1 - s2)
    n1 = np.linalg.norm(s1, axis=1)
    ratio = np.linalg.norm(f1, axis=1)[n1 > 0] / n1[n1 > 0]
    zero_ok = bool(np.all(eval_sigma(sig, np.zeros(m)) == 0.0))
    worst_mono = float(mono.min())
    worst_ratio = float(ratio.max()) if ratio.size else 0.0
    passed = zero_ok and worst_mono >= -1e-12 and worst_ratio <= sig.bound + 1e-9
    return ValidationReport(passed, zero_ok, worst_mono, worst_ratio, sig.bound, samples)


_CALL = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$", re.S)


def parse_nonlinearity(text: str) -> Nonlinearity:
    """Inverse of :meth:`Nonlinearity.describe`."""
    mt = _CALL.match(text)
    if not mt:
        raise ValueError(f"cannot parse nonlinearity {text!r}")
    name, body = mt.group(1), mt.group(2)
    if name == "compose":
        depth = 0
        for i, ch in enumerate(body):
            depth += ch == "("
            depth -= ch == ")"
            if ch == ";" and depth == 0:
                return compose_shaping(parse_nonlinearity(body[i + 1:]), parse_nonlinearity(body[:i]))
        raise ValueError(f"compose needs two arguments: {text!r}")
    args = [a.strip() for a in body.split(",") if a.strip()]
    if name == "linear":
        dim = 1
        if len(args) > 1 and args[1].startswith("dim="):
            dim = int(args[1][4:])
        return linear(float(args[0]), dim)
    if name in ("saturation", "sat_phi"):
        levels = [float(a) for a in args]
        return saturation(levels) if name == "saturation" else sat_phi(levels)
    raise ValueError(f"unknown nonlinearity {name!r}")
