"""Scenario files: ``key = value`` sections read with :mod:`configparser`.

Default table (every key not listed under a section is rejected)::

    [plant]          kind = transport_scalar
                     a = 1, lambda = 1, c = 1                     (scalar)
                     A, B, C, speeds, D0, D1, R0, R1, E0, E1      (system; rows split by ';')
    [nonlinearity]   kind = saturation, level = 1, gain = 1, shaping = none
    [grid]           cells = 200, cfl_safety = 0.9
    [inner_product]  mode = auto
    [sim]            t_final = 60, record_stride = 1, integrator = euler
    [init]           z0 = 1, w0 = sine 1
    [sylvester]      method = discrete
"""
from __future__ import annotations

import configparser
import math
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .forwarding import synthesize
from .nonlinearity import linear, parse_nonlinearity, sat_phi, saturation
from .plant import Grid, PlantValidationError, build_plant, scalar_plant
from .simulate import INTEGRATORS, InitialProfile, Scenario

__all__ = ["ConfigError", "ScenarioWarning", "ScenarioConfig", "parse_scenario", "load_scenario"]


class ConfigError(ValueError):
    """Invalid scenario file; ``key`` names the offending entry when known."""

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class ScenarioWarning(UserWarning):
    pass


SYSTEM_KEYS = ("A", "B", "C", "speeds", "D0", "D1", "R0", "R1", "E0", "E1")

DEFAULTS = {
    "plant": {"kind": "transport_scalar", "a": "1", "lambda": "1", "c": "1"},
    "nonlinearity": {"kind": "saturation", "level": "1", "gain": "1", "shaping": "none"},
    "grid": {"cells": "200", "cfl_safety": "0.9"},
    "inner_product": {"mode": "auto"},
    "sim": {"t_final": "60", "record_stride": "1", "integrator": "euler"},
    "init": {"z0": "1", "w0": "sine 1"},
    "sylvester": {"method": "discrete"},
}
ALLOWED = {sec: set(keys) for sec, keys in DEFAULTS.items()}
ALLOWED["plant"] |= set(SYSTEM_KEYS)
# defaulting these is worth a warning: they change the outcome materially
WARN_IF_MISSING = {("sim", "t_final")}


def _matrix(text, key):
    rows = [r for r in text.split(";") if r.strip()]
    try:
        data = [[float(t) for t in r.replace(",", " ").split()] for r in rows]
    except ValueError:
        raise ConfigError(f"cannot read matrix {text!r}", key) from None
    if data and len({len(r) for r in data}) != 1:
        raise ConfigError("rows have different lengths", key)
    arr = np.array(data, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("non-finite entry", key)
    return tuple(tuple(r) for r in arr)


def _fmt_matrix(rows):
    return "; ".join(" ".join(repr(float(v)) for v in r) for r in rows)


def _real(text, key, positive=False):
    try:
        val = float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}", key) from None
    if not math.isfinite(val):
        raise ConfigError("must be finite", key)
    if positive and val <= 0:
        raise ConfigError("must be positive", key)
    return val


def _int(text, key, minimum):
    try:
        val = int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", key) from None
    if val < minimum:
        raise ConfigError(f"must be >= {minimum}", key)
    return val


@dataclass(frozen=True)
class ScenarioConfig:
    """Typed, validated contents of a scenario file; :meth:`build` makes a :class:`Scenario`."""

    plant_kind: str = "transport_scalar"
    a: float = 1.0
    lam: float = 1.0
    c: float = 1.0
    system: tuple = ()          # ((key, matrix rows), ...) for transport_system
    nl_kind: str = "saturation"
    levels: tuple = (1.0,)
    gain: float = 1.0
    shaping: str = "none"
    cells: int = 200
    cfl_safety: float = 0.9
    inner_product: str = "auto"
    t_final: float = 60.0
    record_stride: int = 1
    integrator: str = "euler"
    z0: tuple = (1.0,)
    w0_kind: str = "sine"
    w0_value: float = 1.0
    w0_path: str = ""
    method: str = "discrete"
    base_dir: str = "."

    def __eq__(self, other):
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        return all(getattr(self, f.name) == getattr(other, f.name)
                   for f in fields(self) if f.name != "base_dir")

    __hash__ = None

    # -- construction -----------------------------------------------------

    def plant(self):
        try:
            if self.plant_kind == "transport_scalar":
                return scalar_plant(self.a, self.lam, self.c)
            mats = {k: np.array(v, dtype=float) for k, v in self.system}
            mats["speeds"] = mats["speeds"].ravel()
            return build_plant(**mats)
        except PlantValidationError as exc:
            raise ConfigError(str(exc), f"plant.{exc.field}") from None

    def sigma(self, m):
        if self.nl_kind == "linear":
            return linear(self.gain, m)
        levels = self.levels if len(self.levels) != 1 else self.levels * m
        if len(levels) != m:
            raise ConfigError(f"{len(levels)} levels for {m} inputs", "nonlinearity.level")
        try:
            return saturation(levels) if self.nl_kind == "saturation" else sat_phi(levels)
        except ValueError as exc:
            raise ConfigError(str(exc), "nonlinearity.level") from None

    def shaping_map(self, m):
        if self.shaping == "none":
            return None
        try:
            psi = parse_nonlinearity(self.shaping)
        except ValueError as exc:
            raise ConfigError(str(exc), "nonlinearity.shaping") from None
        if psi.dim != m:
            if psi.kind == "saturation" and psi.dim == 1:
                psi = saturation(psi.levels * m)
            else:
                raise ConfigError(f"shaping acts on R^{psi.dim}, plant has {m} inputs",
                                  "nonlinearity.shaping")
        return psi

    def initial_profile(self):
        if self.w0_kind == "samples":
            path = Path(self.w0_path)
            path = path if path.is_absolute() else Path(self.base_dir) / path
            try:
                data = np.loadtxt(path, dtype=float, ndmin=1)
            except OSError as exc:
                raise ConfigError(f"cannot read samples: {exc}", "init.w0") from None
            return InitialProfile("samples", samples=data)
        if self.w0_kind == "sine":
            return InitialProfile("sine", 1.0, int(self.w0_value))
        return InitialProfile("constant", self.w0_value)

    def build(self, force=False, sabotage=False, grid_cells=None) -> Scenario:
        """Plant, controller and scenario.  Raises ``AssumptionError`` unless ``force``."""
        plant = self.plant()
        if len(self.z0) != plant.n:
            raise ConfigError(f"z0 has {len(self.z0)} entries, plant has n = {plant.n}", "init.z0")
        if self.method == "closed" and not plant.is_scalar_loop():
            raise ConfigError("the closed form exists only for the scalar loop plant", "sylvester.method")
        grid = Grid(grid_cells or self.cells)
        ctl = synthesize(plant, grid, self.sigma(plant.m), method=self.method,
                         shaping=self.shaping_map(plant.m), inner_product=self.inner_product,
                         force=force)
        try:
            return Scenario(plant, grid, ctl, np.array(self.z0), self.initial_profile(),
                            t_final=self.t_final, cfl_safety=self.cfl_safety,
                            record_stride=self.record_stride, integrator=self.integrator,
                            sabotage=sabotage)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        if self.plant_kind == "transport_scalar":
            cp["plant"] = {"kind": self.plant_kind, "a": repr(self.a), "lambda": repr(self.lam),
                           "c": repr(self.c)}
        else:
            cp["plant"] = {"kind": self.plant_kind, **{k: _fmt_matrix(v) for k, v in self.system}}
        cp["nonlinearity"] = {"kind": self.nl_kind, "level": " ".join(repr(v) for v in self.levels),
                              "gain": repr(self.gain), "shaping": self.shaping}
        cp["grid"] = {"cells": str(self.cells), "cfl_safety": repr(self.cfl_safety)}
        cp["inner_product"] = {"mode": self.inner_product}
        cp["sim"] = {"t_final": repr(self.t_final), "record_stride": str(self.record_stride),
                     "integrator": self.integrator}
        w0 = f"samples {self.w0_path}" if self.w0_kind == "samples" else f"{self.w0_kind} {self.w0_value!r}"
        cp["init"] = {"z0": " ".join(repr(v) for v in self.z0), "w0": w0}
        cp["sylvester"] = {"method": self.method}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)


def parse_scenario(text: str, lenient=False, base_dir=".") -> ScenarioConfig:
    """Validate scenario text.  Unknown keys raise, or only warn when ``lenient``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"parse error at line {exc.lineno}: expected a [section] header") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"parse error at line {lineno}: {line.strip()!r}") from None
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from None

    for sec in cp.sections():
        if sec not in ALLOWED:
            _unknown(f"[{sec}]", "unknown section", lenient)
            continue
        for key in cp[sec]:
            if key not in ALLOWED[sec]:
                _unknown(f"{sec}.{key}", "unknown key", lenient)

    def get(sec, key):
        if cp.has_option(sec, key):
            return cp.get(sec, key).strip()
        if (sec, key) in WARN_IF_MISSING:
            warnings.warn(f"{sec}.{key} missing; using default {DEFAULTS[sec][key]}", ScenarioWarning,
                          stacklevel=3)
        return DEFAULTS[sec][key]

    out = {"base_dir": str(base_dir)}
    kind = get("plant", "kind")
    if kind not in ("transport_scalar", "transport_system"):
        raise ConfigError(f"unknown plant kind {kind!r}", "plant.kind")
    out["plant_kind"] = kind
    if kind == "transport_scalar":
        out["a"] = _real(get("plant", "a"), "plant.a")
        out["lam"] = _real(get("plant", "lambda"), "plant.lambda", positive=True)
        out["c"] = _real(get("plant", "c"), "plant.c")
    else:
        system = []
        for key in SYSTEM_KEYS:
            if cp.has_option("plant", key):
                system.append((key, _matrix(cp.get("plant", key), f"plant.{key}")))
            elif key in ("A", "B", "C", "speeds"):
                raise ConfigError("required for transport_system", f"plant.{key}")
        out["system"] = tuple(system)

    nl = get("nonlinearity", "kind")
    if nl not in ("linear", "saturation", "sat_phi"):
        raise ConfigError(f"unknown nonlinearity {nl!r}", "nonlinearity.kind")
    out["nl_kind"] = nl
    out["levels"] = tuple(_real(t, "nonlinearity.level", positive=True)
                          for t in get("nonlinearity", "level").replace(",", " ").split())
    out["gain"] = _real(get("nonlinearity", "gain"), "nonlinearity.gain", positive=True)
    out["shaping"] = get("nonlinearity", "shaping")

    out["cells"] = _int(get("grid", "cells"), "grid.cells", 8)
    cfl = _real(get("grid", "cfl_safety"), "grid.cfl_safety", positive=True)
    if cfl > 1:
        raise ConfigError("must not exceed 1", "grid.cfl_safety")
    out["cfl_safety"] = cfl
    mode = get("inner_product", "mode")
    if mode not in ("auto", "plain", "speed_weighted"):
        raise ConfigError(f"unknown inner product {mode!r}", "inner_product.mode")
    out["inner_product"] = mode

    t_final = _real(get("sim", "t_final"), "sim.t_final")
    if t_final < 0:
        raise ConfigError("must be >= 0", "sim.t_final")
    out["t_final"] = t_final
    out["record_stride"] = _int(get("sim", "record_stride"), "sim.record_stride", 1)
    integ = get("sim", "integrator")
    if integ not in INTEGRATORS:
        raise ConfigError(f"must be one of {INTEGRATORS}", "sim.integrator")
    out["integrator"] = integ

    out["z0"] = tuple(_real(t, "init.z0") for t in get("init", "z0").replace(",", " ").split())
    w0 = get("init", "w0").split(None, 1)
    if not w0 or w0[0] not in ("constant", "sine", "samples"):
        raise ConfigError("expected 'constant v', 'sine k' or 'samples path'", "init.w0")
    out["w0_kind"] = w0[0]
    arg = w0[1].strip() if len(w0) > 1 else ""
    if w0[0] == "samples":
        if not arg:
            raise ConfigError("samples needs a file path", "init.w0")
        out["w0_path"] = arg
    else:
        val = _real(arg or "1", "init.w0")
        if w0[0] == "sine" and val != int(val):
            raise ConfigError("sine mode index must be an integer", "init.w0")
        out["w0_value"] = val

    method = get("sylvester", "method")
    if method not in ("closed", "bvp", "discrete"):
        raise ConfigError(f"unknown method {method!r}", "sylvester.method")
    if method == "closed" and kind != "transport_scalar":
        raise ConfigError("the closed form exists only for the scalar loop plant", "sylvester.method")
    out["method"] = method
    return ScenarioConfig(**out)


def _unknown(name, what, lenient):
    if lenient:
        warnings.warn(f"{what} {name} ignored", ScenarioWarning, stacklevel=3)
    else:
        raise ConfigError(what, name)


def load_scenario(path, lenient=False) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from None
    return parse_scenario(text, lenient=lenient, base_dir=path.parent)
