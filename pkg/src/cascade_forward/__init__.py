"""Forwarding control of an ODE driving a transport PDE through a cone-bounded input."""
from .forwarding import ForwardingController, load_controller, save_controller, synthesize
from .nonlinearity import compose_shaping, linear, sat_phi, saturation, validate_cone_bounded
from .plant import Grid, build_plant, check_assumption1, folded_scalar_plant, scalar_plant
from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario
from .simulate import InitialProfile, Scenario, SimulationTrace, run
from .verify import (contraction_audit, convergence_study, decay_audit, nonresonance_rank,
                     observability_probe)

__version__ = "0.1.0"

__all__ = [
    "ForwardingController", "synthesize", "save_controller", "load_controller",
    "linear", "saturation", "sat_phi", "compose_shaping", "validate_cone_bounded",
    "Grid", "build_plant", "scalar_plant", "folded_scalar_plant", "check_assumption1",
    "ConfigError", "ScenarioConfig", "parse_scenario", "load_scenario",
    "InitialProfile", "Scenario", "SimulationTrace", "run",
    "decay_audit", "contraction_audit", "nonresonance_rank", "observability_probe",
    "convergence_study",
]
