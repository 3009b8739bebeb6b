"""Particle-fluid simulations of a viscous spray: spectral Navier-Stokes
coupled by drag to a particle Vlasov description, with decay diagnostics."""
from .config import RunConfig, preset, presets
from .coupling import StepOptions, SystemState, make_state, step_system, total_momentum
from .errors import ConfigError, SchemaError, SimulationAborted, StepRejected, VNSError
from .spectral import Grid3

__all__ = [
    "ConfigError", "Grid3", "RunConfig", "SchemaError", "SimulationAborted", "StepOptions",
    "StepRejected", "SystemState", "VNSError", "make_state", "preset", "presets",
    "step_system", "total_momentum",
]
