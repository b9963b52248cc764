"""Token-based auto-scaling and load balancing: simulator, fluid limits, metrics."""

from .core import (
    Constant,
    EnergyParams,
    FluidState,
    Mode,
    PhaseTypeService,
    Sinusoid,
    Table,
    all_idle_off,
    all_idle_on,
    embedded_stationary,
    phase_type_mean,
    project_to_E,
    validate_fluid_state,
)
from .fluid import FluidParams, fixed_point, fixed_point_phase, integrate_fluid, jiq_closed_form
from .simulate import Policy, SimConfig, run_simulation

__all__ = [
    "Constant", "EnergyParams", "FluidState", "Mode", "PhaseTypeService", "Sinusoid", "Table",
    "all_idle_off", "all_idle_on", "embedded_stationary", "phase_type_mean", "project_to_E",
    "validate_fluid_state", "FluidParams", "fixed_point", "fixed_point_phase", "integrate_fluid",
    "jiq_closed_form", "Policy", "SimConfig", "run_simulation",
]
