"""Dynamic phase-field fracture and damage in Kelvin-Voigt viscoelastic solids."""

from .assembly import Loading, TimeFunction
from .energy_audit import EnergyLedger, balance_residual, energy_breakdown
from .material import MaterialLaw, at1_law, at2_law, linear_damage_law, mode_sensitive_law
from .mesh import BoundaryTag, Mesh2D, generate_rect_mesh, read_mesh, write_mesh
from .plasticity import PlasticLaw
from .schemes import (
    cfl_timestep,
    incremental_potential,
    initial_state,
    step,
    step_explicit,
    step_monolithic,
    step_staggered,
)
from .state import SchemeConfig, SimState

__all__ = [
    "BoundaryTag",
    "EnergyLedger",
    "Loading",
    "MaterialLaw",
    "Mesh2D",
    "PlasticLaw",
    "SchemeConfig",
    "SimState",
    "TimeFunction",
    "at1_law",
    "at2_law",
    "balance_residual",
    "cfl_timestep",
    "energy_breakdown",
    "generate_rect_mesh",
    "incremental_potential",
    "initial_state",
    "linear_damage_law",
    "mode_sensitive_law",
    "read_mesh",
    "step",
    "step_explicit",
    "step_monolithic",
    "step_staggered",
    "write_mesh",
]
