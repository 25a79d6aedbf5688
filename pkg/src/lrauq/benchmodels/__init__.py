"""Benchmark models: analytical beam, planar truss, EOLE random field."""

from .beam import beam_analytical_pdf, beam_analytical_pf, beam_deflection, beam_input_model
from .eole import (EoleField, effective_conductivity, eole_build, eole_realize, eole_variance,
                   lognormal_map_params, square_grid)
from .truss import MechanismError, TrussModel, truss_deflection, truss_input_model

__all__ = [
    "EoleField", "MechanismError", "TrussModel", "beam_analytical_pdf", "beam_analytical_pf",
    "beam_deflection", "beam_input_model", "effective_conductivity", "eole_build",
    "eole_realize", "eole_variance", "lognormal_map_params", "square_grid", "truss_deflection",
    "truss_input_model",
]
