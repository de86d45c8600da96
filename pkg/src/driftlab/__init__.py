"""Numerical laboratory for fast-slow partially hyperbolic maps of the torus."""

from .system_model import (
    BuiltinParams,
    SystemSpec,
    TorusPoint,
    builtin_system,
    evaluate_map,
    jacobian,
    preset,
)

__version__ = "0.1.0"
