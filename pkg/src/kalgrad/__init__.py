"""Fading-memory extended Kalman filtering and online natural gradient
descent in trajectory space, with numerical equivalence certification."""

from . import bucy, ekf, equivalence, expfam, model, natgrad, numerics
from .errors import (
    ConfigError,
    DomainError,
    KalgradError,
    NonFiniteError,
    NumericalError,
    OutOfSupportError,
    PositivityLostError,
    SingularMatrixError,
    UnknownModelError,
)
from .model import builtin, builtin_names, generate_scenario

__version__ = "0.1.0"

__all__ = [
    "bucy",
    "builtin",
    "builtin_names",
    "ekf",
    "equivalence",
    "expfam",
    "generate_scenario",
    "model",
    "natgrad",
    "numerics",
    "ConfigError",
    "DomainError",
    "KalgradError",
    "NonFiniteError",
    "NumericalError",
    "OutOfSupportError",
    "PositivityLostError",
    "SingularMatrixError",
    "UnknownModelError",
    "__version__",
]
