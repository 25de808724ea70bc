"""Time-domain electromagnetic scattering by dispersive obstacles.

Runge-Kutta convolution quadrature in time, lowest-order Raviart-Thomas
boundary elements in space.
"""

from .errors import (
    CoercivityError,
    ConfigError,
    DispcqError,
    DomainError,
    MaterialError,
    MeshError,
    NumericalError,
    PassivityError,
)

__version__ = "0.1.0"

__all__ = [
    "CoercivityError",
    "ConfigError",
    "DispcqError",
    "DomainError",
    "MaterialError",
    "MeshError",
    "NumericalError",
    "PassivityError",
    "__version__",
]
