"""Spectral dynamics of velocity-gradient tensors in restricted flow models.

Submodules:

- ``spectral``: eigen-analysis, adaptive integration with blowup detection
- ``models``: right-hand sides and closed forms for each model
- ``invariants``: pair-sequence products, trace closure, conserved quantities
- ``blowup``: balance pairs, critical thresholds, breakdown classification
- ``viscous2d``: 2D irrotational viscous solver and Hopf-Lax oracle
- ``cli``: scenario-driven command line
"""

from .errors import (
    BlowupError,
    ConfigError,
    DomainError,
    GradflowError,
    InvalidInputError,
    NumericalError,
    UnsupportedDimensionError,
)
from .spectral import (
    GradientTensor,
    IntegrationOptions,
    Spectrum,
    TrajectoryRecord,
    eigendecompose,
    integrate,
    integrate_matrix_riccati,
)
from .models import ModelKind, ModelSpec, REPState

__version__ = "0.1.0"

__all__ = [
    "BlowupError",
    "ConfigError",
    "DomainError",
    "GradflowError",
    "InvalidInputError",
    "NumericalError",
    "UnsupportedDimensionError",
    "GradientTensor",
    "IntegrationOptions",
    "Spectrum",
    "TrajectoryRecord",
    "eigendecompose",
    "integrate",
    "integrate_matrix_riccati",
    "ModelKind",
    "ModelSpec",
    "REPState",
]
