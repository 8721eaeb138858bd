"""Continuous data assimilation for the 2D stochastic third-grade fluid."""

__version__ = "0.1.0"

from .grid import DomainSpec, TensorField, VelocityField, make_grid  # noqa: E402
from .operators import FluidParams  # noqa: E402

__all__ = ["DomainSpec", "VelocityField", "TensorField", "FluidParams", "make_grid", "__version__"]
