"""Numerical laboratory for summability, Poincaré series, conformal measures and dimensions
of rational maps."""

from .maps import MapSpec, critical_points, evaluate_and_derivative, load_map

__version__ = "0.1.0"

__all__ = ["MapSpec", "critical_points", "evaluate_and_derivative", "load_map", "__version__"]
