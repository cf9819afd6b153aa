"""Symmetries, conserved quantities and gradient flows of small neural networks."""
from . import conserved, flow, linalg, network, nonlinear, symmetry

__version__ = "0.1.0"

__all__ = ["conserved", "flow", "linalg", "network", "nonlinear", "symmetry", "__version__"]
