"""Two-dimensional elastic swimmer in a viscous fluid, with SE(2) reduction and limit-cycle tools."""

from .kernels import BACKEND
from .se2 import SE2Element, act_point, act_vector, align, compose, inverse

__version__ = "0.1.0"

__all__ = ["BACKEND", "SE2Element", "act_point", "act_vector", "align", "compose", "inverse", "__version__"]
