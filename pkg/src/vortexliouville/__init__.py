"""Point-vortex dynamics on the torus, sphere, unit disk and plane, with a
statistical harness for measure preservation and Koopman-operator checks."""

from ._backend import BACKEND
from .dynamics import FlowOptions, Trajectory, VortexState, integrate
from .geometry import Geometry, RegularizationSpec

__all__ = ["BACKEND", "FlowOptions", "Geometry", "RegularizationSpec", "Trajectory",
           "VortexState", "integrate"]
__version__ = "0.1.0"
