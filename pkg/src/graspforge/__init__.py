"""graspforge: deterministic grasp-label data engine.

Transfers demonstration fingertip contacts onto novel object meshes via
multi-view correspondence aggregation, optimizes embodiment-specific grasps
against a six-term objective, represents grasps as hand-object distance
matrices with multilateration-based recovery, and gates every emitted label
through analytic stability, functionality, and avoidance checks.
"""

from .errors import (
    DegenerateGeometryError,
    DimensionError,
    GraspForgeError,
    MissingCandidatesError,
    ParseError,
    ValidationError,
)
from .hand import Grasp, HandModel, load_hand_model

__version__ = "0.1.0"

__all__ = [
    "Grasp",
    "HandModel",
    "load_hand_model",
    "GraspForgeError",
    "ParseError",
    "ValidationError",
    "DimensionError",
    "DegenerateGeometryError",
    "MissingCandidatesError",
    "__version__",
]
