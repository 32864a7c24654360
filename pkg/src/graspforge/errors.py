"""Exception types shared across the package."""

from __future__ import annotations


class GraspForgeError(Exception):
    """Base class for all package errors."""


class ParseError(GraspForgeError):
    """A document could not be parsed; the message names the offending field."""


class ValidationError(GraspForgeError):
    """One or more invariants are violated. Carries the full list."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DimensionError(GraspForgeError):
    """An array argument has the wrong length or shape."""


class DegenerateGeometryError(GraspForgeError):
    """Geometry too degenerate for the requested solve (e.g. coplanar anchors)."""


class MissingCandidatesError(GraspForgeError):
    """A link was queried for contact candidates it does not define."""
