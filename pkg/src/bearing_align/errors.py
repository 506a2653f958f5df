"""Exception hierarchy for bearing-align.

Geometry and shape problems subclass ``ValueError``; failures that only show up
while integrating subclass ``RuntimeError``. The CLI maps each family to an exit
code.
"""

from __future__ import annotations


class BearingAlignError(Exception):
    """Base class for every error raised by this package."""


class NonSkewError(BearingAlignError, ValueError):
    """A matrix handed to ``vee`` is not skew-symmetric within tolerance."""


class DegenerateError(BearingAlignError, ValueError):
    """A matrix cannot be projected onto SO(3) (non-positive determinant)."""


class CollocatedError(BearingAlignError, ValueError):
    """Two points (agents or landmarks) coincide within tolerance."""

    def __init__(self, message: str, pair: tuple[str, str] | None = None) -> None:
        super().__init__(message)
        self.pair = pair


class DegenerateCrossError(BearingAlignError, ValueError):
    """Two directions are (nearly) collinear, so their normalized cross product is undefined."""


class MissingMeasurementError(BearingAlignError, ValueError):
    """A measurement set lacks a direction the control law needs."""


class SearchFailedError(BearingAlignError, ValueError):
    """Gain design could not reach the requested spectral spread."""

    def __init__(self, message: str, best_spread: float, best_gains: dict[str, float]) -> None:
        super().__init__(message)
        self.best_spread = best_spread
        self.best_gains = best_gains


class DegenerateSpectrumError(BearingAlignError, ValueError):
    """K-matrix eigenvalues are not distinct, so critical points are not isolated."""


class ScenarioParseError(BearingAlignError, ValueError):
    """A scenario or config file is malformed."""

    def __init__(self, message: str, path: str | None = None, location: str | None = None) -> None:
        super().__init__(message)
        self.path = path
        self.location = location


class NonFiniteError(BearingAlignError, RuntimeError):
    """Integration produced a NaN or infinite state entry."""

    def __init__(self, message: str, t: float) -> None:
        super().__init__(message)
        self.t = t


class DivergedError(BearingAlignError, RuntimeError):
    """An agent's error function stayed far above its starting value."""

    def __init__(self, message: str, t: float, agent: int) -> None:
        super().__init__(message)
        self.t = t
        self.agent = agent
