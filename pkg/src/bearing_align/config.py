"""Configuration models for bearing-align.

All run behavior is controlled via the Pydantic models defined here. Numerical
tolerances shared across modules live here as module-level constants.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, Field

# ---------------------------------------------------------------------------
# Numerical tolerances
# ---------------------------------------------------------------------------
ROTATION_TOL = 1e-9
UNIT_NORM_TOL = 1e-12
SKEW_TOL = 1e-9
SMALL_ANGLE = 1e-8
DEGENERATE_DET = 1e-12
COLLOCATED_TOL = 1e-9
COLLINEAR_TOL = 1e-6
COPLANAR_TOL = 1e-6
DEGENERATE_CROSS_TOL = 1e-6
SPECTRUM_GAP_TOL = 1e-9

LandmarkMode = Literal["multi", "single", "none"]

LOG_ENV_VAR = "BEARING_ALIGN_LOG"
_LOG_LEVELS: dict[str, int] = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class ScenarioOverrides(BaseModel):
    """Command-line overrides merged into a scenario before validation."""

    dt: float | None = Field(default=None, gt=0, description="Integration step (s)")
    t_end: float | None = Field(default=None, ge=0, description="Simulation horizon (s)")
    k_omega: float | None = Field(default=None, gt=0, description="Angular-rate damping gain")
    landmark_mode: LandmarkMode | None = Field(
        default=None, description="'multi', 'single' or 'none'"
    )


class AnalysisConfig(BaseModel):
    """Thresholds and horizons for post-hoc verification."""

    convergence_threshold: float = Field(
        default=1e-6, gt=0, description="Frobenius alignment error counted as converged"
    )
    k_v_fraction: float = Field(
        default=0.5,
        gt=0,
        description="Cross-term weight k_V as a fraction of the tighter gain bound",
    )
    lyapunov_tolerance: float = Field(
        default=1e-8, ge=0, description="Allowed per-sample increase of V in the audit"
    )
    target_spread: float = Field(
        default=0.1, ge=0, description="Requested lambda_max/lambda_min - 1 for gain design"
    )
    probe_perturbation: float = Field(
        default=1e-3, ge=0, description="Rotation perturbation (rad) applied at critical points"
    )
    probe_trials: int = Field(default=20, ge=1, description="Perturbations per critical point")
    probe_dt: float = Field(default=1e-2, gt=0, description="Integration step for probes (s)")
    escape_horizon: float = Field(
        default=20.0, gt=0, description="Time allowed for leaving an undesired equilibrium (s)"
    )
    settle_horizon: float = Field(
        default=60.0, ge=0, description="Extra time allowed to reach identity after escape (s)"
    )
    escape_margin: float = Field(
        default=0.01, gt=0, lt=1, description="Relative drop of Phi below its critical value"
    )
    sandwich_samples: int = Field(
        default=4096, ge=16, description="Random rotations used to fit sigma and gamma"
    )


class MonteCarloConfig(BaseModel):
    """Settings for randomized initial-orientation sweeps."""

    trials: int = Field(default=100, ge=0, description="Number of random initializations")
    seed: int = Field(default=42, description="Root seed for all trial generators")
    t_end: float = Field(default=60.0, gt=0, description="Horizon per trial (s)")
    dt: float = Field(default=1e-2, gt=0, description="Integration step per trial (s)")
    omega_scale: float = Field(
        default=0.1, ge=0, description="Std-dev of the initial angular rates (rad/s)"
    )
    workers: int = Field(default=1, ge=1, description="Worker processes for independent trials")
    init_angle: float | None = Field(
        default=None,
        gt=0,
        description="Draw initial orientations within this angle (rad) of the leader; None is Haar-uniform",
    )


class RunConfig(BaseModel):
    """Top-level configuration for a CLI invocation."""

    scenario_path: Path | None = Field(
        default=None, description="Scenario JSON; None selects the bundled eight-agent scenario"
    )
    output_dir: Path = Field(default=Path("output"), description="Root output directory")
    seed: int = Field(default=42, description="Seed for every random draw in the run")
    overrides: ScenarioOverrides = Field(default_factory=ScenarioOverrides)
    analysis: AnalysisConfig = Field(default_factory=AnalysisConfig)
    monte_carlo: MonteCarloConfig = Field(default_factory=MonteCarloConfig)
    spread_values: list[float] = Field(
        default_factory=lambda: [0.01, 1.0], description="Spectral spreads swept by the ISS table"
    )
    gain_scales: list[float] = Field(
        default_factory=lambda: [0.5, 10.0], description="Gain multipliers swept by the ISS table"
    )


def log_level_from_env(default: str = "warn") -> int:
    """Resolve the logging level named by ``BEARING_ALIGN_LOG``."""
    raw = os.environ.get(LOG_ENV_VAR, default).strip().lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        logging.getLogger(__name__).warning(
            "Unknown %s=%r; using %r", LOG_ENV_VAR, raw, default
        )
        return _LOG_LEVELS[default]
    return level


def configure_logging() -> None:
    """Install a Rich log handler on the package logger."""
    from rich.logging import RichHandler

    package_logger = logging.getLogger("bearing_align")
    package_logger.setLevel(log_level_from_env())
    if not any(isinstance(h, RichHandler) for h in package_logger.handlers):
        package_logger.addHandler(RichHandler(show_path=False, rich_tracebacks=False))
    package_logger.propagate = False
