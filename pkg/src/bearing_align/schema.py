"""Schema definitions for bearing-align scenarios and trajectories.

Provides:
- Pydantic models for scenario files (agents, landmarks, sensing graph, gains,
  integration settings). Unknown fields are rejected.
- The bundled eight-agent, two-landmark default scenario.
- Column naming for the trajectory table.
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Annotated, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, model_validator

from bearing_align.config import LandmarkMode, ScenarioOverrides
from bearing_align.so3 import AXIS_ROTATIONS, Rotation

Vec3 = tuple[FiniteFloat, FiniteFloat, FiniteFloat]
PositiveGain = Annotated[float, Field(gt=0, allow_inf_nan=False)]

#: Gain-table target used for the virtual third direction of a follower and
#: for the orthogonal completion of agents 1 and 2 in single-landmark mode.
VIRTUAL = "v"

# ---------------------------------------------------------------------------
# Trajectory columns
# ---------------------------------------------------------------------------
ROTATION_FIELDS = [f"R{r}{c}" for r in range(3) for c in range(3)]
RATE_FIELDS = ["wx", "wy", "wz"]
METRIC_FIELDS = ["err_frob", "phi", "e_norm", "V", "h_norm"]
AGENT_FIELDS = ROTATION_FIELDS + RATE_FIELDS + METRIC_FIELDS


def agent_columns(agent: int) -> list[str]:
    """Trajectory columns for one agent, in file order."""
    return [f"a{agent}_{name}" for name in AGENT_FIELDS]


def trajectory_columns(n_agents: int) -> list[str]:
    """Full trajectory header: ``t`` then one block per agent."""
    cols = ["t"]
    for agent in range(1, n_agents + 1):
        cols.extend(agent_columns(agent))
    return cols


# ---------------------------------------------------------------------------
# Scenario models
# ---------------------------------------------------------------------------
class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class AxisRotation(_Strict):
    """One elementary rotation about a coordinate axis."""

    axis: Literal["x", "y", "z"]
    angle: FiniteFloat = Field(description="Rotation angle")
    degrees: bool = Field(default=False, description="Interpret angle in degrees")

    def rotation(self) -> Rotation:
        angle = math.radians(self.angle) if self.degrees else self.angle
        return AXIS_ROTATIONS[self.axis](angle)


class OrientationSpec(_Strict):
    """Initial orientation given as a matrix or as a product of axis rotations.

    A product ``[a, b]`` means ``R = rot(a) @ rot(b)``. An empty spec is the identity.
    """

    matrix: tuple[Vec3, Vec3, Vec3] | None = None
    rotations: list[AxisRotation] = Field(default_factory=list)

    @model_validator(mode="after")
    def _one_form(self) -> OrientationSpec:
        if self.matrix is not None and self.rotations:
            raise ValueError("Give either 'matrix' or 'rotations', not both")
        # Fails fast on non-rotation matrices.
        self.rotation()
        return self

    def rotation(self) -> Rotation:
        if self.matrix is not None:
            return Rotation(np.array(self.matrix, dtype=float))
        return reduce(
            lambda acc, step: acc @ step.rotation(), self.rotations, Rotation.identity()
        )

    @classmethod
    def from_rotation(cls, r: Rotation) -> OrientationSpec:
        rows = [tuple(float(x) for x in row) for row in r.m]
        return cls(matrix=(rows[0], rows[1], rows[2]))  # type: ignore[arg-type]


class AgentSpec(_Strict):
    """A stationary agent: position, initial orientation and angular rate."""

    id: int = Field(ge=1, description="Agent id; ids must be 1..n")
    position: Vec3 = Field(description="Global position")
    initial_orientation: OrientationSpec = Field(default_factory=OrientationSpec)
    initial_angular_velocity: Vec3 = Field(
        default=(0.0, 0.0, 0.0), description="Body-frame angular rate (rad/s)"
    )


class LandmarkSpec(_Strict):
    """A fixed landmark observed by agents 1 and 2."""

    id: str = Field(min_length=1, description="Landmark tag, e.g. 'x1'")
    position: Vec3

    @model_validator(mode="after")
    def _not_reserved(self) -> LandmarkSpec:
        if self.id == VIRTUAL or self.id.isdigit():
            raise ValueError(f"Landmark id {self.id!r} clashes with agent/virtual ids")
        return self


class GainTable(_Strict):
    """Damping gain and per-edge alignment gains.

    Edge gains are keyed ``"i:j"`` where ``j`` is an agent id, a landmark id,
    or ``"v"`` for the virtual / orthogonal direction. Missing keys use ``default``.
    """

    k_omega: PositiveGain = Field(default=2.0, description="Angular-rate damping gain")
    default: PositiveGain = Field(default=1.0, description="Gain for edges without an override")
    overrides: dict[str, PositiveGain] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _keys(self) -> GainTable:
        for key in self.overrides:
            owner, sep, target = key.partition(":")
            if not sep or not owner.isdigit() or not target:
                raise ValueError(f"Gain key {key!r} is not of the form 'i:j'")
        return self

    def gain(self, agent: int, target: int | str) -> float:
        return self.overrides.get(f"{agent}:{target}", self.default)

    def scaled(self, factor: float) -> GainTable:
        """Multiply every edge gain by ``factor``; ``k_omega`` is unchanged."""
        return GainTable(
            k_omega=self.k_omega,
            default=self.default * factor,
            overrides={k: v * factor for k, v in self.overrides.items()},
        )

    def with_overrides(self, updates: dict[str, float]) -> GainTable:
        return GainTable(
            k_omega=self.k_omega,
            default=self.default,
            overrides={**self.overrides, **updates},
        )


class IntegrationSettings(_Strict):
    dt: float = Field(default=1e-3, gt=0, allow_inf_nan=False, description="Step size (s)")
    t_end: float = Field(default=30.0, ge=0, allow_inf_nan=False, description="Horizon (s)")
    log_every: int = Field(default=10, ge=1, description="Log every n-th step")


class SensingGraph(BaseModel):
    """Directed leader-follower graph; edge ``(i, j)`` means i measures j."""

    model_config = ConfigDict(frozen=True)

    n: int
    edges: list[tuple[int, int]]
    landmark_edges: list[tuple[int, str]]

    def neighbors(self, agent: int) -> list[int]:
        """Agent neighbors, ascending."""
        return sorted(j for i, j in self.edges if i == agent)

    def landmarks_of(self, agent: int) -> list[str]:
        return [x for i, x in self.landmark_edges if i == agent]


class Scenario(_Strict):
    """A complete simulation scenario."""

    agents: list[AgentSpec] = Field(min_length=2)
    landmarks: list[LandmarkSpec] = Field(default_factory=list)
    edges: list[tuple[int, int]] = Field(description="(i, j): agent i measures agent j")
    landmark_edges: list[tuple[int, str]] = Field(default_factory=list)
    gains: GainTable = Field(default_factory=GainTable)
    integration: IntegrationSettings = Field(default_factory=IntegrationSettings)
    landmark_mode: LandmarkMode = "multi"

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def graph(self) -> SensingGraph:
        return SensingGraph(n=self.n, edges=self.edges, landmark_edges=self.landmark_edges)

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(f"No agent with id {agent_id}")

    def positions(self) -> np.ndarray:
        """``(n, 3)`` array of agent positions ordered by id."""
        ordered = sorted(self.agents, key=lambda a: a.id)
        return np.array([a.position for a in ordered], dtype=float)

    def landmark_positions(self) -> dict[str, np.ndarray]:
        return {lm.id: np.array(lm.position, dtype=float) for lm in self.landmarks}

    def initial_rotations(self) -> list[Rotation]:
        return [a.initial_orientation.rotation() for a in sorted(self.agents, key=lambda a: a.id)]

    def initial_rates(self) -> np.ndarray:
        ordered = sorted(self.agents, key=lambda a: a.id)
        return np.array([a.initial_angular_velocity for a in ordered], dtype=float)

    def with_overrides(self, overrides: ScenarioOverrides) -> Scenario:
        """Merge CLI overrides and re-validate the result."""
        data = self.model_dump()
        if overrides.dt is not None:
            data["integration"]["dt"] = overrides.dt
        if overrides.t_end is not None:
            data["integration"]["t_end"] = overrides.t_end
        if overrides.k_omega is not None:
            data["gains"]["k_omega"] = overrides.k_omega
        if overrides.landmark_mode is not None:
            data["landmark_mode"] = overrides.landmark_mode
        return Scenario.model_validate(data)

    def with_initial_state(
        self, rotations: list[Rotation], rates: np.ndarray | None = None
    ) -> Scenario:
        """Copy of the scenario starting from the given orientations (and rates)."""
        rates = np.zeros((self.n, 3)) if rates is None else np.asarray(rates, dtype=float)
        agents = [
            a.model_copy(
                update={
                    "initial_orientation": OrientationSpec.from_rotation(rotations[a.id - 1]),
                    "initial_angular_velocity": tuple(float(x) for x in rates[a.id - 1]),
                }
            )
            for a in sorted(self.agents, key=lambda a: a.id)
        ]
        return self.model_copy(update={"agents": agents})

    def with_gains(self, gains: GainTable) -> Scenario:
        return self.model_copy(update={"gains": gains})

    def with_integration(self, **changes: float | int) -> Scenario:
        integration = IntegrationSettings.model_validate(
            {**self.integration.model_dump(), **changes}
        )
        return self.model_copy(update={"integration": integration})


# ---------------------------------------------------------------------------
# Bundled scenario
# ---------------------------------------------------------------------------
DEFAULT_POSITIONS: dict[int, Vec3] = {
    1: (0.0, 0.0, 0.0),
    2: (2.0, 0.0, 0.0),
    3: (1.0, -1.5, 0.5),
    4: (-1.0, -1.5, 0.3),
    5: (3.0, -1.5, 0.4),
    6: (1.0, -3.0, 0.6),
    7: (-1.0, -3.0, 0.2),
    8: (3.0, -3.0, 0.5),
}
DEFAULT_LANDMARKS: dict[str, Vec3] = {
    "x1": (-0.5, 1.0, 1.0),
    "x2": (2.5, 1.0, 1.2),
}
DEFAULT_EDGES: list[tuple[int, int]] = [
    (2, 1),
    (3, 1),
    (3, 2),
    (4, 1),
    (4, 3),
    (5, 2),
    (5, 3),
    (6, 4),
    (6, 5),
    (7, 4),
    (7, 6),
    (8, 5),
    (8, 6),
]
# (axis, degrees) factors, multiplied left to right.
DEFAULT_ORIENTATIONS: dict[int, list[tuple[Literal["x", "y", "z"], float]]] = {
    1: [("x", 30.0)],
    2: [("x", 60.0), ("z", 30.0)],
    3: [("x", 120.0)],
    4: [("y", 30.0)],
    5: [("y", 90.0)],
    6: [("y", 150.0), ("z", 30.0)],
    7: [("z", 30.0)],
    8: [("z", 160.0)],
}


def default_scenario() -> Scenario:
    """Eight agents and two landmarks with the canonical initial orientations."""
    agents = [
        AgentSpec(
            id=i,
            position=pos,
            initial_orientation=OrientationSpec(
                rotations=[
                    AxisRotation(axis=axis, angle=deg, degrees=True)
                    for axis, deg in DEFAULT_ORIENTATIONS[i]
                ]
            ),
        )
        for i, pos in DEFAULT_POSITIONS.items()
    ]
    landmarks = [LandmarkSpec(id=k, position=p) for k, p in DEFAULT_LANDMARKS.items()]
    return Scenario(
        agents=agents,
        landmarks=landmarks,
        edges=DEFAULT_EDGES,
        landmark_edges=[(agent, lm) for agent in (1, 2) for lm in DEFAULT_LANDMARKS],
    )
