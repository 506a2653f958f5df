"""Body-frame directional measurements.

Every agent measures unit bearings to the agents it shares an edge with.
Agents 1 and 2 additionally synthesize landmark normals (perpendicular to the
plane through both agents and a landmark), and in single- or no-landmark mode
an orthogonal completion. Followers synthesize a virtual third direction from
their two neighbor bearings.

All directions carry the frame they are expressed in. Measurements are
recomputed from ground-truth positions and the current orientations.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike

from bearing_align.config import COLLOCATED_TOL, DEGENERATE_CROSS_TOL
from bearing_align.errors import CollocatedError, DegenerateCrossError
from bearing_align.schema import VIRTUAL, Scenario
from bearing_align.so3 import Frame, Rotation, UnitVector3, Vector3

if TYPE_CHECKING:
    from bearing_align.simulator import AgentState

logger = logging.getLogger(__name__)

#: Key under which agents 1 and 2 store the normal built from agent 3 in no-landmark mode.
THIRD_AGENT_KEY = "3"


@dataclass(frozen=True)
class MeasurementSet:
    """Everything one agent knows, expressed in its own body frame.

    ``bearings`` holds the direction to every agent it shares an edge with
    (either direction), ``landmark_bearings`` the raw directions used to build
    ``normals``. ``neighbors`` lists the agents whose messages the control law
    consumes.
    """

    owner: int
    neighbors: tuple[int, ...]
    bearings: dict[int, UnitVector3] = field(default_factory=dict)
    landmark_bearings: dict[str, UnitVector3] = field(default_factory=dict)
    normals: dict[str, UnitVector3] = field(default_factory=dict)
    virtual_direction: UnitVector3 | None = None


def _unit_cross(a: Vector3, b: Vector3, what: str) -> Vector3:
    c = np.cross(a, b)
    norm = float(np.linalg.norm(c))
    if norm <= DEGENERATE_CROSS_TOL:
        raise DegenerateCrossError(f"{what}: cross product norm {norm:.2e} is degenerate")
    return c / norm


def _unit_direction(p_from: Vector3, p_to: Vector3) -> Vector3:
    d = np.asarray(p_to, dtype=float) - np.asarray(p_from, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist <= COLLOCATED_TOL:
        raise CollocatedError(f"Points {p_from} and {p_to} are collocated")
    return d / dist


def bearing(
    p_i: ArrayLike, p_j: ArrayLike, R_i: Rotation | None = None, frame: Frame | None = None
) -> UnitVector3:
    """Unit direction from ``p_i`` to ``p_j`` expressed in the frame of ``R_i``.

    Without ``R_i`` the global-frame direction is returned. ``frame`` tags the
    result, usually with the id of the measuring agent.

    Raises:
        CollocatedError: If the points are within 1e-9 of each other.
    """
    d = _unit_direction(np.asarray(p_i, dtype=float), np.asarray(p_j, dtype=float))
    if R_i is None:
        return UnitVector3(d, "global")
    return UnitVector3.normalized(R_i.m.T @ d, frame if frame is not None else "body")


def _same_frame(a: UnitVector3, b: UnitVector3) -> Frame:
    if a.frame != b.frame:
        raise ValueError(f"Directions are in different frames: {a.frame!r} vs {b.frame!r}")
    return a.frame


def landmark_normal(b_ij: UnitVector3, b_ix: UnitVector3) -> UnitVector3:
    """Normal of the plane through an agent, its partner and a landmark.

    The agent's own bearing to its partner comes first, so the two partners
    obtain opposite normals.
    """
    frame = _same_frame(b_ij, b_ix)
    return UnitVector3.normalized(_unit_cross(b_ij.v, b_ix.v, "landmark normal"), frame)


def virtual_third_direction(b_ij: UnitVector3, b_ik: UnitVector3) -> UnitVector3:
    """Normalized cross product of a follower's two neighbor bearings."""
    frame = _same_frame(b_ij, b_ik)
    return UnitVector3.normalized(_unit_cross(b_ij.v, b_ik.v, "virtual direction"), frame)


def orthogonal_completion(first: UnitVector3, second: UnitVector3) -> UnitVector3:
    """Direction perpendicular to both inputs, ``first x second`` normalized."""
    frame = _same_frame(first, second)
    return UnitVector3.normalized(_unit_cross(first.v, second.v, "orthogonal direction"), frame)


def bearing_time_derivative(b: UnitVector3 | ArrayLike, w: ArrayLike) -> Vector3:
    """Rate of a body-frame direction to a fixed point: ``b x w``."""
    v = b.v if isinstance(b, UnitVector3) else np.asarray(b, dtype=float)
    return np.cross(v, np.asarray(w, dtype=float))


# ---------------------------------------------------------------------------
# Scenario-level measurement synthesis
# ---------------------------------------------------------------------------
def anchor_targets(s: Scenario) -> list[str]:
    """Targets from which agents 1 and 2 build normals, per landmark mode."""
    from bearing_align.validate import shared_landmarks

    if s.landmark_mode == "none":
        return [THIRD_AGENT_KEY]
    shared = shared_landmarks(s)
    return shared[:1] if s.landmark_mode == "single" else shared


def _anchor_position(s: Scenario, target: str) -> Vector3:
    if target == THIRD_AGENT_KEY:
        return s.positions()[2]
    return s.landmark_positions()[target]


def _rotation_of(item: Rotation | AgentState) -> Rotation:
    return item if isinstance(item, Rotation) else item.R


def _measure_leader_pair(
    s: Scenario, agent: int, rotations: Sequence[Rotation], incident: list[int]
) -> MeasurementSet:
    pos = s.positions()
    R = rotations[agent - 1]
    partner = 2 if agent == 1 else 1
    bearings = {j: bearing(pos[agent - 1], pos[j - 1], R, agent) for j in incident}
    landmark_bearings: dict[str, UnitVector3] = {}
    normals: dict[str, UnitVector3] = {}
    for target in anchor_targets(s):
        b_ix = bearing(pos[agent - 1], _anchor_position(s, target), R, agent)
        landmark_bearings[target] = b_ix
        normals[target] = landmark_normal(bearings[partner], b_ix)

    virtual = None
    if s.landmark_mode in ("single", "none"):
        normal = next(iter(normals.values()))
        # Agent 2 crosses its bearing into the normal; agent 1 the reverse, so the pair is antiparallel.
        if agent == 2:
            virtual = orthogonal_completion(bearings[partner], normal)
        else:
            virtual = orthogonal_completion(normal, bearings[partner])
    return MeasurementSet(
        owner=agent,
        neighbors=(1,) if agent == 2 else (),
        bearings=bearings,
        landmark_bearings=landmark_bearings,
        normals=normals,
        virtual_direction=virtual,
    )


def measure_all(s: Scenario, states: Sequence[Rotation] | Sequence[AgentState]) -> list[MeasurementSet]:
    """Synthesize every agent's measurement set for the given orientations.

    Args:
        s: A validated scenario.
        states: Orientations (or agent states) ordered by agent id.

    Returns:
        One MeasurementSet per agent, ordered by id.

    Raises:
        CollocatedError, DegenerateCrossError: With the offending agent named.
    """
    rotations = [_rotation_of(x) for x in states]
    if len(rotations) != s.n:
        raise ValueError(f"Expected {s.n} states, got {len(rotations)}")
    pos = s.positions()
    incident: dict[int, set[int]] = {i: set() for i in range(1, s.n + 1)}
    for i, j in s.edges:
        incident[i].add(j)
        incident[j].add(i)

    sets: list[MeasurementSet] = []
    for agent in range(1, s.n + 1):
        try:
            if agent in (1, 2):
                sets.append(_measure_leader_pair(s, agent, rotations, sorted(incident[agent])))
                continue
            R = rotations[agent - 1]
            bearings = {
                j: bearing(pos[agent - 1], pos[j - 1], R, agent) for j in sorted(incident[agent])
            }
            j, k = s.graph.neighbors(agent)
            sets.append(
                MeasurementSet(
                    owner=agent,
                    neighbors=(j, k),
                    bearings=bearings,
                    virtual_direction=virtual_third_direction(bearings[j], bearings[k]),
                )
            )
        except (CollocatedError, DegenerateCrossError) as exc:
            raise type(exc)(f"agent {agent}: {exc}") from exc
    return sets


def global_directions(s: Scenario, agent: int) -> dict[str, Vector3]:
    """Global-frame directions of agent ``agent``'s alignment terms, keyed by gain target.

    Agent 2: the bearing to agent 1, one normal per anchor and, in single or
    no-landmark mode, the orthogonal completion. Followers: the two neighbor
    bearings and the virtual third direction.
    """
    if agent < 2 or agent > s.n:
        raise ValueError(f"Agent {agent} has no alignment law")
    pos = s.positions()
    p = pos[agent - 1]
    dirs: dict[str, Vector3] = {}
    if agent == 2:
        b21 = _unit_direction(p, pos[0])
        dirs["1"] = b21
        for target in anchor_targets(s):
            b2x = _unit_direction(p, _anchor_position(s, target))
            dirs[target] = _unit_cross(b21, b2x, f"agent 2 normal for {target}")
        if s.landmark_mode in ("single", "none"):
            normal = dirs[anchor_targets(s)[0]]
            dirs[VIRTUAL] = _unit_cross(b21, normal, "agent 2 orthogonal direction")
        return dirs
    j, k = s.graph.neighbors(agent)
    b_ij = _unit_direction(p, pos[j - 1])
    b_ik = _unit_direction(p, pos[k - 1])
    dirs[str(j)] = b_ij
    dirs[str(k)] = b_ik
    dirs[VIRTUAL] = _unit_cross(b_ij, b_ik, f"agent {agent} virtual direction")
    return dirs
