"""Scenario validation module.

Two-tier validation:
- Critical: collocated points, degenerate geometry (collinear or coplanar
  configurations), sensing-graph shape → the scenario must not be simulated.
- Advisory: near-threshold geometry, K-matrix spectra with (nearly) repeated
  eigenvalues → warn only.

Validation never raises; every problem is reported as a ``ValidationIssue``.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from bearing_align.config import (
    COLLINEAR_TOL,
    COLLOCATED_TOL,
    COPLANAR_TOL,
    SPECTRUM_GAP_TOL,
)
from bearing_align.errors import CollocatedError
from bearing_align.schema import VIRTUAL, Scenario

logger = logging.getLogger(__name__)

# Geometry measures below this are reported as advisory.
NEAR_DEGENERATE = 1e-3


class ValidationIssue(BaseModel):
    """A single validation issue found in a scenario."""

    level: str = Field(description="'critical' or 'advisory'")
    rule: str = Field(description="Name of the validation rule")
    message: str = Field(description="Human-readable description")
    agents: list[int] = Field(default_factory=list, description="Agents involved")


class ValidationResult(BaseModel):
    """Result of scenario validation."""

    passed: bool = Field(description="True if no critical issues found")
    n_agents: int = Field(description="Number of agents in the scenario")
    critical_issues: list[ValidationIssue] = Field(default_factory=list)
    advisory_issues: list[ValidationIssue] = Field(default_factory=list)

    @property
    def all_issues(self) -> list[ValidationIssue]:
        return self.critical_issues + self.advisory_issues


def collinearity_measure(a: ArrayLike, b: ArrayLike, c: ArrayLike) -> float:
    """Sine of the angle at ``a`` in the triangle (a, b, c); 0 iff collinear.

    Raises:
        CollocatedError: If any two of the points are within 1e-9.
    """
    a, b, c = (np.asarray(p, dtype=float) for p in (a, b, c))
    for (na, pa), (nb, pb) in itertools.combinations((("a", a), ("b", b), ("c", c)), 2):
        if float(np.linalg.norm(pa - pb)) <= COLLOCATED_TOL:
            raise CollocatedError(f"Points {na} and {nb} coincide", pair=(na, nb))
    ab, ac = b - a, c - a
    value = float(np.linalg.norm(np.cross(ab, ac)) / (np.linalg.norm(ab) * np.linalg.norm(ac)))
    return min(value, 1.0)


def coplanarity_measure(points: ArrayLike) -> float:
    """Smallest over largest singular value of the centered point cloud; 0 iff coplanar."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 4:
        raise ValueError(f"Need at least 4 points of dimension 3, got shape {pts.shape}")
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 0.0:
        return 0.0
    return float(sv[-1] / sv[0])


def _critical(rule: str, message: str, agents: list[int] | None = None) -> ValidationIssue:
    return ValidationIssue(level="critical", rule=rule, message=message, agents=agents or [])


def _advisory(rule: str, message: str, agents: list[int] | None = None) -> ValidationIssue:
    return ValidationIssue(level="advisory", rule=rule, message=message, agents=agents or [])


def _check_ids(s: Scenario) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    ids = [a.id for a in s.agents]
    if sorted(ids) != list(range(1, len(ids) + 1)):
        issues.append(_critical("agent_ids", f"Agent ids must be 1..{len(ids)}, got {sorted(ids)}"))
    dup = [k for k, v in Counter(lm.id for lm in s.landmarks).items() if v > 1]
    if dup:
        issues.append(_critical("landmark_ids", f"Duplicate landmark ids: {dup}"))
    return issues


def _check_graph(s: Scenario) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    n = s.n
    known = set(range(1, n + 1))
    for i, j in s.edges:
        if i not in known or j not in known:
            issues.append(_critical("graph_shape", f"Edge ({i}, {j}) references an unknown agent"))
        elif i == j:
            issues.append(_critical("graph_shape", f"Self-loop on agent {i}", [i]))
    dup_edges = [e for e, c in Counter(s.edges).items() if c > 1]
    if dup_edges:
        issues.append(_critical("graph_shape", f"Duplicate edges: {dup_edges}"))

    graph = s.graph
    if graph.neighbors(1):
        issues.append(_critical("graph_shape", "The leader (agent 1) must not measure neighbors", [1]))
    if graph.neighbors(2) != [1]:
        issues.append(
            _critical(
                "graph_shape",
                f"Agent 2's only neighbor must be agent 1, got {graph.neighbors(2)}",
                [2],
            )
        )
    for i in range(3, n + 1):
        nbrs = graph.neighbors(i)
        if len(nbrs) != 2 or any(j >= i for j in nbrs):
            issues.append(
                _critical(
                    "graph_shape",
                    f"Agent {i} must have exactly two neighbors with smaller ids, got {nbrs}",
                    [i],
                )
            )

    landmark_ids = {lm.id for lm in s.landmarks}
    for agent, lm in s.landmark_edges:
        if agent not in (1, 2):
            issues.append(
                _critical("graph_shape", f"Landmark edge ({agent}, {lm}): only agents 1 and 2 see landmarks", [agent])
            )
        if lm not in landmark_ids:
            issues.append(_critical("graph_shape", f"Landmark edge references unknown landmark {lm!r}"))
    return issues


def shared_landmarks(s: Scenario) -> list[str]:
    """Landmarks observed by both agents 1 and 2, in scenario order."""
    seen1 = set(s.graph.landmarks_of(1))
    seen2 = set(s.graph.landmarks_of(2))
    return [lm.id for lm in s.landmarks if lm.id in seen1 and lm.id in seen2]


def _check_modes(s: Scenario) -> list[ValidationIssue]:
    shared = shared_landmarks(s)
    if s.landmark_mode == "multi" and len(shared) < 2:
        return [
            _critical(
                "landmark_count",
                f"Multi-landmark mode needs at least two landmarks seen by agents 1 and 2, got {len(shared)}",
                [1, 2],
            )
        ]
    if s.landmark_mode == "single" and not shared:
        return [_critical("landmark_count", "Single-landmark mode needs a landmark seen by agents 1 and 2", [1, 2])]
    if s.landmark_mode == "none" and s.n < 3:
        return [_critical("landmark_count", "No-landmark mode needs a third agent", [1, 2])]
    return []


def _check_geometry(s: Scenario) -> tuple[list[ValidationIssue], list[ValidationIssue]]:
    critical: list[ValidationIssue] = []
    advisory: list[ValidationIssue] = []
    pos = s.positions()
    landmarks = s.landmark_positions()

    for i, j in itertools.combinations(range(1, s.n + 1), 2):
        if float(np.linalg.norm(pos[i - 1] - pos[j - 1])) <= COLLOCATED_TOL:
            critical.append(_critical("collocated", f"Agents {i} and {j} are collocated", [i, j]))
    for lm, p in landmarks.items():
        for agent in (1, 2):
            if float(np.linalg.norm(p - pos[agent - 1])) <= COLLOCATED_TOL:
                critical.append(
                    _critical("collocated", f"Landmark {lm} coincides with agent {agent}", [agent])
                )
    if critical:
        return critical, advisory

    def collinear(rule: str, label: str, pts: tuple[np.ndarray, ...], agents: list[int]) -> None:
        measure = collinearity_measure(*pts)
        if measure < COLLINEAR_TOL:
            critical.append(_critical(rule, f"{label} are collinear (measure {measure:.2e})", agents))
        elif measure < NEAR_DEGENERATE:
            advisory.append(
                _advisory("near_degenerate", f"{label} are nearly collinear (measure {measure:.2e})", agents)
            )

    if s.landmark_mode == "none":
        if s.n >= 3:
            collinear("collinear", "Agents 1, 2 and 3", (pos[0], pos[1], pos[2]), [1, 2, 3])
    else:
        used = shared_landmarks(s)
        if s.landmark_mode == "single":
            used = used[:1]
        for lm in used:
            collinear("collinear", f"Agents 1, 2 and landmark {lm}", (pos[0], pos[1], landmarks[lm]), [1, 2])
        if s.landmark_mode == "multi" and len(used) >= 2:
            cloud = np.vstack([pos[0], pos[1], *(landmarks[lm] for lm in used)])
            measure = coplanarity_measure(cloud)
            if measure < COPLANAR_TOL:
                critical.append(
                    _critical("coplanar", f"Landmarks and agents 1, 2 are coplanar (measure {measure:.2e})", [1, 2])
                )
            elif measure < NEAR_DEGENERATE:
                advisory.append(
                    _advisory("near_degenerate", f"Landmarks and agents 1, 2 are nearly coplanar ({measure:.2e})", [1, 2])
                )

    for i in range(3, s.n + 1):
        j, k = s.graph.neighbors(i)
        collinear(
            "collinear",
            f"Agent {i} and its neighbors {j}, {k}",
            (pos[i - 1], pos[j - 1], pos[k - 1]),
            [i, j, k],
        )
    return critical, advisory


def _check_gains(s: Scenario) -> list[ValidationIssue]:
    valid_targets: set[str] = set()
    for i, j in s.edges:
        valid_targets.add(f"{i}:{j}")
    for agent in range(2, s.n + 1):
        valid_targets.add(f"{agent}:{VIRTUAL}")
    for lm in s.landmarks:
        valid_targets.add(f"2:{lm.id}")
    valid_targets.add("2:3")
    unused = sorted(set(s.gains.overrides) - valid_targets)
    if unused:
        return [_advisory("unused_gain", f"Gain overrides match no measurement: {unused}")]
    return []


def _check_spectra(s: Scenario) -> list[ValidationIssue]:
    from bearing_align.control import global_k_matrix

    issues: list[ValidationIssue] = []
    for agent in range(2, s.n + 1):
        km = global_k_matrix(s, agent)
        lam = km.eigenvalues
        if lam[0] <= 0.0:
            issues.append(
                _advisory("spectrum", f"K-matrix of agent {agent} is not positive definite: {lam}", [agent])
            )
        elif km.min_gap < SPECTRUM_GAP_TOL:
            issues.append(
                _advisory(
                    "spectrum",
                    f"K-matrix of agent {agent} has repeated eigenvalues {lam}; "
                    "critical points are not isolated",
                    [agent],
                )
            )
    return issues


def validate_scenario(s: Scenario) -> ValidationResult:
    """Validate a scenario against network-structure and genericity rules.

    Args:
        s: Scenario to validate.

    Returns:
        ValidationResult with pass/fail status and list of issues.
    """
    critical: list[ValidationIssue] = []
    advisory: list[ValidationIssue] = []

    critical.extend(_check_ids(s))
    if not critical:
        critical.extend(_check_graph(s))
        critical.extend(_check_modes(s))

    # Geometry checks index positions by id and neighbors; skip them on a broken graph.
    if not critical:
        geo_critical, geo_advisory = _check_geometry(s)
        critical.extend(geo_critical)
        advisory.extend(geo_advisory)

    advisory.extend(_check_gains(s))
    if not critical:
        advisory.extend(_check_spectra(s))

    if s.landmark_mode == "none":
        logger.info("Landmark mode 'none' is experimental: agent 3 stands in for the landmark")

    result = ValidationResult(
        passed=not critical,
        n_agents=s.n,
        critical_issues=critical,
        advisory_issues=advisory,
    )
    logger.debug(
        "Validated scenario: %d critical, %d advisory", len(critical), len(advisory)
    )
    return result
