"""Tests for scenario validation."""

import math

import numpy as np
import pytest

from bearing_align.errors import CollocatedError
from bearing_align.schema import GainTable, LandmarkSpec, Scenario
from bearing_align.validate import (
    collinearity_measure,
    coplanarity_measure,
    shared_landmarks,
    validate_scenario,
)


def _move_agent(s: Scenario, agent: int, position: tuple[float, float, float]) -> Scenario:
    data = s.model_dump()
    data["agents"][agent - 1]["position"] = position
    return Scenario.model_validate(data)


class TestMeasures:
    def test_collinearity_example(self) -> None:
        value = collinearity_measure((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (1.0, 1.0, 0.0))
        assert value == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)

    def test_collinear_points(self) -> None:
        assert collinearity_measure((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)) == 0.0

    def test_collocated_points(self) -> None:
        with pytest.raises(CollocatedError) as exc:
            collinearity_measure((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
        assert exc.value.pair == ("a", "b")

    def test_coplanarity(self) -> None:
        tetra = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)]
        sv = np.linalg.svd(np.array(tetra) - np.mean(tetra, axis=0), compute_uv=False)
        assert coplanarity_measure(tetra) == pytest.approx(sv[-1] / sv[0], rel=1e-12)
        assert coplanarity_measure(tetra) > 0.0
        square = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (1.0, 1.0, 0.0)]
        assert coplanarity_measure(square) == pytest.approx(0.0, abs=1e-15)

    def test_coplanarity_needs_four_points(self) -> None:
        with pytest.raises(ValueError):
            coplanarity_measure([(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)])


class TestValidation:
    def test_default_passes(self, scenario: Scenario) -> None:
        result = validate_scenario(scenario)
        assert result.passed, [i.message for i in result.critical_issues]
        assert result.n_agents == 8
        assert not result.advisory_issues

    def test_collocated_agents_fail(self, scenario: Scenario) -> None:
        result = validate_scenario(_move_agent(scenario, 3, (0.0, 0.0, 0.0)))
        assert not result.passed
        assert any(i.rule == "collocated" and i.agents == [1, 3] for i in result.critical_issues)

    def test_collinear_follower_fails(self, scenario: Scenario) -> None:
        """Agent 3 on the line through agents 1 and 2."""
        result = validate_scenario(_move_agent(scenario, 3, (1.0, 0.0, 0.0)))
        assert not result.passed
        assert any(i.rule == "collinear" and 3 in i.agents for i in result.critical_issues)

    def test_nearly_collinear_is_advisory(self, scenario: Scenario) -> None:
        result = validate_scenario(_move_agent(scenario, 3, (1.0, 1e-4, 0.0)))
        assert result.passed
        assert any(i.rule == "near_degenerate" for i in result.advisory_issues)

    def test_coplanar_landmarks_fail(self, scenario: Scenario) -> None:
        landmarks = [
            LandmarkSpec(id="x1", position=(-0.5, 1.0, 0.0)),
            LandmarkSpec(id="x2", position=(2.5, 1.0, 0.0)),
        ]
        result = validate_scenario(scenario.model_copy(update={"landmarks": landmarks}))
        assert not result.passed
        assert any(i.rule == "coplanar" for i in result.critical_issues)

    def test_follower_with_one_neighbor_fails(self, scenario: Scenario) -> None:
        edges = [e for e in scenario.edges if e != (4, 3)]
        result = validate_scenario(scenario.model_copy(update={"edges": edges}))
        assert not result.passed
        assert any(i.rule == "graph_shape" and i.agents == [4] for i in result.critical_issues)

    def test_forward_edge_fails(self, scenario: Scenario) -> None:
        edges = [*(e for e in scenario.edges if e != (4, 3)), (4, 5)]
        result = validate_scenario(scenario.model_copy(update={"edges": edges}))
        assert not result.passed

    def test_leader_with_neighbor_fails(self, scenario: Scenario) -> None:
        result = validate_scenario(scenario.model_copy(update={"edges": [*scenario.edges, (1, 2)]}))
        assert not result.passed
        assert any(i.agents == [1] for i in result.critical_issues)

    def test_bad_agent_ids_fail(self, scenario: Scenario) -> None:
        data = scenario.model_dump()
        data["agents"][7]["id"] = 9
        result = validate_scenario(Scenario.model_validate(data))
        assert not result.passed
        assert result.critical_issues[0].rule == "agent_ids"

    def test_multi_mode_needs_two_landmarks(self, scenario: Scenario) -> None:
        edges = [e for e in scenario.landmark_edges if e[1] != "x2"]
        result = validate_scenario(scenario.model_copy(update={"landmark_edges": edges}))
        assert not result.passed
        assert any(i.rule == "landmark_count" for i in result.critical_issues)

    def test_single_mode_passes_with_spectrum_advisory(self, scenario: Scenario) -> None:
        """Agent 2 sees three orthonormal directions, so its spectrum is repeated."""
        result = validate_scenario(scenario.model_copy(update={"landmark_mode": "single"}))
        assert result.passed
        assert any(i.rule == "spectrum" and i.agents == [2] for i in result.advisory_issues)

    def test_no_landmark_mode(self, scenario: Scenario) -> None:
        s = scenario.model_copy(update={"landmark_mode": "none", "landmarks": [], "landmark_edges": []})
        assert validate_scenario(s).passed

    def test_unused_gain_is_advisory(self, scenario: Scenario) -> None:
        s = scenario.with_gains(GainTable(overrides={"3:8": 2.0}))
        result = validate_scenario(s)
        assert result.passed
        assert any(i.rule == "unused_gain" for i in result.advisory_issues)

    def test_shared_landmarks(self, scenario: Scenario) -> None:
        assert shared_landmarks(scenario) == ["x1", "x2"]

    def test_never_raises(self, scenario: Scenario) -> None:
        """Collocated landmark and agent is reported, not raised."""
        landmarks = [LandmarkSpec(id="x1", position=(0.0, 0.0, 0.0)), scenario.landmarks[1]]
        result = validate_scenario(scenario.model_copy(update={"landmarks": landmarks}))
        assert not result.passed
        assert len(result.all_issues) >= 1
