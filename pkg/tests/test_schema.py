"""Tests for scenario models and trajectory columns."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from bearing_align.config import ScenarioOverrides
from bearing_align.schema import (
    AGENT_FIELDS,
    AxisRotation,
    GainTable,
    LandmarkSpec,
    OrientationSpec,
    Scenario,
    agent_columns,
    default_scenario,
    trajectory_columns,
)
from bearing_align.so3 import rot_x, rot_y, rot_z


class TestTrajectoryColumns:
    def test_header_layout(self) -> None:
        cols = trajectory_columns(2)
        assert cols[0] == "t"
        assert len(cols) == 1 + 2 * len(AGENT_FIELDS)
        assert cols[1:18] == agent_columns(1)
        assert "a2_err_frob" in cols
        assert "a1_R00" in cols and "a2_h_norm" in cols


class TestOrientationSpec:
    def test_degrees(self) -> None:
        r = AxisRotation(axis="x", angle=30.0, degrees=True).rotation()
        assert r.allclose(rot_x(math.pi / 6), atol=1e-15)

    def test_product_order(self) -> None:
        """rotations [a, b] mean rot(a) @ rot(b)."""
        spec = OrientationSpec(
            rotations=[
                AxisRotation(axis="y", angle=150.0, degrees=True),
                AxisRotation(axis="z", angle=30.0, degrees=True),
            ]
        )
        expected = rot_y(5 * math.pi / 6) @ rot_z(math.pi / 6)
        assert spec.rotation().allclose(expected, atol=1e-15)

    def test_empty_is_identity(self) -> None:
        np.testing.assert_array_equal(OrientationSpec().rotation().m, np.eye(3))

    def test_both_forms_rejected(self) -> None:
        with pytest.raises(ValidationError):
            OrientationSpec(
                matrix=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
                rotations=[AxisRotation(axis="x", angle=0.1)],
            )

    def test_non_rotation_matrix_rejected(self) -> None:
        with pytest.raises(ValidationError, match="Not a rotation"):
            OrientationSpec(matrix=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, -1.0)))

    def test_round_trip_through_matrix(self) -> None:
        r = rot_x(0.4) @ rot_z(-1.1)
        assert OrientationSpec.from_rotation(r).rotation().allclose(r, atol=0.0)


class TestGainTable:
    def test_default_and_override(self) -> None:
        gains = GainTable(default=1.5, overrides={"3:1": 2.0})
        assert gains.gain(3, 1) == 2.0
        assert gains.gain(3, 2) == 1.5
        assert gains.gain(2, "x1") == 1.5

    def test_bad_key(self) -> None:
        with pytest.raises(ValidationError, match="not of the form"):
            GainTable(overrides={"31": 2.0})

    def test_non_positive_gain(self) -> None:
        with pytest.raises(ValidationError):
            GainTable(default=0.0)
        with pytest.raises(ValidationError):
            GainTable(k_omega=-1.0)

    def test_scaled_keeps_damping(self) -> None:
        gains = GainTable(k_omega=2.0, default=1.0, overrides={"3:1": 2.0}).scaled(10.0)
        assert gains.k_omega == 2.0
        assert gains.gain(3, 1) == pytest.approx(20.0)
        assert gains.gain(4, 1) == pytest.approx(10.0)


class TestScenario:
    def test_default_scenario(self) -> None:
        s = default_scenario()
        assert s.n == 8
        assert len(s.landmarks) == 2
        assert len(s.edges) == 13
        assert s.graph.neighbors(6) == [4, 5]
        assert s.graph.landmarks_of(2) == ["x1", "x2"]
        assert s.initial_rotations()[1].allclose(rot_x(math.pi / 3) @ rot_z(math.pi / 6), atol=1e-15)
        assert s.initial_rotations()[7].allclose(rot_z(8 * math.pi / 9), atol=1e-15)

    def test_unknown_field_rejected(self, scenario: Scenario) -> None:
        data = scenario.model_dump()
        data["velocity_limit"] = 1.0
        with pytest.raises(ValidationError, match="velocity_limit"):
            Scenario.model_validate(data)

    def test_needs_two_agents(self, scenario: Scenario) -> None:
        data = scenario.model_dump()
        data["agents"] = data["agents"][:1]
        with pytest.raises(ValidationError):
            Scenario.model_validate(data)

    def test_reserved_landmark_id(self) -> None:
        with pytest.raises(ValidationError):
            LandmarkSpec(id="v", position=(0.0, 0.0, 0.0))
        with pytest.raises(ValidationError):
            LandmarkSpec(id="3", position=(0.0, 0.0, 0.0))

    def test_non_finite_position(self, scenario: Scenario) -> None:
        data = scenario.model_dump()
        data["agents"][0]["position"] = (math.nan, 0.0, 0.0)
        with pytest.raises(ValidationError):
            Scenario.model_validate(data)

    def test_with_overrides(self, scenario: Scenario) -> None:
        s = scenario.with_overrides(ScenarioOverrides(dt=0.01, t_end=5.0, k_omega=3.0, landmark_mode="single"))
        assert s.integration.dt == 0.01
        assert s.integration.t_end == 5.0
        assert s.gains.k_omega == 3.0
        assert s.landmark_mode == "single"
        assert scenario.integration.dt == 1e-3

    def test_with_initial_state(self, scenario: Scenario) -> None:
        rotations = [rot_z(0.1 * i) for i in range(scenario.n)]
        rates = np.arange(3 * scenario.n, dtype=float).reshape(scenario.n, 3)
        s = scenario.with_initial_state(rotations, rates)
        for got, want in zip(s.initial_rotations(), rotations, strict=True):
            assert got.allclose(want, atol=0.0)
        np.testing.assert_array_equal(s.initial_rates(), rates)

    def test_with_integration_validates(self, scenario: Scenario) -> None:
        with pytest.raises(ValidationError):
            scenario.with_integration(dt=0.0)
