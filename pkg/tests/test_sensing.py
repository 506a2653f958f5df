"""Tests for body-frame measurement synthesis."""

import numpy as np
import pytest

from bearing_align.errors import CollocatedError, DegenerateCrossError
from bearing_align.schema import VIRTUAL, Scenario
from bearing_align.sensing import (
    THIRD_AGENT_KEY,
    anchor_targets,
    bearing,
    bearing_time_derivative,
    global_directions,
    landmark_normal,
    measure_all,
    orthogonal_completion,
    virtual_third_direction,
)
from bearing_align.so3 import Rotation, UnitVector3, exp_so3, random_rotation


class TestBearing:
    def test_global_antisymmetry(self, rng: np.random.Generator) -> None:
        for p_i, p_j in zip(rng.normal(size=(200, 3)), rng.normal(size=(200, 3)), strict=True):
            np.testing.assert_allclose(bearing(p_i, p_j).v, -bearing(p_j, p_i).v, atol=1e-14)

    def test_body_frame(self, rng: np.random.Generator) -> None:
        """Body-frame bearing is Rᵀ times the global one, tagged with the agent."""
        R = random_rotation(rng)
        b = bearing((0.0, 0.0, 0.0), (1.0, 2.0, 2.0), R, frame=4)
        assert b.frame == 4
        np.testing.assert_allclose(b.v, R.m.T @ np.array([1.0, 2.0, 2.0]) / 3.0, atol=1e-15)

    def test_collocated(self) -> None:
        with pytest.raises(CollocatedError):
            bearing((1.0, 1.0, 1.0), (1.0, 1.0, 1.0))


class TestSynthesizedDirections:
    def test_virtual_direction_is_perpendicular(self, rng: np.random.Generator) -> None:
        for a, b in zip(rng.normal(size=(200, 3)), rng.normal(size=(200, 3)), strict=True):
            u, v = UnitVector3.normalized(a, 3), UnitVector3.normalized(b, 3)
            n = virtual_third_direction(u, v)
            assert abs(float(n.v @ u.v)) < 1e-14
            assert abs(float(n.v @ v.v)) < 1e-14

    def test_virtual_completes_a_basis(self, rng: np.random.Generator) -> None:
        u = UnitVector3.normalized(rng.normal(size=3))
        v = UnitVector3.normalized(rng.normal(size=3))
        n = virtual_third_direction(u, v)
        gram = np.array([u.v, v.v, n.v])
        assert np.linalg.det(gram @ gram.T) > 0.0

    def test_collinear_inputs(self) -> None:
        u = UnitVector3(np.array([1.0, 0.0, 0.0]))
        with pytest.raises(DegenerateCrossError):
            virtual_third_direction(u, -u)

    def test_frames_must_match(self) -> None:
        u = UnitVector3(np.array([1.0, 0.0, 0.0]), 2)
        v = UnitVector3(np.array([0.0, 1.0, 0.0]), 3)
        with pytest.raises(ValueError, match="different frames"):
            landmark_normal(u, v)

    def test_partner_normals_are_antiparallel(self) -> None:
        """Agents 1 and 2 obtain opposite normals for a shared landmark."""
        p1, p2, x = np.zeros(3), np.array([2.0, 0.0, 0.0]), np.array([-0.5, 1.0, 1.0])
        n1 = landmark_normal(bearing(p1, p2), bearing(p1, x))
        n2 = landmark_normal(bearing(p2, p1), bearing(p2, x))
        np.testing.assert_allclose(n1.v, -n2.v, atol=1e-15)

    def test_orthogonal_completion(self) -> None:
        x = UnitVector3(np.array([1.0, 0.0, 0.0]))
        y = UnitVector3(np.array([0.0, 1.0, 0.0]))
        np.testing.assert_allclose(orthogonal_completion(x, y).v, [0.0, 0.0, 1.0], atol=1e-15)

    def test_time_derivative(self, rng: np.random.Generator) -> None:
        """Finite difference of Rᵀd under R_dot = R hat(w) matches b x w."""
        R = random_rotation(rng)
        w = rng.normal(size=3)
        d = np.array([0.0, 0.6, 0.8])
        h = 1e-6
        b_plus = (R @ exp_so3(h * w)).m.T @ d
        b_minus = (R @ exp_so3(-h * w)).m.T @ d
        fd = (b_plus - b_minus) / (2.0 * h)
        np.testing.assert_allclose(fd, bearing_time_derivative(R.m.T @ d, w), atol=1e-4)


class TestMeasureAll:
    def test_multi_mode_layout(self, scenario: Scenario, random_state: list[Rotation]) -> None:
        sets = measure_all(scenario, random_state)
        assert [m.owner for m in sets] == list(range(1, 9))
        assert set(sets[1].normals) == {"x1", "x2"}
        assert sets[1].virtual_direction is None
        assert sets[1].neighbors == (1,)
        assert sets[5].neighbors == (4, 5)
        assert sets[5].virtual_direction is not None
        assert sets[0].neighbors == ()

    def test_bearings_in_body_frame(self, scenario: Scenario, random_state: list[Rotation]) -> None:
        sets = measure_all(scenario, random_state)
        pos = scenario.positions()
        d = (pos[4] - pos[2]) / np.linalg.norm(pos[4] - pos[2])
        b = sets[2].bearings[5]
        assert b.frame == 3
        np.testing.assert_allclose(b.v, random_state[2].m.T @ d, atol=1e-14)

    def test_single_mode_spans_space(self, scenario: Scenario, random_state: list[Rotation]) -> None:
        """One bearing, one normal and one orthogonal direction for agent 2."""
        s = scenario.model_copy(update={"landmark_mode": "single"})
        m2 = measure_all(s, random_state)[1]
        assert list(m2.normals) == ["x1"]
        assert m2.virtual_direction is not None
        basis = np.array([m2.bearings[1].v, m2.normals["x1"].v, m2.virtual_direction.v])
        assert np.linalg.matrix_rank(basis) == 3

    def test_no_landmark_mode_uses_third_agent(self, scenario: Scenario, random_state: list[Rotation]) -> None:
        s = scenario.model_copy(update={"landmark_mode": "none"})
        assert anchor_targets(s) == [THIRD_AGENT_KEY]
        m1, m2 = measure_all(s, random_state)[:2]
        assert list(m2.normals) == [THIRD_AGENT_KEY]
        assert m1.virtual_direction is not None

    def test_wrong_state_count(self, scenario: Scenario) -> None:
        with pytest.raises(ValueError, match="Expected 8"):
            measure_all(scenario, [Rotation.identity()] * 3)

    def test_degenerate_follower_is_named(self, scenario: Scenario) -> None:
        data = scenario.model_dump()
        data["agents"][2]["position"] = (1.0, 0.0, 0.0)
        s = Scenario.model_validate(data)
        with pytest.raises(DegenerateCrossError, match="agent 3"):
            measure_all(s, [Rotation.identity()] * s.n)

    def test_global_directions_match_identity_measurements(self, scenario: Scenario) -> None:
        """At identity orientations the body-frame vectors are the global directions."""
        sets = measure_all(scenario, [Rotation.identity()] * scenario.n)
        dirs = global_directions(scenario, 5)
        np.testing.assert_allclose(dirs["2"], sets[4].bearings[2].v, atol=1e-15)
        np.testing.assert_allclose(dirs["3"], sets[4].bearings[3].v, atol=1e-15)
        np.testing.assert_allclose(dirs[VIRTUAL], sets[4].virtual_direction.v, atol=1e-15)
        dirs2 = global_directions(scenario, 2)
        np.testing.assert_allclose(dirs2["x1"], sets[1].normals["x1"].v, atol=1e-15)

    def test_global_directions_leader(self, scenario: Scenario) -> None:
        with pytest.raises(ValueError):
            global_directions(scenario, 1)
