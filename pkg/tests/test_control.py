"""Tests for error vectors, K-matrices, critical points and gain design."""

import math

import numpy as np
import pytest

from bearing_align.control import (
    KMatrix,
    classify_critical_points,
    control_update,
    critical_points,
    design_gains,
    error_from_k,
    error_function,
    error_vector,
    error_vector_agent2,
    error_vector_follower,
    fit_sandwich,
    gain_bounds,
    gains_for_spread,
    global_k_matrix,
    k_matrix,
    local_k_matrix,
    lyapunov_value,
    phi_from_k,
)
from bearing_align.errors import DegenerateSpectrumError, MissingMeasurementError, SearchFailedError
from bearing_align.properties import hessian_label
from bearing_align.schema import GainTable, Scenario
from bearing_align.sensing import MeasurementSet, measure_all
from bearing_align.so3 import (
    Rotation,
    UnitVector3,
    exp_so3,
    random_rotation,
    random_rotations,
    rot_x,
)


class TestErrorVectors:
    def test_aligned_frames_give_zero(self, aligned_scenario: Scenario) -> None:
        sets = measure_all(aligned_scenario, aligned_scenario.initial_rotations())
        for agent in range(2, aligned_scenario.n + 1):
            assert error_vector(agent, sets, aligned_scenario.gains).norm < 1e-14
            assert error_function(agent, sets, aligned_scenario.gains) == pytest.approx(0.0, abs=1e-14)

    def test_agent2_brute_force(self, scenario: Scenario) -> None:
        """Default initial state: e_2 equals the explicit sum of cross products."""
        sets = measure_all(scenario, scenario.initial_rotations())
        m1, m2 = sets[0], sets[1]
        expected = np.cross(m1.bearings[2].v, m2.bearings[1].v)
        for lm in ("x1", "x2"):
            expected = expected + np.cross(m1.normals[lm].v, m2.normals[lm].v)
        e2 = error_vector_agent2(m1, m2, scenario.gains)
        np.testing.assert_allclose(e2.e, expected, atol=1e-15)
        assert e2.norm > 0.1

    def test_single_term_rotation_about_bearing(self) -> None:
        """Rotating agent 2 about the shared bearing moves only the normal term."""
        angle = 0.4
        b21 = np.array([-1.0, 0.0, 0.0])
        n = np.array([0.0, 0.0, 1.0])
        R2 = rot_x(angle)
        # Agent 1 reports -b21 and -n; agent 2 sees its directions through R2ᵀ.
        m1 = MeasurementSet(
            owner=1,
            neighbors=(),
            bearings={2: UnitVector3.normalized(-b21, 1)},
            normals={"x1": UnitVector3.normalized(-n, 1)},
        )
        m2 = MeasurementSet(
            owner=2,
            neighbors=(1,),
            bearings={1: UnitVector3.normalized(R2.m.T @ b21, 2)},
            normals={"x1": UnitVector3.normalized(R2.m.T @ n, 2)},
        )
        e2 = error_vector_agent2(m1, m2, GainTable(default=2.0))
        np.testing.assert_allclose(np.abs(e2.e), [2.0 * math.sin(angle), 0.0, 0.0], atol=1e-15)

    def test_follower_matches_dispatch(self, scenario: Scenario, random_state: list[Rotation]) -> None:
        sets = measure_all(scenario, random_state)
        own = sets[5]
        msgs = {j: sets[j - 1].bearings[6] for j in own.neighbors}
        e6 = error_vector_follower(6, own, msgs, scenario.gains)
        np.testing.assert_array_equal(e6.e, error_vector(6, sets, scenario.gains).e)

    def test_leader_has_no_law(self, scenario: Scenario) -> None:
        sets = measure_all(scenario, scenario.initial_rotations())
        with pytest.raises(ValueError, match="leader"):
            error_vector(1, sets, scenario.gains)

    def test_missing_message(self, scenario: Scenario) -> None:
        sets = measure_all(scenario, scenario.initial_rotations())
        with pytest.raises(MissingMeasurementError):
            error_vector_follower(6, sets[5], {4: sets[3].bearings[6]}, scenario.gains)

    def test_small_angle_linearization(self, aligned_scenario: Scenario) -> None:
        """Phi of agent 2 near alignment is the quadratic form of trK I - K."""
        km = global_k_matrix(aligned_scenario, 2)
        rotations = aligned_scenario.initial_rotations()
        a = np.array([0.3, -0.2, 0.5])
        eps = 1e-4
        R1 = rotations[0]
        rotations[1] = R1 @ exp_so3(eps * a)
        sets = measure_all(aligned_scenario, rotations)
        phi = error_function(2, sets, aligned_scenario.gains)
        # Body perturbation in agent 1's frame maps to the global frame through R1.
        x = R1.m @ a
        H = km.total_gain * np.eye(3) - km.K
        assert phi == pytest.approx(0.5 * eps**2 * float(x @ H @ x), rel=1e-3)


class TestKMatrix:
    def test_reconstruction(self, scenario: Scenario) -> None:
        for agent in range(2, scenario.n + 1):
            km = global_k_matrix(scenario, agent)
            np.testing.assert_allclose(km.reconstruct(), km.K, atol=1e-10)
            np.testing.assert_allclose(km.K, km.K.T, atol=1e-12)
            assert km.eigenvalues[0] > 0.0

    def test_trace_is_total_gain(self, scenario: Scenario) -> None:
        gains = scenario.gains.with_overrides({"4:1": 2.5})
        km = global_k_matrix(scenario, 4, gains)
        assert km.total_gain == pytest.approx(4.5, abs=1e-12)

    def test_local_spectrum_matches_global(self, scenario: Scenario, rng: np.random.Generator) -> None:
        for _ in range(10):
            rotations = [random_rotation(rng) for _ in range(scenario.n)]
            sets = measure_all(scenario, rotations)
            for agent in range(2, scenario.n + 1):
                local = local_k_matrix(agent, sets[agent - 1], scenario.gains)
                np.testing.assert_allclose(
                    local.eigenvalues, global_k_matrix(scenario, agent).eigenvalues, atol=1e-10
                )

    def test_virtual_gain_is_eigenvalue(self, scenario: Scenario) -> None:
        gains = scenario.gains.with_overrides({"3:v": 0.7})
        km = global_k_matrix(scenario, 3, gains)
        assert np.min(np.abs(km.eigenvalues - 0.7)) < 1e-12

    def test_degenerate_spectrum_is_logged(self, caplog: pytest.LogCaptureFixture) -> None:
        with caplog.at_level("WARNING", logger="bearing_align"):
            k_matrix(2, [(np.eye(3)[i], 1.0) for i in range(3)])
        assert "degenerate" in caplog.text


class TestCriticalPoints:
    def test_diagonal_example(self) -> None:
        """lambda = (1, 2, 3), U = I: Phi = 10, 8, 6 with D_1 the maximum."""
        km = KMatrix.from_matrix(2, np.diag([1.0, 2.0, 3.0]))
        points = classify_critical_points(km)
        assert [p.phi for p in points] == pytest.approx([0.0, 10.0, 8.0, 6.0], abs=1e-12)
        assert [p.label for p in points] == ["min", "max", "saddle", "saddle"]

    def test_default_agents(self, scenario: Scenario) -> None:
        """Zero residual, Phi = 2(sum - lambda_m), labels agree with the Hessian."""
        for agent in range(2, scenario.n + 1):
            km = global_k_matrix(scenario, agent)
            lam = km.eigenvalues
            for p in classify_critical_points(km):
                Q = np.array(p.Q)
                assert np.linalg.norm(error_from_k(km, Q)) < 1e-8
                expected = 0.0 if p.index == 0 else 2.0 * (float(lam.sum()) - float(lam[p.index - 1]))
                assert p.phi == pytest.approx(expected, abs=1e-10)
                assert hessian_label(km, Q) == p.label

    def test_points_are_involutions(self, scenario: Scenario) -> None:
        for Q in critical_points(global_k_matrix(scenario, 3))[1:]:
            np.testing.assert_allclose(Q.m @ Q.m, np.eye(3), atol=1e-14)

    def test_relabeling_invariance(self, rng: np.random.Generator) -> None:
        """Permuting the eigenbasis of K does not change the classified set."""
        U = random_rotations(rng, 1)[0]
        K = U @ np.diag([0.5, 1.3, 2.1]) @ U.T
        P = U[:, [2, 0, 1]]
        K_perm = P @ np.diag([2.1, 0.5, 1.3]) @ P.T
        a = sorted((p.label, round(p.phi, 9)) for p in classify_critical_points(KMatrix.from_matrix(2, K)))
        b = sorted((p.label, round(p.phi, 9)) for p in classify_critical_points(KMatrix.from_matrix(2, K_perm)))
        assert a == b

    def test_repeated_eigenvalues_refused(self) -> None:
        with pytest.raises(DegenerateSpectrumError):
            critical_points(KMatrix.from_matrix(2, np.diag([1.0, 1.0, 2.0])))

    def test_trace_form(self, scenario: Scenario, rng: np.random.Generator) -> None:
        """tr(K) - tr(QK) equals tr(G (I - Uᵀ Q U)) with G the eigenvalue diagonal."""
        km = global_k_matrix(scenario, 2)
        G = np.diag(km.eigenvalues)
        U = km.eigenvectors
        for Q in random_rotations(rng, 100):
            assert phi_from_k(km, Q) == pytest.approx(float(np.trace(G @ (np.eye(3) - U.T @ Q @ U))), abs=1e-10)


class TestGainDesign:
    def test_infeasible_spread(self, scenario: Scenario) -> None:
        """Agent 3's bearings meet at about 64 degrees, so the spread cannot drop below 1.5."""
        own = measure_all(scenario, scenario.initial_rotations())[2]
        with pytest.raises(SearchFailedError) as exc:
            design_gains(3, own, 0.1)
        assert exc.value.best_spread == pytest.approx(1.5, abs=1e-3)
        assert exc.value.best_spread > 0.1

    def test_feasible_spread(self, scenario: Scenario) -> None:
        own = measure_all(scenario, scenario.initial_rotations())[2]
        gains = design_gains(3, own, 2.0)
        table = scenario.gains.with_overrides(gains)
        assert global_k_matrix(scenario, 3, table).spread <= 2.0 + 1e-9
        assert gains["3:v"] == 1.0

    def test_gains_for_spread_hits_target(self, scenario: Scenario) -> None:
        own = measure_all(scenario, scenario.initial_rotations())[2]
        gains, achieved = gains_for_spread(3, own, 3.0)
        assert achieved == pytest.approx(3.0, rel=1e-6)
        table = scenario.gains.with_overrides(gains)
        assert global_k_matrix(scenario, 3, table).spread == pytest.approx(achieved, rel=1e-9)

    def test_gains_for_spread_below_reach(self, scenario: Scenario) -> None:
        own = measure_all(scenario, scenario.initial_rotations())[2]
        _, achieved = gains_for_spread(3, own, 0.01)
        assert achieved == pytest.approx(1.5, abs=1e-3)


class TestLawsAndBounds:
    def test_control_update(self, rng: np.random.Generator) -> None:
        w, e = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(control_update(w, e, 2.0), -2.0 * w - e, atol=0.0)

    def test_lyapunov_value(self, rng: np.random.Generator) -> None:
        w, e = rng.normal(size=3), rng.normal(size=3)
        expected = 1.5 + 0.5 * float(w @ w) + 0.2 * float(e @ w)
        assert lyapunov_value(1.5, w, e, 0.2) == pytest.approx(expected, abs=1e-15)

    def test_sandwich_bounds(self, scenario: Scenario, rng: np.random.Generator) -> None:
        km = global_k_matrix(scenario, 4)
        sigma, gamma, used = fit_sandwich(km, rng, 4096)
        assert 0.0 < sigma <= gamma < math.inf
        assert used > 1000

    def test_gain_bounds(self, scenario: Scenario) -> None:
        km = global_k_matrix(scenario, 2)
        bounds = gain_bounds(km, 2.0, sigma=0.25)
        assert bounds.k_v_max_positivity == pytest.approx(0.5)
        assert bounds.k_v_max_decrease == pytest.approx(8.0 / (4.0 * km.total_gain + 4.0))
        assert bounds.k_v_max == min(bounds.k_v_max_positivity, bounds.k_v_max_decrease)
