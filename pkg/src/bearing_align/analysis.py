"""Post-hoc verification of convergence, equilibria and Lyapunov decrease.

Reports:
- ConvergenceReport: per-agent time to threshold and fitted exponential tail.
- EquilibriumReport: residuals at the four critical points and escape from the
  three undesired ones under small perturbations.
- LyapunovAudit: increases of the logged Lyapunov value between samples.
- ISS table: Monte Carlo convergence fraction against spectral spread and gain scale.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import polars as pl
from pydantic import BaseModel, Field

from bearing_align.config import AnalysisConfig, MonteCarloConfig
from bearing_align.control import (
    classify_critical_points,
    error_from_k,
    gains_for_spread,
    global_k_matrix,
)
from bearing_align.linalg import polar_rotation_batch
from bearing_align.schema import Scenario
from bearing_align.sensing import measure_all
from bearing_align.simulator import (
    MonteCarloSummary,
    TrajectoryLog,
    monte_carlo,
    scenario_digest,
    step_count,
)
from bearing_align.so3 import Rotation, exp_batch

logger = logging.getLogger(__name__)

# Lyapunov samples at or below this value are treated as equilibrium.
_V_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------
class RateFit(BaseModel):
    """Least-squares fit of ``log(err) = a - rate * t`` over the decay window."""

    rate: float = Field(description="Fitted exponential rate (1/s)")
    r_squared: float
    window_start: float
    window_end: float
    points: int


class AgentConvergence(BaseModel):
    agent: int
    converged: bool
    status: str = Field(description="'converged' or 'NotConverged'")
    time_to_threshold: float | None = Field(
        default=None, description="First time after which the error stays below threshold (s)"
    )
    rate: float | None = Field(default=None, description="Fitted exponential rate (1/s)")
    r_squared: float | None = None
    terminal_error: float | None = None
    terminal_input: float | None = Field(
        default=None, description="Norm of the upstream input h_i at the final sample"
    )


class AgentSpectrum(BaseModel):
    agent: int
    eigenvalues: list[float]
    K: list[list[float]]
    spread: float
    k_v: float | None = None


class ConvergenceReport(BaseModel):
    """Convergence summary of one run, optionally with Monte Carlo aggregates."""

    threshold: float
    t_end: float
    scenario_digest: str
    agents: list[AgentConvergence] = Field(default_factory=list)
    spectra: list[AgentSpectrum] = Field(default_factory=list)
    monte_carlo: MonteCarloSummary | None = None

    @property
    def all_converged(self) -> bool:
        return bool(self.agents) and all(a.converged for a in self.agents)


def _tail_window(err: np.ndarray, threshold: float) -> np.ndarray:
    index = np.arange(err.size)
    above = err >= threshold
    peaks = np.zeros(err.size, dtype=bool)
    peaks[1:-1] = (err[1:-1] > err[:-2]) & (err[1:-1] >= err[2:])

    def after_last_exceeding(bound: float) -> np.ndarray:
        exceeding = np.flatnonzero(err > bound)
        return index > (exceeding[-1] if exceeding.size else -1)

    for decades in (100.0, 1000.0):
        window = np.flatnonzero(peaks & above & after_last_exceeding(decades * threshold))
        if window.size >= 3:
            return window
    window = np.flatnonzero(above & after_last_exceeding(10.0 * threshold))
    if window.size < 3:
        window = np.flatnonzero(above)[-3:]
    return window


def fit_exponential_rate(t: np.ndarray, err: np.ndarray, threshold: float) -> RateFit | None:
    """Fit the exponential tail of a decaying error signal.

    Only the tail after the error last exceeded the top of a window counts.
    An oscillating tail is fitted through its local maxima in the last two
    decades above ``threshold`` (three when two hold fewer than three maxima).
    A monotone tail is fitted through every sample in the last decade above
    ``threshold``, or the last three samples above it when the decade holds
    fewer.

    Returns:
        The fit, or None if no decaying tail is available.
    """
    t = np.asarray(t, dtype=float)
    err = np.asarray(err, dtype=float)
    if t.size < 3:
        return None
    window = _tail_window(err, threshold)
    if window.size < 3 or np.any(err[window] <= 0.0):
        return None
    x = t[window]
    y = np.log(err[window])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - float(np.sum(residual**2)) / total if total > 0.0 else 0.0
    if slope >= 0.0:
        return None
    return RateFit(
        rate=float(-slope),
        r_squared=r_squared,
        window_start=float(x[0]),
        window_end=float(x[-1]),
        points=int(window.size),
    )


def _time_to_threshold(t: np.ndarray, err: np.ndarray, threshold: float) -> float | None:
    above = np.flatnonzero(err >= threshold)
    if above.size == 0:
        return float(t[0])
    last = int(above[-1])
    if last + 1 >= t.size:
        return None
    return float(t[last + 1])


def convergence_analysis(
    log: TrajectoryLog,
    threshold: float = 1e-6,
    scenario: Scenario | None = None,
    monte_carlo_summary: MonteCarloSummary | None = None,
) -> ConvergenceReport:
    """Per-follower convergence flags, times and exponential-rate fits.

    Agents whose terminal error is not below ``threshold`` are reported as
    ``NotConverged`` without a rate. An empty log reports every follower that
    way. When ``scenario`` is given, the K-matrix spectra are attached.
    """
    t = log.times
    agents: list[AgentConvergence] = []
    for agent in range(2, log.n_agents + 1):
        if t.size == 0:
            agents.append(AgentConvergence(agent=agent, converged=False, status="NotConverged"))
            continue
        err = log.series(agent, "err_frob")
        terminal = float(err[-1])
        converged = terminal < threshold
        fit = fit_exponential_rate(t, err, threshold) if converged else None
        agents.append(
            AgentConvergence(
                agent=agent,
                converged=converged,
                status="converged" if converged else "NotConverged",
                time_to_threshold=_time_to_threshold(t, err, threshold) if converged else None,
                rate=fit.rate if fit else None,
                r_squared=fit.r_squared if fit else None,
                terminal_error=terminal,
                terminal_input=float(log.series(agent, "h_norm")[-1]),
            )
        )
        logger.debug("Agent %d: terminal error %.3e, fit %s", agent, terminal, fit)

    spectra: list[AgentSpectrum] = []
    if scenario is not None:
        for agent in range(2, scenario.n + 1):
            km = global_k_matrix(scenario, agent)
            spectra.append(
                AgentSpectrum(
                    agent=agent,
                    eigenvalues=km.eigenvalues.tolist(),
                    K=km.K.tolist(),
                    spread=km.spread,
                    k_v=log.k_v.get(agent),
                )
            )

    return ConvergenceReport(
        threshold=threshold,
        t_end=float(t[-1]) if t.size else 0.0,
        scenario_digest=log.scenario_digest,
        agents=agents,
        spectra=spectra,
        monte_carlo=monte_carlo_summary,
    )


# ---------------------------------------------------------------------------
# Equilibrium probe
# ---------------------------------------------------------------------------
class CriticalPointProbe(BaseModel):
    """Outcome of perturbing one critical point of the leader-referenced system."""

    index: int = Field(description="0 for the identity, m for U D_m Uᵀ")
    label: str = Field(description="'min', 'max' or 'saddle'")
    phi: float
    expected_phi: float = Field(description="0 at the identity, 2(lambda_j + lambda_k) otherwise")
    residual: float = Field(description="Norm of the error vector at the point")
    trials: int
    escaped: int = Field(description="Trials whose Phi fell below the escape level in time")
    converged: int = Field(description="Trials that ended within threshold of the identity")
    max_escape_time: float | None = None
    max_drift: float = Field(description="Largest Frobenius distance from the point along the probe")

    @property
    def stable(self) -> bool:
        return self.index == 0 and self.converged == self.trials

    @property
    def unstable(self) -> bool:
        return self.index > 0 and self.escaped == self.trials


class EquilibriumReport(BaseModel):
    agent: int
    eigenvalues: list[float]
    perturbation: float
    escape_horizon: float
    settle_horizon: float
    seed: int
    points: list[CriticalPointProbe] = Field(default_factory=list)

    @property
    def stable_count(self) -> int:
        return sum(p.stable for p in self.points)

    @property
    def unstable_count(self) -> int:
        return sum(p.unstable for p in self.points)


def _unforced_rates(
    K: np.ndarray, Q: np.ndarray, w: np.ndarray, k_omega: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    QK = Q @ K
    A = QK - np.transpose(QK, (0, 2, 1))
    e_global = np.stack([A[:, 2, 1], A[:, 0, 2], A[:, 1, 0]], axis=1)
    e_body = np.einsum("nji,nj->ni", Q, e_global)
    phi = float(np.trace(K)) - np.trace(QK, axis1=1, axis2=2)
    dQ = np.cross(Q, w[:, None, :])
    dw = -k_omega * w - e_body
    return dQ, dw, phi


def _probe_point(
    K: np.ndarray,
    k_omega: float,
    Qc: np.ndarray,
    phi_c: float,
    index: int,
    rng: np.random.Generator,
    perturbation: float,
    cfg: AnalysisConfig,
) -> tuple[int, int, float | None, float]:
    trials = cfg.probe_trials
    axes = rng.normal(size=(trials, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    Q = Qc[None, :, :] @ exp_batch(perturbation * axes)
    w = np.zeros((trials, 3))
    dt = cfg.probe_dt
    horizon = cfg.escape_horizon if perturbation == 0.0 else cfg.escape_horizon + cfg.settle_horizon
    n_steps = step_count(horizon, dt)
    escape_level = (1.0 - cfg.escape_margin) * phi_c
    escape_time = np.full(trials, np.inf)
    max_drift = 0.0

    for k in range(1, n_steps + 1):
        k1Q, k1w, _ = _unforced_rates(K, Q, w, k_omega)
        k2Q, k2w, _ = _unforced_rates(K, Q + 0.5 * dt * k1Q, w + 0.5 * dt * k1w, k_omega)
        k3Q, k3w, _ = _unforced_rates(K, Q + 0.5 * dt * k2Q, w + 0.5 * dt * k2w, k_omega)
        k4Q, k4w, _ = _unforced_rates(K, Q + dt * k3Q, w + dt * k3w, k_omega)
        Q = polar_rotation_batch(Q + (dt / 6.0) * (k1Q + 2.0 * k2Q + 2.0 * k3Q + k4Q))
        w = w + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        phi = float(np.trace(K)) - np.trace(Q @ K, axis1=1, axis2=2)
        drift = np.sqrt(np.einsum("nij,nij->n", Q - Qc, Q - Qc))
        max_drift = max(max_drift, float(drift.max()))
        if index > 0:
            newly = (phi < escape_level) & np.isinf(escape_time)
            escape_time[newly] = k * dt

    escaped_mask = escape_time <= cfg.escape_horizon
    rel = np.eye(3)[None, :, :] - Q
    final_err = np.sqrt(np.einsum("nij,nij->n", rel, rel))
    converged = int(np.sum(final_err < cfg.convergence_threshold))
    escaped = int(escaped_mask.sum()) if index > 0 else 0
    max_escape = float(escape_time[escaped_mask].max()) if index > 0 and escaped else None
    return escaped, converged, max_escape, max_drift


def equilibrium_probe(
    agent: int,
    scenario: Scenario,
    perturbation: float | None = None,
    config: AnalysisConfig | None = None,
    seed: int = 42,
) -> EquilibriumReport:
    """Place one agent's leader-referenced system at each critical point and perturb it.

    The probe integrates ``Q_dot = Q hat(w)``, ``w_dot = -k_w w - Qᵀ vee(QK - KQᵀ)``
    for ``probe_trials`` random rotation perturbations of the given magnitude,
    starting at rest. A trial escapes when Phi drops below
    ``(1 - escape_margin)`` times its critical value within ``escape_horizon``,
    and converges when it ends within the convergence threshold of the identity.
    With zero perturbation only the escape horizon is simulated.

    Raises:
        ValueError: If ``agent`` has no alignment law (the leader).
        DegenerateSpectrumError: If the agent's K-matrix eigenvalues are not distinct.
    """
    cfg = config or AnalysisConfig()
    if agent < 2 or agent > scenario.n:
        raise ValueError(f"Agent {agent} has no alignment law; choose 2..{scenario.n}")
    pert = cfg.probe_perturbation if perturbation is None else perturbation
    km = global_k_matrix(scenario, agent)
    points = classify_critical_points(km)
    lam = km.eigenvalues
    rng = np.random.default_rng([seed, agent])

    probes: list[CriticalPointProbe] = []
    for point in points:
        Qc = np.array(point.Q)
        residual = float(np.linalg.norm(error_from_k(km, Qc)))
        expected = 0.0 if point.index == 0 else 2.0 * float(np.sum(lam) - lam[point.index - 1])
        escaped, converged, max_escape, drift = _probe_point(
            km.K, scenario.gains.k_omega, Qc, point.phi, point.index, rng, pert, cfg
        )
        logger.info(
            "Agent %d point %d (%s): residual %.2e, escaped %d/%d, converged %d/%d",
            agent,
            point.index,
            point.label,
            residual,
            escaped,
            cfg.probe_trials,
            converged,
            cfg.probe_trials,
        )
        probes.append(
            CriticalPointProbe(
                index=point.index,
                label=point.label,
                phi=point.phi,
                expected_phi=expected,
                residual=residual,
                trials=cfg.probe_trials,
                escaped=escaped,
                converged=converged,
                max_escape_time=max_escape,
                max_drift=drift,
            )
        )

    return EquilibriumReport(
        agent=agent,
        eigenvalues=lam.tolist(),
        perturbation=pert,
        escape_horizon=cfg.escape_horizon,
        settle_horizon=cfg.settle_horizon,
        seed=seed,
        points=probes,
    )


def start_at_critical_point(scenario: Scenario, agent: int, index: int) -> Scenario:
    """Copy of the scenario with ``agent`` placed at critical point ``index`` and everything at rest.

    Agents other than ``agent`` start aligned with the leader, so the agent's
    forced and leader-referenced dynamics coincide.
    """
    km = global_k_matrix(scenario, agent)
    Q = Rotation(np.array(classify_critical_points(km)[index].Q))
    R1 = scenario.initial_rotations()[0]
    rotations = [R1] * scenario.n
    rotations[agent - 1] = Q @ R1
    return scenario.with_initial_state(rotations)


# ---------------------------------------------------------------------------
# Lyapunov audit
# ---------------------------------------------------------------------------
class AgentLyapunovAudit(BaseModel):
    agent: int
    k_v: float
    samples: int = Field(description="Sample-to-sample differences considered")
    max_increase: float = Field(description="Largest increase of V between consecutive samples")
    violations: int = Field(description="Increases above the tolerance")
    increase_fraction: float = Field(description="Fraction of considered differences with V increasing")


class LyapunovAudit(BaseModel):
    tolerance: float
    agents: list[AgentLyapunovAudit] = Field(default_factory=list)

    def for_agent(self, agent: int) -> AgentLyapunovAudit:
        for a in self.agents:
            if a.agent == agent:
                return a
        raise KeyError(f"No audit for agent {agent}")


def lyapunov_audit(
    log: TrajectoryLog,
    scenario: Scenario | None = None,
    tolerance: float = 1e-8,
    agents: list[int] | None = None,
) -> LyapunovAudit:
    """Check that the logged Lyapunov value does not increase between samples.

    Differences that start from ``V <= 1e-12`` are ignored (equilibrium).
    Increases are reported, never raised.
    """
    if scenario is not None and scenario_digest(scenario) != log.scenario_digest:
        logger.warning("Audited log was produced from a different scenario")
    selected = agents or list(range(2, log.n_agents + 1))
    results: list[AgentLyapunovAudit] = []
    for agent in selected:
        V = log.series(agent, "V") if log.frame.height else np.zeros(0)
        dV = np.diff(V)
        mask = V[:-1] > _V_FLOOR if V.size else np.zeros(0, dtype=bool)
        considered = dV[mask]
        max_increase = float(considered.max()) if considered.size else 0.0
        violations = int(np.sum(considered > tolerance))
        fraction = float(np.mean(considered > 0.0)) if considered.size else 0.0
        if violations:
            logger.warning(
                "Agent %d: V increased above tolerance %d times (max %.3e)",
                agent,
                violations,
                max_increase,
            )
        results.append(
            AgentLyapunovAudit(
                agent=agent,
                k_v=log.k_v.get(agent, 0.0),
                samples=int(considered.size),
                max_increase=max(max_increase, 0.0),
                violations=violations,
                increase_fraction=fraction,
            )
        )
    return LyapunovAudit(tolerance=tolerance, agents=results)


# ---------------------------------------------------------------------------
# ISS gain experiment
# ---------------------------------------------------------------------------
ISS_SCHEMA = {
    "target_spread": pl.Float64,
    "gain_scale": pl.Float64,
    "achieved_spread": pl.Float64,
    "trials": pl.Int64,
    "converged": pl.Int64,
    "fraction": pl.Float64,
    "mean_convergence_time": pl.Float64,
}


def spread_gains(scenario: Scenario, target_spread: float) -> tuple[dict[str, float], float]:
    """Follower gain overrides with spectra close to ``target_spread``.

    Returns:
        The overrides for every follower and the largest spread they achieve.
    """
    sets = measure_all(scenario, [Rotation.identity()] * scenario.n)
    overrides: dict[str, float] = {}
    worst = 0.0
    for agent in range(3, scenario.n + 1):
        gains, achieved = gains_for_spread(agent, sets[agent - 1], target_spread)
        overrides.update(gains)
        worst = max(worst, achieved)
    return overrides, worst


def iss_gain_experiment(
    scenario: Scenario,
    spread_values: list[float],
    gain_scales: list[float],
    config: MonteCarloConfig | None = None,
    threshold: float = 1e-6,
) -> pl.DataFrame:
    """Monte Carlo convergence fraction for each (spread, gain scale) pair.

    Follower gains are first shaped towards each spectral spread, then every
    alignment gain is multiplied by the scale. All rows share the same trial
    seeds.
    """
    cfg = config or MonteCarloConfig()
    rows: list[dict[str, float | int | None]] = []
    for spread in spread_values:
        overrides, achieved = spread_gains(scenario, spread)
        for scale in gain_scales:
            gains = scenario.gains.with_overrides(overrides).scaled(scale)
            summary = monte_carlo(
                scenario.with_gains(gains), cfg.trials, cfg.seed, cfg, threshold
            )
            logger.info(
                "ISS row spread=%g scale=%g: %d/%d converged", spread, scale, summary.converged, cfg.trials
            )
            rows.append(
                {
                    "target_spread": float(spread),
                    "gain_scale": float(scale),
                    "achieved_spread": achieved,
                    "trials": cfg.trials,
                    "converged": summary.converged,
                    "fraction": summary.fraction if summary.fraction is not None else math.nan,
                    "mean_convergence_time": summary.mean_convergence_time,
                }
            )
    return pl.DataFrame(rows, schema=ISS_SCHEMA)
