"""Closed-loop simulation of the leader-follower cascade.

The coupled state ``(R_i, w_i)`` of all agents is advanced with the classical
fourth-order Runge-Kutta method in the embedding space, after which every
orientation is projected back onto SO(3). Agent 1 (the leader) never moves.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import polars as pl
from pydantic import BaseModel, Field

from bearing_align.config import AnalysisConfig, MonteCarloConfig
from bearing_align.control import gain_bounds, global_k_matrix
from bearing_align.errors import (
    BearingAlignError,
    DivergedError,
    NonFiniteError,
)
from bearing_align.linalg import orthonormalize_batch
from bearing_align.network import NetworkModel, compile_network
from bearing_align.schema import Scenario, trajectory_columns
from bearing_align.so3 import Rotation, exp_batch, random_rotations

logger = logging.getLogger(__name__)

# Diverged: an error function above this multiple of its reference for this many steps.
# The reference is Phi(0), floored at this fraction of the agent's total gain.
DIVERGE_FACTOR = 10.0
DIVERGE_STEPS = 1000
DIVERGE_FLOOR = 0.2


@dataclass(frozen=True)
class AgentState:
    R: Rotation
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float).reshape(3)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True)
class SystemState:
    """Time and the ordered agent states (index ``i - 1`` is agent ``i``)."""

    t: float
    states: tuple[AgentState, ...]

    @classmethod
    def from_arrays(cls, t: float, R: np.ndarray, w: np.ndarray) -> SystemState:
        return cls(t, tuple(AgentState(Rotation(R[i]), w[i]) for i in range(R.shape[0])))

    @classmethod
    def initial(cls, s: Scenario) -> SystemState:
        return cls(
            0.0,
            tuple(
                AgentState(r, w)
                for r, w in zip(s.initial_rotations(), s.initial_rates(), strict=True)
            ),
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        R = np.stack([st.R.m for st in self.states])
        w = np.stack([st.w for st in self.states])
        return R, w


@dataclass(frozen=True)
class StateDerivative:
    R_dot: np.ndarray  # (n, 3, 3)
    w_dot: np.ndarray  # (n, 3)


@dataclass(frozen=True)
class TrajectoryLog:
    """Logged samples of a run.

    ``frame`` has the columns of :func:`bearing_align.schema.trajectory_columns`.
    """

    frame: pl.DataFrame
    n_agents: int
    dt: float
    log_every: int
    k_v: dict[int, float]
    scenario_digest: str

    @property
    def times(self) -> np.ndarray:
        return self.frame["t"].to_numpy()

    def series(self, agent: int, name: str) -> np.ndarray:
        return self.frame[f"a{agent}_{name}"].to_numpy()

    def rotations_at(self, row: int) -> list[np.ndarray]:
        out = []
        for agent in range(1, self.n_agents + 1):
            vals = [self.frame[f"a{agent}_R{r}{c}"][row] for r in range(3) for c in range(3)]
            out.append(np.array(vals, dtype=float).reshape(3, 3))
        return out

    def terminal_errors(self) -> dict[int, float]:
        if self.frame.height == 0:
            return {}
        return {
            agent: float(self.frame[f"a{agent}_err_frob"][-1])
            for agent in range(1, self.n_agents + 1)
        }


def scenario_digest(s: Scenario) -> str:
    """SHA-256 of the canonical scenario JSON."""
    return hashlib.sha256(s.model_dump_json().encode("utf-8")).hexdigest()


def _model_for(scenario_or_model: Scenario | NetworkModel) -> NetworkModel:
    if isinstance(scenario_or_model, NetworkModel):
        return scenario_or_model
    return compile_network(scenario_or_model)


def derivative(state: SystemState, scenario: Scenario | NetworkModel) -> StateDerivative:
    """``R_dot_i = R_i hat(w_i)``, ``w_dot_i = -k_w w_i - e_i``; zero for the leader."""
    model = _model_for(scenario)
    R, w = state.arrays()
    dR, dw, _ = model.rates(R, w)
    return StateDerivative(dR, dw)


def rk4_packed(
    model: NetworkModel, x: np.ndarray, dt: float, project: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step on the packed ``(4n, 3)`` state of :meth:`NetworkModel.pack`.

    Returns:
        ``(x_next, phi)`` where ``phi`` holds the error functions at the start
        of the step.

    Raises:
        NonFiniteError: With ``t=nan``; callers attach the time.
    """
    k1, phi = model.flow(x)
    k2, _ = model.flow(x + (0.5 * dt) * k1)
    k3, _ = model.flow(x + (0.5 * dt) * k2)
    k4, _ = model.flow(x + dt * k3)
    x_next = x + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    if not math.isfinite(float(x_next.sum())):
        raise NonFiniteError("Non-finite state after integration step", t=math.nan)
    if project and model.n > 1:
        moving = x_next[3 : 3 * model.n].reshape(model.n - 1, 3, 3)
        x_next[3 : 3 * model.n] = orthonormalize_batch(moving).reshape(-1, 3)
    return x_next, phi


def rk4_arrays(
    model: NetworkModel, R: np.ndarray, w: np.ndarray, dt: float, project: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One RK4 step on stacked arrays.

    Returns:
        ``(R_next, w_next, phi)`` where ``phi`` holds the error functions at the
        start of the step.
    """
    x_next, phi = rk4_packed(model, model.pack(R, w), dt, project)
    R_next, w_next = model.unpack(x_next)
    return R_next, w_next, phi


class DivergenceMonitor:
    """Counts, per agent, consecutive steps with Phi above ``DIVERGE_FACTOR`` times its reference."""

    def __init__(self, model: NetworkModel, phi0: np.ndarray) -> None:
        self.limit = DIVERGE_FACTOR * np.maximum(phi0, DIVERGE_FLOOR * model.total_gain)
        self.above = np.zeros(model.n, dtype=np.int64)
        self._counting = False

    def update(self, phi: np.ndarray, t: float) -> None:
        """Record one step.

        Raises:
            DivergedError: Once an agent has been above its limit for
                ``DIVERGE_STEPS`` consecutive steps.
        """
        exceeded = phi > self.limit
        if not (self._counting or exceeded.any()):
            return
        self.above = np.where(exceeded, self.above + 1, 0)
        self._counting = bool(self.above.any())
        if self.above.max() >= DIVERGE_STEPS:
            agent = int(np.argmax(self.above)) + 1
            raise DivergedError(f"Agent {agent} error function diverged at t={t:g}", t=t, agent=agent)


def step(state: SystemState, dt: float, scenario: Scenario | NetworkModel) -> SystemState:
    """Advance the full coupled state by ``dt`` and re-project every orientation.

    Raises:
        NonFiniteError: If any state entry becomes NaN or infinite.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    model = _model_for(scenario)
    R, w = state.arrays()
    try:
        R_next, w_next, _ = rk4_arrays(model, R, w, dt)
    except NonFiniteError as exc:
        raise NonFiniteError(str(exc), t=state.t + dt) from exc
    return SystemState.from_arrays(state.t + dt, R_next, w_next)


def step_count(t_end: float, dt: float) -> int:
    return max(0, math.ceil(t_end / dt - 1e-9))


def lyapunov_weights(
    s: Scenario, k_v_fraction: float, seed: int, samples: int
) -> dict[int, float]:
    """Cross-term weight ``k_V`` per agent: a fraction of the tighter gain bound."""
    weights = {1: 0.0}
    for agent in range(2, s.n + 1):
        km = global_k_matrix(s, agent)
        bounds = gain_bounds(
            km, s.gains.k_omega, rng=np.random.default_rng([seed, agent]), samples=samples
        )
        weights[agent] = k_v_fraction * bounds.k_v_max
        logger.debug(
            "Agent %d: k_V bounds (%.4g, %.4g) -> k_V=%.4g",
            agent,
            bounds.k_v_max_positivity,
            bounds.k_v_max_decrease,
            weights[agent],
        )
    return weights


def _log_row(
    model: NetworkModel, t: float, R: np.ndarray, w: np.ndarray, k_v: np.ndarray
) -> np.ndarray:
    forced = model.evaluate(R)
    unforced = model.evaluate_unforced(R)
    h = forced.e - unforced.e
    rel = np.eye(3) - np.einsum("nji,jk->nik", R, R[0])
    err = np.sqrt(np.einsum("nij,nij->n", rel, rel))
    e_norm = np.linalg.norm(forced.e, axis=1)
    V = forced.phi + 0.5 * np.einsum("ni,ni->n", w, w) + k_v * np.einsum("ni,ni->n", forced.e, w)
    block = np.column_stack(
        [
            R.reshape(model.n, 9),
            w,
            err,
            forced.phi,
            e_norm,
            V,
            np.linalg.norm(h, axis=1),
        ]
    )
    return np.concatenate([[t], block.ravel()])


def run(
    scenario: Scenario,
    analysis: AnalysisConfig | None = None,
    seed: int = 42,
    k_v: dict[int, float] | None = None,
) -> TrajectoryLog:
    """Integrate a validated scenario to ``t_end`` and log every ``log_every`` steps.

    Samples are logged at ``t = 0``, every ``log_every`` steps and at the final
    step, even when ``n_steps`` is not a multiple of ``log_every``; the last
    interval is then shorter than the stride. A zero horizon produces an empty
    log.

    Raises:
        NonFiniteError: With the time at which the state stopped being finite.
        DivergedError: If an error function stays above ten times its reference
            value for 1000 consecutive steps.
    """
    analysis = analysis or AnalysisConfig()
    model = compile_network(scenario)
    dt = scenario.integration.dt
    every = scenario.integration.log_every
    n_steps = step_count(scenario.integration.t_end, dt)
    if k_v is None:
        k_v = lyapunov_weights(scenario, analysis.k_v_fraction, seed, analysis.sandwich_samples)
    k_v_arr = np.array([k_v.get(i, 0.0) for i in range(1, scenario.n + 1)])
    columns = trajectory_columns(scenario.n)
    digest = scenario_digest(scenario)

    R, w = SystemState.initial(scenario).arrays()
    rows: list[np.ndarray] = []
    if n_steps > 0:
        rows.append(_log_row(model, 0.0, R, w, k_v_arr))

    monitor = DivergenceMonitor(model, model.evaluate(R).phi)
    x = model.pack(R, w)

    logger.info("Integrating %d steps (dt=%g, %d agents)", n_steps, dt, scenario.n)
    for k in range(1, n_steps + 1):
        try:
            x, phi = rk4_packed(model, x, dt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"Non-finite state at t={k * dt:g}", t=k * dt) from exc
        monitor.update(phi, k * dt)
        if k % every == 0 or k == n_steps:
            rows.append(_log_row(model, k * dt, *model.unpack(x), k_v_arr))

    if rows:
        frame = pl.DataFrame(np.vstack(rows), schema=columns, orient="row")
    else:
        frame = pl.DataFrame(schema={c: pl.Float64 for c in columns})
    log = TrajectoryLog(
        frame=frame,
        n_agents=scenario.n,
        dt=dt,
        log_every=every,
        k_v=dict(k_v),
        scenario_digest=digest,
    )
    if rows:
        logger.info("Terminal errors: %s", {a: f"{v:.2e}" for a, v in log.terminal_errors().items()})
    return log


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------
TrialStatus = Literal["converged", "not_converged", "non_finite", "diverged", "degenerate"]


class TrialResult(BaseModel):
    trial: int
    status: TrialStatus
    converged: bool
    convergence_time: float | None = Field(default=None, description="First time all errors < threshold (s)")
    final_max_error: float = Field(description="Largest Frobenius alignment error at the end")
    initial_max_error: float


class MonteCarloSummary(BaseModel):
    """Aggregate of randomized initial-orientation runs."""

    trials: int
    converged: int = 0
    fraction: float | None = Field(default=None, description="Converged / trials; None for zero trials")
    mean_convergence_time: float | None = None
    max_convergence_time: float | None = None
    threshold: float
    t_end: float
    dt: float
    seed: int
    results: list[TrialResult] = Field(default_factory=list)

    @property
    def failures(self) -> list[TrialResult]:
        return [r for r in self.results if not r.converged]

    def to_frame(self) -> pl.DataFrame:
        schema = {
            "trial": pl.Int64,
            "status": pl.Utf8,
            "converged": pl.Boolean,
            "convergence_time": pl.Float64,
            "final_max_error": pl.Float64,
            "initial_max_error": pl.Float64,
        }
        return pl.DataFrame([r.model_dump() for r in self.results], schema=schema)


def _max_error(R: np.ndarray) -> float:
    rel = np.eye(3) - np.einsum("nji,jk->nik", R[1:], R[0])
    return float(np.sqrt(np.einsum("nij,nij->n", rel, rel)).max())


def simulate_trial(
    model: NetworkModel,
    R: np.ndarray,
    w: np.ndarray,
    dt: float,
    t_end: float,
    threshold: float,
    check_every: int = 10,
) -> tuple[bool, float | None, float]:
    """Integrate until every agent is within ``threshold`` (and at rest) or ``t_end``.

    Returns:
        ``(converged, convergence_time, final_max_error)``.

    Raises:
        NonFiniteError: With the time at which the state stopped being finite.
        DivergedError: Under the same rule as :func:`run`.
    """
    n_steps = step_count(t_end, dt)
    err = _max_error(R)
    monitor = DivergenceMonitor(model, model.evaluate(R).phi)
    x = model.pack(R, w)
    for k in range(1, n_steps + 1):
        try:
            x, phi = rk4_packed(model, x, dt)
        except NonFiniteError as exc:
            raise NonFiniteError(f"Non-finite state at t={k * dt:g}", t=k * dt) from exc
        monitor.update(phi, k * dt)
        if k % check_every == 0 or k == n_steps:
            R, w = model.unpack(x)
            err = _max_error(R)
            if err < threshold and float(np.abs(w).max()) < threshold:
                return True, k * dt, err
    return err < threshold, None if err >= threshold else n_steps * dt, err


def _run_trial(
    args: tuple[Scenario, np.random.SeedSequence, int, MonteCarloConfig, float],
) -> TrialResult:
    scenario, seed_seq, trial, cfg, threshold = args
    rng = np.random.default_rng(seed_seq)
    if cfg.init_angle is None:
        R = random_rotations(rng, scenario.n)
    else:
        axes = rng.normal(size=(scenario.n, 3))
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        angles = rng.uniform(0.0, cfg.init_angle, size=scenario.n)
        leader = random_rotations(rng, 1)[0]
        R = leader @ exp_batch(angles[:, None] * axes)
        R[0] = leader
    w = rng.normal(0.0, cfg.omega_scale, size=(scenario.n, 3))
    w[0] = 0.0
    initial = _max_error(R)
    model = compile_network(scenario)
    status: TrialStatus
    try:
        converged, t_conv, final = simulate_trial(model, R, w, cfg.dt, cfg.t_end, threshold)
        status = "converged" if converged else "not_converged"
    except NonFiniteError:
        converged, t_conv, final, status = False, None, math.nan, "non_finite"
    except DivergedError:
        converged, t_conv, final, status = False, None, math.nan, "diverged"
    except BearingAlignError:
        converged, t_conv, final, status = False, None, math.nan, "degenerate"
    if not converged:
        logger.warning(
            "Trial %d did not converge (status=%s, final error %.3e, initial error %.3e)",
            trial,
            status,
            final,
            initial,
        )
    return TrialResult(
        trial=trial,
        status=status,
        converged=converged,
        convergence_time=t_conv,
        final_max_error=final,
        initial_max_error=initial,
    )


def monte_carlo(
    scenario: Scenario,
    trials: int,
    seed: int,
    config: MonteCarloConfig | None = None,
    threshold: float = 1e-6,
) -> MonteCarloSummary:
    """Run ``trials`` simulations from Haar-uniform orientations and small random rates.

    Per-trial generators are spawned from one ``SeedSequence(seed)``, so the
    summary does not depend on the worker count.
    """
    cfg = config or MonteCarloConfig()
    summary = MonteCarloSummary(trials=trials, threshold=threshold, t_end=cfg.t_end, dt=cfg.dt, seed=seed)
    if trials <= 0:
        return summary
    children = np.random.SeedSequence(seed).spawn(trials)
    args = [(scenario, child, idx, cfg, threshold) for idx, child in enumerate(children)]
    logger.info("Monte Carlo: %d trials, %d worker(s)", trials, cfg.workers)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_trial, args))
    else:
        results = [_run_trial(a) for a in args]
    return summarize_trials(results, summary)


def summarize_trials(results: Sequence[TrialResult], base: MonteCarloSummary) -> MonteCarloSummary:
    results = sorted(results, key=lambda r: r.trial)
    times = [r.convergence_time for r in results if r.converged and r.convergence_time is not None]
    converged = sum(r.converged for r in results)
    return base.model_copy(
        update={
            "converged": converged,
            "fraction": converged / len(results) if results else None,
            "mean_convergence_time": float(np.mean(times)) if times else None,
            "max_convergence_time": float(np.max(times)) if times else None,
            "results": list(results),
        }
    )
