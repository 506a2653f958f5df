"""Empirical checks of the structural properties the alignment laws rely on.

Each check samples states, evaluates the compiled network model and reports
the worst observed deviation. Nothing here raises on a failed property; the
caller decides what to assert.
"""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, Field

from bearing_align.config import SPECTRUM_GAP_TOL
from bearing_align.control import KMatrix, fit_sandwich, global_k_matrix, phi_from_k
from bearing_align.network import NetworkModel, compile_network
from bearing_align.schema import Scenario
from bearing_align.sensing import global_directions
from bearing_align.simulator import SystemState, rk4_arrays, step_count
from bearing_align.so3 import exp_matrix, random_rotations

logger = logging.getLogger(__name__)


def _random_rates(rng: np.random.Generator, shape: tuple[int, ...], low: float, high: float) -> np.ndarray:
    """Rates with uniform direction and log-uniform magnitude in ``[low, high]``."""
    w = rng.normal(size=(*shape, 3))
    w /= np.linalg.norm(w, axis=-1, keepdims=True)
    mag = np.exp(rng.uniform(np.log(low), np.log(high), size=shape))
    return w * mag[..., None]


def _rotate_agent(R: np.ndarray, agent_idx: int, w: np.ndarray, h: float) -> np.ndarray:
    out = R.copy()
    out[agent_idx] = R[agent_idx] @ exp_matrix(h * w)
    return out


# ---------------------------------------------------------------------------
# Gradient relation dPhi/dt = e . w
# ---------------------------------------------------------------------------
class GradientCheck(BaseModel):
    h: float
    samples: int
    max_relative_error: dict[int, float] = Field(description="Forced error function, per agent")
    max_relative_error_unforced: dict[int, float] = Field(
        description="Leader-referenced error function, per agent"
    )

    @property
    def worst(self) -> float:
        values = [*self.max_relative_error.values(), *self.max_relative_error_unforced.values()]
        return max(values) if values else 0.0


def gradient_check(
    scenario: Scenario, rng: np.random.Generator, samples: int = 100, h: float = 1e-6
) -> GradientCheck:
    """Compare a central difference of Phi_i with ``e_i . w_i`` when only agent i rotates.

    The relative error is normalized by ``|e| |w|``.
    """
    model = compile_network(scenario)
    forced: dict[int, float] = {i: 0.0 for i in range(2, scenario.n + 1)}
    unforced: dict[int, float] = {i: 0.0 for i in range(2, scenario.n + 1)}
    states = random_rotations(rng, samples * scenario.n).reshape(samples, scenario.n, 3, 3)
    rates = _random_rates(rng, (samples, scenario.n), 0.05, 2.0)
    for R, W in zip(states, rates, strict=True):
        base = model.evaluate(R)
        base_u = model.evaluate_unforced(R)
        for agent in range(2, scenario.n + 1):
            idx = agent - 1
            plus = _rotate_agent(R, idx, W[idx], h)
            minus = _rotate_agent(R, idx, W[idx], -h)
            for table, ev, fn in (
                (forced, base, model.evaluate),
                (unforced, base_u, model.evaluate_unforced),
            ):
                fd = (fn(plus).phi[idx] - fn(minus).phi[idx]) / (2.0 * h)
                expected = float(ev.e[idx] @ W[idx])
                scale = max(float(np.linalg.norm(ev.e[idx]) * np.linalg.norm(W[idx])), 1e-12)
                table[agent] = max(table[agent], abs(fd - expected) / scale)
    check = GradientCheck(
        h=h, samples=samples, max_relative_error=forced, max_relative_error_unforced=unforced
    )
    logger.info("Gradient check: worst relative error %.3e over %d samples", check.worst, samples)
    return check


# ---------------------------------------------------------------------------
# Rate of the error vector
# ---------------------------------------------------------------------------
class ErrorRateBound(BaseModel):
    """Fractions of samples satisfying the two printed bounds on the error-vector rate."""

    agent: int
    total_gain: float
    samples: int
    linear_fraction: float = Field(description="Samples with |e_dot| <= k_tot |w|")
    quadratic_fraction: float = Field(description="Samples with |e_dot| <= k_tot |w|^2")
    max_ratio: float = Field(description="Largest |e_dot| / (k_tot |w|)")


def error_rate_bounds(
    scenario: Scenario, rng: np.random.Generator, samples: int = 200, h: float = 1e-6
) -> list[ErrorRateBound]:
    """Finite-difference ``e_dot`` of the leader-referenced error against both bound forms.

    Only the probed agent rotates, so the leader-referenced and forced error
    vectors of agent 2 coincide.
    """
    model = compile_network(scenario)
    states = random_rotations(rng, samples * scenario.n).reshape(samples, scenario.n, 3, 3)
    rates = _random_rates(rng, (samples, scenario.n), 1e-2, 10.0)
    results: list[ErrorRateBound] = []
    for agent in range(2, scenario.n + 1):
        idx = agent - 1
        k_tot = float(model.total_gain[idx])
        ratios = np.empty(samples)
        linear = np.empty(samples, dtype=bool)
        quadratic = np.empty(samples, dtype=bool)
        for s, (R, W) in enumerate(zip(states, rates, strict=True)):
            w = W[idx]
            e_plus = model.evaluate_unforced(_rotate_agent(R, idx, w, h)).e[idx]
            e_minus = model.evaluate_unforced(_rotate_agent(R, idx, w, -h)).e[idx]
            rate = float(np.linalg.norm((e_plus - e_minus) / (2.0 * h)))
            wn = float(np.linalg.norm(w))
            ratios[s] = rate / (k_tot * wn)
            linear[s] = rate <= k_tot * wn * (1.0 + 1e-6)
            quadratic[s] = rate <= k_tot * wn * wn * (1.0 + 1e-6)
        result = ErrorRateBound(
            agent=agent,
            total_gain=k_tot,
            samples=samples,
            linear_fraction=float(linear.mean()),
            quadratic_fraction=float(quadratic.mean()),
            max_ratio=float(ratios.max()),
        )
        holds = [
            name
            for name, frac in (("|w|", result.linear_fraction), ("|w|^2", result.quadratic_fraction))
            if frac == 1.0
        ]
        logger.info(
            "Agent %d: error-rate bound holds empirically for k_tot*%s",
            agent,
            " and ".join(holds) if holds else "neither form",
        )
        results.append(result)
    return results


# ---------------------------------------------------------------------------
# Sandwich constants
# ---------------------------------------------------------------------------
class SandwichFit(BaseModel):
    agent: int
    sigma: float
    gamma: float
    samples_used: int

    @property
    def bounded(self) -> bool:
        return 0.0 < self.sigma <= self.gamma < np.inf


def sandwich_fits(
    scenario: Scenario, rng: np.random.Generator, samples: int = 10_000
) -> list[SandwichFit]:
    """Fitted ``sigma, gamma`` of ``sigma |e|^2 <= Phi <= gamma |e|^2`` for every follower."""
    fits = []
    for agent in range(2, scenario.n + 1):
        sigma, gamma, used = fit_sandwich(global_k_matrix(scenario, agent), rng, samples)
        fits.append(SandwichFit(agent=agent, sigma=sigma, gamma=gamma, samples_used=used))
    return fits


# ---------------------------------------------------------------------------
# Gain scaling
# ---------------------------------------------------------------------------
class ScalingCheck(BaseModel):
    agent: int
    factor: float
    max_error_deviation: float = Field(description="max |e' - c e| / max(|c e|, 1)")
    max_phi_deviation: float
    others_unchanged: bool


def scaling_check(
    scenario: Scenario, agent: int, factor: float, rng: np.random.Generator, samples: int = 20
) -> ScalingCheck:
    """Multiply every gain of one agent by ``factor`` and compare e and Phi."""
    targets = global_directions(scenario, agent)
    gains = scenario.gains.with_overrides(
        {f"{agent}:{t}": scenario.gains.gain(agent, t) * factor for t in targets}
    )
    base = compile_network(scenario)
    scaled = compile_network(scenario, gains)
    idx = agent - 1
    dev_e = dev_phi = 0.0
    others = True
    for R in random_rotations(rng, samples * scenario.n).reshape(samples, scenario.n, 3, 3):
        a, b = base.evaluate(R), scaled.evaluate(R)
        dev_e = max(dev_e, float(np.abs(b.e[idx] - factor * a.e[idx]).max()) / max(factor * float(np.abs(a.e[idx]).max()), 1.0))
        dev_phi = max(dev_phi, abs(b.phi[idx] - factor * a.phi[idx]) / max(factor * a.phi[idx], 1.0))
        mask = np.arange(scenario.n) != idx
        others = others and bool(np.array_equal(a.e[mask], b.e[mask]))
    return ScalingCheck(
        agent=agent,
        factor=factor,
        max_error_deviation=dev_e,
        max_phi_deviation=float(dev_phi),
        others_unchanged=others,
    )


# ---------------------------------------------------------------------------
# Spectrum genericity
# ---------------------------------------------------------------------------
class GenericityCheck(BaseModel):
    agent: int
    draws: int
    generic: int = Field(description="Draws with a positive definite K and distinct eigenvalues")
    low: float
    high: float

    @property
    def fraction(self) -> float:
        return self.generic / self.draws if self.draws else 0.0


def genericity_check(
    scenario: Scenario,
    rng: np.random.Generator,
    agent: int = 2,
    draws: int = 1000,
    low: float = 0.5,
    high: float = 2.0,
) -> GenericityCheck:
    """Draw gains uniformly in ``[low, high]`` and count generic K-matrix spectra."""
    dirs = np.array(list(global_directions(scenario, agent).values()))
    generic = 0
    for gains in rng.uniform(low, high, size=(draws, dirs.shape[0])):
        K = np.einsum("k,ki,kj->ij", gains, dirs, dirs)
        km = KMatrix.from_matrix(agent, K)
        if km.eigenvalues[0] > 0.0 and km.min_gap > SPECTRUM_GAP_TOL:
            generic += 1
    logger.info("Agent %d: %d/%d generic spectra", agent, generic, draws)
    return GenericityCheck(agent=agent, draws=draws, generic=generic, low=low, high=high)


# ---------------------------------------------------------------------------
# Critical-point curvature
# ---------------------------------------------------------------------------
def phi_hessian(K: KMatrix, Q: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Finite-difference Hessian of ``Phi(Q exp(hat(x)))`` at ``x = 0``."""
    basis = np.eye(3)

    def phi(x: np.ndarray) -> float:
        return phi_from_k(K, Q @ exp_matrix(x))

    H = np.zeros((3, 3))
    for a in range(3):
        for b in range(a, 3):
            u, v = basis[a], basis[b]
            H[a, b] = (
                phi(eps * (u + v)) - phi(eps * (u - v)) - phi(-eps * (u - v)) + phi(-eps * (u + v))
            ) / (4.0 * eps * eps)
            H[b, a] = H[a, b]
    return H


def hessian_label(K: KMatrix, Q: np.ndarray, eps: float = 1e-3) -> str:
    """``min``, ``max`` or ``saddle`` from the signs of the Hessian eigenvalues."""
    eig = np.linalg.eigvalsh(phi_hessian(K, Q, eps))
    if np.all(eig > 0.0):
        return "min"
    if np.all(eig < 0.0):
        return "max"
    return "saddle"


# ---------------------------------------------------------------------------
# Integrator checks
# ---------------------------------------------------------------------------
class OrderCheck(BaseModel):
    dt: float
    t_span: float
    ratio: float = Field(description="Error ratio under step halving; about 16 for fourth order")


def _integrate(model: NetworkModel, R: np.ndarray, w: np.ndarray, dt: float, t_span: float) -> np.ndarray:
    for _ in range(step_count(t_span, dt)):
        R, w, _ = rk4_arrays(model, R, w, dt)
    return np.concatenate([R.ravel(), w.ravel()])


def integrator_order(scenario: Scenario, dt: float = 0.04, t_span: float = 5.0) -> OrderCheck:
    """Richardson estimate: ``|x(dt) - x(dt/2)| / |x(dt/2) - x(dt/4)|`` at ``t_span``."""
    model = compile_network(scenario)
    R, w = SystemState.initial(scenario).arrays()
    x1 = _integrate(model, R.copy(), w.copy(), dt, t_span)
    x2 = _integrate(model, R.copy(), w.copy(), dt / 2.0, t_span)
    x4 = _integrate(model, R.copy(), w.copy(), dt / 4.0, t_span)
    ratio = float(np.linalg.norm(x1 - x2) / np.linalg.norm(x2 - x4))
    logger.info("Integrator order check: ratio %.2f at dt=%g", ratio, dt)
    return OrderCheck(dt=dt, t_span=t_span, ratio=ratio)


def orthogonality_drift(scenario: Scenario, dt: float = 1e-3, steps: int = 100) -> float:
    """Largest ``|RᵀR - I|`` of an unprojected RK4 step along a trajectory."""
    model = compile_network(scenario)
    R, w = SystemState.initial(scenario).arrays()
    worst = 0.0
    for _ in range(steps):
        raw, _, _ = rk4_arrays(model, R, w, dt, project=False)
        gram = np.einsum("nji,njk->nik", raw, raw) - np.eye(3)
        worst = max(worst, float(np.abs(gram).max()))
        R, w, _ = rk4_arrays(model, R, w, dt)
    return worst

