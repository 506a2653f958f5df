"""Error vectors, error functions, K-matrix analysis and the alignment laws.

Every alignment term pairs an agent's own body-frame direction ``b`` with the
matching direction ``p`` its partner reports. At alignment the two are
antiparallel. The error vector is ``e = sum k (p x b)`` and the error function
``Phi = sum k (1 + p . b)``, so ``dPhi/dt = e . w`` when only the agent rotates.

Leader-referenced ("unforced") quantities replace every partner direction with
the global direction expressed in agent 1's frame. They depend on the agent's
orientation only through ``Q = R_i R_1ᵀ`` and have the closed form
``Phi(Q) = tr(K) - tr(QK)``, ``e = R_iᵀ vee(QK - KQᵀ)``.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, Field

from bearing_align.config import SPECTRUM_GAP_TOL
from bearing_align.errors import DegenerateSpectrumError, MissingMeasurementError, SearchFailedError
from bearing_align.linalg import symmetric_eigen
from bearing_align.schema import VIRTUAL, GainTable, Scenario
from bearing_align.sensing import MeasurementSet, global_directions
from bearing_align.so3 import (
    Matrix3,
    Rotation,
    UnitVector3,
    Vector3,
    exp_batch,
    random_rotations,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorVector:
    agent: int
    e: Vector3

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.e))


@dataclass(frozen=True)
class KMatrix:
    """Gain-weighted sum of direction outer products with its eigen-decomposition.

    Eigenvalues ascend; ``eigenvectors`` holds the matching columns of ``U``.
    """

    agent: int
    K: Matrix3
    eigenvalues: Vector3
    eigenvectors: Matrix3

    @classmethod
    def from_matrix(cls, agent: int, K: ArrayLike) -> KMatrix:
        K = np.asarray(K, dtype=float)
        K = 0.5 * (K + K.T)
        lam, U = symmetric_eigen(K)
        return cls(agent=agent, K=K, eigenvalues=lam, eigenvectors=U)

    @property
    def total_gain(self) -> float:
        return float(np.trace(self.K))

    @property
    def min_gap(self) -> float:
        """Smallest eigenvalue gap relative to the largest eigenvalue."""
        lam = self.eigenvalues
        scale = max(abs(float(lam[-1])), 1e-300)
        return float(min(lam[1] - lam[0], lam[2] - lam[1]) / scale)

    @property
    def spread(self) -> float:
        """``lambda_max / lambda_min - 1``."""
        lam = self.eigenvalues
        if lam[0] <= 0.0:
            return math.inf
        return float(lam[2] / lam[0] - 1.0)

    def reconstruct(self) -> Matrix3:
        U = self.eigenvectors
        return U @ np.diag(self.eigenvalues) @ U.T


class CriticalPoint(BaseModel):
    """One of the four critical points of the leader-referenced error function."""

    index: int = Field(description="0 for the identity, m for U D_m Uᵀ")
    label: Literal["min", "max", "saddle"]
    phi: float = Field(description="Error function value at the point")
    Q: list[list[float]] = Field(description="Relative orientation R_i R_1ᵀ at the point")

    def rotation(self) -> Rotation:
        return Rotation(np.array(self.Q))


class GainBounds(BaseModel):
    """Upper bounds on the Lyapunov cross-term weight ``k_V``."""

    k_v_max_positivity: float = Field(description="sqrt(sigma): keeps V positive definite")
    k_v_max_decrease: float = Field(description="4 k_w / (4 k_tot + k_w^2): keeps dV/dt negative")
    sigma: float = Field(description="Fitted lower sandwich constant, sigma |e|^2 <= Phi")
    gamma: float | None = Field(
        default=None, description="Fitted upper sandwich constant, Phi <= gamma |e|^2"
    )

    @property
    def k_v_max(self) -> float:
        return min(self.k_v_max_positivity, self.k_v_max_decrease)


# ---------------------------------------------------------------------------
# Pairing own and partner directions
# ---------------------------------------------------------------------------
Pair = tuple[str, Vector3, Vector3]  # (gain target, partner vector, own vector)


def _require(vec: UnitVector3 | None, what: str) -> UnitVector3:
    if vec is None:
        raise MissingMeasurementError(f"Missing measurement: {what}")
    return vec


def agent2_pairs(m1: MeasurementSet, m2: MeasurementSet) -> list[Pair]:
    """Alignment terms of agent 2, using agent 1's vectors as communicated data."""
    pairs: list[Pair] = [
        (
            "1",
            _require(m1.bearings.get(2), "agent 1 bearing to agent 2").v,
            _require(m2.bearings.get(1), "agent 2 bearing to agent 1").v,
        )
    ]
    for target, own in m2.normals.items():
        partner = _require(m1.normals.get(target), f"agent 1 normal for {target}")
        pairs.append((target, partner.v, own.v))
    if m2.virtual_direction is not None:
        partner = _require(m1.virtual_direction, "agent 1 orthogonal direction")
        pairs.append((VIRTUAL, partner.v, m2.virtual_direction.v))
    return pairs


def follower_pairs(own: MeasurementSet, neighbor_msgs: Mapping[int, UnitVector3]) -> list[Pair]:
    """Alignment terms of a follower: two neighbors plus the virtual direction.

    ``neighbor_msgs[j]`` is neighbor j's bearing to this agent in j's frame.
    The virtual partner direction is the normalized cross product of the two
    messages in reverse neighbor order.
    """
    if len(own.neighbors) != 2:
        raise MissingMeasurementError(f"Agent {own.owner} needs exactly two neighbors")
    j, k = own.neighbors
    b_ij = _require(own.bearings.get(j), f"agent {own.owner} bearing to {j}")
    b_ik = _require(own.bearings.get(k), f"agent {own.owner} bearing to {k}")
    b_ji = _require(neighbor_msgs.get(j), f"message from agent {j}")
    b_ki = _require(neighbor_msgs.get(k), f"message from agent {k}")
    b_in = _require(own.virtual_direction, f"agent {own.owner} virtual direction")
    partner_virtual = np.cross(b_ki.v, b_ji.v)
    partner_virtual /= np.linalg.norm(partner_virtual)
    return [
        (str(j), b_ji.v, b_ij.v),
        (str(k), b_ki.v, b_ik.v),
        (VIRTUAL, partner_virtual, b_in.v),
    ]


def _pairs_for(agent: int, sets: Sequence[MeasurementSet]) -> list[Pair]:
    if agent < 2:
        raise ValueError("The leader has no alignment law")
    if agent == 2:
        return agent2_pairs(sets[0], sets[1])
    own = sets[agent - 1]
    msgs = {j: _require(sets[j - 1].bearings.get(agent), f"agent {j} bearing to {agent}") for j in own.neighbors}
    return follower_pairs(own, msgs)


def _error_from_pairs(agent: int, pairs: list[Pair], gains: GainTable) -> Vector3:
    e = np.zeros(3)
    for target, partner, own in pairs:
        e += gains.gain(agent, target) * np.cross(partner, own)
    return e


def _phi_from_pairs(agent: int, pairs: list[Pair], gains: GainTable) -> float:
    return float(sum(gains.gain(agent, t) * (1.0 + float(p @ b)) for t, p, b in pairs))


def error_vector_agent2(m1: MeasurementSet, m2: MeasurementSet, gains: GainTable) -> ErrorVector:
    """``e_2 = k_21 (b_12 x b_21) + sum_l k_2l (b_1nl x b_2nl)`` plus the orthogonal term if present."""
    return ErrorVector(2, _error_from_pairs(2, agent2_pairs(m1, m2), gains))


def error_vector_follower(
    i: int, own: MeasurementSet, neighbor_msgs: Mapping[int, UnitVector3], gains: GainTable
) -> ErrorVector:
    """``e_i = sum_j k_ij (b_ji x b_ij)`` over both neighbors and the virtual direction."""
    return ErrorVector(i, _error_from_pairs(i, follower_pairs(own, neighbor_msgs), gains))


def error_vector(i: int, sets: Sequence[MeasurementSet], gains: GainTable) -> ErrorVector:
    """Error vector of any non-leader agent from the full list of measurement sets."""
    return ErrorVector(i, _error_from_pairs(i, _pairs_for(i, sets), gains))


def error_function(i: int, sets: Sequence[MeasurementSet], gains: GainTable) -> float:
    """``Phi_i = sum k (1 + p . b)``; zero exactly when agent i is aligned with its partners."""
    return _phi_from_pairs(i, _pairs_for(i, sets), gains)


# ---------------------------------------------------------------------------
# K-matrices
# ---------------------------------------------------------------------------
def k_matrix(i: int, directions: Sequence[tuple[UnitVector3 | ArrayLike, float]]) -> KMatrix:
    """``K = sum k b bᵀ`` with its eigen-decomposition attached.

    Repeated eigenvalues (relative gap below 1e-9) are logged as a warning;
    critical-point enumeration refuses such matrices.
    """
    K = np.zeros((3, 3))
    for vec, gain in directions:
        b = vec.v if isinstance(vec, UnitVector3) else np.asarray(vec, dtype=float)
        K += gain * np.outer(b, b)
    km = KMatrix.from_matrix(i, K)
    if km.min_gap < SPECTRUM_GAP_TOL:
        logger.warning("Agent %d: K-matrix spectrum %s is degenerate", i, km.eigenvalues)
    else:
        logger.debug("Agent %d: K-matrix spectrum %s", i, km.eigenvalues)
    return km


def global_k_matrix(s: Scenario, agent: int, gains: GainTable | None = None) -> KMatrix:
    """K-matrix of ``agent`` from global-frame directions of the scenario geometry."""
    gains = gains or s.gains
    dirs = global_directions(s, agent)
    return k_matrix(agent, [(d, gains.gain(agent, t)) for t, d in dirs.items()])


def local_k_matrix(i: int, own: MeasurementSet, gains: GainTable) -> KMatrix:
    """K-matrix built from the agent's own body-frame directions.

    It is similar to the global K-matrix (``K_local = R_iᵀ K R_i``), so both
    share a spectrum; the virtual-direction gain is an exact eigenvalue.
    """
    terms: list[tuple[UnitVector3 | ArrayLike, float]] = []
    for j in own.neighbors:
        terms.append((_require(own.bearings.get(j), f"bearing to {j}"), gains.gain(i, j)))
    for target, normal in own.normals.items():
        terms.append((normal, gains.gain(i, target)))
    if own.virtual_direction is not None:
        terms.append((own.virtual_direction, gains.gain(i, VIRTUAL)))
    return k_matrix(i, terms)


def _spread_for(own: MeasurementSet, g_j: float, g_k: float, k_im: float) -> float:
    j, k = own.neighbors
    b_j = own.bearings[j].v
    b_k = own.bearings[k].v
    v = _require(own.virtual_direction, "virtual direction").v
    K = g_j * np.outer(b_j, b_j) + g_k * np.outer(b_k, b_k) + k_im * np.outer(v, v)
    return KMatrix.from_matrix(own.owner, K).spread


def design_gains(
    i: int,
    own: MeasurementSet,
    target_spread: float,
    k_im: float = 1.0,
    max_iter: int = 200,
) -> dict[str, float]:
    """Choose neighbor gains so that ``lambda_max / lambda_min <= 1 + target_spread``.

    The virtual-direction gain ``k_im`` is held fixed (it is an exact
    eigenvalue). For two bearings at angle alpha the in-plane eigenvalue ratio
    is at least ``(1 + |cos alpha|) / (1 - |cos alpha|)``, reached with equal
    neighbor gains, so the search runs over the common neighbor gain ``g``:
    golden-section on ``log g`` for the smallest spread.

    Returns:
        Gain-table overrides ``{"i:j": g, "i:k": g, "i:v": k_im}``.

    Raises:
        SearchFailedError: If the smallest reachable spread exceeds the target.
    """
    if len(own.neighbors) != 2:
        raise MissingMeasurementError(f"Agent {i} needs two neighbors for gain design")
    j, k = own.neighbors

    def spread(log_g: float) -> float:
        g = math.exp(log_g)
        return _spread_for(own, g, g, k_im)

    lo, hi = math.log(k_im) - math.log(100.0), math.log(k_im) + math.log(100.0)
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    fc, fd = spread(c), spread(d)
    for _ in range(max_iter):
        if b - a < 1e-10:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = spread(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = spread(d)
    g_best = math.exp(0.5 * (a + b))
    best = _spread_for(own, g_best, g_best, k_im)
    gains = {f"{i}:{j}": g_best, f"{i}:{k}": g_best, f"{i}:{VIRTUAL}": k_im}
    logger.debug("Agent %d: best spread %.6f at g=%.6f (target %.6f)", i, best, g_best, target_spread)
    if best > target_spread + 1e-9:
        raise SearchFailedError(
            f"Agent {i}: spread {target_spread:g} unreachable; best achievable is {best:.6f}",
            best_spread=best,
            best_gains=gains,
        )
    return gains


def gains_for_spread(
    i: int, own: MeasurementSet, target_spread: float, k_im: float = 1.0, max_iter: int = 200
) -> tuple[dict[str, float], float]:
    """Equal neighbor gains whose spread is as close to ``target_spread`` as geometry allows.

    Below the smallest reachable spread the optimum is returned; above it the
    common gain is raised (which only widens the spectrum) and bisected.

    Returns:
        The gain overrides and the spread they achieve.
    """
    try:
        base = design_gains(i, own, target_spread, k_im, max_iter)
    except SearchFailedError as exc:
        return exc.best_gains, exc.best_spread
    j, k = own.neighbors
    g_lo = base[f"{i}:{j}"]
    if _spread_for(own, g_lo, g_lo, k_im) >= target_spread:
        return base, _spread_for(own, g_lo, g_lo, k_im)
    g_hi = g_lo
    while _spread_for(own, g_hi, g_hi, k_im) < target_spread:
        g_hi *= 2.0
    for _ in range(max_iter):
        mid = math.sqrt(g_lo * g_hi)
        if _spread_for(own, mid, mid, k_im) < target_spread:
            g_lo = mid
        else:
            g_hi = mid
        if g_hi / g_lo - 1.0 < 1e-12:
            break
    gains = {f"{i}:{j}": g_hi, f"{i}:{k}": g_hi, f"{i}:{VIRTUAL}": k_im}
    return gains, _spread_for(own, g_hi, g_hi, k_im)


# ---------------------------------------------------------------------------
# Control law and leader-referenced closed forms
# ---------------------------------------------------------------------------
def control_update(w: ArrayLike, e: ErrorVector | ArrayLike, k_omega: float) -> Vector3:
    """Angular acceleration ``-k_omega w - e``."""
    ev = e.e if isinstance(e, ErrorVector) else np.asarray(e, dtype=float)
    return -k_omega * np.asarray(w, dtype=float) - ev


def phi_from_k(K: KMatrix | Matrix3, Q: Rotation | Matrix3) -> float:
    """Leader-referenced error function ``tr(K) - tr(QK)``."""
    k = K.K if isinstance(K, KMatrix) else np.asarray(K)
    q = Q.m if isinstance(Q, Rotation) else np.asarray(Q)
    return float(np.trace(k) - np.trace(q @ k))


def error_from_k(K: KMatrix | Matrix3, Q: Rotation | Matrix3) -> Vector3:
    """Leader-referenced error vector in the global frame, ``vee(QK - KQᵀ)``.

    The body-frame error of agent i is ``R_iᵀ`` times this.
    """
    k = K.K if isinstance(K, KMatrix) else np.asarray(K)
    q = Q.m if isinstance(Q, Rotation) else np.asarray(Q)
    a = q @ k - k @ q.T
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


def critical_points(K: KMatrix) -> list[Rotation]:
    """The four critical points ``{I, U D_1 Uᵀ, U D_2 Uᵀ, U D_3 Uᵀ}`` with ``D_m = 2 e_m e_mᵀ - I``.

    Raises:
        DegenerateSpectrumError: If two eigenvalues coincide within 1e-9 (relative).
    """
    if K.min_gap < SPECTRUM_GAP_TOL:
        raise DegenerateSpectrumError(
            f"Agent {K.agent}: eigenvalues {K.eigenvalues} are not distinct"
        )
    U = K.eigenvectors
    points = [Rotation.identity()]
    for m in range(3):
        D = -np.eye(3)
        D[m, m] = 1.0
        Q = U @ D @ U.T
        # Symmetrize rounding so the point is exactly an involution.
        points.append(Rotation(0.5 * (Q + Q.T)))
    return points


def classify_critical_points(K: KMatrix) -> list[CriticalPoint]:
    """Label the identity ``min``, the largest-Phi point ``max`` and the others ``saddle``.

    Phi at ``U D_m Uᵀ`` equals twice the sum of the two eigenvalues other than ``lambda_m``.
    """
    points = critical_points(K)
    phis = [phi_from_k(K, q) for q in points]
    max_idx = 1 + int(np.argmax(phis[1:]))
    out: list[CriticalPoint] = []
    for idx, (q, phi) in enumerate(zip(points, phis, strict=True)):
        label: Literal["min", "max", "saddle"]
        if idx == 0:
            label = "min"
        elif idx == max_idx:
            label = "max"
        else:
            label = "saddle"
        out.append(CriticalPoint(index=idx, label=label, phi=phi, Q=q.m.tolist()))
    return out


def lyapunov_value(phi: float, w: ArrayLike, e: ErrorVector | ArrayLike, k_v: float) -> float:
    """``V = Phi + |w|^2 / 2 + k_V (e . w)``."""
    ev = e.e if isinstance(e, ErrorVector) else np.asarray(e, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(phi + 0.5 * float(w @ w) + k_v * float(ev @ w))


def fit_sandwich(
    K: KMatrix, rng: np.random.Generator, samples: int = 4096
) -> tuple[float, float, int]:
    """Empirical ``sigma, gamma`` with ``sigma |e|^2 <= Phi <= gamma |e|^2``.

    Rotations are sampled uniformly and kept when ``Phi`` is below the lowest
    undesired critical value ``2 min(lambda_j + lambda_k)``, where the ratio
    stays bounded. A small ball around the identity is sampled as well so the
    estimate covers the local regime.

    Returns:
        ``(sigma, gamma, samples_used)``.
    """
    lam = K.eigenvalues
    phi_cap = 2.0 * float(lam[0] + lam[1])
    half = samples // 2
    global_q = random_rotations(rng, half)
    axes = rng.normal(size=(samples - half, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = rng.uniform(1e-3, 0.5, size=samples - half)
    local_q = exp_batch(angles[:, None] * axes)
    Q = np.concatenate([global_q, local_q])
    k = K.K
    QK = Q @ k
    phi = float(np.trace(k)) - np.trace(QK, axis1=1, axis2=2)
    A = QK - np.transpose(QK, (0, 2, 1))
    e = np.stack([A[:, 2, 1], A[:, 0, 2], A[:, 1, 0]], axis=1)
    e2 = np.einsum("ni,ni->n", e, e)
    keep = (phi < phi_cap) & (e2 > 1e-20)
    if not np.any(keep):
        raise ValueError(f"Agent {K.agent}: no samples inside the local region")
    ratio = phi[keep] / e2[keep]
    sigma, gamma = float(ratio.min()), float(ratio.max())
    logger.debug("Agent %d: sandwich sigma=%.4g gamma=%.4g (%d samples)", K.agent, sigma, gamma, int(keep.sum()))
    return sigma, gamma, int(keep.sum())


def gain_bounds(
    K: KMatrix,
    k_omega: float,
    sigma: float | None = None,
    rng: np.random.Generator | None = None,
    samples: int = 4096,
) -> GainBounds:
    """Bounds on ``k_V``: ``sqrt(sigma)`` for positivity and ``4 k_w / (4 k_tot + k_w^2)`` for decrease.

    ``k_tot`` is the sum of the agent's gains (the trace of K). When ``sigma``
    is not given it is fitted with :func:`fit_sandwich`.
    """
    gamma: float | None = None
    if sigma is None:
        sigma, gamma, _ = fit_sandwich(K, rng if rng is not None else np.random.default_rng(0), samples)
    k_tot = K.total_gain
    return GainBounds(
        k_v_max_positivity=math.sqrt(sigma),
        k_v_max_decrease=4.0 * k_omega / (4.0 * k_tot + k_omega**2),
        sigma=sigma,
        gamma=gamma,
    )
