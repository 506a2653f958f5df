"""Vectorized closed-loop model of a leader-follower network.

A scenario is compiled once into flat term arrays. Each alignment term adds
``k (p x b)`` to its owner's error vector, where ``b = R_ownerᵀ d`` is the
owner's body-frame direction and ``p`` the partner direction:

- ``direct`` terms: ``p = R_partnerᵀ (-d)``, the partner's own measurement
  (bearings, landmark normals, the orthogonal completion).
- ``virtual`` terms: ``p = unit((R_kᵀ d_k) x (R_jᵀ d_j))``, the follower's
  virtual partner built from the two messages ``b_ki^k`` and ``b_ji^j``.

Leader-referenced quantities use ``p = R_1ᵀ (-d)`` for every term.

The integrator works on a packed ``(4n, 3)`` state: the ``3n`` rows of the
stacked orientations followed by the ``n`` angular velocities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from bearing_align.config import DEGENERATE_CROSS_TOL
from bearing_align.errors import DegenerateCrossError
from bearing_align.schema import VIRTUAL, GainTable, Scenario
from bearing_align.sensing import global_directions
from bearing_align.so3 import cross_dot_rows, cross_rows, hat_batch

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.intp]


@dataclass(frozen=True)
class Evaluation:
    """Error vectors (body frame) and error functions for every agent."""

    e: FloatArray  # (n, 3)
    phi: FloatArray  # (n,)


@dataclass(frozen=True)
class NetworkModel:
    """Scenario geometry and gains flattened into arrays; agent index ``i - 1``.

    Terms are laid out direct first, then virtual.
    """

    n: int
    k_omega: float
    # Every direction that is ever expressed in a body frame: (frame index, global vector).
    frames: IntArray
    directions: FloatArray
    # Term layout: index into (frames, directions) for the owner's vector.
    owner: IntArray
    own_ref: IntArray
    gain: FloatArray
    # Direct terms: term index and reference of the partner's vector.
    direct_terms: IntArray
    direct_ref: IntArray
    # Virtual terms: term index and references of the two messages (k first).
    virtual_terms: IntArray
    virtual_k_ref: IntArray
    virtual_j_ref: IntArray
    # Rows [own (T), direct partners, virtual k, virtual j] of R_fᵀ d as a map
    # from the stacked orientation rows (3n, 3).
    selection: FloatArray
    # Gain-weighted owner incidence (n, T): e = coupling @ (p x b).
    coupling: FloatArray
    # Leader-referenced partner directions, global frame: -d for every term.
    unforced_partner: FloatArray
    total_gain: FloatArray  # (n,)
    # Packed-state rows that move: zero on the leader's.
    moving: FloatArray  # (4n, 1)

    @property
    def n_terms(self) -> int:
        return int(self.owner.shape[0])

    def pack(self, R: FloatArray, w: FloatArray) -> FloatArray:
        return np.concatenate([np.reshape(R, (3 * self.n, 3)), w])

    def unpack(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        return x[: 3 * self.n].reshape(self.n, 3, 3), x[3 * self.n :]

    def _partners(self, body: FloatArray) -> tuple[FloatArray, FloatArray]:
        T = self.n_terms
        D = self.direct_terms.size
        V = self.virtual_terms.size
        own = body[:T]
        if not V:
            return body[T : T + D], own
        c = cross_rows(body[T + D : T + D + V], body[T + D + V :])
        norms = np.sqrt(np.einsum("ij,ij->i", c, c))
        if norms.min() <= DEGENERATE_CROSS_TOL:
            bad = int(self.owner[self.virtual_terms[int(np.argmin(norms))]]) + 1
            raise DegenerateCrossError(f"agent {bad}: virtual partner direction is degenerate")
        return np.concatenate([body[T : T + D], c / norms[:, None]]), own

    def evaluate(self, R: FloatArray) -> Evaluation:
        """Forced error vectors and error functions for stacked orientations ``(n, 3, 3)``."""
        partner, own = self._partners(self.selection @ np.reshape(R, (3 * self.n, 3)))
        return self._combine(partner, own)

    def evaluate_unforced(self, R: FloatArray) -> Evaluation:
        """Leader-referenced error vectors and error functions."""
        own = self.selection[: self.n_terms] @ np.reshape(R, (3 * self.n, 3))
        partner = self.unforced_partner @ R[0]
        return self._combine(partner, own)

    def _combine(self, partner: FloatArray, own: FloatArray) -> Evaluation:
        summed = self.coupling @ cross_dot_rows(partner, own)
        return Evaluation(e=summed[:, :3], phi=self.total_gain + summed[:, 3])

    def flow(self, x: FloatArray) -> tuple[FloatArray, FloatArray]:
        """Derivative of the packed state plus the error functions at ``x``."""
        rows = x[: 3 * self.n]
        w = x[3 * self.n :]
        ev = self._combine(*self._partners(self.selection @ rows))
        dR = (rows.reshape(self.n, 3, 3) @ hat_batch(w)).reshape(3 * self.n, 3)
        dx = np.concatenate([dR, -self.k_omega * w - ev.e]) * self.moving
        return dx, ev.phi

    def rates(self, R: FloatArray, w: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Closed-loop derivative ``(dR, dw)`` plus the error functions at ``(R, w)``.

        ``dR_i = R_i hat(w_i)``; ``dw_i = -k_w w_i - e_i``. The leader's
        derivative is zero.
        """
        dx, phi = self.flow(self.pack(R, w))
        dR, dw = self.unpack(dx)
        return dR, dw, phi


def _selection(n: int, frames: IntArray, directions: FloatArray) -> FloatArray:
    out = np.zeros((frames.size, 3 * n))
    for row, (frame, d) in enumerate(zip(frames, directions, strict=True)):
        out[row, 3 * frame : 3 * frame + 3] = d
    return out


def compile_network(s: Scenario, gains: GainTable | None = None) -> NetworkModel:
    """Flatten a validated scenario into a :class:`NetworkModel`."""
    gains = gains or s.gains
    frames: list[int] = []
    directions: list[np.ndarray] = []

    def register(frame: int, d: np.ndarray) -> int:
        frames.append(frame)
        directions.append(np.asarray(d, dtype=float))
        return len(frames) - 1

    # Collected in agent order, then reordered direct first.
    owner: list[int] = []
    own_ref: list[int] = []
    gain: list[float] = []
    is_virtual: list[bool] = []
    direct_ref: list[int] = []
    virtual_k_ref: list[int] = []
    virtual_j_ref: list[int] = []

    for agent in range(2, s.n + 1):
        dirs = global_directions(s, agent)
        for target, d in dirs.items():
            owner.append(agent - 1)
            own_ref.append(register(agent - 1, d))
            gain.append(gains.gain(agent, target))
            if agent >= 3 and target == VIRTUAL:
                j, k = s.graph.neighbors(agent)
                is_virtual.append(True)
                virtual_k_ref.append(register(k - 1, -dirs[str(k)]))
                virtual_j_ref.append(register(j - 1, -dirs[str(j)]))
            else:
                partner = 0 if agent == 2 else int(target) - 1
                is_virtual.append(False)
                direct_ref.append(register(partner, -d))

    flags = np.asarray(is_virtual, dtype=bool)
    order = np.concatenate([np.flatnonzero(~flags), np.flatnonzero(flags)]).astype(np.intp)
    T, D = order.size, int((~flags).sum())
    owner_arr = np.asarray(owner, dtype=np.intp)[order]
    own_idx = np.asarray(own_ref, dtype=np.intp)[order]
    gain_arr = np.asarray(gain, dtype=float)[order]
    frame_arr = np.asarray(frames, dtype=np.intp)
    dir_arr = np.asarray(directions, dtype=float).reshape(-1, 3)
    direct_idx = np.asarray(direct_ref, dtype=np.intp)
    k_idx = np.asarray(virtual_k_ref, dtype=np.intp)
    j_idx = np.asarray(virtual_j_ref, dtype=np.intp)

    rows = np.concatenate([own_idx, direct_idx, k_idx, j_idx])
    coupling = np.zeros((s.n, T))
    coupling[owner_arr, np.arange(T)] = gain_arr
    moving = np.ones((4 * s.n, 1))
    moving[[0, 1, 2, 3 * s.n]] = 0.0
    model = NetworkModel(
        n=s.n,
        k_omega=float(gains.k_omega),
        frames=frame_arr,
        directions=dir_arr,
        owner=owner_arr,
        own_ref=own_idx,
        gain=gain_arr,
        direct_terms=np.arange(D, dtype=np.intp),
        direct_ref=direct_idx,
        virtual_terms=np.arange(D, T, dtype=np.intp),
        virtual_k_ref=k_idx,
        virtual_j_ref=j_idx,
        selection=_selection(s.n, frame_arr[rows], dir_arr[rows]),
        coupling=coupling,
        unforced_partner=-dir_arr[own_idx],
        total_gain=coupling.sum(axis=1),
        moving=moving,
    )
    logger.debug("Compiled network: %d agents, %d terms (%d virtual)", s.n, T, T - D)
    return model
