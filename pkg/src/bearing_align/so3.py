"""Rotation-group primitives.

Vectors and matrices are plain ``numpy`` arrays; :class:`Rotation` and
:class:`UnitVector3` are immutable wrappers that check their invariants on
construction. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from bearing_align.config import ROTATION_TOL, SKEW_TOL, SMALL_ANGLE, UNIT_NORM_TOL
from bearing_align.errors import NonSkewError
from bearing_align.linalg import polar_rotation

Matrix3 = NDArray[np.float64]
Vector3 = NDArray[np.float64]

#: ``"global"``, the id of the agent whose body frame a vector is expressed in,
#: or ``"body"`` for an unnamed body frame.
Frame = Literal["global", "body"] | int


def _frozen(values: ArrayLike, shape: tuple[int, ...]) -> NDArray[np.float64]:
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"Expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("Entries must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Rotation:
    """An element of SO(3): orthogonal 3x3 matrix with determinant +1."""

    m: Matrix3

    def __post_init__(self) -> None:
        m = _frozen(self.m, (3, 3))
        object.__setattr__(self, "m", m)
        ortho = float(np.max(np.abs(m.T @ m - np.eye(3))))
        det = float(np.linalg.det(m))
        if ortho > ROTATION_TOL or abs(det - 1.0) > ROTATION_TOL:
            raise ValueError(
                f"Not a rotation: max|MᵀM - I|={ortho:.2e}, det={det:.12f}"
            )

    @classmethod
    def identity(cls) -> Rotation:
        return cls(np.eye(3))

    @property
    def T(self) -> Rotation:
        return Rotation(self.m.T)

    def __matmul__(self, other: Rotation) -> Rotation:
        return Rotation(self.m @ other.m)

    def apply(self, v: ArrayLike) -> Vector3:
        return self.m @ np.asarray(v, dtype=float)

    def allclose(self, other: Rotation, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.m, other.m, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        return f"Rotation({np.array2string(self.m, precision=6)})"


@dataclass(frozen=True, eq=False)
class UnitVector3:
    """A direction, tagged with the frame it is expressed in."""

    v: Vector3
    frame: Frame = "global"

    def __post_init__(self) -> None:
        v = _frozen(self.v, (3,))
        object.__setattr__(self, "v", v)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"Not a unit vector: |v|={norm:.15f}")

    @classmethod
    def normalized(cls, v: ArrayLike, frame: Frame = "global") -> UnitVector3:
        arr = np.asarray(v, dtype=float)
        return cls(arr / np.linalg.norm(arr), frame)


def hat(w: ArrayLike) -> Matrix3:
    """Skew-symmetric matrix with ``hat(w) @ v == cross(w, v)``."""
    x, y, z = np.asarray(w, dtype=float)
    return np.array(
        [
            [0.0, -z, y],
            [z, 0.0, -x],
            [-y, x, 0.0],
        ]
    )


def vee(a: ArrayLike) -> Vector3:
    """Inverse of :func:`hat`.

    Raises:
        NonSkewError: If ``a + aᵀ`` exceeds the skew tolerance anywhere.
    """
    a = np.asarray(a, dtype=float)
    asym = float(np.max(np.abs(a + a.T)))
    if asym > SKEW_TOL:
        raise NonSkewError(f"Matrix is not skew-symmetric (max|A + Aᵀ|={asym:.2e})")
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


# Row i is hat(e_i) flattened, so hat(w).ravel() == w @ _HAT.
_HAT = np.stack([hat(axis).ravel() for axis in np.eye(3)])
# Row 3i + j is cross(e_i, e_j); the last column picks the dot product.
_CROSS_DOT = np.column_stack(
    [np.cross(np.eye(3)[:, None, :], np.eye(3)[None, :, :]).reshape(9, 3), np.eye(3).ravel()]
)


def hat_batch(w: NDArray[np.float64]) -> NDArray[np.float64]:
    """:func:`hat` of every row of an ``(m, 3)`` array, shape ``(m, 3, 3)``."""
    return (w @ _HAT).reshape(-1, 3, 3)


def cross_dot_rows(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise ``[a x b, a · b]`` of two ``(m, 3)`` arrays, shape ``(m, 4)``."""
    return (a[:, :, None] * b[:, None, :]).reshape(-1, 9) @ _CROSS_DOT


def cross_rows(a: NDArray[np.float64], b: NDArray[np.float64]) -> NDArray[np.float64]:
    """Row-wise ``a x b`` of two ``(m, 3)`` arrays."""
    return (a[:, :, None] * b[:, None, :]).reshape(-1, 9) @ _CROSS_DOT[:, :3]


def exp_matrix(w: ArrayLike) -> Matrix3:
    """Rodrigues formula for ``expm(hat(w))`` returning a bare array."""
    w = np.asarray(w, dtype=float)
    angle = float(np.linalg.norm(w))
    k = hat(w)
    if angle < SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    return (
        np.eye(3)
        + (math.sin(angle) / angle) * k
        + ((1.0 - math.cos(angle)) / (angle * angle)) * (k @ k)
    )


def exp_batch(w: ArrayLike) -> NDArray[np.float64]:
    """Rodrigues formula for a ``(m, 3)`` stack of rotation vectors."""
    w = np.asarray(w, dtype=float).reshape(-1, 3)
    angle = np.linalg.norm(w, axis=1)
    k = np.zeros((w.shape[0], 3, 3))
    k[:, 0, 1], k[:, 0, 2] = -w[:, 2], w[:, 1]
    k[:, 1, 0], k[:, 1, 2] = w[:, 2], -w[:, 0]
    k[:, 2, 0], k[:, 2, 1] = -w[:, 1], w[:, 0]
    small = angle < SMALL_ANGLE
    safe = np.where(small, 1.0, angle)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    k2 = k @ k
    return np.eye(3) + a[:, None, None] * k + b[:, None, None] * k2


def exp_so3(w: ArrayLike) -> Rotation:
    """Exponential map from so(3) (as a 3-vector) to SO(3)."""
    return Rotation(exp_matrix(w))


def rot_x(a: float) -> Rotation:
    c, s = math.cos(a), math.sin(a)
    return Rotation(np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]))


def rot_y(a: float) -> Rotation:
    c, s = math.cos(a), math.sin(a)
    return Rotation(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))


def rot_z(a: float) -> Rotation:
    c, s = math.cos(a), math.sin(a)
    return Rotation(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


AXIS_ROTATIONS = {"x": rot_x, "y": rot_y, "z": rot_z}


def project_to_so3(a: ArrayLike) -> Rotation:
    """Nearest rotation in Frobenius norm (orthogonal polar factor).

    Raises:
        DegenerateError: If ``det(a) <= 1e-12``.
    """
    return Rotation(polar_rotation(np.asarray(a, dtype=float)))


def frobenius_error(r_a: Rotation | Matrix3, r_b: Rotation | Matrix3) -> float:
    """Alignment error ``||I - R_aᵀ R_b||_F``, in ``[0, 2*sqrt(2)]``."""
    a = r_a.m if isinstance(r_a, Rotation) else np.asarray(r_a)
    b = r_b.m if isinstance(r_b, Rotation) else np.asarray(r_b)
    return float(np.linalg.norm(np.eye(3) - a.T @ b))


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Haar-uniform rotation drawn as ``exp_so3(angle * axis)``.

    The axis is uniform on the sphere; the angle has density ``(1 - cos t) / pi``
    on ``[0, pi]``, sampled by rejection.
    """
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    while True:
        angle = rng.uniform(0.0, math.pi)
        if rng.uniform(0.0, 1.0) <= 0.5 * (1.0 - math.cos(angle)):
            break
    return exp_so3(angle * axis)


def random_rotations(rng: np.random.Generator, count: int) -> NDArray[np.float64]:
    """``(count, 3, 3)`` stack of Haar-uniform rotations, sampled like :func:`random_rotation`."""
    axes = rng.normal(size=(count, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.empty(count)
    filled = 0
    while filled < count:
        need = count - filled
        cand = rng.uniform(0.0, math.pi, size=2 * need + 8)
        accept = rng.uniform(0.0, 1.0, size=cand.size) <= 0.5 * (1.0 - np.cos(cand))
        take = cand[accept][:need]
        angles[filled : filled + take.size] = take
        filled += take.size
    return exp_batch(angles[:, None] * axes)
