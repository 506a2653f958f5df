"""Closed-form 3x3 linear algebra.

The symmetric eigen-solver uses the trigonometric solution of the characteristic
cubic and extracts eigenvectors from cross products of the rows of ``A - lambda I``.
No iteration is involved, so results are bit-for-bit reproducible.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.typing import NDArray

from bearing_align.config import DEGENERATE_DET
from bearing_align.errors import DegenerateError

FloatArray = NDArray[np.float64]

# Relative gap below which two eigenvalues share an eigenspace.
_CLUSTER_TOL = 1e-8
# Relative deviation of AᵀA from a multiple of I handled by the series branch.
_SERIES_TOL = 1e-5


def _null_vector(m: FloatArray) -> FloatArray:
    """Unit vector spanning the null space of a rank-2 symmetric matrix."""
    candidates = (
        np.cross(m[0], m[1]),
        np.cross(m[0], m[2]),
        np.cross(m[1], m[2]),
    )
    best = max(candidates, key=lambda c: float(c @ c))
    return best / math.sqrt(float(best @ best))


def _orthonormal_complement(v: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Two unit vectors completing ``v`` to an orthonormal basis."""
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(v)))] = 1.0
    a = np.cross(v, helper)
    a /= np.linalg.norm(a)
    b = np.cross(v, a)
    return a, b


def _fix_signs(u: FloatArray) -> FloatArray:
    """Make the largest-magnitude entry of every column positive."""
    u = u.copy()
    for col in range(3):
        idx = int(np.argmax(np.abs(u[:, col])))
        if u[idx, col] < 0:
            u[:, col] = -u[:, col]
    return u


def cubic_eigenvalues(a: FloatArray) -> FloatArray:
    """Eigenvalues of a real symmetric 3x3 matrix, ascending."""
    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    q = float(np.trace(a)) / 3.0
    p2 = float((a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2) + 2.0 * p1
    if p2 == 0.0:
        return np.array([q, q, q])
    if p1 == 0.0:
        return np.sort(np.diag(a).astype(float))
    p = math.sqrt(p2 / 6.0)
    b = (a - q * np.eye(3)) / p
    r = float(np.linalg.det(b)) / 2.0
    # Rounding can push r just outside [-1, 1].
    if r <= -1.0:
        phi = math.pi / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = math.acos(r) / 3.0
    high = q + 2.0 * p * math.cos(phi)
    low = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    mid = 3.0 * q - high - low
    return np.sort(np.array([low, mid, high]))


def symmetric_eigen(a: FloatArray) -> tuple[FloatArray, FloatArray]:
    """Eigen-decomposition ``A = U diag(lam) Uᵀ`` of a symmetric 3x3 matrix.

    Returns eigenvalues ascending and ``U`` with eigenvectors as columns. Each
    column's largest-magnitude component is positive, which removes the sign
    ambiguity of the decomposition. Eigenvalues are polished with Rayleigh
    quotients once the eigenvectors are known.
    """
    a = 0.5 * (np.asarray(a, dtype=float) + np.asarray(a, dtype=float).T)
    lam = cubic_eigenvalues(a)
    scale = max(float(np.max(np.abs(lam))), 1e-300)
    gap_low = (lam[1] - lam[0]) / scale
    gap_high = (lam[2] - lam[1]) / scale
    eye = np.eye(3)

    if gap_low <= _CLUSTER_TOL and gap_high <= _CLUSTER_TOL:
        u = eye.copy()
    elif gap_low <= _CLUSTER_TOL:
        v2 = _null_vector(a - lam[2] * eye)
        v0, v1 = _orthonormal_complement(v2)
        u = np.column_stack([v0, v1, v2])
    elif gap_high <= _CLUSTER_TOL:
        v0 = _null_vector(a - lam[0] * eye)
        v1, v2 = _orthonormal_complement(v0)
        u = np.column_stack([v0, v1, v2])
    else:
        v0 = _null_vector(a - lam[0] * eye)
        v2 = _null_vector(a - lam[2] * eye)
        v2 = v2 - (v2 @ v0) * v0
        v2 /= np.linalg.norm(v2)
        v1 = np.cross(v2, v0)
        u = np.column_stack([v0, v1, v2])

    polished = np.einsum("ij,ik,kj->j", u, a, u)
    order = np.argsort(polished, kind="stable")
    return polished[order], _fix_signs(u[:, order])


def polar_rotation(a: FloatArray) -> FloatArray:
    """Orthogonal polar factor ``A (AᵀA)^(-1/2)`` of a matrix with positive determinant.

    Raises:
        DegenerateError: If ``det(A) <= 1e-12``.
    """
    a = np.asarray(a, dtype=float)
    det = float(np.linalg.det(a))
    if not det > DEGENERATE_DET:
        raise DegenerateError(f"Cannot project matrix with det={det:.3e} onto SO(3)")
    s = a.T @ a
    mean = float(np.trace(s)) / 3.0
    dev = s / mean - np.eye(3)
    if float(np.linalg.norm(dev)) < _SERIES_TOL:
        # (I + E)^(-1/2) to third order; remainder is O(|E|^4).
        dev2 = dev @ dev
        inv_sqrt = (np.eye(3) - 0.5 * dev + 0.375 * dev2 - 0.3125 * dev2 @ dev) / math.sqrt(mean)
    else:
        mu, v = symmetric_eigen(s)
        inv_sqrt = (v / np.sqrt(mu)) @ v.T
    return a @ inv_sqrt


def polar_rotation_batch(a: FloatArray) -> FloatArray:
    """:func:`polar_rotation` applied to a ``(m, 3, 3)`` stack.

    Near-orthogonal matrices (the usual case after an integration step) take the
    vectorized series branch; the rest fall back to the eigen route one by one.
    """
    a = np.asarray(a, dtype=float)
    det = np.linalg.det(a)
    if not np.all(det > DEGENERATE_DET):
        bad = int(np.argmin(det))
        raise DegenerateError(f"Cannot project matrix {bad} with det={det[bad]:.3e} onto SO(3)")
    s = np.transpose(a, (0, 2, 1)) @ a
    mean = np.trace(s, axis1=1, axis2=2) / 3.0
    dev = s / mean[:, None, None] - np.eye(3)
    small = np.sqrt(np.einsum("mij,mij->m", dev, dev)) < _SERIES_TOL
    out = np.empty_like(a)
    if np.any(small):
        d = dev[small]
        d2 = d @ d
        inv_sqrt = (np.eye(3) - 0.5 * d + 0.375 * d2 - 0.3125 * (d2 @ d)) / np.sqrt(mean[small])[:, None, None]
        out[small] = a[small] @ inv_sqrt
    for idx in np.flatnonzero(~small):
        out[idx] = polar_rotation(a[idx])
    return out


# Largest |AᵀA - I| entry that Newton-Schulz steps accept.
_NEWTON_TOL = 1e-4
_EYE = np.eye(3)


def orthonormalize_batch(a: FloatArray) -> FloatArray:
    """Polar factors of a ``(m, 3, 3)`` stack that is already close to SO(3).

    Applies Newton-Schulz steps ``A (3I - AᵀA) / 2``, one or two depending on
    how far the Gram matrices are from the identity. Stacks with any entry of
    ``AᵀA - I`` above 1e-4 go through :func:`polar_rotation_batch`, which also
    checks the determinants.
    """
    gram = np.transpose(a, (0, 2, 1)) @ a
    dev = float(np.abs(gram - _EYE).max())
    if dev > _NEWTON_TOL:
        return polar_rotation_batch(a)
    out = a @ (1.5 * _EYE - 0.5 * gram)
    if dev > 1e-8:
        gram = np.transpose(out, (0, 2, 1)) @ out
        out = out @ (1.5 * _EYE - 0.5 * gram)
    return out
