"""Tests for the closed-form 3x3 eigen-solver and polar projection."""

import numpy as np
import pytest

from bearing_align.errors import DegenerateError
from bearing_align.linalg import (
    cubic_eigenvalues,
    orthonormalize_batch,
    polar_rotation,
    polar_rotation_batch,
    symmetric_eigen,
)
from bearing_align.so3 import random_rotations


def _random_symmetric(rng: np.random.Generator) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    return a + a.T


class TestSymmetricEigen:
    def test_matches_numpy(self, rng: np.random.Generator) -> None:
        for _ in range(500):
            a = _random_symmetric(rng)
            lam, _ = symmetric_eigen(a)
            np.testing.assert_allclose(lam, np.linalg.eigvalsh(a), atol=1e-10)

    def test_reconstruction(self, rng: np.random.Generator) -> None:
        """U diag(lam) Uᵀ rebuilds A with orthonormal U."""
        for _ in range(500):
            a = _random_symmetric(rng)
            lam, u = symmetric_eigen(a)
            np.testing.assert_allclose(u @ np.diag(lam) @ u.T, a, atol=1e-10)
            np.testing.assert_allclose(u.T @ u, np.eye(3), atol=1e-12)

    def test_sign_convention(self, rng: np.random.Generator) -> None:
        _, u = symmetric_eigen(_random_symmetric(rng))
        for col in range(3):
            assert u[int(np.argmax(np.abs(u[:, col]))), col] > 0.0

    def test_diagonal_input(self) -> None:
        lam, u = symmetric_eigen(np.diag([3.0, 1.0, 2.0]))
        np.testing.assert_allclose(lam, [1.0, 2.0, 3.0], atol=1e-15)
        np.testing.assert_allclose(np.abs(u), np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]]), atol=1e-15)

    def test_repeated_eigenvalues(self, rng: np.random.Generator) -> None:
        q = random_rotations(rng, 1)[0]
        for diag in ([1.0, 1.0, 2.0], [1.0, 2.0, 2.0], [2.0, 2.0, 2.0]):
            a = q @ np.diag(diag) @ q.T
            lam, u = symmetric_eigen(a)
            np.testing.assert_allclose(lam, diag, atol=1e-12)
            np.testing.assert_allclose(u @ np.diag(lam) @ u.T, a, atol=1e-12)

    def test_cubic_eigenvalues_sorted(self, rng: np.random.Generator) -> None:
        lam = cubic_eigenvalues(_random_symmetric(rng))
        assert np.all(np.diff(lam) >= 0.0)


class TestPolarRotation:
    def test_rotation_is_fixed(self, rng: np.random.Generator) -> None:
        for r in random_rotations(rng, 100):
            np.testing.assert_allclose(polar_rotation(r), r, atol=1e-14)

    def test_nearest_rotation(self, rng: np.random.Generator) -> None:
        """The polar factor agrees with the SVD construction U Vᵀ."""
        for _ in range(200):
            a = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
            u, sv, vt = np.linalg.svd(a)
            if np.linalg.det(a) <= 0.0 or sv[-1] < 0.2:
                continue
            np.testing.assert_allclose(polar_rotation(a), u @ vt, atol=1e-10)

    def test_non_positive_determinant(self) -> None:
        with pytest.raises(DegenerateError):
            polar_rotation(-np.eye(3))

    def test_batch_matches_single(self, rng: np.random.Generator) -> None:
        stack = random_rotations(rng, 20)
        stack[:10] += 1e-8 * rng.normal(size=(10, 3, 3))
        stack[10:] += 1e-2 * rng.normal(size=(10, 3, 3))
        batch = polar_rotation_batch(stack)
        for a, p in zip(stack, batch, strict=True):
            np.testing.assert_allclose(p, polar_rotation(a), atol=1e-13)

    def test_batch_degenerate(self, rng: np.random.Generator) -> None:
        stack = random_rotations(rng, 3)
        stack[1] = np.zeros((3, 3))
        with pytest.raises(DegenerateError, match="matrix 1"):
            polar_rotation_batch(stack)

    def test_orthonormalize_matches_polar(self, rng: np.random.Generator) -> None:
        """Newton-Schulz steps on near-rotations land on the polar factor."""
        for scale in (1e-12, 1e-9, 1e-6):
            stack = random_rotations(rng, 10) + scale * rng.normal(size=(10, 3, 3))
            out = orthonormalize_batch(stack)
            np.testing.assert_allclose(out, polar_rotation_batch(stack), atol=1e-14)
            gram = np.einsum("nji,njk->nik", out, out) - np.eye(3)
            assert np.abs(gram).max() < 1e-14

    def test_orthonormalize_falls_back(self, rng: np.random.Generator) -> None:
        stack = random_rotations(rng, 4) + 1e-2 * rng.normal(size=(4, 3, 3))
        np.testing.assert_allclose(orthonormalize_batch(stack), polar_rotation_batch(stack), atol=1e-15)
        stack[2] = np.zeros((3, 3))
        with pytest.raises(DegenerateError, match="matrix 2"):
            orthonormalize_batch(stack)
