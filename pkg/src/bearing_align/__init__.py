"""Bearing-only orientation alignment for leader-follower networks on SO(3)."""

__version__ = "0.1.0"
