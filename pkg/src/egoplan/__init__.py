"""Deterministic simulator and benchmark harness for egocentric depth
perception and collision-aware dual-arm motion planning."""

__version__ = "0.1.0"
