"""Distributed influence-augmented local simulators for multi-agent RL."""

__version__ = "0.1.0"
