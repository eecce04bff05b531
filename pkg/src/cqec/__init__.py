"""Continuous quantum error correction by state-estimate feedback."""

__version__ = "0.1.0"
