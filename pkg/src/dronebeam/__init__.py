"""Synthetic mmWave drone link simulator with learned beam prediction and tracking."""

__version__ = "0.1.0"
