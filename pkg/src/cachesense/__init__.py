"""Collaborative sparse recovery of sensor fields from cached compressive measurements."""

__version__ = "0.1.0"
