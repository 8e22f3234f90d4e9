"""Desk-scale laboratory for action-state consistency in world-action models."""

__version__ = "0.1.0"
