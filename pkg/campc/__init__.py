"""Constraint-adaptive MPC: online removal of provably irrelevant state constraints."""

__version__ = "1.0.0"
