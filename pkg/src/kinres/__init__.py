"""Kinematics-guided residual control of simulated characters."""

__version__ = "0.1.0"
