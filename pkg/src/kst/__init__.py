"""Kinematics streaming toolkit: retargeting, differential IK and 1 kHz setpoint streaming."""

__version__ = "0.1.0"
