"""Demonstration-to-replay pipeline for a sensorized hand-held gripper."""

__version__ = "0.1.0"
