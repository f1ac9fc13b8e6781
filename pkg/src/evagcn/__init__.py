"""Dual point-voxel absorbing graph networks for event-stream classification."""

__version__ = "0.1.0"
