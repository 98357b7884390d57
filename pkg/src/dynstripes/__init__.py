"""Cycle-level simulation of bit-serial DNN accelerators with runtime
per-group activation precision detection."""

__version__ = "0.1.0"
