"""Recorded calibration sweeps (JSON), regenerated with ``reconmil calibrate``."""
