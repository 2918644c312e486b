"""Continuous smartphone authentication from biometric and behavior channels."""

__version__ = "0.1.0"
