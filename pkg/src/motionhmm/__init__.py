"""Gaussian HMM / factorial HMM toolkit for multi-label motion classification."""

__version__ = "0.1.0"
