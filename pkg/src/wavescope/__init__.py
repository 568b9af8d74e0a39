"""Guided-wave scalogram featurisation and unsupervised anomaly detection."""

__version__ = "0.1.0"
