"""Ensemble SST forecasting by perturbing initial ocean states."""

__version__ = "0.1.0"
