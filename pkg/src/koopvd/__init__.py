"""Koopman linear predictors for singletrack vehicle dynamics."""

__version__ = "0.1.0"
