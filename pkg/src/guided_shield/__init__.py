"""Guided shield - verification-guided runtime shielding for ReLU navigation policies."""

__version__ = "0.1.0"
