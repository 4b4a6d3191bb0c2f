"""Hazmat release risk for unit and manifest trains."""

__version__ = "0.1.0"
