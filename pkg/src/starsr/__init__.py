"""Transmit-power minimization for STAR-RIS assisted symbiotic radio."""

__version__ = "0.1.0"
