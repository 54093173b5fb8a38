"""Exocentric reference resolution with decoupled pose/text late fusion."""

__version__ = "0.1.0"
