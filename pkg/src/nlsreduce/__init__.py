"""Semiclassical NLS spike toolkit: reduction, landscapes, multiplicity."""

__version__ = "0.1.0"
