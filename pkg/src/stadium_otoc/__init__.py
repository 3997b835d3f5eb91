"""Thermal OTOCs of the quarter stadium billiard: classical, quantum and semiclassical."""
__version__ = "0.1.0"
