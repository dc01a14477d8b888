"""Time-invariant reference spreading for planar impact-aware manipulation."""

__version__ = "0.1.0"
