"""Time-dependent canonical Lindblad forms of exact spin-boson dynamics."""

__version__ = "0.1.0"
