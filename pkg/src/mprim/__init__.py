"""Motion primitive discovery and recognition from 3D skeleton sequences."""
__version__ = "0.1.0"
