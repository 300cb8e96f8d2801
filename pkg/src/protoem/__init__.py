"""Prototype-based attention via EM clustering, with toy motion tasks."""
__version__ = "0.1.0"
