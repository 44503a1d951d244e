"""CRAR agent with gradient matching in the abstract space, on numpy."""

__version__ = "0.1.0"
