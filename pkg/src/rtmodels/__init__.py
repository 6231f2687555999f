"""Runtime models for architecture-based adaptation of an EJB-like platform."""

__version__ = "0.1.0"
