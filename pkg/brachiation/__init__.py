"""Swing planning, tracking and design studies for a three-link brachiation robot."""

__version__ = "0.1.0"
