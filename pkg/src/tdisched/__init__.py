"""Deadline-aware image delivery over a time-expanded satellite network with
in-orbit compression."""

__version__ = "0.1.0"
