"""Blind multi-speaker-adapted source separation toolkit."""

__version__ = "0.1.0"
