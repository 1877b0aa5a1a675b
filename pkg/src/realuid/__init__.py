"""Distilling matching models into one-step generators with UID / RealUID losses."""

__version__ = "0.1.0"
