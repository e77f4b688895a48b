"""Distributed safety shields and cascading policy learning for
multi-agent transition systems."""

__version__ = "0.1.0"
