"""Cognitive-stimulation dialogue toolkit."""

__version__ = "0.1.0"
