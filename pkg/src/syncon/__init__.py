"""Synthetic-control estimators under imperfect pre-treatment fit."""

__version__ = "0.1.0"
