"""Attribute-based dynamic pricing lab: demand model, bandit learners, experiments."""

__version__ = "0.1.0"
