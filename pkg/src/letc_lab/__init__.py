"""LetC Lab - Simulation lab for contextual dynamic pricing."""

__version__ = "0.1.0"
