"""Discrete-time simulator of EV charging station demand response with user digital twins."""

__version__ = "0.1.0"
