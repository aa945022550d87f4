"""Desk-scale lab for Impala/Impoola image encoders in deep RL."""

__version__ = "0.1.0"
