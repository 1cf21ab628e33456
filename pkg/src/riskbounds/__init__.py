"""Intrinsic bounds on the market price of risk of a Markovian pricing kernel."""

__version__ = "0.1.0"
