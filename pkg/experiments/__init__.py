"""Manufactured problems, Monte Carlo error estimation and the randsplit command line"""

__version__ = "1.0.0"
