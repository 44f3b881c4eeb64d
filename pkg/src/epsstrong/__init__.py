"""Epsilon-strong simulation of Brownian motion and L/G-class diffusions
via the Brownian skeleton of successive heat-ball exits."""

__version__ = "0.1.0"
