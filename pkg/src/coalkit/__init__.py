"""Multi-block multiplicative coalescent driven by Poisson tuple draws."""

__version__ = "0.1.0"
