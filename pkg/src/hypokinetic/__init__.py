"""Monte Carlo simulation and verification for degenerate SDEs driven by subordinated Brownian motion."""
__version__ = "0.1.0"
