"""Pseudo-spectral Beris-Edwards Q-tensor / Navier-Stokes simulator with energy ledgers."""

__version__ = "0.1.0"
