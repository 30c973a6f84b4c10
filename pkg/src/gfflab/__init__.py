"""Lattice laboratory for vector-valued Gaussian free fields, loop soups and O(N) spins."""

__version__ = "0.1.0"
