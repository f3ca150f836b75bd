"""Artery/vein separation by graph cuts with data-dependent higher-order clique potentials."""

__version__ = "0.1.0"
