"""Desk-scale video color and illumination editing with rectified flow.

Trains a small conditional velocity network with self-supervised
structure/photometry disentanglement, then edits videos by sampling a
rectified trajectory guided by residual velocity fields.
"""

__version__ = "0.1.0"
