"""Volumetric capture-to-simulation pipeline built on clipped centroidal Voronoi tessellations."""

__version__ = "0.1.0"
