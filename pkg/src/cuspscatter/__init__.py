"""Scattering data of negatively curved cusp surfaces.

Builds cusp surfaces, enumerates their scattered geodesics, assembles the
Dirichlet-series parametrix of the scattering determinant and analyses its
zeros.
"""

__version__ = "0.1.0"
