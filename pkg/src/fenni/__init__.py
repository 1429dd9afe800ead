"""Finite-element interpolation as a trainable sparse network.

Nodal values and nodal coordinates are optimized against physics losses,
with r- and rh-adaptivity, multigrid training and a classical FEM oracle
for verification.
"""

from .errors import FenniError
from .mesh import Mesh, generate_bar_1d, generate_plate_with_hole, red_green_refine
from .model import FenniModel
from .oracle import Bar1D, Plate2D, fem_solve_1d, fem_solve_2d

__all__ = [
    "FenniError",
    "Mesh",
    "generate_bar_1d",
    "generate_plate_with_hole",
    "red_green_refine",
    "FenniModel",
    "Bar1D",
    "Plate2D",
    "fem_solve_1d",
    "fem_solve_2d",
]
__version__ = "0.1.0"
