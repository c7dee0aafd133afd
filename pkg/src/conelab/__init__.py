"""Numerical laboratory for Schrodinger flow exterior to polygons and on cones.

The package is organized around the model geometries that control
dispersion near a polygonal obstacle: Euclidean cones C(S^1_rho) and
their wedge halves (``geometry``, ``cone``), the planar exterior domain
itself (``planar``), the radial commutant calculus used for local
smoothing (``multipliers``), quotient experiments for space-time
estimates (``estimates``), and a split-step nonlinear layer (``nls``).
``cli`` exposes the whole thing as reproducible report-writing commands.
"""

__version__ = "0.1.0"

from . import cone, cutoffs, estimates, geometry, multipliers, nls, planar

__all__ = [
    "__version__",
    "cone",
    "cutoffs",
    "estimates",
    "nls",
    "geometry",
    "multipliers",
    "planar",
]
