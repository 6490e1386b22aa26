"""Spectral toolkit for stochastic third-grade fluid flow on the torus.

Subpackages:
    spectral  divergence-free Fourier core, norms, drift, identity corpus
    noise     truncated cylindrical Wiener noise and the diffusion operator
    forward   semi-implicit Euler-Maruyama ensembles with first-exit stopping
    tangent   exact scheme linearization and its transpose
    adjoint   pathwise and adapted costate solvers, duality checks
    control   tracking cost, adjoint gradients, projected-gradient search
    config    run configuration, hashing
    io        deterministic binary/CSV/JSON output formats
    cli       command-line entry point
"""

__version__ = "0.1.0"

from .forward import SimConfig  # noqa: F401
from .noise import NoiseModel  # noqa: F401
from .spectral import PhysicalParams, WaveGrid  # noqa: F401
