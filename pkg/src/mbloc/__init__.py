"""Localization diagnostics for disordered XY spin chains and harmonic oscillator lattices.

The many-body models reduce exactly to single-particle matrices: a block
Jacobi matrix for the XY chain and a weighted lattice Laplacian for the
oscillators.  Subpackages:

- :mod:`mbloc.single_particle`: spectral calculus and eigenfunction correlators
- :mod:`mbloc.xy_model`: XY chain, its block Jacobi matrix, dense oracle
- :mod:`mbloc.oscillator`: oscillator lattices, Weyl bounds, Gaussian states
- :mod:`mbloc.lyapunov`: transfer matrices and Lyapunov exponents
- :mod:`mbloc.ensemble`: disorder sampling, averages and decay fits
- :mod:`mbloc.cli`: the ``mbloc`` command
"""

__version__ = "0.1.0"

from mbloc.errors import ConfigError, InvalidSampleError, OracleCapError, SingularSpectrumError
from mbloc.single_particle import EffectiveOperator, EnergyWindow, SpectralData, decompose

__all__ = [
    "ConfigError",
    "EffectiveOperator",
    "EnergyWindow",
    "InvalidSampleError",
    "OracleCapError",
    "SingularSpectrumError",
    "SpectralData",
    "decompose",
    "__version__",
]
