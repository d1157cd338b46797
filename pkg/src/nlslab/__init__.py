"""Numerical laboratory for nonlinear Schrodinger equations with homogeneous,
non-gauge-invariant nonlinearities.

Modules
-------
nonlinearity  coefficient sequences, Strauss exponent, Wirtinger calculus
spectral      periodic grids, propagators, dilations, norms, operator identities
oscillator    harmonic-oscillator resolvents and their operator norms
evolution     Strang split-step solvers for the u- and v-equations
picard        the integral map Phi, X/Y norms and Picard iteration
scattering    pseudo-conformal transform and scattering profiles
cli           configuration-driven experiment runner
"""
__version__ = "0.1.0"

from .nonlinearity import CoefficientSeq, DegreeParams, check_assumptions, strauss_exponent  # noqa: E402
from .spectral import Field, Grid  # noqa: E402

__all__ = ["CoefficientSeq", "DegreeParams", "Field", "Grid", "check_assumptions", "strauss_exponent", "__version__"]
