"""Numerical laboratory for discrete stochastic homogenization on tori.

Core pipeline: sample an i.i.d. edge-conductivity field, solve the
zero-order-regularized corrector equation, average its energy density with a
smooth mask, and study the Monte Carlo statistics of the resulting estimate
of the homogenized coefficient, alongside Green-function decay, exact
susceptibility formulas and the spectral-gap variance bound.
"""

from .homogenization import CorrectorSolution, EnergyDensityField, \
    WrongDimension, corrector, corrector_1d_exact, energy_density, \
    estimate_A_LT, systematic_error_probe
from .lattice import AnnulusWraps, AveragingMask, MaskTooLarge, ScalarField, \
    TorusLattice, VectorField, annulus_sum, divergence_star, gradient, \
    make_mask, uniform_mask
from .linearized import ConstGreen, IdentityCheck, LinearizedCorrector, \
    TorusTooSmall, append_identity_1, append_identity_2, const_green, \
    linearized_corrector, sum_green_sq
from .random_fields import CoefficientField, CoefficientLaw, LawMoments, \
    SeedLineage, law_moments, sample
from .sensitivity import EdgeRef, EnumerationTooLarge, StepUnderflow, \
    SusceptibilityReport, caccioppoli_check, dgreen_da, dphi_da, fd_dgreen_da, \
    fd_dphi_da, moment_growth, spectral_gap_verify
from .solver import BallTooLarge, DirichletBall, EllipticOperator, \
    IncompatibleRhs, NoConvergence, RunLog, SolveReport, SolverError, green, \
    solve, solve_dirichlet

__version__ = "0.1.0"
