"""Approximate correctors, energy densities, and the averaged estimator.

The target quantity is the masked spatial average of the energy density

    eps(x) = T^-1 phi_T(x)^2 + (grad phi_T(x) + xi) . A(x) (grad phi_T(x) + xi)

whose mean over the coefficient ensemble approaches xi . A_hom xi.  In one
dimension everything is explicit (series resistors), which anchors the full
pipeline against the harmonic mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import AveragingMask, ScalarField, TorusLattice, VectorField, \
    divergence_star, gradient
from .random_fields import CoefficientField
from .solver import EllipticOperator, RunLog, SolveReport, solve

__all__ = [
    "CorrectorSolution",
    "EnergyDensityField",
    "WrongDimension",
    "corrector",
    "energy_density",
    "estimate_A_LT",
    "corrector_1d_exact",
    "systematic_error_probe",
    "apriori_energy_bound",
]


class WrongDimension(ValueError):
    """Operation only defined for a specific lattice dimension."""


@dataclass
class CorrectorSolution:
    """phi_T with its gradient, regularization time and forcing direction."""

    phi: ScalarField
    grad: VectorField
    t: float
    xi: np.ndarray
    coefficients: CoefficientField
    report: SolveReport

    @property
    def lattice(self) -> TorusLattice:
        return self.phi.lattice


@dataclass
class EnergyDensityField:
    values: ScalarField


def _check_direction(xi, d: int) -> np.ndarray:
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (d,):
        raise ValueError(f"direction must have {d} components")
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    return xi


def corrector_rhs(coefficients: CoefficientField, xi) -> ScalarField:
    """Right-hand side div*(A xi) of the regularized corrector equation."""
    lat = coefficients.lattice
    xi = _check_direction(xi, lat.d)
    g = coefficients.values * xi.reshape((lat.d,) + (1,) * lat.d)
    return divergence_star(VectorField(lat, g))


def corrector(coefficients: CoefficientField, t: float, xi,
              tol: float = 1e-10, log: RunLog | None = None) -> CorrectorSolution:
    """Solve T^-1 phi - div*(A(grad phi + xi)) = 0 on the periodic torus."""
    if not (t > 0 and math.isfinite(t)):
        raise ValueError("corrector requires finite T > 0")
    lat = coefficients.lattice
    xi = _check_direction(xi, lat.d)
    rhs = corrector_rhs(coefficients, xi)
    op = EllipticOperator(coefficients, 1.0 / t)
    phi, report = solve(op, rhs, tol=tol, log=log, operation="corrector")
    grad = gradient(phi)
    # torus telescoping: each gradient component has exact zero spatial mean
    scale = max(float(np.abs(grad.values).max()), 1.0)
    for i in range(lat.d):
        assert abs(grad.values[i].sum()) <= 1e-10 * scale * lat.nsites ** 0.5
    return CorrectorSolution(phi, grad, float(t), xi, coefficients, report)


def energy_density(sol: CorrectorSolution) -> EnergyDensityField:
    """Pointwise T^-1 phi^2 + (grad phi + xi) . A (grad phi + xi) >= 0."""
    lat = sol.lattice
    a = sol.coefficients.values
    shifted = sol.grad.values + sol.xi.reshape((lat.d,) + (1,) * lat.d)
    quad = np.einsum("i...,i...->...", a, shifted**2)
    eps = sol.phi.values**2 / sol.t + quad
    alpha = sol.coefficients.law.alpha
    floor = alpha * np.einsum("i...,i...->...", shifted, shifted)
    scale = max(float(eps.max()), 1.0)
    assert eps.min() >= -1e-12 * scale
    assert float((eps - floor).min()) >= -1e-12 * scale
    return EnergyDensityField(ScalarField(lat, eps))


def estimate_A_LT(sol: CorrectorSolution, mask: AveragingMask) -> float:
    """Masked spatial average sum_x eps(x) eta_L(x) of the energy density."""
    if mask.lattice != sol.lattice:
        raise ValueError("mask lives on a different lattice")
    eps = energy_density(sol).values.values
    value = float(np.dot(eps.ravel(), mask.weights.values.ravel()))
    assert value >= 0.0
    return value


def corrector_1d_exact(coefficients: CoefficientField) -> VectorField:
    """Closed-form T = infinity corrector gradient in one dimension.

    grad phi(x) = 1 / (a(x) <a^-1>) - 1 with the spatial harmonic average;
    the flux a(x)(1 + grad phi(x)) is the constant 1/<a^-1> at every site.
    """
    lat = coefficients.lattice
    if lat.d != 1:
        raise WrongDimension("corrector_1d_exact requires d = 1")
    a = coefficients.values[0]
    hinv = float(np.mean(1.0 / a))
    grad = 1.0 / (a * hinv) - 1.0
    return VectorField(lat, grad[np.newaxis])


def apriori_energy_bound(sol: CorrectorSolution) -> tuple[float, float]:
    """(lhs, ceiling) of the energy estimate; lhs <= (beta/alpha)^2 |xi|^2.

    lhs = T^-1 avg(phi^2) + avg(|grad phi|^2).  The testable ceiling is the
    recorded constant for the qualitative a priori bound.
    """
    law = sol.coefficients.law
    lhs = float(np.mean(sol.phi.values**2) / sol.t
                + np.mean(np.sum(sol.grad.values**2, axis=0)))
    ceiling = (law.beta / law.alpha) ** 2 * float(np.dot(sol.xi, sol.xi))
    return lhs, ceiling


def systematic_error_probe(coefficients: CoefficientField, xi, t: float,
                           tol: float = 1e-8, log: RunLog | None = None) -> float:
    """Richardson proxy for the T-truncation error of the corrector gradient.

    Returns the spatial average of (grad phi_2T - grad phi_T) . A (...), a
    computable stand-in for the ensemble quantity it mimics: the exact
    object needs the T = infinity corrector, which a finite torus with
    xi-forcing cannot produce once the zero-order term is dropped.
    """
    sol_t = corrector(coefficients, t, xi, tol=tol, log=log)
    sol_2t = corrector(coefficients, 2 * t, xi, tol=tol, log=log)
    diff = sol_2t.grad.values - sol_t.grad.values
    a = coefficients.values
    return float(np.mean(np.einsum("i...,i...->...", a, diff**2)))
