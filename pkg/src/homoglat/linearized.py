"""Small-contrast (linearized) theory: constant-coefficient Green functions,
linearized correctors, and the two exact ensemble identities.

Everything here is diagonal in the discrete Fourier basis of the torus:
the operator T^-1 - Lap has symbol T^-1 + lam(k) with
lam(k) = sum_i 4 sin^2(pi k_i / N).  The T = infinity solves drop the k = 0
mode (zero-mean convention), the finite-volume surrogate of the free-space
convention that the Laplace fundamental solution is only defined up to
constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import AveragingMask, ScalarField, TorusLattice, VectorField, \
    divergence_star, gradient
from .random_fields import CoefficientField, CoefficientLaw, SeedLineage, \
    law_moments, sample

__all__ = [
    "ConstGreen",
    "LinearizedCorrector",
    "IdentityCheck",
    "TorusTooSmall",
    "fourier_symbol",
    "const_green",
    "sum_green_sq",
    "linearized_corrector",
    "fourier_solve",
    "append_identity_1",
    "append_identity_2",
    "gradient_diff_scaling",
]


class TorusTooSmall(ValueError):
    """Raised when N is too small relative to sqrt(T) for free-space sums."""


def fourier_symbol(lattice: TorusLattice) -> np.ndarray:
    """Symbol lam(k) = sum_i 4 sin^2(pi k_i / N) of the discrete Laplacian."""
    n = lattice.n
    k = np.arange(n)
    lam1 = 4.0 * np.sin(np.pi * k / n) ** 2
    lam = np.zeros(lattice.shape)
    for i in range(lattice.d):
        shape = [1] * lattice.d
        shape[i] = n
        lam = lam + lam1.reshape(shape)
    return lam


@dataclass
class ConstGreen:
    """Fundamental solution of T^-1 - Lap on the torus, source at 0."""

    lattice: TorusLattice
    t: float
    values: ScalarField

    def shifted(self, y) -> ScalarField:
        """Field x -> G(x - y), the solution with source at ``y``."""
        y = self.lattice.wrap(y)
        return ScalarField(self.lattice, np.roll(self.values.values, y,
                                                 axis=tuple(range(self.lattice.d))))


def const_green(lattice: TorusLattice, t: float) -> ConstGreen:
    """Green function of T^-1 - Lap by Fourier diagonalization.

    ``t = math.inf`` gives the zero-mean Laplace Green function (k = 0 mode
    dropped).  For finite t the mass identity sum G = T holds exactly.
    """
    lam = fourier_symbol(lattice)
    if math.isinf(t):
        ghat = np.zeros(lattice.shape)
        nz = lam != 0.0
        ghat[nz] = 1.0 / lam[nz]
    else:
        if not t > 0:
            raise ValueError("T must be positive")
        ghat = 1.0 / (1.0 / t + lam)
    vals = np.fft.ifftn(ghat).real
    g = ConstGreen(lattice, t, ScalarField(lattice, vals))
    if math.isfinite(t):
        assert abs(vals.sum() / t - 1.0) <= 1e-10
    return g


def sum_green_sq(lattice: TorusLattice, t: float) -> float:
    """sum_x G_T(x)^2 with the torus zero mode removed.

    Equals sum_x (G_T(x) - T N^-d)^2 = N^-d sum_{k != 0} (T^-1 + lam(k))^-2,
    the finite-volume surrogate of the free-space square sum (the k = 0
    contribution T^2 N^-d is a pure wrap artifact).  Requires N >= 8 sqrt(T)
    so that the surrogate is accurate.
    """
    if math.isfinite(t) and lattice.n < 8.0 * math.sqrt(t):
        raise TorusTooSmall(f"sum_green_sq needs N >= 8 sqrt(T); "
                            f"N = {lattice.n}, T = {t}")
    lam = fourier_symbol(lattice)
    tinv = 0.0 if math.isinf(t) else 1.0 / t
    sym = tinv + lam
    sym_flat = sym.ravel()
    nz = sym_flat != 0.0
    total = float(np.sum(1.0 / sym_flat[nz] ** 2))
    if tinv != 0.0:
        total -= t * t  # remove the k = 0 term
    return total / lattice.nsites


def fourier_solve(rhs: ScalarField, t: float) -> ScalarField:
    """Solve (T^-1 - Lap) u = rhs in the Fourier basis.

    For ``t = math.inf`` the rhs must have (numerically) zero sum and the
    solution is fixed by zero mean.
    """
    lat = rhs.lattice
    lam = fourier_symbol(lat)
    rhat = np.fft.fftn(rhs.values)
    if math.isinf(t):
        uhat = np.zeros_like(rhat)
        nz = lam != 0.0
        uhat[nz] = rhat[nz] / lam[nz]
    else:
        uhat = rhat / (1.0 / t + lam)
    return ScalarField(lat, np.fft.ifftn(uhat).real)


@dataclass
class LinearizedCorrector:
    """Solutions of the constant-coefficient equations forced by A - <A>."""

    phibar_t: ScalarField
    phibar: ScalarField
    t: float
    direction: int


def centered_rhs(coefficients: CoefficientField, direction: int) -> ScalarField:
    """div*((A - <A>) e_i) with the exact law mean."""
    lat = coefficients.lattice
    mean = law_moments(coefficients.law).mean
    g = np.zeros((lat.d,) + lat.shape)
    g[direction] = coefficients.values[direction] - mean
    return divergence_star(VectorField(lat, g))


def linearized_corrector(coefficients: CoefficientField, t: float,
                         direction: int) -> LinearizedCorrector:
    """Solve the zero-order-regularized and plain linearized equations.

    The finite-T solution solves T^-1 u - Lap u = div*((A - <A>) e_i); the
    T = infinity solution solves -Lap u = same rhs with zero mean.
    """
    lat = coefficients.lattice
    if not 0 <= direction < lat.d:
        raise ValueError(f"direction must be in 0..{lat.d - 1}")
    rhs = centered_rhs(coefficients, direction)
    phibar = fourier_solve(rhs, math.inf)
    phibar_t = phibar if math.isinf(t) else fourier_solve(rhs, t)
    return LinearizedCorrector(phibar_t, phibar, float(t), direction)


@dataclass
class IdentityCheck:
    """Monte Carlo lhs against a closed-form rhs with the lhs confidence band."""

    name: str
    lhs: float
    rhs: float
    ci_halfwidth: float
    n_samples: int

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs != 0.0 else math.nan

    def within(self, k: float = 3.0) -> bool:
        return abs(self.lhs - self.rhs) <= k * self.ci_halfwidth


def _jackknife_sum_of_variances(samples: np.ndarray) -> tuple[float, float]:
    """(sum of column variances, jackknife SE) for an (n, m) sample matrix."""
    n = samples.shape[0]
    s1 = samples.sum(axis=0)
    s2 = (samples**2).sum(axis=0)
    full = float(np.sum((s2 - s1**2 / n) / (n - 1)))
    # leave-one-out variances, vectorized over the left-out sample
    l1 = s1[np.newaxis, :] - samples
    l2 = s2[np.newaxis, :] - samples**2
    loo = np.sum((l2 - l1**2 / (n - 1)) / (n - 2), axis=1)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return full, se


def append_identity_1(law: CoefficientLaw, lattice: TorusLattice,
                      mask: AveragingMask, mc_samples: int, master_seed: int,
                      stream: str = "append1") -> IdentityCheck:
    """Exact variance identity for the masked linearized energy statistic.

    lhs: sum over direction pairs (i, j) of the MC variance of
    sum_x (e_j.(A - <A>)e_i + 2 e_j.grad phibar_i) eta_L; rhs is
    d var[a] sum eta_L^2, exact at any law (no small-contrast assumption).
    """
    if mc_samples < 3:
        raise ValueError("need at least 3 samples")
    d = lattice.d
    mean = law_moments(law).mean
    eta = mask.weights.values
    stats = np.empty((mc_samples, d * d))
    for s in range(mc_samples):
        coeffs = sample(law, lattice, SeedLineage(master_seed, s, stream))
        col = 0
        for i in range(d):
            lin = linearized_corrector(coeffs, math.inf, i)
            grad = gradient(lin.phibar).values
            centered = coeffs.values[i] - mean
            for j in range(d):
                integrand = (centered if i == j else 0.0) + 2.0 * grad[j]
                stats[s, col] = float(np.sum(integrand * eta))
                col += 1
    lhs, se = _jackknife_sum_of_variances(stats)
    rhs = d * law_moments(law).variance * mask.sq_mass()
    return IdentityCheck("append-1", lhs, rhs, 1.96 * se, mc_samples)


def append_identity_2(law: CoefficientLaw, lattice: TorusLattice, t: float,
                      mc_samples: int, master_seed: int,
                      stream: str = "append2") -> IdentityCheck:
    """Exact identity for the zero-order truncation of the linearized corrector.

    lhs: MC + spatial average of sum_i |grad(phibar_{T,i} - phibar_i)|^2;
    rhs: var[a] T^-2 sum G_T^2 (torus-exact with the centered square sum).
    """
    if mc_samples < 2:
        raise ValueError("need at least 2 samples")
    d = lattice.d
    vals = np.empty(mc_samples)
    for s in range(mc_samples):
        coeffs = sample(law, lattice, SeedLineage(master_seed, s, stream))
        acc = 0.0
        for i in range(d):
            lin = linearized_corrector(coeffs, t, i)
            diff = ScalarField(lattice, lin.phibar_t.values - lin.phibar.values)
            g = gradient(diff).values
            acc += float(np.mean(np.sum(g**2, axis=0)))
        vals[s] = acc
    lhs = float(vals.mean())
    se = float(vals.std(ddof=1)) / math.sqrt(mc_samples)
    rhs = law_moments(law).variance / t**2 * sum_green_sq(lattice, t)
    return IdentityCheck("append-2", lhs, rhs, 1.96 * se, mc_samples)


def gradient_diff_scaling(law: CoefficientLaw, lattice: TorusLattice,
                          t_values, mc_samples: int, master_seed: int) -> list[IdentityCheck]:
    """append_identity_2 across a T grid; squaring the lhs exposes the
    T^-d decay of the squared truncation error in d < 4."""
    return [append_identity_2(law, lattice, float(t), mc_samples,
                              master_seed, stream=f"pv11-T{t}")
            for t in t_values]


def linearized_t_scaling_exact(lattice: TorusLattice, law: CoefficientLaw,
                               t: float) -> float:
    """Closed-form ensemble value of sum_i avg |grad(phibar_2T - phibar_T)|^2.

    Used as the exact linearized reference for the Richardson probe of the
    nonlinear corrector at small ellipticity contrast.
    """
    lam = fourier_symbol(lattice).ravel()
    lam = lam[lam != 0.0]
    w = (1.0 / t - 0.5 / t) / ((1.0 / t + lam) * (0.5 / t + lam))
    var = law_moments(law).variance
    return var * float(np.sum(lam**2 * w**2)) / lattice.nsites
