"""Matrix-free elliptic solver for T^-1 - div*(A grad) on periodic tori.

The operator application is the bottleneck of every experiment, so the
d = 1, 2, 3 stencils are compiled with numba; other dimensions fall back to
a numpy roll implementation.  The solver itself is plain preconditioned
conjugate gradients with the diagonal (Jacobi) preconditioner, memory
O(N^d), deterministic for fixed inputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numba
import numpy as np

from .lattice import ScalarField, TorusLattice
from .random_fields import CoefficientField

__all__ = [
    "EllipticOperator",
    "DirichletBall",
    "SolveReport",
    "RunLog",
    "NoConvergence",
    "IncompatibleRhs",
    "BallTooLarge",
    "SolverError",
    "solve",
    "green",
    "solve_dirichlet",
]


class SolverError(RuntimeError):
    """Base class for solver failures."""


class NoConvergence(SolverError):
    """Iteration cap exceeded; signals ill-conditioning."""


class IncompatibleRhs(SolverError):
    """Tinv = 0 on the periodic torus requires a zero-sum right-hand side."""


class BallTooLarge(ValueError):
    """Dirichlet ball of radius R needs 2R < N."""


@numba.njit(cache=True)
def _apply_1d(a, u, tinv, out):
    n = u.shape[0]
    for x in range(n):
        xp = x + 1 if x + 1 < n else 0
        xm = x - 1 if x > 0 else n - 1
        out[x] = (tinv * u[x]
                  + a[0, x] * (u[x] - u[xp])
                  + a[0, xm] * (u[x] - u[xm]))


@numba.njit(cache=True)
def _apply_2d(a, u, tinv, out):
    n0, n1 = u.shape
    for x in range(n0):
        xp = x + 1 if x + 1 < n0 else 0
        xm = x - 1 if x > 0 else n0 - 1
        for y in range(n1):
            yp = y + 1 if y + 1 < n1 else 0
            ym = y - 1 if y > 0 else n1 - 1
            out[x, y] = (tinv * u[x, y]
                         + a[0, x, y] * (u[x, y] - u[xp, y])
                         + a[0, xm, y] * (u[x, y] - u[xm, y])
                         + a[1, x, y] * (u[x, y] - u[x, yp])
                         + a[1, x, ym] * (u[x, y] - u[x, ym]))


@numba.njit(cache=True)
def _apply_3d(a, u, tinv, out):
    n0, n1, n2 = u.shape
    for x in range(n0):
        xp = x + 1 if x + 1 < n0 else 0
        xm = x - 1 if x > 0 else n0 - 1
        for y in range(n1):
            yp = y + 1 if y + 1 < n1 else 0
            ym = y - 1 if y > 0 else n1 - 1
            for z in range(n2):
                zp = z + 1 if z + 1 < n2 else 0
                zm = z - 1 if z > 0 else n2 - 1
                out[x, y, z] = (tinv * u[x, y, z]
                                + a[0, x, y, z] * (u[x, y, z] - u[xp, y, z])
                                + a[0, xm, y, z] * (u[x, y, z] - u[xm, y, z])
                                + a[1, x, y, z] * (u[x, y, z] - u[x, yp, z])
                                + a[1, x, ym, z] * (u[x, y, z] - u[x, ym, z])
                                + a[2, x, y, z] * (u[x, y, z] - u[x, y, zp])
                                + a[2, x, y, zm] * (u[x, y, z] - u[x, y, zm]))


def _apply_nd(a, u, tinv):
    out = tinv * u
    for i in range(a.shape[0]):
        ai = a[i]
        out = out + ai * (u - np.roll(u, -1, axis=i))
        out = out + np.roll(ai, 1, axis=i) * (u - np.roll(u, 1, axis=i))
    return out


_KERNELS = {1: _apply_1d, 2: _apply_2d, 3: _apply_3d}


@dataclass(frozen=True)
class DirichletBall:
    """Homogeneous Dirichlet condition outside {|x - center| < radius}."""

    radius: float
    center: tuple[int, ...]


@dataclass
class EllipticOperator:
    """Symmetric positive (semi)definite operator Tinv*u - div*(A grad u).

    ``domain = None`` is the periodic torus; a :class:`DirichletBall` pins
    the unknowns outside the ball to zero, keeping the interior restriction
    SPD.  Tinv = 0 is allowed on the periodic torus only together with a
    zero-sum right-hand side (handled in :func:`solve`).
    """

    coefficients: CoefficientField
    tinv: float
    domain: DirichletBall | None = None
    _mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.tinv < 0:
            raise ValueError("the zero-order weight Tinv must be >= 0")
        lat = self.lattice
        if self.domain is not None:
            if 2 * self.domain.radius >= lat.n:
                raise BallTooLarge(
                    f"ball of radius {self.domain.radius} needs 2R < N = {lat.n}")
            self._mask = lat.distance(self.domain.center) < self.domain.radius

    @property
    def lattice(self) -> TorusLattice:
        return self.coefficients.lattice

    def apply_values(self, u: np.ndarray) -> np.ndarray:
        """Raw-array operator application (values outside a ball read as 0)."""
        if self._mask is not None:
            u = np.where(self._mask, u, 0.0)
        kern = _KERNELS.get(self.lattice.d)
        if kern is None:
            out = _apply_nd(self.coefficients.values, u, self.tinv)
        else:
            out = np.empty_like(u)
            kern(self.coefficients.values, u, self.tinv, out)
        if self._mask is not None:
            out = np.where(self._mask, out, 0.0)
        return out

    def apply(self, u: ScalarField) -> ScalarField:
        return ScalarField(self.lattice, self.apply_values(u.values))

    def diagonal(self) -> np.ndarray:
        a = self.coefficients.values
        diag = np.full(self.lattice.shape, self.tinv)
        for i in range(self.lattice.d):
            diag = diag + a[i] + np.roll(a[i], 1, axis=i)
        if self._mask is not None:
            diag = np.where(self._mask, diag, 1.0)
        return diag


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    tolerance: float
    seconds: float


class RunLog:
    """Accumulates solve reports; CSV columns fixed by the external interface."""

    HEADER = "operation,d,N,T,iterations,residual,seconds"

    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, operation: str, lattice: TorusLattice, t: float,
               report: SolveReport) -> None:
        self.rows.append((operation, lattice.d, lattice.n, t,
                          report.iterations, report.relative_residual,
                          report.seconds))

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.HEADER + "\n")
            for row in self.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                  for v in row) + "\n")


def solve(op: EllipticOperator, rhs: ScalarField, tol: float = 1e-10,
          maxiter: int | None = None, log: RunLog | None = None,
          operation: str = "solve") -> tuple[ScalarField, SolveReport]:
    """Jacobi-preconditioned CG solve of ``op x = rhs``.

    Guarantees ||op x - rhs|| <= tol * ||rhs|| on success (true residual,
    recomputed at acceptance); raises :class:`NoConvergence` past the
    iteration cap 50*N*d and :class:`IncompatibleRhs` for a singular
    periodic system with non-zero-sum right-hand side.
    """
    lat = op.lattice
    if rhs.lattice != lat:
        raise ValueError("rhs lives on a different lattice")
    t0 = time.perf_counter()
    b = rhs.values
    if op._mask is not None:
        b = np.where(op._mask, b, 0.0)

    project = False
    if op.tinv == 0.0 and op.domain is None:
        # singular but consistent system: stay in the zero-mean subspace
        if abs(b.sum()) > 1e-8 * np.abs(b).sum() + 1e-300:
            raise IncompatibleRhs("Tinv = 0 requires a zero-sum rhs on the torus")
        project = True

    bnorm = float(np.linalg.norm(b.ravel()))
    if bnorm == 0.0:
        report = SolveReport(0, 0.0, tol, time.perf_counter() - t0)
        if log is not None:
            log.record(operation, lat, _t_of(op.tinv), report)
        return ScalarField.zeros(lat), report

    if maxiter is None:
        maxiter = 50 * lat.n * lat.d
    inv_diag = 1.0 / op.diagonal()

    x = np.zeros(lat.shape)
    r = b.copy()
    z = inv_diag * r
    if project:
        z -= z.mean()
    p = z.copy()
    rz = float(np.dot(r.ravel(), z.ravel()))
    relres = 1.0
    iters = 0
    while iters < maxiter:
        rnorm = float(np.linalg.norm(r.ravel()))
        if rnorm <= tol * bnorm:
            # confirm with the true residual before accepting
            r = b - op.apply_values(x)
            rnorm = float(np.linalg.norm(r.ravel()))
            if rnorm <= tol * bnorm:
                relres = rnorm / bnorm
                break
            z = inv_diag * r
            if project:
                z -= z.mean()
            p = z.copy()
            rz = float(np.dot(r.ravel(), z.ravel()))
        ap = op.apply_values(p)
        pap = float(np.dot(p.ravel(), ap.ravel()))
        if pap <= 0.0:
            raise SolverError("operator lost positive definiteness (pAp <= 0)")
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        z = inv_diag * r
        if project:
            z -= z.mean()
        rz_new = float(np.dot(r.ravel(), z.ravel()))
        p = z + (rz_new / rz) * p
        rz = rz_new
        iters += 1
    else:
        raise NoConvergence(
            f"no convergence in {maxiter} iterations "
            f"(relative residual {np.linalg.norm(r.ravel()) / bnorm:.3e})")

    if project:
        x -= x.mean()
    report = SolveReport(iters, relres, tol, time.perf_counter() - t0)
    if log is not None:
        log.record(operation, lat, _t_of(op.tinv), report)
    return ScalarField(lat, x), report


def _t_of(tinv: float) -> float:
    return math.inf if tinv == 0.0 else 1.0 / tinv


def green(coefficients: CoefficientField, t: float, y, tol: float = 1e-10,
          log: RunLog | None = None) -> ScalarField:
    """Green's function G_T(., y): solves (T^-1 + L) G = delta_y.

    Checks the mass identity sum_x G = T (the constant test function in the
    defining weak form) at a tolerance consistent with the solver tolerance.
    """
    if not (t > 0 and math.isfinite(t)):
        raise ValueError("green requires finite T > 0")
    lat = coefficients.lattice
    op = EllipticOperator(coefficients, 1.0 / t)
    g, _ = solve(op, ScalarField.delta(lat, y), tol=tol, log=log, operation="green")
    mass_tol = max(1e-8, 10.0 * math.sqrt(lat.nsites) * tol)
    mass_err = abs(g.values.sum() / t - 1.0)
    if mass_err > mass_tol:
        raise SolverError(f"Green mass identity violated: |sum G / T - 1| = {mass_err:.3e}")
    return g


def solve_dirichlet(coefficients: CoefficientField, t: float, radius: float,
                    rhs: ScalarField, center=None, tol: float = 1e-10,
                    log: RunLog | None = None) -> ScalarField:
    """Solve on the ball {|x - center| < R} with zero Dirichlet exterior.

    ``t = math.inf`` is allowed (the Dirichlet form is coercive without the
    zero-order term).  The right-hand side is restricted to the interior and
    the solution vanishes identically outside the ball.
    """
    lat = coefficients.lattice
    if center is None:
        center = (lat.n // 2,) * lat.d
    if not t > 0:
        raise ValueError("solve_dirichlet requires T > 0 (math.inf allowed)")
    tinv = 0.0 if math.isinf(t) else 1.0 / t
    op = EllipticOperator(coefficients, tinv, DirichletBall(radius, tuple(center)))
    u, _ = solve(op, rhs, tol=tol, log=log, operation="dirichlet")
    return u
