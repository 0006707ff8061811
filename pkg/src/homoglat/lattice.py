"""Periodic lattice geometry, scalar/vector fields, discrete calculus, masks.

Conventions used throughout the package:

* the forward gradient is (grad u)_i(x) = u(x + e_i) - u(x),
* the adjoint divergence is (div* g)(x) = sum_i [g_i(x) - g_i(x - e_i)],
* the edge [x, x + e_i] is stored at slot (i, x); the coefficient of the
  edge [x - e_i, x] is therefore read at slot (i, x - e_i),
* distances are Euclidean on the shortest periodic representative.

With these choices the discrete integration by parts
``sum_x h (div* g) = -sum_x (grad h) . g`` holds exactly on the torus.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TorusLattice",
    "ScalarField",
    "VectorField",
    "AveragingMask",
    "MaskTooLarge",
    "AnnulusWraps",
    "gradient",
    "divergence_star",
    "make_mask",
    "uniform_mask",
    "annulus_sum",
    "annulus_site_count",
    "save_field",
    "load_scalar_field",
    "load_vector_field",
    "field_to_csv",
]


class MaskTooLarge(ValueError):
    """Raised when 2L + 1 exceeds the torus side."""


class AnnulusWraps(ValueError):
    """Raised when an annulus of outer radius 2R does not fit (4R >= N)."""


@dataclass(frozen=True)
class TorusLattice:
    """Periodic box with ``d`` axes and ``n`` sites per axis (n^d sites)."""

    d: int
    n: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if self.n < 2:
            raise ValueError(f"side length must be >= 2, got {self.n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def nsites(self) -> int:
        return self.n**self.d

    def site_index(self, coords) -> int:
        """Row-major linear index of a site, with periodic wrap."""
        coords = np.mod(np.asarray(coords, dtype=np.int64), self.n)
        return int(np.ravel_multi_index(tuple(coords), self.shape))

    def site_coords(self, index: int) -> tuple[int, ...]:
        """Inverse of :meth:`site_index` on {0, ..., n^d - 1}."""
        if not 0 <= index < self.nsites:
            raise ValueError(f"site index {index} out of range")
        return tuple(int(c) for c in np.unravel_index(index, self.shape))

    def wrap(self, coords) -> tuple[int, ...]:
        return tuple(int(c) % self.n for c in coords)

    def axis_displacement(self, axis_coords: np.ndarray, center: int) -> np.ndarray:
        """Signed displacement along one axis, shortest representative."""
        half = self.n // 2
        return (axis_coords - center + half) % self.n - half

    def distance(self, center) -> np.ndarray:
        """Euclidean distance grid from ``center`` (shortest representative)."""
        center = self.wrap(center)
        grids = np.ogrid[tuple(slice(0, self.n) for _ in range(self.d))]
        sq = np.zeros(self.shape)
        for i in range(self.d):
            t = self.axis_displacement(grids[i], center[i])
            sq = sq + t.astype(np.float64) ** 2
        return np.sqrt(sq)


def _as_values(lattice: TorusLattice, values, shape) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != shape:
        if arr.size == int(np.prod(shape)):
            arr = arr.reshape(shape)
        else:
            raise ValueError(f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    return arr


@dataclass
class ScalarField:
    """One real value per site, shaped ``lattice.shape``."""

    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self):
        self.values = _as_values(self.lattice, self.values, self.lattice.shape)

    @classmethod
    def zeros(cls, lattice: TorusLattice) -> "ScalarField":
        return cls(lattice, np.zeros(lattice.shape))

    @classmethod
    def delta(cls, lattice: TorusLattice, site) -> "ScalarField":
        """Unit point mass at ``site`` (no volume normalization)."""
        v = np.zeros(lattice.shape)
        v[lattice.wrap(site)] = 1.0
        return cls(lattice, v)

    def copy(self) -> "ScalarField":
        return ScalarField(self.lattice, self.values.copy())


@dataclass
class VectorField:
    """d reals per site; component i lives on the edge [x, x + e_i]."""

    lattice: TorusLattice
    values: np.ndarray

    def __post_init__(self):
        shape = (self.lattice.d,) + self.lattice.shape
        self.values = _as_values(self.lattice, self.values, shape)

    @classmethod
    def zeros(cls, lattice: TorusLattice) -> "VectorField":
        return cls(lattice, np.zeros((lattice.d,) + lattice.shape))

    def copy(self) -> "VectorField":
        return VectorField(self.lattice, self.values.copy())


def gradient(u: ScalarField) -> VectorField:
    """Forward difference gradient, (grad u)_i(x) = u(x + e_i) - u(x)."""
    lat = u.lattice
    out = np.empty((lat.d,) + lat.shape)
    for i in range(lat.d):
        out[i] = np.roll(u.values, -1, axis=i) - u.values
    return VectorField(lat, out)


def divergence_star(g: VectorField) -> ScalarField:
    """Adjoint divergence, (div* g)(x) = sum_i [g_i(x) - g_i(x - e_i)]."""
    lat = g.lattice
    out = np.zeros(lat.shape)
    for i in range(lat.d):
        out += g.values[i] - np.roll(g.values[i], 1, axis=i)
    return ScalarField(lat, out)


@dataclass
class AveragingMask:
    """Nonnegative unit-mass weight field supported in a centered box.

    ``grad_bound`` records C = max_edges |grad eta| * L^(d+1); the smooth
    mask family keeps C bounded independently of L.
    """

    lattice: TorusLattice
    half_width: int | None
    weights: ScalarField
    grad_bound: float = 0.0
    uniform: bool = field(default=False)

    def mass(self) -> float:
        return float(self.weights.values.sum())

    def sq_mass(self) -> float:
        return float((self.weights.values**2).sum())


def make_mask(lattice: TorusLattice, half_width: int, center=None) -> AveragingMask:
    """Raised-cosine tensor-product mask of half-width L on the torus.

    The 1D profile is w(t) = 1 + cos(pi t / L) for |t| < L and 0 outside,
    taken as a product over axes and normalized to unit mass.  This keeps
    the support inside the open box (-L, L)^d and the gradient below
    C * L^(-d-1) with a small constant.
    """
    L = int(half_width)
    if L < 2:
        raise ValueError(f"mask half-width must be >= 2, got {L}")
    if 2 * L + 1 > lattice.n:
        raise MaskTooLarge(f"mask of half-width {L} needs 2L+1 <= N = {lattice.n}")
    if center is None:
        center = (lattice.n // 2,) * lattice.d
    center = lattice.wrap(center)

    grids = np.ogrid[tuple(slice(0, lattice.n) for _ in range(lattice.d))]
    w = np.ones(lattice.shape)
    for i in range(lattice.d):
        t = lattice.axis_displacement(grids[i], center[i]).astype(np.float64)
        prof = np.where(np.abs(t) < L, 1.0 + np.cos(np.pi * t / L), 0.0)
        w = w * prof
    w /= w.sum()

    weights = ScalarField(lattice, w)
    grad = gradient(weights)
    grad_bound = float(np.abs(grad.values).max()) * float(L) ** (lattice.d + 1)

    # invariants: mass 1, nonnegative, support in the centered box
    assert abs(w.sum() - 1.0) <= 1e-12
    assert w.min() >= 0.0
    dist_box = np.zeros(lattice.shape)
    for i in range(lattice.d):
        t = lattice.axis_displacement(grids[i], center[i]).astype(np.float64)
        dist_box = np.maximum(dist_box, np.abs(t))
    assert not np.any(w[dist_box >= L] != 0.0)

    return AveragingMask(lattice, L, weights, grad_bound)


def uniform_mask(lattice: TorusLattice) -> AveragingMask:
    """Flat unit-mass weights over the whole torus (no compact support)."""
    w = np.full(lattice.shape, 1.0 / lattice.nsites)
    return AveragingMask(lattice, None, ScalarField(lattice, w), 0.0, uniform=True)


def annulus_site_count(lattice: TorusLattice, center, radius: float) -> int:
    """Number of sites in the annulus {R < |x - center| <= 2R}."""
    dist = lattice.distance(center)
    return int(np.count_nonzero((dist > radius) & (dist <= 2 * radius)))


def annulus_sum(u: ScalarField, center, radius: float, q: float) -> float:
    """Sum of |u|^q over the annulus {R < |x - center| <= 2R}.

    Requires 4R < N so the annulus does not wrap onto itself.
    """
    lat = u.lattice
    if 4 * radius >= lat.n:
        raise AnnulusWraps(f"annulus with R = {radius} needs 4R < N = {lat.n}")
    dist = lat.distance(center)
    sel = (dist > radius) & (dist <= 2 * radius)
    return float(np.sum(np.abs(u.values[sel]) ** q))


# --- flat binary + CSV serialization -------------------------------------
#
# Layout: header of three little-endian int64 (d, N, components) followed by
# the row-major little-endian float64 values, component axis first.

_HEADER = struct.Struct("<qqq")


def save_field(path, f: ScalarField | VectorField) -> None:
    comps = 1 if isinstance(f, ScalarField) else f.lattice.d
    data = np.ascontiguousarray(f.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(f.lattice.d, f.lattice.n, comps))
        fh.write(data.tobytes())


def _load_raw(path):
    with open(path, "rb") as fh:
        d, n, comps = _HEADER.unpack(fh.read(_HEADER.size))
        raw = np.frombuffer(fh.read(), dtype="<f8")
    lat = TorusLattice(d, n)
    if raw.size != comps * lat.nsites:
        raise ValueError(f"{path}: payload size does not match header")
    return lat, comps, raw.astype(np.float64)


def load_scalar_field(path) -> ScalarField:
    lat, comps, raw = _load_raw(path)
    if comps != 1:
        raise ValueError(f"{path}: expected 1 component, found {comps}")
    return ScalarField(lat, raw.reshape(lat.shape))


def load_vector_field(path) -> VectorField:
    lat, comps, raw = _load_raw(path)
    if comps != lat.d:
        raise ValueError(f"{path}: expected {lat.d} components, found {comps}")
    return VectorField(lat, raw.reshape((lat.d,) + lat.shape))


def field_to_csv(path, f: ScalarField | VectorField) -> None:
    """Inspection export: one row per site (index, coordinates, values)."""
    lat = f.lattice
    comps = 1 if isinstance(f, ScalarField) else lat.d
    vals = f.values.reshape((comps, lat.nsites))
    header = ["site", *[f"x{i}" for i in range(lat.d)], *[f"v{c}" for c in range(comps)]]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for idx in range(lat.nsites):
            coords = np.unravel_index(idx, lat.shape)
            row = [str(idx), *[str(int(c)) for c in coords]]
            row += [repr(float(vals[c, idx])) for c in range(comps)]
            fh.write(",".join(row) + "\n")
