"""I.i.d. edge-coefficient laws, deterministic substreams, field sampling.

Sampling is counter-based: each (master seed, sample index, stream label)
triple is hashed into a 128-bit Philox key, and the edge draws of one field
consume that stream in a fixed linear order, so the draw of edge k is the
k-th counter of the substream.  Results are therefore bit-reproducible
across runs and across any partition of samples over workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .lattice import TorusLattice

__all__ = [
    "CoefficientLaw",
    "CoefficientField",
    "SeedLineage",
    "LawMoments",
    "law_moments",
    "sample",
    "generator",
]


@dataclass(frozen=True)
class CoefficientLaw:
    """Distribution of a single edge conductivity, supported in [alpha, beta]."""

    kind: str
    params: tuple[float, ...]

    @classmethod
    def bernoulli(cls, p: float, lo: float, hi: float) -> "CoefficientLaw":
        """Two-point law: value ``hi`` with probability p, else ``lo``."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {p}")
        law = cls("bernoulli", (float(p), float(lo), float(hi)))
        law._validate_support()
        return law

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "CoefficientLaw":
        law = cls("uniform", (float(lo), float(hi)))
        law._validate_support()
        return law

    @classmethod
    def discrete(cls, values, probs) -> "CoefficientLaw":
        values = tuple(float(v) for v in values)
        probs = tuple(float(p) for p in probs)
        if len(values) != len(probs) or not values:
            raise ValueError("discrete law needs matching nonempty values/probs")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        law = cls("discrete", values + probs)
        law._validate_support()
        return law

    def _validate_support(self):
        if not (0.0 < self.alpha <= self.beta < np.inf):
            raise ValueError(f"support must satisfy 0 < alpha <= beta, got "
                             f"[{self.alpha}, {self.beta}]")

    @property
    def alpha(self) -> float:
        if self.kind == "bernoulli":
            _, lo, hi = self.params
            return min(lo, hi)
        if self.kind == "uniform":
            return self.params[0]
        values = self.params[: len(self.params) // 2]
        return min(values)

    @property
    def beta(self) -> float:
        if self.kind == "bernoulli":
            _, lo, hi = self.params
            return max(lo, hi)
        if self.kind == "uniform":
            return self.params[1]
        values = self.params[: len(self.params) // 2]
        return max(values)

    @property
    def support(self) -> tuple[float, ...] | None:
        """Atom values for atomic laws, None for continuous ones."""
        if self.kind == "bernoulli":
            _, lo, hi = self.params
            return (lo, hi) if lo != hi else (lo,)
        if self.kind == "discrete":
            return self.params[: len(self.params) // 2]
        return None


class LawMoments(NamedTuple):
    mean: float
    variance: float
    harmonic_mean: float


def law_moments(law: CoefficientLaw) -> LawMoments:
    """Exact mean, variance and harmonic mean 1/<a^-1> of the law."""
    if law.kind == "bernoulli":
        p, lo, hi = law.params
        mean = p * hi + (1 - p) * lo
        var = p * (1 - p) * (hi - lo) ** 2
        inv = p / hi + (1 - p) / lo
        return LawMoments(mean, var, 1.0 / inv)
    if law.kind == "uniform":
        lo, hi = law.params
        mean = 0.5 * (lo + hi)
        var = (hi - lo) ** 2 / 12.0
        inv = 1.0 if hi == lo else np.log(hi / lo) / (hi - lo)
        if hi == lo:
            inv = 1.0 / lo
        return LawMoments(mean, var, 1.0 / inv)
    k = len(law.params) // 2
    values = np.asarray(law.params[:k])
    probs = np.asarray(law.params[k:])
    mean = float(probs @ values)
    var = float(probs @ (values - mean) ** 2)
    inv = float(probs @ (1.0 / values))
    return LawMoments(mean, var, 1.0 / inv)


@dataclass(frozen=True)
class SeedLineage:
    """Identifies one reproducible substream of the master stream."""

    master_seed: int
    sample_index: int
    stream: str = ""

    def __post_init__(self):
        if self.sample_index < 0:
            raise ValueError("sample index must be nonnegative")

    def philox_key(self) -> np.ndarray:
        # canonical encoding: the first two fields are digit-only, so the
        # triple -> bytes map is injective; blake2b folds it to 128 bits
        payload = f"{self.master_seed}|{self.sample_index}|{self.stream}".encode()
        digest = hashlib.blake2b(payload, digest_size=16).digest()
        k0 = int.from_bytes(digest[:8], "little")
        k1 = int.from_bytes(digest[8:], "little")
        return np.array([k0, k1], dtype=np.uint64)

    def child(self, sample_index: int, stream: str | None = None) -> "SeedLineage":
        return SeedLineage(self.master_seed, sample_index,
                           self.stream if stream is None else stream)

    def describe(self) -> str:
        return f"seed={self.master_seed} sample={self.sample_index} stream={self.stream!r}"


def generator(lineage: SeedLineage) -> np.random.Generator:
    """Counter-based generator for the given lineage."""
    return np.random.Generator(np.random.Philox(key=lineage.philox_key()))


@dataclass
class CoefficientField:
    """One conductivity per (site, direction) edge slot, values in [alpha, beta]."""

    lattice: TorusLattice
    values: np.ndarray
    law: CoefficientLaw
    lineage: SeedLineage | None = None

    def __post_init__(self):
        shape = (self.lattice.d,) + self.lattice.shape
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"expected coefficient shape {shape}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        # hard ellipticity assertion, small slack for roundoff only
        if arr.min() < self.law.alpha - 1e-12 or arr.max() > self.law.beta + 1e-12:
            raise ValueError("coefficient outside the law support [alpha, beta]")
        self.values = arr

    @classmethod
    def constant(cls, lattice: TorusLattice, value: float) -> "CoefficientField":
        law = CoefficientLaw.discrete([value], [1.0])
        return cls(lattice, np.full((lattice.d,) + lattice.shape, float(value)), law)

    def with_edge(self, direction: int, site, value: float) -> "CoefficientField":
        """Copy of the field with one edge slot replaced."""
        vals = self.values.copy()
        vals[(direction,) + self.lattice.wrap(site)] = value
        return CoefficientField(self.lattice, vals, self.law, self.lineage)


def sample(law: CoefficientLaw, lattice: TorusLattice,
           lineage: SeedLineage) -> CoefficientField:
    """Draw an i.i.d. coefficient field from the lineage substream."""
    g = generator(lineage)
    u = g.random(size=(lattice.d,) + lattice.shape)
    if law.kind == "bernoulli":
        p, lo, hi = law.params
        vals = np.where(u < p, hi, lo)
    elif law.kind == "uniform":
        lo, hi = law.params
        vals = lo + (hi - lo) * u
    else:
        k = len(law.params) // 2
        values = np.asarray(law.params[:k])
        cum = np.cumsum(law.params[k:])
        cum[-1] = 1.0
        vals = values[np.searchsorted(cum, u, side="right").clip(0, k - 1)]
    return CoefficientField(lattice, vals, law, lineage)
