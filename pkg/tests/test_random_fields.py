import math

import numpy as np
import pytest

from homoglat.lattice import TorusLattice
from homoglat.random_fields import CoefficientField, CoefficientLaw, \
    SeedLineage, law_moments, sample

BERN = CoefficientLaw.bernoulli(0.5, 1.0, 4.0)


def test_bernoulli_moments():
    m = law_moments(BERN)
    assert m.mean == 2.5
    assert m.variance == 2.25
    # <a^-1> = (1 + 1/4)/2 = 5/8, harmonic mean 8/5
    assert abs(m.harmonic_mean - 1.6) <= 1e-15


def test_constant_law_moments():
    m = law_moments(CoefficientLaw.discrete([3.0], [1.0]))
    assert m == (3.0, 0.0, 3.0)


def test_uniform_harmonic_mean():
    m = law_moments(CoefficientLaw.uniform(1.0, 2.0))
    assert abs(m.harmonic_mean - 1.0 / math.log(2.0)) <= 1e-14
    assert m.mean == 1.5
    assert abs(m.variance - 1.0 / 12.0) <= 1e-15


def test_discrete_moments_match_bernoulli():
    disc = CoefficientLaw.discrete([1.0, 4.0], [0.5, 0.5])
    assert law_moments(disc) == law_moments(BERN)


def test_invalid_laws_rejected():
    with pytest.raises(ValueError):
        CoefficientLaw.bernoulli(1.5, 1.0, 4.0)
    with pytest.raises(ValueError):
        CoefficientLaw.uniform(-1.0, 2.0)  # alpha must be positive
    with pytest.raises(ValueError):
        CoefficientLaw.discrete([1.0, 2.0], [0.6, 0.6])


def test_constant_law_samples_constant_field():
    lat = TorusLattice(2, 8)
    f = sample(CoefficientLaw.discrete([2.0], [1.0]), lat, SeedLineage(0, 0))
    assert np.all(f.values == 2.0)


def test_sampling_moments_at_scale():
    # empirical mean within 4 sigma, variance within 5% (1e5+ edges)
    lat = TorusLattice(2, 256)
    f = sample(BERN, lat, SeedLineage(42, 0, "moments"))
    n_edges = f.values.size
    assert n_edges >= 1e5
    sigma = math.sqrt(2.25 / n_edges)
    assert abs(f.values.mean() - 2.5) <= 4 * sigma
    assert abs(f.values.var() / 2.25 - 1.0) <= 0.05


def test_identical_lineage_bit_identical():
    lat = TorusLattice(2, 32)
    a = sample(BERN, lat, SeedLineage(7, 3, "twin"))
    b = sample(BERN, lat, SeedLineage(7, 3, "twin"))
    assert np.array_equal(a.values, b.values)


def test_lineage_separates_streams():
    lat = TorusLattice(2, 16)
    base = sample(BERN, lat, SeedLineage(7, 0, "s"))
    assert not np.array_equal(base.values, sample(BERN, lat, SeedLineage(7, 1, "s")).values)
    assert not np.array_equal(base.values, sample(BERN, lat, SeedLineage(8, 0, "s")).values)
    assert not np.array_equal(base.values, sample(BERN, lat, SeedLineage(7, 0, "t")).values)


def test_values_inside_support():
    lat = TorusLattice(3, 8)
    for law in (BERN, CoefficientLaw.uniform(0.5, 2.0),
                CoefficientLaw.discrete([1.0, 2.0, 3.0], [0.2, 0.3, 0.5])):
        f = sample(law, lat, SeedLineage(11, 0, "support"))
        assert f.values.min() >= law.alpha
        assert f.values.max() <= law.beta


def test_out_of_support_field_rejected():
    lat = TorusLattice(1, 4)
    with pytest.raises(ValueError):
        CoefficientField(lat, np.array([[1.0, 2.0, 5.0, 1.0]]), BERN)


def test_independence_smoke():
    # correlation between two fixed edges across 1000 samples: |rho| <= 4/sqrt(1000)
    lat = TorusLattice(2, 4)
    n = 1000
    x = np.empty(n)
    y = np.empty(n)
    for s in range(n):
        f = sample(BERN, lat, SeedLineage(123, s, "indep"))
        x[s] = f.values[0, 0, 0]
        y[s] = f.values[1, 2, 3]
    rho = np.corrcoef(x, y)[0, 1]
    assert abs(rho) <= 4.0 / math.sqrt(n)


def test_uniform_law_fills_interval():
    lat = TorusLattice(1, 1024)
    f = sample(CoefficientLaw.uniform(1.0, 2.0), lat, SeedLineage(5, 0, "unif"))
    assert abs(f.values.mean() - 1.5) <= 0.03
    assert f.values.min() < 1.05 and f.values.max() > 1.95


def test_with_edge_replaces_single_slot():
    lat = TorusLattice(2, 4)
    f = sample(BERN, lat, SeedLineage(9, 0, "edge"))
    g = f.with_edge(1, (2, 3), 4.0)
    assert g.values[1, 2, 3] == 4.0
    diff = g.values != f.values
    assert diff.sum() in (0, 1)
