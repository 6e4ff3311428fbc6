import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boltzlab.grid import (
    DistributionFunction,
    VelocityGrid,
    discrete_maxwellian,
    entropy,
    entropy_abs,
    from_function,
    interpolate,
    load_csv,
    maxwellian,
    moments,
    save_csv,
)


def gaussian(p):
    return np.exp(-np.sum(p**2, axis=-1) / 2) / (2 * math.pi)


def test_grid_geometry():
    g = VelocityGrid(2, 5.0, 11)
    assert g.h == pytest.approx(1.0)
    assert g.shape == (11, 11)
    pts = g.points()
    # symmetric about the origin: reversing every axis maps v to -v
    np.testing.assert_allclose(pts[::-1, ::-1], -pts)
    assert g.index_of(np.array([1.0, -2.0])) == (6, 3)
    assert g.index_of(np.array([0.5, 0.0])) is None


@pytest.mark.parametrize("args", [(1, 5.0, 16), (4, 5.0, 16), (2, 5.0, 7), (2, 0.0, 16), (2, -1.0, 16)])
def test_grid_rejects_bad_parameters(args):
    with pytest.raises(ValueError):
        VelocityGrid(*args)


def test_distribution_is_nonnegative_and_frozen():
    g = VelocityGrid(2, 1.0, 8)
    with pytest.raises(ValueError):
        DistributionFunction(g, -np.ones(g.shape))
    with pytest.raises(ValueError):
        DistributionFunction(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        DistributionFunction(g, np.ones((7, 8)))
    f = DistributionFunction(g, np.ones(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_interpolate_constant_and_outside():
    g = VelocityGrid(2, 2.0, 9)
    f = DistributionFunction(g, np.ones(g.shape))
    assert interpolate(f, np.array([0.3, -1.7])) == pytest.approx(1.0)
    assert interpolate(f, np.array([2.0, 2.0])) == pytest.approx(1.0)
    assert interpolate(f, np.array([2.01, 0.0])) == 0.0
    assert interpolate(f, np.array([0.0, -3.0])) == 0.0


def test_interpolate_exact_at_nodes():
    g = VelocityGrid(3, 1.0, 8)
    rng = np.random.default_rng(1)
    f = DistributionFunction(g, rng.random(g.shape))
    idx = [(0, 0, 0), (7, 7, 7), (3, 5, 1)]
    pts = np.array([g.node(i) for i in idx])
    np.testing.assert_array_equal(interpolate(f, pts), [f.values[i] for i in idx])


def test_interpolate_gaussian_midpoints_second_order():
    errs = []
    for n in (33, 65):
        g = VelocityGrid(2, 4.0, n)
        f = from_function(g, gaussian)
        mid = g.points()[:-1, :-1].reshape(-1, 2) + g.h / 2
        errs.append(np.max(np.abs(interpolate(f, mid) - gaussian(mid))))
        assert errs[-1] < g.h**2
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)


def test_single_cell_mass():
    g = VelocityGrid(2, 1.0, 9)
    vals = np.zeros(g.shape)
    vals[4, 4] = 1.0
    st_ = moments(DistributionFunction(g, vals))
    assert st_.mass == pytest.approx(g.h**2, rel=1e-15)
    assert st_.energy == 0.0


@pytest.mark.parametrize("dim,n", [(2, 49), (3, 25)])
def test_maxwellian_moments(dim, n):
    g = VelocityGrid(dim, 6.0, n)
    st_ = moments(maxwellian(g))
    assert st_.mass == pytest.approx(1.0, abs=1e-6)
    assert st_.energy == pytest.approx(dim, abs=1e-5)


def test_indicator_entropy_is_zero():
    g = VelocityGrid(2, 1.0, 10)
    rng = np.random.default_rng(0)
    f = DistributionFunction(g, (rng.random(g.shape) > 0.5).astype(float))
    assert entropy(f) == 0.0


def test_entropy_abs_dominates():
    g = VelocityGrid(2, 6.0, 33)
    f = maxwellian(g)
    assert entropy_abs(f) >= abs(entropy(f))
    # all values are below 1, so the unsigned entropy is -H
    assert entropy_abs(f) == pytest.approx(-entropy(f))


def test_mass_energy_refinement_second_order():
    # a compactly supported smooth bump, so truncation plays no part
    def bump(p):
        r2 = np.sum(p**2, axis=-1)
        return np.where(r2 < 1, (1 - r2) ** 4, 0.0)

    exact_mass = math.pi / 5
    errs = []
    for n in (21, 41):
        g = VelocityGrid(2, 1.5, n)
        errs.append(abs(moments(from_function(g, bump)).mass - exact_mass))
    assert errs[1] < errs[0] / 3


def test_discrete_maxwellian_matches_moments():
    g = VelocityGrid(2, 5.0, 32)
    pts = g.points()
    f = from_function(g, lambda p: np.exp(-np.sum((p - [1, 0]) ** 2, -1)) + np.exp(-np.sum((p + [1, 0.5]) ** 2, -1)))
    m = discrete_maxwellian(f)
    basis = [np.ones(g.shape), pts[..., 0], pts[..., 1], np.sum(pts**2, -1)]
    for phi in basis:
        assert np.sum(phi * m.values) == pytest.approx(np.sum(phi * f.values), rel=1e-11, abs=1e-11)


def test_csv_round_trip_bit_exact(tmp_path):
    g = VelocityGrid(2, 0.7, 9)
    rng = np.random.default_rng(3)
    f = DistributionFunction(g, rng.random(g.shape) * 1e-3 + 1 / 3)
    path = tmp_path / "f.csv"
    save_csv(f, path)
    assert path.read_text().splitlines()[0] == "# N=9 L=0.7 dim=2"
    back = load_csv(path)
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_csv_rejects_missing_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,0,1\n")
    with pytest.raises(ValueError):
        load_csv(path)


small_fields = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).random((8, 8)))


@settings(max_examples=40, deadline=None)
@given(small_fields, small_fields, st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_mass_energy_linear(a, b, alpha, beta):
    g = VelocityGrid(2, 1.0, 8)
    fa, fb = DistributionFunction(g, a), DistributionFunction(g, b)
    mix = moments(DistributionFunction(g, alpha * a + beta * b))
    ma, mb = moments(fa), moments(fb)
    assert mix.mass == pytest.approx(alpha * ma.mass + beta * mb.mass, rel=1e-12, abs=1e-14)
    assert mix.energy == pytest.approx(alpha * ma.energy + beta * mb.energy, rel=1e-12, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(small_fields, small_fields, st.integers(0, 2**31 - 1))
def test_interpolation_monotone(a, extra, seed):
    g = VelocityGrid(2, 1.0, 8)
    lo, hi = DistributionFunction(g, a), DistributionFunction(g, a + extra)
    pts = np.random.default_rng(seed).uniform(-1.2, 1.2, (50, 2))
    assert np.all(interpolate(lo, pts) <= interpolate(hi, pts) + 1e-15)
