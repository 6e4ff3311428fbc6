import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boltzlab.estimates import (
    ALPHA_LADDER,
    Cone,
    coercivity_constant,
    cone_coercivity,
    cone_lower_bound,
    envelope_exponent,
    holder_seminorm,
    kernel_upper_bound,
    lifted_set,
    linfty_envelope,
    lower_bound_probe,
    max_principle_report,
    report,
    space_seminorm,
    sphere_directions,
)
from boltzlab.grid import DistributionFunction, VelocityGrid, from_function, maxwellian
from boltzlab.xsection import reference_b


def disc(grid, center=(0.0, 0.0), radius=1.0):
    c = np.asarray(center)
    return from_function(grid, lambda p: (np.sum((p - c) ** 2, -1) <= radius**2).astype(float))


def fake_trajectory(grid, times, frames, maxima=None):
    recs = [SimpleNamespace(t=t, index=(0,) * grid.dim, v=np.zeros(grid.dim), m=m, q1=-1.0, q2=0.0,
                            c_tilde=1.0, C_tilde=0.0)
            for t, m in zip(times, maxima if maxima is not None else [np.max(f) for f in frames])]
    return SimpleNamespace(grid=grid, times=list(times), snapshot_times=list(times), snapshots=list(frames),
                           max_records=recs, maxima=np.array([r.m for r in recs]))


def test_report_schema_is_json_safe():
    import json

    rep = report("x", {"v": np.array([1.0, 2.0])}, {"k": np.float64(3.0), "t": (1, 2)}, {"c": 1}, np.bool_(True))
    assert set(rep) == {"lemma", "inputs", "measured", "threshold", "pass"}
    assert json.loads(json.dumps(rep))["inputs"]["v"] == [1.0, 2.0]


@pytest.mark.parametrize("dim", [2, 3])
def test_sphere_directions_symmetric(dim):
    d = sphere_directions(dim, 64)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    np.testing.assert_allclose(d[32:], -d[:32], atol=1e-15)


# ----------------------------------------------------------- kernel above


def test_kernel_upper_bound_zero():
    g = VelocityGrid(2, 3.0, 16)
    rep = kernel_upper_bound(reference_b(0, 1, 2), DistributionFunction(g, np.zeros(g.shape)), [0.0, 0.0])
    assert rep.Lambda == 0.0 and rep.passed


def test_kernel_upper_bound_maxwellian_dyadic():
    g = VelocityGrid(2, 5.0, 32)
    f = maxwellian(g)
    xs = reference_b(0.0, 1.0, 2)
    v = [0.1, -0.2]
    rep = kernel_upper_bound(xs, f, v)
    assert len(rep.radii) == 4
    assert rep.spread <= 1.10
    assert rep.passed and rep.ratio <= 1.05
    twice = kernel_upper_bound(xs, f.scaled(2.0), v)
    assert twice.Lambda == pytest.approx(2 * rep.Lambda, rel=1e-13)


# ------------------------------------------------------------- lifted set


def test_lifted_set_maxwellian_example():
    g = VelocityGrid(2, 6.0, 49)
    f = maxwellian(g)
    ls = lifted_set(f, M0=1.0, M1=1.0, E0=2.0)
    assert ls.r == pytest.approx(2 * (1 + 1e-6), rel=1e-15)
    assert ls.level == pytest.approx(1 / (8 * math.pi * ls.r**2))
    assert ls.passed


def test_lifted_set_two_bumps():
    g = VelocityGrid(2, 6.0, 49)
    two = from_function(g, lambda p: 0.5 * (np.exp(-4 * np.sum((p - [1.5, 0]) ** 2, -1))
                                            + np.exp(-4 * np.sum((p + [1.5, 0]) ** 2, -1))) * 4 / math.pi)
    ls = lifted_set(two)
    assert ls.r > 1.5
    assert ls.passed


def test_lifted_set_homogeneity():
    g = VelocityGrid(2, 6.0, 33)
    f = maxwellian(g)
    a = lifted_set(f, 1.0, 1.0, 2.0, 1.3)
    b = lifted_set(f.scaled(2.0), 2.0, 2.0, 4.0, 2.6)
    assert b.r == a.r
    assert b.level == pytest.approx(2 * a.level, rel=1e-14)
    assert b.m == pytest.approx(2 * a.m, rel=1e-14)


def test_lifted_set_rejects_zero_mass():
    g = VelocityGrid(2, 2.0, 10)
    with pytest.raises(ValueError):
        lifted_set(DistributionFunction(g, np.zeros(g.shape)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lifted_set_random_mixtures(seed):
    rng = np.random.default_rng(seed)
    g = VelocityGrid(2, 6.0, 33)
    k = int(rng.integers(1, 4))
    centers = rng.uniform(-2, 2, (k, 2))
    widths = rng.uniform(0.5, 1.2, k)
    weights = rng.uniform(0.2, 1.0, k)
    vals = sum(w * np.exp(-np.sum((g.points() - c) ** 2, -1) / (2 * s * s)) / (2 * math.pi * s * s)
               for c, s, w in zip(centers, widths, weights))
    assert lifted_set(DistributionFunction(g, vals)).passed


# -------------------------------------------------------------- cone below


def test_cone_full_sphere_at_center():
    g = VelocityGrid(2, 3.0, 49)
    rep = cone_lower_bound(reference_b(0, 1, 2), disc(g), [0.0, 0.0])
    assert np.all(rep.in_cone)
    assert rep.cone_measure == pytest.approx(2 * math.pi)
    assert rep.lam > 0 and rep.passed


def test_cone_band_far_away():
    # lines through v orthogonal to sigma meet the unit disc iff |sigma . v| <= 1:
    # two arcs of angular width 2 asin(1/10) each
    g = VelocityGrid(2, 3.0, 49)
    v = np.array([10.0, 0.0])
    rep = cone_lower_bound(reference_b(0, 1, 2), disc(g), v, direction_samples=1024)
    planar = 4 * math.asin(rep.band_bound / 10)
    assert rep.cone_measure == pytest.approx(planar, rel=0.15)
    assert rep.band <= rep.band_bound
    assert rep.passed


@pytest.mark.parametrize("v", [[0.3, 0.0], [2.0, -1.0], [6.0, 3.0]])
def test_cone_symmetric(v):
    g = VelocityGrid(2, 3.0, 33)
    f = from_function(g, lambda p: np.exp(-np.sum((p - [0.5, 0.2]) ** 2, -1)))
    rep = cone_lower_bound(reference_b(0.5, 1.0, 2), f, v, direction_samples=128)
    half = len(rep.in_cone) // 2
    np.testing.assert_array_equal(rep.in_cone[:half], rep.in_cone[half:])


def test_cone_empty_set_fails():
    g = VelocityGrid(2, 3.0, 33)
    f = disc(g, center=(2.2, 2.2), radius=0.5)
    ls = lifted_set(f)
    empty = SimpleNamespace(r=0.1, level=ls.level, m=ls.m)
    rep = cone_lower_bound(reference_b(0, 1, 2), f, [0.0, 0.0], lifted=empty)
    assert not rep.passed and rep.cone_measure == 0.0
    assert rep.notes


# ------------------------------------------------------------- coercivity


def test_coercivity_constant():
    assert coercivity_constant(2, 1.0, 1.0) == pytest.approx(0.5 * 4**-0.5)


def test_coercivity_single_cell():
    g = VelocityGrid(2, 5.0, 32)
    idx = (16, 16)
    vals = np.zeros(g.shape)
    vals[idx] = 2.5
    f = DistributionFunction(g, vals)
    cone = Cone(np.array([1.0, 0.1]), 0.0)
    rep = cone_coercivity(f, 1.0, p=1.0, cone=cone)
    v = g.node(idx)
    y = g.points() - v
    r = np.linalg.norm(y, axis=-1)
    sel = cone.contains(y) & (r > g.h / 2)
    lhs = 2.5 * np.sum(r[sel] ** -3.0) * g.cell_volume
    assert rep.outside > 0
    assert rep.lhs - rep.outside == pytest.approx(lhs, rel=1e-12)
    assert rep.lp_integral == pytest.approx(2.5 * g.cell_volume)
    rhs = coercivity_constant(2, 1.0, 1.0) * 2.5**1.5 * math.pi**1.5 / (2.5 * g.h**2) ** 0.5
    assert rep.rhs == pytest.approx(rhs, rel=1e-12)
    assert rep.lhs > rep.rhs


def test_coercivity_box_constant_left_side_is_the_outside_tail():
    # a grid constant is the indicator of the box [-a, a]^2: inside, m - f = 0, and
    # outside int |y|^-3 dy = int_0^2pi max(|cos|, |sin|) / a d omega = 4 sqrt(2) / a
    g = VelocityGrid(2, 2.0, 17)
    rep = cone_coercivity(DistributionFunction(g, np.full(g.shape, 0.7)), 1.0, v=[0.0, 0.0])
    a = g.L + g.h / 2
    assert rep.lhs == rep.outside
    assert rep.outside == pytest.approx(0.7 * 4 * math.sqrt(2) / a, rel=1e-6)


def test_coercivity_outside_tail_half_cone():
    # v at the center, cone = right half plane: half of the full-circle value
    g = VelocityGrid(2, 2.0, 17)
    f = DistributionFunction(g, np.full(g.shape, 0.7))
    half = cone_coercivity(f, 1.0, v=[0.0, 0.0], cone=Cone(np.array([1.0, 0.0]), 0.0))
    full = cone_coercivity(f, 1.0, v=[0.0, 0.0])
    assert half.outside == pytest.approx(full.outside / 2, rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.2, 1.8), st.floats(1.0, 3.0))
def test_coercivity_ratio_scale_invariant(seed, nu, p):
    rng = np.random.default_rng(seed)
    g = VelocityGrid(2, 3.0, 16)
    f = DistributionFunction(g, rng.random(g.shape) ** 4)
    a = cone_coercivity(f, nu, p)
    b = cone_coercivity(f.scaled(2.0), nu, p)
    assert b.lhs == pytest.approx(2 * a.lhs, rel=1e-12)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


# ---------------------------------------------------------- max principle


def test_max_principle_maxwellian():
    g = VelocityGrid(2, 5.0, 32)
    rec = max_principle_report(reference_b(0, 1, 2), maxwellian(g))
    assert rec.q1 <= 0 <= rec.q2
    assert abs(rec.q1 + rec.q2) < 0.05 * rec.q2
    assert rec.passed


def test_max_principle_strict_peak():
    g = VelocityGrid(2, 5.0, 32)
    bump = from_function(g, lambda p: maxwellian(g).values + 0.2 * np.exp(-8 * np.sum((p - g.node((16, 16))) ** 2, -1)))
    rec = max_principle_report(reference_b(0, 1, 2), bump)
    assert rec.index == (16, 16)
    assert rec.c_tilde > 0 and rec.passed


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_max_principle_sign(seed):
    g = VelocityGrid(2, 3.0, 16)
    f = DistributionFunction(g, np.random.default_rng(seed).random(g.shape))
    assert max_principle_report(reference_b(0, 1, 2), f).q1 <= 0


# --------------------------------------------------------------- envelope


def test_envelope_exponent():
    assert envelope_exponent(2, 1.0, 0.0) == 2.0
    assert envelope_exponent(3, 0.5, 1.0) == 6.0
    assert envelope_exponent(2, 1.0, -1.5, p=2.0) == 1.0
    with pytest.raises(ValueError):
        envelope_exponent(2, 1.0, -1.5)


def test_envelope_decaying_maximum():
    g = VelocityGrid(2, 1.0, 8)
    t = np.linspace(0, 1, 21)
    m = 1.0 + 0.3 * np.exp(-3 * t)
    traj = fake_trajectory(g, t, [np.zeros(g.shape)] * len(t), m)
    env = linfty_envelope(traj, 1.0)
    assert env.beta == 2.0
    assert env.passed and env.b >= 0
    assert np.all(m[1:] <= env.barrier(t[1:]) * (1 + 1e-12))


def test_envelope_trivial_for_flat_maximum():
    g = VelocityGrid(2, 1.0, 8)
    t = np.linspace(0, 1, 11)
    traj = fake_trajectory(g, t, [np.zeros(g.shape)] * len(t), np.full(11, 0.4))
    env = linfty_envelope(traj, 1.0)
    assert env.b == pytest.approx(0.0, abs=1e-12) and env.a == pytest.approx(0.4)
    assert env.passed


def test_envelope_flags_growth():
    g = VelocityGrid(2, 1.0, 8)
    t = np.linspace(0, 1, 11)
    traj = fake_trajectory(g, t, [np.zeros(g.shape)] * len(t), 1 + t)
    assert not linfty_envelope(traj, 1.0).passed


# ------------------------------------------------------------ lower bound


def test_lower_bound_probe_series():
    g = VelocityGrid(2, 2.0, 9)
    t = np.linspace(0, 1, 5)
    frames = [np.full(g.shape, s) for s in (0.0, 0.1, 0.2, 0.25, 0.3)]
    rep = lower_bound_probe(fake_trajectory(g, t, frames), R=1.0, T=1.0)
    assert rep.minima[0] == 0.0 and rep.value == 0.3
    assert rep.passed
    frames[-1] = np.full(g.shape, 0.2)
    assert not lower_bound_probe(fake_trajectory(g, t, frames), R=1.0, T=1.0).late_nondecreasing


# ----------------------------------------------------------------- Holder


def test_holder_constant_field():
    g = VelocityGrid(2, 2.0, 9)
    t = np.linspace(0, 1, 9)
    rep = holder_seminorm(fake_trajectory(g, t, [np.full(g.shape, 0.5)] * 9), nu=1.0, R=2.0)
    assert all(v == 0 for v in rep.space.values()) and all(v == 0 for v in rep.time.values())
    assert rep.alpha == 1.0


def test_holder_lipschitz_cone():
    g = VelocityGrid(2, 2.0, 17)
    v0 = g.node((8, 8))
    cone = np.linalg.norm(g.points() - v0, axis=-1)
    assert space_seminorm(g, cone, 2.0, 1.0) == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_holder_ladder_monotone(seed):
    g = VelocityGrid(2, 1.0, 9)
    vals = np.random.default_rng(seed).random(g.shape)
    diam = 2.0
    semi = {a: space_seminorm(g, vals, 1.0, a) for a in ALPHA_LADDER}
    for a1, a2 in zip(ALPHA_LADDER, ALPHA_LADDER[1:]):
        assert semi[a1] <= semi[a2] * diam ** (a2 - a1) * (1 + 1e-12)
