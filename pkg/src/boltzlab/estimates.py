"""Certifiers and monitors for the a-priori estimates.

Each certifier measures the quantity an estimate talks about on a grid
function (or on a recorded trajectory), compares it with the explicit constant
where one exists, and returns a report that serializes to
``{lemma, inputs, measured, threshold, pass}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls

from .collision import _kernel_weights, cell_average_power, half_sphere_directions, hyperplane_moment, hyperplane_nodes
from .grid import DistributionFunction, VelocityGrid, entropy_abs, interpolate, moments
from .xsection import CrossSection, ball_volume, reference_b, sphere_area

ALPHA_LADDER = (0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report(lemma: str, inputs: dict, measured: dict, threshold: dict, passed: bool) -> dict:
    return _jsonable({"lemma": lemma, "inputs": inputs, "measured": measured, "threshold": threshold,
                      "pass": bool(passed)})


def _offsets(grid: VelocityGrid, v: np.ndarray) -> np.ndarray:
    return grid.points() - np.asarray(v, dtype=float)


def _power_moment(f: DistributionFunction, v: np.ndarray, s: float) -> float:
    """int f(v + w) |w|^s dw as a grid sum; a node at v uses the cell average of |w|^s."""
    grid = f.grid
    r = np.linalg.norm(_offsets(grid, v), axis=-1)
    at_v = r < 1e-12 * grid.h
    w = np.where(at_v, 1.0, r) ** s
    w = np.where(at_v, grid.h**s * cell_average_power(grid.dim, s), w)
    return float(np.sum(f.values * w)) * grid.cell_volume


def angular_ratio_bounds(xs: CrossSection, samples: int = 4001) -> tuple[float, float]:
    """inf and sup of b / b_ref over theta in (0, pi), sampled away from the endpoints."""
    if xs.is_reference:
        return 1.0, 1.0
    ref = reference_b(xs.gamma, xs.nu, xs.dim)
    theta = np.linspace(0.0, math.pi, samples + 2)[1:-1]
    ratio = xs.b(theta) / ref.b(theta)
    return float(np.min(ratio)), float(np.max(ratio))


def sphere_directions(dim: int, n: int) -> np.ndarray:
    """Symmetric direction samples: equal angles on the circle, a Fibonacci
    hemisphere and its mirror image on the sphere. Row k + n/2 is minus row k."""
    half = n // 2
    if dim == 2:
        phi = 2 * math.pi * np.arange(n) / n
        return np.stack([np.cos(phi), np.sin(phi)], axis=1)
    k = np.arange(half) + 0.5
    z = k / half
    golden = math.pi * (3.0 - math.sqrt(5.0))
    az = golden * np.arange(half)
    s = np.sqrt(1.0 - z**2)
    upper = np.stack([s * np.cos(az), s * np.sin(az), z], axis=1)
    return np.concatenate([upper, -upper])


# --------------------------------------------------------------- kernel above


@dataclass
class KernelBoundsReport:
    v: np.ndarray
    Lambda: float | None = None
    radii: np.ndarray | None = None
    scaled_integrals: np.ndarray | None = None
    theoretical: float | None = None
    directions: np.ndarray | None = None
    plane_integrals: np.ndarray | None = None
    in_cone: np.ndarray | None = None
    cone_measure: float | None = None
    guaranteed_measure: float | None = None
    lam: float | None = None
    band: float | None = None
    band_bound: float | None = None
    mu_fit: float | None = None
    kappa: float | None = None
    cone_threshold: float | None = None
    passed: bool = True
    notes: list[str] = field(default_factory=list)

    @property
    def ratio(self) -> float | None:
        if self.Lambda is None or not self.theoretical:
            return None
        return self.Lambda / self.theoretical

    @property
    def spread(self) -> float | None:
        """max / min of r^nu times the annulus integral over the radii."""
        if self.scaled_integrals is None or np.min(self.scaled_integrals) <= 0:
            return None
        return float(np.max(self.scaled_integrals) / np.min(self.scaled_integrals))

    def to_report(self) -> dict:
        if self.in_cone is None:
            return report("kernel_upper_bound", {"v": self.v, "radii": self.radii},
                          {"Lambda": self.Lambda, "scaled_integrals": self.scaled_integrals, "spread": self.spread},
                          {"theoretical": self.theoretical, "ratio": self.ratio}, self.passed)
        return report("cone_lower_bound", {"v": self.v, "samples": len(self.directions)},
                      {"cone_measure": self.cone_measure, "lambda": self.lam, "band": self.band, "mu": self.mu_fit,
                       "kappa": self.kappa},
                      {"plane_integral": self.cone_threshold, "guaranteed_measure": self.guaranteed_measure,
                       "band_bound": self.band_bound}, self.passed)


def annulus_integral(xs: CrossSection, f: DistributionFunction, v, r: float, n_directions: int | None = None,
                     n_radial: int = 8, n_azimuth: int = 24) -> float:
    """int over r < |z| < 2r of K_f(v, v + z) dz by polar quadrature.

    K_f is evaluated from its hyperplane integral for each direction; the
    radial factor of the kernel is integrated with Gauss-Legendre nodes.
    """
    grid = f.grid
    v = np.asarray(v, dtype=float)
    n_directions = n_directions or (64 if grid.dim == 2 else 200)
    dirs, wdir = half_sphere_directions(grid.dim, n_directions)
    x, wx = np.polynomial.legendre.leggauss(n_radial)
    rho = r * (1.5 + 0.5 * x)
    wrho = 0.5 * r * wx * rho ** (grid.dim - 1)
    total = 0.0
    for e, we in zip(dirs, wdir):
        nodes = hyperplane_nodes(grid, v, e, grid.h / 2, n_azimuth)
        vals = interpolate(f, v + nodes.offsets)
        if not np.any(vals):
            continue
        kern = _kernel_weights(xs, rho, nodes, n_azimuth) @ vals
        total += we * float(np.sum(kern * wrho))
    # the half-sphere rule covers each +-e pair once and K_f(v, v+z) = K_f(v, v-z)
    return 2.0 * total


def kernel_upper_bound(xs: CrossSection, f: DistributionFunction, v, annuli: Sequence[float] | None = None,
                       tolerance: float = 0.05, **quad) -> KernelBoundsReport:
    """Lambda = max over annuli of r^nu int_{B_2r \\ B_r} K_f, with the ceiling from the proof chain.

    For b = b_ref the chain K_f -> polar coordinates -> dual-polar identity is an
    equality: r^nu int = 2^(N-1) (1 - 2^-nu) / nu * |S^(N-2)| * int f(v + w) |w|^(gamma+nu) dw.
    Other b are bounded through sup b / b_ref.
    """
    grid = f.grid
    v = np.asarray(v, dtype=float)
    radii = np.asarray(annuli if annuli is not None else [grid.h * 2**k for k in range(4)], dtype=float)
    scaled = np.array([r**xs.nu * annulus_integral(xs, f, v, r, **quad) for r in radii])
    k0 = _power_moment(f, v, xs.gamma + xs.nu)
    _, sup_ratio = angular_ratio_bounds(xs)
    dim = grid.dim
    ceiling = sup_ratio * 2.0 ** (dim - 1) * (1 - 2.0 ** (-xs.nu)) / xs.nu * sphere_area(dim - 1) * k0
    lam = float(np.max(scaled)) if len(scaled) else 0.0
    rep = KernelBoundsReport(v, lam, radii, scaled, ceiling)
    rep.passed = bool(lam <= ceiling * (1 + tolerance) + 1e-300)
    return rep


# ----------------------------------------------------------------- lifted set


@dataclass
class LiftedSet:
    r: float
    level: float
    m: float
    measured: float
    inputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.measured >= self.m

    def to_report(self) -> dict:
        return report("lifted_set", self.inputs, {"set_measure": self.measured},
                      {"r": self.r, "level": self.level, "m": self.m}, self.passed)


def lifted_set(f: DistributionFunction, M0: float | None = None, M1: float | None = None, E0: float | None = None,
               H0_tilde: float | None = None) -> LiftedSet:
    """(r, level, m) from mass, energy and unsigned-entropy bounds; measures |{f > level} in B_r|.

    Bounds left as None are taken from f itself (H0_tilde as sum f |log f| h^N).
    """
    state = moments(f)
    M0 = state.mass if M0 is None else M0
    M1 = state.mass if M1 is None else M1
    E0 = state.energy if E0 is None else E0
    H0_tilde = entropy_abs(f) if H0_tilde is None else H0_tilde
    if not M1 > 0:
        raise ValueError("lifted set needs a positive lower mass bound M1")
    dim = f.grid.dim
    r = math.sqrt(2.0 * E0 / M1) * (1.0 + 1e-6)
    level = M1 / (8.0 * ball_volume(dim, r))
    m = M1 / 8.0 * math.exp(-8.0 * H0_tilde / M1)
    measured = float(np.count_nonzero(_lifted_mask(f, r, level))) * f.grid.cell_volume
    return LiftedSet(r, level, m, measured, {"M0": M0, "M1": M1, "E0": E0, "H0_tilde": H0_tilde})


def _lifted_mask(f: DistributionFunction, r: float, level: float) -> np.ndarray:
    inside = np.linalg.norm(f.grid.points(), axis=-1) < r
    return inside & (f.values > level)


# ---------------------------------------------------------- cone lower bound


def cone_lower_bound(xs: CrossSection, f: DistributionFunction, v, direction_samples: int | None = None,
                     lifted: LiftedSet | None = None) -> KernelBoundsReport:
    """Directions sigma whose plane integral of 1_S(v + w) |w|^(gamma+nu+1) is large.

    S = {f > level} in B_r from the lifted set. The plane integrals over the
    sphere add up to kappa = |S^(N-2)| int_S |z - v|^(gamma+nu) dz, so at least
    half of kappa sits on A = {sigma : integral >= kappa / (2 |S^(N-1)|)}, which
    forces |A| >= kappa / (2 sup integral). On A,
    K_f(v, v + rho sigma) >= level * 2^(N-1) * inf(b / b_ref) * integral * rho^(-N-nu).
    """
    grid = f.grid
    dim = grid.dim
    v = np.asarray(v, dtype=float)
    n = direction_samples or (256 if dim == 2 else 1024)
    n += n % 2
    lifted = lifted or lifted_set(f)
    mask = _lifted_mask(f, lifted.r, lifted.level)
    dirs = sphere_directions(dim, n)
    rep = KernelBoundsReport(v, directions=dirs, band_bound=lifted.r + grid.h)
    if not np.any(mask):
        rep.in_cone = np.zeros(n, dtype=bool)
        rep.cone_measure = 0.0
        rep.passed = False
        rep.notes.append("S = {f > level} in B_r is empty")
        return rep
    ind = DistributionFunction(grid, mask.astype(float))
    s = xs.gamma + xs.nu + 1.0
    half = np.array([hyperplane_moment(ind, v, e, s) for e in dirs[: n // 2]])
    plane = np.concatenate([half, half])
    area = sphere_area(dim)
    kappa = sphere_area(dim - 1) * _power_moment(ind, v, s - 1.0)
    threshold = kappa / (2.0 * area)
    in_cone = plane >= threshold
    inf_ratio, _ = angular_ratio_bounds(xs)
    rep.plane_integrals = plane
    rep.in_cone = in_cone
    rep.kappa = kappa
    rep.cone_threshold = threshold
    rep.cone_measure = float(np.count_nonzero(in_cone)) / n * area
    top = float(np.max(plane))
    if s >= 0:
        top = max(top, (lifted.r + float(np.linalg.norm(v))) ** s * ball_volume(dim, lifted.r))
    rep.guaranteed_measure = kappa / (2.0 * top) if top > 0 else 0.0
    if not np.any(in_cone):
        rep.passed = False
        rep.notes.append("no direction passes the plane-integral threshold")
        return rep
    rep.lam = lifted.level * 2.0 ** (dim - 1) * inf_ratio * float(np.min(plane[in_cone]))
    rep.band = float(np.max(np.abs(dirs[in_cone] @ v)))
    rep.mu_fit = rep.cone_measure * (1.0 + float(np.linalg.norm(v)))
    # the discrete sphere rule resolves |A| only up to one sample per cone boundary
    slack = 2.0 * (dim - 1) * area / n
    rep.passed = bool(rep.cone_measure + slack >= rep.guaranteed_measure and rep.band <= rep.band_bound)
    return rep


# ------------------------------------------------------------ cone coercivity


@dataclass(frozen=True)
class Cone:
    """{y : y . axis >= cos_aperture |y|}; cos_aperture = -1 is the whole space."""

    axis: np.ndarray
    cos_aperture: float = 0.0

    def contains(self, y: np.ndarray) -> np.ndarray:
        a = np.asarray(self.axis, dtype=float)
        a = a / np.linalg.norm(a)
        r = np.linalg.norm(y, axis=-1)
        return y @ a >= self.cos_aperture * r - 1e-12 * r

    def measure(self, dim: int) -> float:
        c = float(np.clip(self.cos_aperture, -1.0, 1.0))
        if dim == 2:
            return 2.0 * math.acos(c)
        return 2.0 * math.pi * (1.0 - c)


@dataclass(frozen=True)
class DirectionCone:
    """Cone spanned by the sampled directions flagged in ``mask`` (nearest-sample membership)."""

    directions: np.ndarray
    mask: np.ndarray

    def contains(self, y: np.ndarray) -> np.ndarray:
        flat = y.reshape(-1, y.shape[-1])
        r = np.linalg.norm(flat, axis=1)
        unit = flat / np.where(r > 0, r, 1.0)[:, None]
        nearest = np.argmax(unit @ self.directions.T, axis=1)
        return self.mask[nearest].reshape(y.shape[:-1]) & (r.reshape(y.shape[:-1]) > 0)

    def measure(self, dim: int) -> float:
        return float(np.count_nonzero(self.mask)) / len(self.mask) * sphere_area(dim)


@dataclass
class CoercivityReport:
    v: np.ndarray
    m: float
    mu: float
    p: float
    lhs: float
    rhs: float
    remainder: float
    lp_integral: float
    constant: float
    outside: float = 0.0

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    @property
    def passed(self) -> bool:
        return self.lhs >= self.rhs

    def to_report(self) -> dict:
        return report("cone_coercivity", {"v": self.v, "p": self.p, "mu": self.mu, "m": self.m},
                      {"lhs": self.lhs, "outside_box": self.outside, "excluded_remainder": self.remainder,
                       "lp_integral": self.lp_integral},
                      {"rhs": self.rhs, "c": self.constant, "ratio": self.ratio}, self.passed)


def coercivity_constant(dim: int, nu: float, p: float) -> float:
    return 1.0 / (2.0 * nu) * (dim * 2.0**p) ** (-nu / dim)


def cone_coercivity(f: DistributionFunction, nu: float, p: float = 1.0, v=None, cone=None) -> CoercivityReport:
    """int_cone (m - f(v')) |v - v'|^(-N-nu) dv' against c m^(1+p nu/N) mu^(1+nu/N) / (int_cone f^p)^(nu/N).

    v defaults to the argmax of f. The left side is a grid sum over the cone
    cells with |v' - v| >= h plus the part of the cone outside the grid box,
    where f = 0 and the integral is m int rho(omega)^(-nu) / nu d omega. The
    excluded ball (where m - f >= 0) is estimated from second differences and
    reported separately, so the left side is a lower bound for the full
    integral. The center cell counts towards int f^p.
    """
    grid = f.grid
    dim = grid.dim
    vals = f.values
    if v is None:
        flat = int(np.argmax(vals.reshape(-1)))
        idx = np.unravel_index(flat, grid.shape)
        v = grid.node(idx)
    v = np.asarray(v, dtype=float)
    m = float(interpolate(f, v))
    cone = cone if cone is not None else Cone(np.eye(dim)[0], -1.0)
    mu = cone.measure(dim)
    y = _offsets(grid, v)
    r = np.linalg.norm(y, axis=-1)
    inside = cone.contains(y)
    far = inside & (r >= grid.h * (1 - 1e-9))
    vol = grid.cell_volume
    outside = m * _outside_box_integral(grid, v, cone, nu)
    lhs = float(np.sum((m - vals[far]) * r[far] ** (-dim - nu))) * vol + outside
    centre = r < 0.5 * grid.h
    lp = float(np.sum(np.abs(vals[inside | centre]) ** p)) * vol
    c = coercivity_constant(dim, nu, p)
    rhs = c * m ** (1 + p * nu / dim) * mu ** (1 + nu / dim) / lp ** (nu / dim) if lp > 0 else math.inf
    curv = 0.0
    idx = grid.index_of(v)
    if idx is not None:
        for a in range(dim):
            lo = list(idx)
            hi = list(idx)
            lo[a] -= 1
            hi[a] += 1
            if lo[a] >= 0 and hi[a] < grid.n:
                d2 = vals[tuple(hi)] + vals[tuple(lo)] - 2 * vals[idx]
                curv = max(curv, -d2 / grid.h**2)
    remainder = 0.5 * curv * mu * grid.h ** (2 - nu) / (2 - nu)
    return CoercivityReport(v, m, mu, p, lhs, rhs, remainder, lp, c, outside)


def _outside_box_integral(grid: VelocityGrid, v: np.ndarray, cone, nu: float, samples: int = 8192) -> float:
    """int over the cone outside the cells' box of |y|^(-N-nu) dy, with y = v' - v."""
    dim = grid.dim
    dirs = sphere_directions(dim, samples)
    dirs = dirs[cone.contains(dirs)]
    if len(dirs) == 0:
        return 0.0
    edge = grid.L + grid.h / 2
    with np.errstate(divide="ignore"):
        dist = np.where(dirs > 0, (edge - v) / dirs, np.where(dirs < 0, (-edge - v) / dirs, np.inf))
    rho = np.min(dist, axis=1)
    return float(np.sum(rho ** (-nu))) / nu * sphere_area(dim) / samples


# ------------------------------------------------------------ max principle


@dataclass
class MaxPrincipleRecord:
    t: float
    index: tuple[int, ...]
    v: np.ndarray
    m: float
    q1: float
    q2: float
    c_tilde: float
    C_tilde: float

    @property
    def passed(self) -> bool:
        return self.q1 <= 0.0

    def to_report(self) -> dict:
        return report("max_principle", {"t": self.t, "index": self.index, "v": self.v},
                      {"m": self.m, "q1": self.q1, "q2": self.q2, "c_tilde": self.c_tilde, "C_tilde": self.C_tilde},
                      {"q1": 0.0}, self.passed)


def max_principle_report(xs: CrossSection, f: DistributionFunction, operator=None, t: float = 0.0) -> MaxPrincipleRecord:
    """Q1(f, f) and Q2(f, f) at the argmax of f from the full-grid operator, with c~ and C~."""
    from .solver import CollisionOperator, max_record

    op = operator or CollisionOperator(xs, f.grid)
    parts = op.parts(f)
    rec = max_record(xs, f.grid, f.values, parts, t)
    return MaxPrincipleRecord(rec.t, rec.index, rec.v, rec.m, rec.q1, rec.q2, rec.c_tilde, rec.C_tilde)


def records_from_trajectory(traj) -> list[MaxPrincipleRecord]:
    return [MaxPrincipleRecord(r.t, r.index, r.v, r.m, r.q1, r.q2, r.c_tilde, r.C_tilde) for r in traj.max_records]


# ---------------------------------------------------------------- L^inf envelope


@dataclass
class LinftyEnvelope:
    a: float
    b: float
    beta: float
    times: np.ndarray
    m: np.ndarray
    records: list[MaxPrincipleRecord]
    fit_window: tuple[float, float]
    fit_residual: float
    dominated: bool
    increasing: bool = False

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError(f"envelope exponent must be positive, got {self.beta}")

    def barrier(self, t) -> np.ndarray:
        return self.a + self.b * np.asarray(t, dtype=float) ** (-self.beta)

    @property
    def passed(self) -> bool:
        return self.dominated and not self.increasing

    def to_report(self) -> dict:
        return report("linfty_envelope", {"beta": self.beta, "fit_window": self.fit_window},
                      {"a": self.a, "b": self.b, "fit_residual": self.fit_residual, "m_first": self.m[0],
                       "m_last": self.m[-1], "q1_max": max((r.q1 for r in self.records), default=0.0)},
                      {"dominated_after_burn_in": self.dominated}, self.passed)


def envelope_exponent(dim: int, nu: float, gamma: float, p: float | None = None) -> float:
    """beta = N / (p nu), with p = 1 when gamma + nu > 0."""
    if p is None:
        if gamma + nu <= 0:
            raise ValueError("gamma + nu <= 0 needs an explicit integrability exponent p > 1")
        p = 1.0
    return dim / (p * nu)


def linfty_envelope(traj, nu: float, gamma: float = 0.0, p: float | None = None) -> LinftyEnvelope:
    """Fit m(t) = max f(t) by a + b t^(-beta) on [t_end/4, t_end] with beta fixed.

    b >= 0 comes from nonnegative least squares; a is then raised to the
    smallest value that dominates the fit window, and domination is checked on
    every recorded time from the first step on.
    """
    times = np.asarray(traj.times, dtype=float)
    m = np.asarray(traj.maxima, dtype=float)
    records = records_from_trajectory(traj)
    dim = traj.grid.dim
    beta = envelope_exponent(dim, nu, gamma, p)
    t_end = float(times[-1])
    window = (t_end / 4.0, t_end)
    sel = (times >= window[0] - 1e-12) & (times > 0)
    after = times > 0
    increasing = bool(len(m) > 2 and np.all(np.diff(m[after]) > 0))
    if np.count_nonzero(sel) < 2:
        a = float(np.max(m[after])) if np.any(after) else float(np.max(m))
        return LinftyEnvelope(a, 0.0, beta, times, m, records, window, 0.0, True, increasing)
    tw, mw = times[sel], m[sel]
    design = np.column_stack([np.ones_like(tw), tw ** (-beta)])
    coef, resid = nnls(design, mw)
    b = float(coef[1])
    a = float(np.max(mw - b * tw ** (-beta)))
    fit_resid = float(np.sqrt(np.mean((design @ coef - mw) ** 2)))
    barrier = a + b * times[after] ** (-beta)
    dominated = bool(np.all(m[after] <= barrier * (1 + 1e-12)))
    return LinftyEnvelope(a, b, beta, times, m, records, window, fit_resid, dominated, increasing)


# ------------------------------------------------------------- lower bound


@dataclass
class LowerBoundReport:
    R: float
    T: float
    times: np.ndarray
    minima: np.ndarray
    value: float
    late_nondecreasing: bool

    @property
    def passed(self) -> bool:
        return self.value > 0 and self.late_nondecreasing

    def to_report(self) -> dict:
        return report("lower_bound", {"R": self.R, "T": self.T},
                      {"min_at_T": self.value, "min_at_0": self.minima[0], "late_nondecreasing": self.late_nondecreasing},
                      {"min_at_T": 0.0}, self.passed)


def ball_minimum(grid: VelocityGrid, values: np.ndarray, R: float) -> float:
    inside = np.linalg.norm(grid.points(), axis=-1) <= R + 1e-12
    return float(np.min(values[inside]))


def lower_bound_probe(traj, R: float, T: float | None = None) -> LowerBoundReport:
    """min over B_R of f at each snapshot, the value at T and monotonicity over the last quarter."""
    times = np.asarray(traj.snapshot_times, dtype=float)
    minima = np.array([ball_minimum(traj.grid, s, R) for s in traj.snapshots])
    T = float(times[-1]) if T is None else T
    k = int(np.argmin(np.abs(times - T)))
    late = (times >= times[0] + 0.75 * (T - times[0]) - 1e-12) & (times <= T + 1e-12)
    seq = minima[late]
    tol = 1e-12 * max(1.0, float(np.max(np.abs(seq)))) if len(seq) else 0.0
    nondecreasing = bool(np.all(np.diff(seq) >= -tol))
    return LowerBoundReport(R, T, times, minima, float(minima[k]), nondecreasing)


# ----------------------------------------------------------------- Holder


def space_seminorm(grid: VelocityGrid, values: np.ndarray | Sequence[np.ndarray], radius: float, alpha: float) -> float:
    """sup over snapshots and node pairs in B_radius with |v - w| >= 2h of |f(v) - f(w)| / |v - w|^alpha."""
    from scipy.spatial.distance import pdist

    frames = [values] if isinstance(values, np.ndarray) and values.shape == grid.shape else list(values)
    inside = np.linalg.norm(grid.points(), axis=-1) <= radius + 1e-12
    pts = grid.points()[inside]
    dist = pdist(pts)
    keep = dist >= 2 * grid.h * (1 - 1e-9)
    dist = dist[keep]
    best = 0.0
    for fr in frames:
        diff = pdist(np.asarray(fr)[inside][:, None], "cityblock")[keep]
        best = max(best, float(np.max(diff / dist**alpha, initial=0.0)))
    return best


def time_seminorm(times: np.ndarray, frames: Sequence[np.ndarray], grid: VelocityGrid, radius: float,
                  alpha: float, nu: float) -> float:
    """sup over nodes in B_radius and t != s of |f(t,v) - f(s,v)| / |t - s|^(alpha/nu)."""
    inside = np.linalg.norm(grid.points(), axis=-1) <= radius + 1e-12
    data = np.stack([np.asarray(fr)[inside] for fr in frames])
    t = np.asarray(times, dtype=float)
    best = 0.0
    for i in range(len(t)):
        for j in range(i + 1, len(t)):
            gap = abs(t[j] - t[i])
            if gap == 0:
                continue
            best = max(best, float(np.max(np.abs(data[j] - data[i]))) / gap ** (alpha / nu))
    return best


@dataclass
class HolderReport:
    window: tuple[float, float]
    radius: float
    ladder: tuple[float, ...]
    space: dict[float, float]
    time: dict[float, float]
    alpha: float | None
    refined_space: dict[float, float] | None = None

    def change(self, alpha: float) -> float | None:
        """Ratio (larger / smaller) of the space seminorm between the two grids."""
        if self.refined_space is None:
            return None
        a, b = self.space[alpha], self.refined_space[alpha]
        lo, hi = min(a, b), max(a, b)
        if hi == 0:
            return 1.0
        return hi / lo if lo > 0 else math.inf

    @property
    def passed(self) -> bool:
        return self.alpha is not None

    def to_report(self) -> dict:
        return report("holder", {"window": self.window, "radius": self.radius, "ladder": self.ladder},
                      {"space": {str(k): v for k, v in self.space.items()},
                       "time": {str(k): v for k, v in self.time.items()},
                       "refined_space": None if self.refined_space is None else
                       {str(k): v for k, v in self.refined_space.items()}, "alpha": self.alpha},
                      {"stability_factor": 2.0}, self.passed)


def _window_frames(traj, window):
    times = np.asarray(traj.snapshot_times, dtype=float)
    sel = (times >= window[0] - 1e-12) & (times <= window[1] + 1e-12)
    return times[sel], [traj.snapshots[i] for i in np.flatnonzero(sel)]


def holder_seminorm(traj, nu: float, R: float, window: tuple[float, float] | None = None,
                    ladder: Sequence[float] = ALPHA_LADDER, refined=None) -> HolderReport:
    """Space and time seminorms on window x B_{R/2}.

    The time seminorm uses the exponent alpha / nu. With a refined trajectory,
    alpha is the largest ladder value whose space seminorm changes by less than
    a factor 2 between the grids; without one, alpha is the largest value whose
    seminorm is finite. A function constant in the window gets alpha = 1.
    """
    t_end = float(traj.snapshot_times[-1])
    window = window or (t_end / 2.0, t_end)
    radius = R / 2.0
    times, frames = _window_frames(traj, window)
    ladder = tuple(sorted(ladder))
    space = {a: space_seminorm(traj.grid, frames, radius, a) for a in ladder}
    tsemi = {a: time_seminorm(times, frames, traj.grid, radius, a, nu) for a in ladder}
    refined_space = None
    if refined is not None:
        _, rframes = _window_frames(refined, window)
        refined_space = {a: space_seminorm(refined.grid, rframes, radius, a) for a in ladder}
    rep = HolderReport(window, radius, ladder, space, tsemi, None, refined_space)
    ok = [a for a in ladder if math.isfinite(space[a]) and (refined is None or rep.change(a) < 2.0)]
    rep.alpha = max(ok) if ok else None
    return rep
