"""Pointwise evaluators of the collision operator Q(f, g)(v).

Three independent routes are provided:

* ``q_direct``: the (v_star, sigma) integral, pairing sigma with its mirror
  image about v - v_star so that grazing contributions combine into second
  differences.
* ``q1``: the jump part, integral of (g(v') - g(v)) K_f(v, v') dv', with the
  kernel K_f obtained from a hyperplane integral of f.
* ``q2``: the multiplicative part (Btilde * f)(v) g(v).

Angle convention: theta is measured between sigma and v - v_star, so theta -> 0
is the grazing limit v' -> v. In the chart (v, v', w) this gives
|v' - v| = r sin(theta/2) and |w| = r cos(theta/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, ndimage, signal

from .grid import DistributionFunction, VelocityGrid, interpolate
from .xsection import BtildeModel, CrossSection, DomainError, btilde, sphere_area


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class CollisionGeometry:
    v: np.ndarray
    v_star: np.ndarray
    sigma: np.ndarray
    r: float
    cos_theta: float
    v_prime: np.ndarray
    v_star_prime: np.ndarray
    w: np.ndarray


def geometry_forward(v, v_star, sigma) -> CollisionGeometry:
    v = np.asarray(v, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    r = float(np.linalg.norm(v_star - v))
    if r == 0.0:
        raise DomainError("degenerate collision geometry: v_star == v")
    if abs(np.linalg.norm(sigma) - 1.0) > 1e-12:
        raise DomainError("sigma must be a unit vector")
    mid = 0.5 * (v + v_star)
    v_prime = mid + 0.5 * r * sigma
    v_star_prime = mid - 0.5 * r * sigma
    cos_theta = float(np.dot(sigma, v - v_star) / r)
    return CollisionGeometry(v, v_star, sigma, r, cos_theta, v_prime, v_star_prime, v_star_prime - v)


def geometry_from_chart(v, v_prime, w) -> CollisionGeometry:
    """Inverse map (v, v', w) -> (v, v_star, sigma) with w orthogonal to v' - v."""
    v = np.asarray(v, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    w = np.asarray(w, dtype=float)
    y = v_prime - v
    if np.linalg.norm(y) == 0.0:
        raise DomainError("chart needs v' != v")
    if abs(np.dot(w, y)) > 1e-12 * max(1.0, np.linalg.norm(w) * np.linalg.norm(y)):
        raise DomainError("w must be orthogonal to v' - v")
    v_star = v_prime + w
    r = float(np.linalg.norm(v_star - v))
    sigma = (2.0 * v_prime - v - v_star) / r
    return geometry_forward(v, v_star, sigma / np.linalg.norm(sigma))


# ---------------------------------------------------------- interpolation


SPLINE_PAD = 20


def spline_coefficients(values: np.ndarray) -> np.ndarray:
    """Cubic B-spline coefficients of zero-padded data (pad width SPLINE_PAD)."""
    padded = np.pad(np.asarray(values, dtype=float), SPLINE_PAD)
    return ndimage.spline_filter(padded, order=3, mode="grid-constant")


class SmoothField:
    """Cubic-spline view of a grid field, zero outside the box.

    Used where second differences below the cell size matter (grazing
    collisions); multilinear interpolation has kinks at every node there.
    The data are padded with zeros before filtering so the spline
    interpolates every node, including those on the boundary.
    """

    def __init__(self, grid: VelocityGrid, values: np.ndarray, order: int = 3):
        self.grid = grid
        self.order = order
        vals = np.asarray(values, dtype=float)
        self.values = vals
        self.pad = SPLINE_PAD if order > 1 else 0
        self.coeffs = spline_coefficients(vals) if order > 1 else vals

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        grid = self.grid
        pts = np.asarray(pts, dtype=float)
        shape = pts.shape[:-1]
        flat = pts.reshape(-1, grid.dim)
        s = (flat + grid.L) / grid.h
        inside = np.all((s >= -1e-12) & (s <= grid.n - 1 + 1e-12), axis=1)
        out = ndimage.map_coordinates(
            self.coeffs, (s + self.pad).T, order=self.order, mode="grid-constant", cval=0.0, prefilter=False
        )
        out[~inside] = 0.0
        return out.reshape(shape)


def _field(f, grid: VelocityGrid, order: int):
    """Spline view of grid data; a plain function of velocity is passed through untruncated."""
    if isinstance(f, DistributionFunction):
        return SmoothField(grid, f.values, order)
    if callable(f) and not isinstance(f, np.ndarray):
        return lambda pts: np.asarray(f(np.asarray(pts, dtype=float)), dtype=float)
    return SmoothField(grid, np.asarray(f, dtype=float), order)


# ---------------------------------------------------------- hyperplanes


def _perp_basis(direction: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the hyperplane orthogonal to ``direction``."""
    d = direction / np.linalg.norm(direction)
    if len(d) == 2:
        return np.array([[-d[1], d[0]]])
    m = np.eye(3)
    m[:, 0] = d
    q, _ = np.linalg.qr(m)
    return q[:, 1:].T


def _support_radius(grid: VelocityGrid, v: np.ndarray) -> float:
    return float(np.linalg.norm(np.abs(v) + grid.L))


@dataclass(frozen=True)
class HyperplaneNodes:
    offsets: np.ndarray  # (k, dim) points w on the hyperplane
    radius: np.ndarray  # |w| at the nodes
    edges: tuple[np.ndarray, np.ndarray]  # radial cell bounds for each node


def hyperplane_nodes(
    grid: VelocityGrid, v: np.ndarray, direction: np.ndarray, spacing: float | None = None, n_azimuth: int = 48
) -> HyperplaneNodes:
    """Polar nodes on {w : w . direction = 0}: radial midpoints, uniform azimuth."""
    spacing = grid.h / 2 if spacing is None else spacing
    extent = _support_radius(grid, v)
    n_rad = max(2, int(math.ceil(extent / spacing)))
    edges = np.linspace(0.0, n_rad * spacing, n_rad + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    basis = _perp_basis(np.asarray(direction, dtype=float))
    if grid.dim == 2:
        units = np.stack([basis[0], -basis[0]])
    else:
        alpha = 2 * math.pi * (np.arange(n_azimuth) + 0.5) / n_azimuth
        units = np.cos(alpha)[:, None] * basis[0] + np.sin(alpha)[:, None] * basis[1]
    offsets = (units[:, None, :] * mids[None, :, None]).reshape(-1, grid.dim)
    radius = np.tile(mids, len(units))
    lo = np.tile(edges[:-1], len(units))
    hi = np.tile(edges[1:], len(units))
    return HyperplaneNodes(offsets, radius, (lo, hi))


def _azimuth_weight(dim: int, n_azimuth: int) -> float:
    return 1.0 if dim == 2 else 2 * math.pi / n_azimuth


def _power_cell_weights(lo: np.ndarray, hi: np.ndarray, p: float) -> np.ndarray:
    """Exact integral of rho^p over [lo, hi] (p > -1)."""
    if abs(p + 1) < 1e-14:
        raise DomainError("non-integrable radial weight")
    return (hi ** (p + 1) - lo ** (p + 1)) / (p + 1)


def hyperplane_moment(
    f: DistributionFunction | SmoothField,
    v,
    direction,
    exponent: float,
    spacing: float | None = None,
    n_azimuth: int = 48,
) -> float:
    """Integral of f(v + w) |w|^exponent over the hyperplane orthogonal to ``direction``."""
    grid = f.grid
    v = np.asarray(v, dtype=float)
    nodes = hyperplane_nodes(grid, v, direction, spacing, n_azimuth)
    p = exponent + grid.dim - 2
    cell = _power_cell_weights(*nodes.edges, p) * _azimuth_weight(grid.dim, n_azimuth)
    pts = v + nodes.offsets
    vals = f(pts) if isinstance(f, SmoothField) else interpolate(f, pts)
    return float(np.sum(vals * cell))


@dataclass(frozen=True)
class KernelEvaluation:
    v: np.ndarray
    v_prime: np.ndarray
    value: float
    nodes: int
    error_estimate: float


def _kernel_weights(xs: CrossSection, y_norm: np.ndarray, nodes: HyperplaneNodes, n_azimuth: int) -> np.ndarray:
    """Matrix of quadrature weights: K(|y|) = sum_k f_k W[|y|, k].

    The radial weight r^(gamma-N+2) b |w|^(N-2) behaves like |w|^p near w = 0 with
    p = gamma + nu + 1 + N - 2; that power is integrated exactly per cell and the
    remaining bounded factor is sampled at the cell midpoint.
    """
    dim = xs.dim
    p = xs.gamma + xs.nu + 1 + dim - 2
    rho = nodes.radius[None, :]
    y = np.asarray(y_norm, dtype=float)[:, None]
    r = np.sqrt(y**2 + rho**2)
    sin_half = y / r
    cos_half = rho / r
    log_w = (xs.gamma - dim + 2) * np.log(r) + xs.log_angular(sin_half, cos_half) + (dim - 2) * np.log(rho)
    bounded = np.exp(log_w - p * np.log(rho))
    cell = _power_cell_weights(*nodes.edges, p)[None, :] * _azimuth_weight(dim, n_azimuth)
    return 2.0 ** (dim - 1) / y * bounded * cell


def kernel_Kf(
    xs: CrossSection,
    f: DistributionFunction,
    v,
    v_prime,
    spacing: float | None = None,
    n_azimuth: int = 48,
) -> KernelEvaluation:
    """K_f(v, v') from the hyperplane integral through v orthogonal to v' - v."""
    v = np.asarray(v, dtype=float)
    v_prime = np.asarray(v_prime, dtype=float)
    y = v_prime - v
    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        raise DomainError("K_f(v, v') is undefined at v' = v")
    spacing = f.grid.h / 2 if spacing is None else spacing

    def value_at(step: float) -> tuple[float, int]:
        nodes = hyperplane_nodes(f.grid, v, y, step, n_azimuth)
        fv = interpolate(f, v + nodes.offsets)
        wts = _kernel_weights(xs, np.array([ynorm]), nodes, n_azimuth)[0]
        return float(np.sum(fv * wts)), len(fv)

    fine, count = value_at(spacing)
    coarse, _ = value_at(2 * spacing)
    return KernelEvaluation(v, v_prime, fine, count, abs(fine - coarse) / 3.0)


# ------------------------------------------------------------ directions


def half_sphere_directions(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions covering the sphere up to sign, with weights summing to |S^{N-1}|/2."""
    if dim == 2:
        phi = math.pi * (np.arange(n) + 0.5) / n
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        return dirs, np.full(n, math.pi / n)
    # Gauss-Legendre in cos(polar) on the upper hemisphere, uniform azimuth
    n_pol = max(2, int(round(math.sqrt(n / 2))))
    n_az = max(4, 2 * n_pol)
    x, wx = np.polynomial.legendre.leggauss(n_pol)
    ct = 0.5 * (x + 1)
    wct = 0.5 * wx
    az = 2 * math.pi * (np.arange(n_az) + 0.5) / n_az
    st = np.sqrt(1 - ct**2)
    dirs = np.stack(
        [np.outer(st, np.cos(az)).ravel(), np.outer(st, np.sin(az)).ravel(), np.repeat(ct, n_az)], axis=1
    )
    wts = np.repeat(wct, n_az) * (2 * math.pi / n_az)
    return dirs, wts


# ------------------------------------------------------------------ Q1


@dataclass(frozen=True)
class Q1Result:
    value: float
    truncated: float
    remainder: float
    y_min: float


def _radial_panels(a: float, b: float, max_width: float, nodes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes on [a, b]: geometric panels from a, then width <= max_width."""
    edges = [a]
    while edges[-1] < b:
        width = min(edges[-1], max_width)
        edges.append(min(b, edges[-1] + width))
    edges = np.array(edges)
    x, w = np.polynomial.legendre.leggauss(nodes)
    lo, hi = edges[:-1, None], edges[1:, None]
    pts = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
    wts = 0.5 * (hi - lo) * w[None, :]
    return pts.ravel(), wts.ravel()


def q1_detail(
    xs: CrossSection,
    f: DistributionFunction,
    g: DistributionFunction | np.ndarray | Callable,
    v,
    y_min: float | None = None,
    n_directions: int | None = None,
    order: int = 3,
    plane_spacing: float | None = None,
) -> Q1Result:
    """Symmetrized jump integral 1/2 int (g(v+y) + g(v-y) - 2 g(v)) K_f(v, v+y) dy.

    |y| < y_min is replaced by its second-order estimate, using the measured
    second difference at |y| = y_min and K_f ~ |y|^(-N-nu) below it. ``g`` may
    be grid data (zero outside the box) or a function of velocity, in which
    case |y| is cut at the box support radius.
    """
    grid = f.grid
    dim = grid.dim
    v = np.asarray(v, dtype=float)
    y_min = grid.h / 2 if y_min is None else y_min
    n_directions = (64 if dim == 2 else 200) if n_directions is None else n_directions
    # q1 nearly cancels q2, so the hyperplane moment needs more than the h/2 default
    plane_spacing = grid.h / 8 if plane_spacing is None else plane_spacing
    gs = _field(g, grid, order)
    fs = _field(f, grid, order)
    g0 = float(gs(v[None, :])[0])
    dirs, dw = half_sphere_directions(dim, n_directions)
    extent = _support_radius(grid, v)
    rho, rw = _radial_panels(y_min, extent, grid.h)
    nu = xs.nu
    trunc = 0.0
    rem = 0.0
    for d, wd in zip(dirs, dw):
        ys = rho[:, None] * d[None, :]
        second = gs(v + ys) + gs(v - ys) - 2.0 * g0
        ends = np.array([y_min * d])
        second_min = float((gs(v + ends) + gs(v - ends))[0] - 2.0 * g0)
        if xs.is_reference:
            phi = hyperplane_moment(fs, v, d, xs.gamma + nu + 1, plane_spacing)
            scaled = np.full(len(rho) + 1, 2.0 ** (dim - 1) * phi)
        else:
            nodes = hyperplane_nodes(grid, v, d, plane_spacing)
            fv = fs(v + nodes.offsets)
            radii = np.concatenate([[y_min], rho])
            kvals = _kernel_weights(xs, radii, nodes, 48) @ fv
            scaled = kvals * radii ** (dim + nu)
        # K rho^(N-1) = scaled rho^(-1-nu)
        body = 0.5 * np.sum(second * scaled[1:] * rho ** (-1 - nu) * rw)
        # grid data vanish beyond the box, a function of velocity is not continued there
        tail = -g0 * scaled[-1] * extent ** (-nu) / nu if isinstance(gs, SmoothField) else 0.0
        near = 0.5 * second_min / y_min**2 * scaled[0] * y_min ** (2 - nu) / (2 - nu)
        # both y and -y directions carry the same contribution
        trunc += 2 * wd * (body + tail)
        rem += 2 * wd * near
    return Q1Result(trunc + rem, trunc, rem, y_min)


def q1(xs, f, g, v, y_min: float | None = None, **kw) -> float:
    return q1_detail(xs, f, g, v, y_min, **kw).value


# ------------------------------------------------------------------ Q2


@lru_cache(maxsize=64)
def cell_average_power(dim: int, gamma: float) -> float:
    """Integral of |x|^gamma over the unit cube [-1/2, 1/2]^dim (gamma > -dim)."""
    # cone decomposition over the 2*dim faces: int_face |p|^gamma (p.n) / (gamma + dim) dA
    if dim == 2:
        val, _ = integrate.quad(lambda y: (0.25 + y * y) ** (gamma / 2), -0.5, 0.5, epsabs=1e-14)
    else:
        val, _ = integrate.dblquad(
            lambda z, y: (0.25 + y * y + z * z) ** (gamma / 2), -0.5, 0.5, -0.5, 0.5, epsabs=1e-13
        )
    return 2 * dim * 0.5 * val / (gamma + dim)


def convolution_weights(grid: VelocityGrid, model: BtildeModel) -> np.ndarray:
    """C |y|^gamma h^N on all lattice offsets, with the analytic average in the center cell."""
    k = np.arange(-(grid.n - 1), grid.n) * grid.h
    mesh = np.meshgrid(*([k] * grid.dim), indexing="ij")
    dist = np.sqrt(sum(m**2 for m in mesh))
    center = (grid.n - 1,) * grid.dim
    with np.errstate(divide="ignore"):
        wts = model.coefficient * dist**model.gamma * grid.cell_volume
    wts[center] = model.coefficient * cell_average_power(grid.dim, float(model.gamma)) * grid.h ** (
        grid.dim + model.gamma
    )
    return wts


def btilde_convolution(f: DistributionFunction, model: BtildeModel) -> np.ndarray:
    """(Btilde * f) at every grid node."""
    wts = convolution_weights(f.grid, model)
    full = signal.fftconvolve(f.values, wts, mode="full")
    sl = tuple(slice(f.grid.n - 1, 2 * f.grid.n - 1) for _ in range(f.grid.dim))
    return full[sl]


def q2(
    xs: CrossSection,
    f: DistributionFunction,
    g: DistributionFunction | np.ndarray | Callable,
    v,
    model: BtildeModel | None = None,
) -> float:
    grid = f.grid
    model = btilde(xs) if model is None else model
    v = np.asarray(v, dtype=float)
    conv = btilde_convolution(f, model)
    # off the nodes the same cubic spline as the other routes, with its undershoot
    # below zero removed for nonnegative data
    cs = max(float(SmoothField(grid, conv, 3)(v[None, :])[0]), 0.0)
    if callable(g) and not isinstance(g, (DistributionFunction, np.ndarray)):
        return float(cs * np.asarray(g(v[None, :]), dtype=float).reshape(-1)[0])
    gvals = g.values if isinstance(g, DistributionFunction) else np.asarray(g, dtype=float)
    idx = grid.index_of(v)
    if idx is not None:
        return float(conv[idx] * gvals[idx])
    gv = float(SmoothField(grid, gvals, 3)(v[None, :])[0])
    if isinstance(g, DistributionFunction):
        gv = max(gv, 0.0)
    return cs * gv


# -------------------------------------------------------------- direct Q


@dataclass(frozen=True)
class DirectResult:
    value: float
    truncated: float
    remainder: float
    theta_min: float
    evaluations: int


def _grazing_moment(xs: CrossSection, theta_min: float) -> float:
    """Integral of theta^2 b(theta) sin^(N-2)(theta) over (0, theta_min)."""
    dim = xs.dim

    def integrand(t):
        # b grows like t^(1-N-nu) with exponent above -4, so this floor cannot overflow
        t = max(t, 1e-60)
        return t * t * float(xs.b(np.array(t))) * math.sin(t) ** (dim - 2) * t ** (xs.nu - 1)

    # factor out theta^(1-nu) for the algebraic-weight rule
    val, _ = integrate.quad(integrand, 0.0, theta_min, weight="alg", wvar=(1 - xs.nu, 0.0))
    return val


def _theta_panels(theta_min: float, max_width: float, nodes: int = 4) -> tuple[np.ndarray, np.ndarray]:
    return _radial_panels(theta_min, math.pi, max_width, nodes)


def q_direct_detail(
    xs: CrossSection,
    f: DistributionFunction,
    g: DistributionFunction | np.ndarray | Callable,
    v,
    theta_min: float | None = None,
    order: int = 3,
    n_azimuth: int = 16,
    arc_step: float | None = None,
    reach: float = 3.0,
) -> DirectResult:
    """Quadrature of int int (f(v_star') g(v') - f(v_star) g(v)) B d sigma d v_star.

    v_star runs over the lattice v + h Z^N inside [-reach L, reach L]^N; with grid
    data for f and g this loses nothing, since both vanish beyond the box, and
    reach only matters for a g given as a function of velocity. sigma runs over
    theta >= theta_min, paired with its mirror image about v - v_star. The cut
    theta < theta_min is replaced by its second-order estimate.
    """
    grid = f.grid
    dim = grid.dim
    h = grid.h
    v = np.asarray(v, dtype=float)
    theta_min = h / grid.L if theta_min is None else theta_min
    arc_step = h if arc_step is None else arc_step
    fs = _field(f, grid, order)
    gs = _field(g, grid, order)
    g0 = float(gs(v[None, :])[0])

    m = int(math.ceil(reach * grid.L / h)) + 1
    k = np.arange(-m, m + 1)
    offsets = np.stack(np.meshgrid(*([k] * dim), indexing="ij"), axis=-1).reshape(-1, dim) * h
    v_star = v + offsets
    keep = np.all(np.abs(v_star) <= reach * grid.L + 1e-9, axis=1)
    v_star = v_star[keep]
    r = np.linalg.norm(v_star - v, axis=1)
    mid = 0.5 * (v + v_star)
    # the post-collision sphere (center mid, radius r/2) must reach the box
    gap = np.linalg.norm(np.maximum(np.abs(mid) - grid.L, 0.0), axis=1)
    keep = (r > 0) & (gap <= 0.5 * r + 1e-12)
    v_star, r, mid = v_star[keep], r[keep], mid[keep]
    f_star = fs(v_star)
    u = (v - v_star) / r[:, None]

    grazing = _grazing_moment(xs, theta_min)
    if dim == 2:
        perps = [np.stack([-u[:, 1], u[:, 0]], axis=1)]
        az_weight = 1.0
        perp_pairs = [(perps[0], 1.0)]
    else:
        e1 = np.cross(u, np.where(np.abs(u[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]]))
        e1 /= np.linalg.norm(e1, axis=1)[:, None]
        e2 = np.cross(u, e1)
        half = n_azimuth // 2
        alphas = 2 * math.pi * (np.arange(half) + 0.5) / n_azimuth
        perp_pairs = [(math.cos(a) * e1 + math.sin(a) * e2, 1.0) for a in alphas]
        az_weight = 2 * math.pi / n_azimuth

    total = 0.0
    remainder = 0.0
    evals = 0
    # group v_star into shells so that the sigma step keeps the arc length below arc_step
    shell_edges = np.concatenate([[0.0], np.geomspace(h, max(r.max(), 2 * h), 24)])
    shell = np.clip(np.searchsorted(shell_edges, r, side="left") - 1, 0, len(shell_edges) - 2)
    for s_idx in np.unique(shell):
        sel = shell == s_idx
        r_hi = shell_edges[s_idx + 1]
        width = min(math.pi / 4, 2 * arc_step / r_hi)
        thetas, tw = _theta_panels(theta_min, width)
        thetas = np.concatenate([[theta_min], thetas])
        ct, st = np.cos(thetas), np.sin(thetas)
        b = xs.b(thetas) * st ** (dim - 2)
        rs = r[sel]
        rg = rs**xs.gamma
        us = u[sel]
        mids = mid[sel]
        loss = f_star[sel] * g0
        acc = np.zeros((len(rs), len(thetas)))
        for perp, _ in perp_pairs:
            ps = perp[sel]
            for sign in (1.0, -1.0):
                sig = ct[None, :, None] * us[:, None, :] + sign * st[None, :, None] * ps[:, None, :]
                half_r = 0.5 * rs[:, None, None]
                vp = mids[:, None, :] + half_r * sig
                vsp = mids[:, None, :] - half_r * sig
                acc += fs(vsp) * gs(vp) - loss[:, None]
                evals += 2 * vp.shape[0] * vp.shape[1]
        weight = az_weight * rg
        total += float(np.sum(weight[:, None] * acc[:, 1:] * (b[1:] * tw)[None, :]))
        remainder += float(np.sum(weight * acc[:, 0]) / theta_min**2 * grazing)
    vol = grid.cell_volume
    return DirectResult((total + remainder) * vol, total * vol, remainder * vol, theta_min, evals)


def q_direct(xs, f, g, v, theta_min: float | None = None, **kw) -> float:
    return q_direct_detail(xs, f, g, v, theta_min, **kw).value


# -------------------------------------------- change-of-variables checks


@dataclass(frozen=True)
class IdentityReport:
    lhs: float
    rhs: float
    relative_gap: float
    nodes_lhs: int
    nodes_rhs: int


def _gauss_radial(n: int, extent: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * extent * (x + 1), 0.5 * extent * w


def _sphere_rule(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Full-sphere rule: n equispaced angles (N=2) or about n product nodes (N=3)."""
    if dim == 2:
        phi = 2 * math.pi * np.arange(n) / n
        return np.stack([np.cos(phi), np.sin(phi)], axis=1), np.full(n, 2 * math.pi / n)
    dirs, wts = half_sphere_directions(3, max(8, n // 2))
    return np.concatenate([dirs, -dirs]), np.concatenate([wts, wts])


def _plane_rule(sigma: np.ndarray, n_rad: int, n_az: int, extent: float):
    """Nodes w on the hyperplane orthogonal to each row of sigma, with area weights."""
    dim = sigma.shape[1]
    if dim == 2:
        x, wx = np.polynomial.legendre.leggauss(2 * n_rad)
        s = extent * x
        perp = np.stack([-sigma[:, 1], sigma[:, 0]], axis=1)
        return perp[:, None, :] * s[None, :, None], np.broadcast_to(extent * wx, (len(sigma), len(s)))
    rho, wr = _gauss_radial(n_rad, extent)
    alpha = 2 * math.pi * np.arange(n_az) / n_az
    pts = []
    for sg in sigma:
        b = _perp_basis(sg)
        u = np.cos(alpha)[:, None] * b[0] + np.sin(alpha)[:, None] * b[1]
        pts.append((u[:, None, :] * rho[None, :, None]).reshape(-1, 3))
    wts = (np.ones(n_az)[:, None] * (wr * rho)[None, :]).ravel() * (2 * math.pi / n_az)
    return np.stack(pts), np.broadcast_to(wts, (len(sigma), len(wts)))


def verify_change_of_variables(
    F: Callable[..., np.ndarray],
    dim: int,
    nodes: int = 10_000,
    extent: float = 6.0,
    v: np.ndarray | None = None,
) -> IdentityReport:
    """Both sides of the (v_star, sigma) -> (v', w) change of variables.

    ``F(v, v_star, sigma, v_prime, v_star_prime)`` takes arrays of points.
    Left: int int F d sigma d v_star with v_star in polar coordinates around v.
    Right: 2^(N-1) int |v'-v|^-1 int_{w.(v'-v)=0} F r^(2-N) dw dv'.
    """
    v = np.zeros(dim) if v is None else np.asarray(v, dtype=float)
    per = max(4, int(round(nodes ** (1.0 / (2 * dim - 1)))))

    # left side
    rho, wr = _gauss_radial(per, extent)
    dirs, wd = _sphere_rule(dim, per if dim == 2 else per * per)
    sig, ws = _sphere_rule(dim, per if dim == 2 else per * per)
    vs = v + (rho[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    wvs = (wr[:, None] * rho[:, None] ** (dim - 1) * wd[None, :]).ravel()
    rr = np.linalg.norm(vs - v, axis=1)
    mid = 0.5 * (v + vs)
    vp = mid[:, None, :] + 0.5 * rr[:, None, None] * sig[None, :, :]
    vsp = mid[:, None, :] - 0.5 * rr[:, None, None] * sig[None, :, :]
    vals = F(v, vs[:, None, :], sig[None, :, :], vp, vsp)
    lhs = float(np.sum(vals * wvs[:, None] * ws[None, :]))
    n_lhs = vals.size

    # right side
    rho2, wr2 = _gauss_radial(per + 1, extent)
    dirs2, wd2 = _sphere_rule(dim, per + 1 if dim == 2 else (per + 1) ** 2)
    plane_pts, plane_w = _plane_rule(dirs2, per + 1, per + 1, extent)
    rhs = 0.0
    n_rhs = 0
    for j, d in enumerate(dirs2):
        y = rho2[:, None] * d[None, :]
        w = plane_pts[j]
        vp2 = v + y[:, None, :]
        vs2 = vp2 + w[None, :, :]
        vsp2 = v + w[None, :, :]
        rr2 = np.sqrt(rho2[:, None] ** 2 + np.sum(w**2, axis=1)[None, :])
        sig2 = (vp2 - v - w[None, :, :]) / rr2[:, :, None]
        vals2 = F(v, vs2, sig2, np.broadcast_to(vp2, vs2.shape), np.broadcast_to(vsp2, vs2.shape))
        # dv' = rho^(N-1) d rho d omega; the 1/|v'-v| factor leaves rho^(N-2)
        jac = 2.0 ** (dim - 1) * rho2[:, None] ** (dim - 2) * rr2 ** (2 - dim)
        rhs += float(np.sum(vals2 * jac * wr2[:, None] * plane_w[j][None, :]) * wd2[j])
        n_rhs += vals2.size
    scale = max(abs(lhs), abs(rhs))
    gap = 0.0 if scale == 0 else abs(lhs - rhs) / scale
    return IdentityReport(lhs, rhs, gap, n_lhs, n_rhs)


@dataclass(frozen=True)
class DualPolarReport:
    plane_side: float
    radial_side: float
    constant: float


def dual_polar(g: Callable[[np.ndarray], np.ndarray], dim: int, nodes: int = 10_000, extent: float = 8.0) -> DualPolarReport:
    """int_sphere int_{w.sigma=0} g dS d sigma versus int g(z)/|z| dz; ratio is c_N."""
    per = max(4, int(round(nodes ** (1.0 / (2 * dim - 2)))))
    sig, ws = _sphere_rule(dim, per if dim == 2 else per * per)
    pts, pw = _plane_rule(sig, per, per, extent)
    plane = float(np.sum(g(pts) * pw * ws[:, None]))
    rho, wr = _gauss_radial(per + 3, extent)
    dirs, wd = _sphere_rule(dim, per + 5 if dim == 2 else (per + 3) ** 2)
    z = rho[:, None, None] * dirs[None, :, :]
    radial = float(np.sum(g(z) * (wr * rho ** (dim - 2))[:, None] * wd[None, :]))
    return DualPolarReport(plane, radial, plane / radial)
