"""Velocity grids, distribution functions and their macroscopic moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


@dataclass(frozen=True)
class VelocityGrid:
    """Uniform Cartesian grid covering ``[-L, L]^dim`` with ``n`` points per axis."""

    dim: int
    L: float
    n: int

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8:
            raise ValueError(f"need at least 8 points per axis, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"extent L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.n)

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (dim,)``."""
        axes = np.meshgrid(*([self.axis] * self.dim), indexing="ij")
        return np.stack(axes, axis=-1)

    def speed_squared(self) -> np.ndarray:
        return np.sum(self.points() ** 2, axis=-1)

    def node(self, index: Iterable[int]) -> np.ndarray:
        return np.array([-self.L + i * self.h for i in index], dtype=float)

    def index_of(self, v: np.ndarray) -> tuple[int, ...] | None:
        """Index of the node at ``v``, or None if ``v`` is not (to roundoff) a node."""
        s = (np.asarray(v, dtype=float) + self.L) / self.h
        k = np.rint(s)
        if np.any(np.abs(s - k) > 1e-9) or np.any(k < 0) or np.any(k > self.n - 1):
            return None
        return tuple(int(i) for i in k)

    def refined(self, n: int) -> "VelocityGrid":
        return VelocityGrid(self.dim, self.L, n)


@dataclass(frozen=True)
class DistributionFunction:
    """Nonnegative samples of a velocity distribution on a grid (read-only)."""

    grid: VelocityGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if np.any(vals < 0):
            raise ValueError(f"distribution must be nonnegative (min {vals.min():.3e})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def scaled(self, factor: float) -> "DistributionFunction":
        return DistributionFunction(self.grid, factor * self.values)

    def __call__(self, v: np.ndarray) -> np.ndarray | float:
        return interpolate(self, v)


@dataclass(frozen=True)
class MacroscopicState:
    mass: float
    energy: float
    entropy: float
    k0: float | None = None
    k0_tilde: float | None = None
    lp: tuple[float, float, float] | None = None


def from_function(grid: VelocityGrid, func) -> DistributionFunction:
    """Sample ``func(points)`` (points of shape ``(..., dim)``) on the grid nodes."""
    return DistributionFunction(grid, np.asarray(func(grid.points()), dtype=float))


def maxwellian(
    grid: VelocityGrid,
    mass: float = 1.0,
    temperature: float = 1.0,
    center: np.ndarray | None = None,
) -> DistributionFunction:
    c = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    d2 = np.sum((grid.points() - c) ** 2, axis=-1)
    norm = mass / (2.0 * math.pi * temperature) ** (grid.dim / 2)
    return DistributionFunction(grid, norm * np.exp(-d2 / (2.0 * temperature)))


def discrete_maxwellian(f: DistributionFunction, tol: float = 1e-13, max_iter: int = 50) -> DistributionFunction:
    """Grid function exp(a + b.v + c|v|^2) with the same discrete mass, momentum and energy as f.

    Newton iteration on (a, b, c), started from the continuous Maxwellian
    with f's moments.
    """
    grid = f.grid
    vol = grid.cell_volume
    pts = grid.points().reshape(-1, grid.dim)
    basis = np.column_stack([np.ones(len(pts)), pts, np.sum(pts**2, axis=1)])
    vals = f.values.reshape(-1)
    target = basis.T @ vals * vol
    mass = target[0]
    if not mass > 0:
        raise ValueError("discrete Maxwellian needs positive mass")
    u = target[1:-1] / mass
    temp = (target[-1] / mass - u @ u) / grid.dim
    coef = np.concatenate([[math.log(mass / (2 * math.pi * temp) ** (grid.dim / 2)) - u @ u / (2 * temp)],
                           u / temp, [-1.0 / (2 * temp)]])
    for _ in range(max_iter):
        m = np.exp(basis @ coef)
        resid = basis.T @ m * vol - target
        if np.max(np.abs(resid) / np.maximum(np.abs(target), mass)) < tol:
            break
        jac = (basis * m[:, None]).T @ basis * vol
        coef = coef - np.linalg.solve(jac, resid)
    return DistributionFunction(grid, np.exp(basis @ coef).reshape(grid.shape))


def interpolate(f: DistributionFunction, v: np.ndarray) -> np.ndarray | float:
    """Multilinear interpolation of ``f`` at points ``v`` (shape ``(..., dim)``).

    Exact at nodes, 0 outside ``[-L, L]^dim``. Returns a float for a single point.
    """
    grid = f.grid
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    pts = v.reshape(-1, grid.dim)
    s = (pts + grid.L) / grid.h
    inside = np.all((s >= -1e-12) & (s <= grid.n - 1 + 1e-12), axis=1)
    s = np.clip(s, 0.0, grid.n - 1)
    i0 = np.minimum(np.floor(s).astype(np.intp), grid.n - 2)
    t = s - i0
    out = np.zeros(len(pts))
    vals = f.values
    for corner in range(2**grid.dim):
        bits = [(corner >> d) & 1 for d in range(grid.dim)]
        w = np.ones(len(pts))
        idx = []
        for d, bit in enumerate(bits):
            w = w * (t[:, d] if bit else 1.0 - t[:, d])
            idx.append(i0[:, d] + bit)
        out += w * vals[tuple(idx)]
    out[~inside] = 0.0
    if single:
        return float(out[0])
    return out.reshape(v.shape[:-1])


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def entropy(f: DistributionFunction) -> float:
    """H = sum f log f h^N with 0 log 0 = 0."""
    return float(np.sum(_xlogx(f.values)) * f.grid.cell_volume)


def entropy_abs(f: DistributionFunction) -> float:
    """Sum of f |log f| h^N, the unsigned entropy bound used by the lifted set."""
    return float(np.sum(np.abs(_xlogx(f.values))) * f.grid.cell_volume)


def centered_moment_sup(f: DistributionFunction, s: float, probes: np.ndarray) -> float:
    """max over probes v of sum |w|^s f(v + w) h^N, summed over nodes v + w."""
    pts = f.grid.points().reshape(-1, f.grid.dim)
    vals = f.values.reshape(-1)
    best = 0.0
    for v in np.atleast_2d(probes):
        d = np.linalg.norm(pts - v, axis=1)
        with np.errstate(divide="ignore"):
            wts = np.where(d > 0, d**s, 0.0 if s != 0 else 1.0)
        best = max(best, float(np.sum(wts * vals)) * f.grid.cell_volume)
    return best


def weighted_lp(f: DistributionFunction, p: float, q: float) -> float:
    """sum (1 + |v|)^q f^p h^N."""
    speed = np.sqrt(f.grid.speed_squared())
    return float(np.sum((1.0 + speed) ** q * f.values**p) * f.grid.cell_volume)


def moments(
    f: DistributionFunction,
    gamma: float | None = None,
    nu: float | None = None,
    probes: np.ndarray | None = None,
    lp: tuple[float, float] | None = None,
) -> MacroscopicState:
    vol = f.grid.cell_volume
    mass = float(np.sum(f.values)) * vol
    energy = float(np.sum(f.grid.speed_squared() * f.values)) * vol
    k0 = k0_tilde = None
    if probes is not None and gamma is not None:
        k0 = centered_moment_sup(f, gamma, probes)
        if nu is not None:
            k0_tilde = centered_moment_sup(f, gamma + nu, probes)
    lp_rec = None
    if lp is not None:
        lp_rec = (lp[0], lp[1], weighted_lp(f, lp[0], lp[1]))
    return MacroscopicState(mass, energy, entropy(f), k0, k0_tilde, lp_rec)


def save_csv(f: DistributionFunction, path: str | Path) -> None:
    g = f.grid
    pts = g.points().reshape(-1, g.dim)
    vals = f.values.reshape(-1)
    lines = [f"# N={g.n} L={g.L!r} dim={g.dim}"]
    for p, val in zip(pts, vals):
        lines.append(",".join(repr(float(x)) for x in (*p, val)))
    Path(path).write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path) -> DistributionFunction:
    text = Path(path).read_text().splitlines()
    header = text[0]
    if not header.startswith("#"):
        raise ValueError(f"missing grid header in {path}")
    fields = dict(tok.split("=", 1) for tok in header[1:].split())
    grid = VelocityGrid(int(fields["dim"]), float(fields["L"]), int(fields["N"]))
    rows = np.array([[float(x) for x in line.split(",")] for line in text[1:] if line.strip()])
    if rows.shape != (grid.n**grid.dim, grid.dim + 1):
        raise ValueError(f"expected {grid.n**grid.dim} rows of {grid.dim + 1} columns in {path}")
    return DistributionFunction(grid, rows[:, -1].reshape(grid.shape))
