"""Full-grid collision operator and explicit time integration.

The jump part is applied as a lattice sum with weights
W(v, y) = 2^(N-1) |y|^(-N-nu) Phi(v, y/|y|) h^N, which is the exact kernel for
the reference cross section. Phi(v, e), the hyperplane moment of f through v
orthogonal to e, is cached on a table of directions once per operator
evaluation. Three pieces complete the sum:

* near-field weights: cells close to v carry the second moment of the kernel
  over the cell, and the leftover (anisotropic) part plus the center cell is
  applied as nonnegative second differences, so the scheme stays monotone;
* a far tail: the kernel mass outside the lattice cells, acting as pure loss;
* the multiplicative part (Btilde * f) g by FFT convolution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .collision import SPLINE_PAD, btilde_convolution, spline_coefficients
from .grid import DistributionFunction, MacroscopicState, VelocityGrid, discrete_maxwellian, moments
from .xsection import BtildeModel, CrossSection, DomainError, btilde

log = logging.getLogger(__name__)

# the installed TBB is too old for numba; pick the OpenMP layer explicitly
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"


def configure_threads(requested: int | None = None) -> int:
    """Use up to ``requested`` (default 8) numba threads, capped by the machine."""
    cap = numba.config.NUMBA_NUM_THREADS
    k = 8 if requested is None else int(requested)
    k = max(1, min(k, cap))
    numba.set_num_threads(k)
    return k


# ------------------------------------------------------------ interpolation


@njit(cache=True, inline="always")
def _b3(t):
    t = abs(t)
    if t < 1.0:
        return (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0
    if t < 2.0:
        u = 2.0 - t
        return u * u * u / 6.0
    return 0.0


@njit(cache=True)
def _eval2(c, order, pad, L, h, n, x, y):
    sx = (x + L) / h
    sy = (y + L) / h
    if sx < -1e-12 or sy < -1e-12 or sx > n - 1 + 1e-12 or sy > n - 1 + 1e-12:
        return 0.0
    if order == 1:
        ix = min(int(math.floor(sx)), n - 2)
        iy = min(int(math.floor(sy)), n - 2)
        tx = sx - ix
        ty = sy - iy
        return (
            c[ix, iy] * (1 - tx) * (1 - ty)
            + c[ix + 1, iy] * tx * (1 - ty)
            + c[ix, iy + 1] * (1 - tx) * ty
            + c[ix + 1, iy + 1] * tx * ty
        )
    sx += pad
    sy += pad
    ix = int(math.floor(sx))
    iy = int(math.floor(sy))
    fx = sx - ix
    fy = sy - iy
    wx0, wx1, wx2, wx3 = _b3(fx + 1.0), _b3(fx), _b3(1.0 - fx), _b3(2.0 - fx)
    wy0, wy1, wy2, wy3 = _b3(fy + 1.0), _b3(fy), _b3(1.0 - fy), _b3(2.0 - fy)
    acc = 0.0
    for a, wa in ((ix - 1, wx0), (ix, wx1), (ix + 1, wx2), (ix + 2, wx3)):
        acc += wa * (c[a, iy - 1] * wy0 + c[a, iy] * wy1 + c[a, iy + 1] * wy2 + c[a, iy + 2] * wy3)
    return acc


@njit(cache=True)
def _eval3(c, order, pad, L, h, n, x, y, z):
    sx = (x + L) / h
    sy = (y + L) / h
    sz = (z + L) / h
    lim = n - 1 + 1e-12
    if sx < -1e-12 or sy < -1e-12 or sz < -1e-12 or sx > lim or sy > lim or sz > lim:
        return 0.0
    if order == 1:
        ix = min(int(math.floor(sx)), n - 2)
        iy = min(int(math.floor(sy)), n - 2)
        iz = min(int(math.floor(sz)), n - 2)
        tx = sx - ix
        ty = sy - iy
        tz = sz - iz
        acc = 0.0
        for a in range(2):
            wa = tx if a else 1 - tx
            for b in range(2):
                wb = ty if b else 1 - ty
                for d in range(2):
                    wd = tz if d else 1 - tz
                    acc += c[ix + a, iy + b, iz + d] * wa * wb * wd
        return acc
    sx += pad
    sy += pad
    sz += pad
    ix = int(math.floor(sx))
    iy = int(math.floor(sy))
    iz = int(math.floor(sz))
    acc = 0.0
    for a in range(ix - 1, ix + 3):
        wa = _b3(sx - a)
        for b in range(iy - 1, iy + 3):
            wb = wa * _b3(sy - b)
            for d in range(iz - 1, iz + 3):
                acc += c[a, b, d] * wb * _b3(sz - d)
    return acc


# ------------------------------------------------------------- directions


@dataclass(frozen=True)
class DirectionTable:
    """Direction bins: angles on [0, pi) for N=2, a (polar, azimuth) grid for N=3."""

    dim: int
    n_polar: int
    n_azimuth: int

    @property
    def size(self) -> int:
        return self.n_azimuth if self.dim == 2 else self.n_polar * self.n_azimuth

    def vectors(self) -> np.ndarray:
        if self.dim == 2:
            a = math.pi * (np.arange(self.n_azimuth) + 0.5) / self.n_azimuth
            return np.stack([np.cos(a), np.sin(a)], axis=1)
        th = math.pi * (np.arange(self.n_polar) + 0.5) / self.n_polar
        ph = 2 * math.pi * (np.arange(self.n_azimuth) + 0.5) / self.n_azimuth
        st, ct = np.sin(th)[:, None], np.cos(th)[:, None]
        return np.stack(
            [(st * np.cos(ph)).ravel(), (st * np.sin(ph)).ravel(), np.repeat(ct, self.n_azimuth, axis=0).ravel()],
            axis=1,
        )


@njit(cache=True)
def _lookup(phi_row, dim, n_pol, n_az, ex, ey, ez):
    """Interpolate a cached Phi row at unit vector e (Phi is even in e)."""
    if dim == 2:
        ang = math.atan2(ey, ex)
        if ang < 0.0:
            ang += math.pi
        if ang >= math.pi:
            ang -= math.pi
        t = ang / (math.pi / n_az) - 0.5
        k0 = int(math.floor(t))
        fr = t - k0
        a = k0 % n_az
        b = (k0 + 1) % n_az
        return phi_row[a] * (1.0 - fr) + phi_row[b] * fr
    th = math.acos(max(-1.0, min(1.0, ez)))
    ph = math.atan2(ey, ex)
    if ph < 0.0:
        ph += 2 * math.pi
    tp = th / (math.pi / n_pol) - 0.5
    ta = ph / (2 * math.pi / n_az) - 0.5
    if tp < 0.0:
        tp = 0.0
    if tp > n_pol - 1:
        tp = n_pol - 1.0
    p0 = min(int(math.floor(tp)), n_pol - 2)
    fp = tp - p0
    a0 = int(math.floor(ta))
    fa = ta - a0
    a1 = (a0 + 1) % n_az
    a0 = a0 % n_az
    return (
        phi_row[p0 * n_az + a0] * (1 - fp) * (1 - fa)
        + phi_row[p0 * n_az + a1] * (1 - fp) * fa
        + phi_row[(p0 + 1) * n_az + a0] * fp * (1 - fa)
        + phi_row[(p0 + 1) * n_az + a1] * fp * fa
    )


# ---------------------------------------------------------------- Phi cache


@njit(cache=True)
def _segment(v, u, L, dim):
    """Parameter interval [lo, hi] of s with v + s u inside the box (lo > hi if empty)."""
    lo = -1e300
    hi = 1e300
    for a in range(dim):
        if abs(u[a]) < 1e-14:
            if abs(v[a]) > L:
                return 1.0, -1.0
            continue
        s1 = (-L - v[a]) / u[a]
        s2 = (L - v[a]) / u[a]
        if s1 > s2:
            s1, s2 = s2, s1
        lo = max(lo, s1)
        hi = min(hi, s2)
    return lo, hi


@njit(cache=True)
def _cell_range(lo, hi, spacing, n_cells):
    """Radial cells [k0, k1) whose midpoints can fall in rho in [lo, hi] (rho >= 0)."""
    lo = max(lo, 0.0)
    if hi < lo:
        return 0, 0
    k0 = max(0, int(math.floor(lo / spacing - 0.5)))
    k1 = min(n_cells, int(math.ceil(hi / spacing + 0.5)))
    return k0, k1


@njit(parallel=True, cache=True)
def _phi_2d(c, order, pad, L, h, n, dirs, cell_w, spacing):
    nodes = n * n
    nd = dirs.shape[0]
    out = np.zeros((nodes, nd))
    n_cells = cell_w.shape[0]
    for idx in prange(nodes):
        v = np.empty(2)
        u = np.empty(2)
        v[0] = -L + (idx // n) * h
        v[1] = -L + (idx % n) * h
        for d in range(nd):
            u[0] = -dirs[d, 1]
            u[1] = dirs[d, 0]
            lo, hi = _segment(v, u, L + 1e-9, 2)
            acc = 0.0
            k0, k1 = _cell_range(lo, hi, spacing, n_cells)
            for k in range(k0, k1):
                rho = (k + 0.5) * spacing
                acc += cell_w[k] * _eval2(c, order, pad, L, h, n, v[0] + rho * u[0], v[1] + rho * u[1])
            k0, k1 = _cell_range(-hi, -lo, spacing, n_cells)
            for k in range(k0, k1):
                rho = (k + 0.5) * spacing
                acc += cell_w[k] * _eval2(c, order, pad, L, h, n, v[0] - rho * u[0], v[1] - rho * u[1])
            out[idx, d] = max(acc, 0.0)
    return out


@njit(parallel=True, cache=True)
def _phi_3d(c, order, pad, L, h, n, dirs, n_pol, n_az, cell_w, spacing, n_alpha):
    nodes = n * n * n
    nd = dirs.shape[0]
    out = np.zeros((nodes, nd))
    half = n_pol // 2
    for idx in prange(nodes):
        vx = -L + (idx // (n * n)) * h
        vy = -L + ((idx // n) % n) * h
        vz = -L + (idx % n) * h
        n_cells = cell_w.shape[0]
        vv = np.empty(3)
        vv[0] = vx
        vv[1] = vy
        vv[2] = vz
        uu = np.empty(3)
        for ip in range(half):
            for ia in range(n_az):
                d = ip * n_az + ia
                ex, ey, ez = dirs[d, 0], dirs[d, 1], dirs[d, 2]
                st = math.sqrt(ex * ex + ey * ey)
                ct = ez
                cph = ex / st
                sph = ey / st
                # orthonormal basis of the plane orthogonal to e
                ax, ay, az = ct * cph, ct * sph, -st
                bx, by, bz = -sph, cph, 0.0
                acc = 0.0
                for j in range(n_alpha):
                    al = 2 * math.pi * (j + 0.5) / n_alpha
                    ux = math.cos(al) * ax + math.sin(al) * bx
                    uy = math.cos(al) * ay + math.sin(al) * by
                    uz = math.cos(al) * az + math.sin(al) * bz
                    uu[0] = ux
                    uu[1] = uy
                    uu[2] = uz
                    lo, hi = _segment(vv, uu, L + 1e-9, 3)
                    k0, k1 = _cell_range(lo, hi, spacing, n_cells)
                    for k in range(k0, k1):
                        rho = (k + 0.5) * spacing
                        acc += cell_w[k] * _eval3(c, order, pad, L, h, n, vx + rho * ux, vy + rho * uy, vz + rho * uz)
                val = max(acc * 2 * math.pi / n_alpha, 0.0)
                out[idx, d] = val
                # antipodal bin carries the same value
                out[idx, (n_pol - 1 - ip) * n_az + (ia + n_az // 2) % n_az] = val
    return out


# ------------------------------------------------------ per-node geometry


@njit(cache=True)
def _node_coords(idx, dim, L, h, n):
    v = np.zeros(3)
    if dim == 2:
        v[0] = -L + (idx // n) * h
        v[1] = -L + (idx % n) * h
    else:
        v[0] = -L + (idx // (n * n)) * h
        v[1] = -L + ((idx // n) % n) * h
        v[2] = -L + (idx % n) * h
    return v


@njit(parallel=True, cache=True)
def _node_terms(phi, dim, n_pol, n_az, L, h, n, nu, r_near, sub, quad_dirs, quad_w):
    """Per-node far tail, cell-averaged near weights and second-moment matrix.

    A cell k with |k|_inf <= r_near gets W_k = int_cell K |y|^2 / |y_k|^2, sampled
    on m^N points (m = 2 sub, sub, sub / 2 for rings 1, 2 and beyond), so the lattice matches
    the cell's second moment. The traceless rest of each such cell,
    1/2 (int_cell K y y^T - W_k y_k y_k^T), and the center cell 1/2 int K y y^T
    are collected in C, which multiplies D^2 g. Far cells use point weights.
    """
    nodes = phi.shape[0]
    pref = 2.0 ** (dim - 1)
    side = 2 * r_near + 1
    n_near = side**dim
    tail = np.zeros(nodes)
    corr = np.zeros((nodes, dim, dim))
    near = np.zeros((nodes, n_near))
    edge = L + 0.5 * h
    vol = h**dim
    for idx in prange(nodes):
        v = _node_coords(idx, dim, L, h, n)
        row = phi[idx]
        c = np.zeros((dim, dim))
        t_acc = 0.0
        for q in range(quad_dirs.shape[0]):
            e = quad_dirs[q]
            p = _lookup(row, dim, n_pol, n_az, e[0], e[1], e[2])
            rex = 1e300
            mx = 0.0
            for a in range(dim):
                if e[a] > 1e-14:
                    rex = min(rex, (edge - v[a]) / e[a])
                elif e[a] < -1e-14:
                    rex = min(rex, (-edge - v[a]) / e[a])
                mx = max(mx, abs(e[a]))
            t_acc += quad_w[q] * p * rex ** (-nu) / nu
            # center cell: radial integral of rho^(2-N-nu) rho^(N-1) up to the cell face
            s = quad_w[q] * p * (0.5 * h / mx) ** (2.0 - nu) / (2.0 - nu)
            for a in range(dim):
                for b in range(dim):
                    c[a, b] += 0.5 * pref * s * e[a] * e[b]
        tail[idx] = pref * t_acc
        y = np.zeros(3)
        yk = np.zeros(3)
        second = np.zeros((dim, dim))
        for code in range(n_near):
            k0 = code // (side ** (dim - 1)) - r_near
            k1 = (code // side) % side - r_near if dim == 3 else code % side - r_near
            k2 = code % side - r_near if dim == 3 else 0
            if k0 == 0 and k1 == 0 and k2 == 0:
                continue
            ring = max(abs(k0), abs(k1), abs(k2))
            m = 2 * sub if ring == 1 else (sub if ring == 2 else max(2, sub // 2))
            dv = vol / m**dim
            second[:, :] = 0.0
            total = m**dim
            for j in range(total):
                j0 = j // (m ** (dim - 1))
                j1 = (j // m) % m if dim == 3 else j % m
                j2 = j % m if dim == 3 else 0
                y[0] = (k0 + (j0 + 0.5) / m - 0.5) * h
                y[1] = (k1 + (j1 + 0.5) / m - 0.5) * h
                y[2] = (k2 + (j2 + 0.5) / m - 0.5) * h if dim == 3 else 0.0
                r = math.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
                kv = pref * r ** (-dim - nu) * _lookup(row, dim, n_pol, n_az, y[0] / r, y[1] / r, y[2] / r) * dv
                for a in range(dim):
                    for b in range(dim):
                        second[a, b] += kv * y[a] * y[b]
            yk[0] = k0 * h
            yk[1] = k1 * h
            yk[2] = k2 * h
            r2 = yk[0] ** 2 + yk[1] ** 2 + yk[2] ** 2
            tr = 0.0
            for a in range(dim):
                tr += second[a, a]
            # weight matching the cell's second moment; the traceless rest goes to C
            w = tr / r2
            for a in range(dim):
                for b in range(dim):
                    c[a, b] += 0.5 * (second[a, b] - w * yk[a] * yk[b])
            near[idx, code] = w
        corr[idx] = c
    return tail, corr, near


# ------------------------------------------------------------ application


@njit(cache=True)
def _second_differences(gf, idx_vec, n, dim, stencil_w, stencil_off):
    g0 = gf[idx_vec[3]]
    corr = 0.0
    cdiag = 0.0
    for s in range(stencil_off.shape[0]):
        w = stencil_w[s]
        if w == 0.0:
            continue
        gp = 0.0
        gm = 0.0
        ok_p = True
        ok_m = True
        ip = 0
        im = 0
        for a in range(dim):
            xp = idx_vec[a] + stencil_off[s, a]
            xm = idx_vec[a] - stencil_off[s, a]
            ok_p = ok_p and 0 <= xp < n
            ok_m = ok_m and 0 <= xm < n
            ip = ip * n + xp
            im = im * n + xm
        if ok_p:
            gp = gf[ip]
        if ok_m:
            gm = gf[im]
        corr += w * (gp + gm - 2.0 * g0)
        cdiag += 2.0 * w
    return corr, cdiag


@njit(parallel=True, cache=True)
def _apply_2d(phi, bin0, frac, g, n, pref_tab, near, r_near, tail, stencil_w, stencil_off, out_q1, out_diag):
    nodes = n * n
    n_az = phi.shape[1]
    side = 2 * r_near + 1
    gf = g.ravel()
    for idx in prange(nodes):
        i = idx // n
        j = idx % n
        row = phi[idx]
        acc = 0.0
        wsum = 0.0
        for a in range(n):
            ox = a - i
            for b in range(n):
                oy = b - j
                if abs(ox) <= r_near and abs(oy) <= r_near:
                    w = near[idx, (ox + r_near) * side + oy + r_near]
                else:
                    k0 = bin0[ox + n - 1, oy + n - 1]
                    fr = frac[ox + n - 1, oy + n - 1]
                    w = pref_tab[ox + n - 1, oy + n - 1] * (row[k0] * (1.0 - fr) + row[(k0 + 1) % n_az] * fr)
                acc += w * g[a, b]
                wsum += w
        idx_vec = np.array([i, j, 0, idx])
        corr, cdiag = _second_differences(gf, idx_vec, n, 2, stencil_w[idx], stencil_off)
        out_q1[i, j] = acc - g[i, j] * (wsum + tail[idx]) + corr
        out_diag[i, j] = wsum + tail[idx] + cdiag


@njit(parallel=True, cache=True)
def _apply_3d(phi, n_pol, n_az, g, n, pref_tab, near, r_near, tail, stencil_w, stencil_off, out_q1, out_diag):
    nodes = n * n * n
    side = 2 * r_near + 1
    gf = g.ravel()
    for idx in prange(nodes):
        i = idx // (n * n)
        j = (idx // n) % n
        k = idx % n
        row = phi[idx]
        acc = 0.0
        wsum = 0.0
        for a in range(n):
            ox = a - i
            for b in range(n):
                oy = b - j
                for d in range(n):
                    oz = d - k
                    if abs(ox) <= r_near and abs(oy) <= r_near and abs(oz) <= r_near:
                        w = near[idx, ((ox + r_near) * side + oy + r_near) * side + oz + r_near]
                    else:
                        r = math.sqrt(ox * ox + oy * oy + oz * oz)
                        w = pref_tab[ox + n - 1, oy + n - 1, oz + n - 1] * _lookup(
                            row, 3, n_pol, n_az, ox / r, oy / r, oz / r
                        )
                    acc += w * g[a, b, d]
                    wsum += w
        idx_vec = np.array([i, j, k, idx])
        corr, cdiag = _second_differences(gf, idx_vec, n, 3, stencil_w[idx], stencil_off)
        out_q1[i, j, k] = acc - g[i, j, k] * (wsum + tail[idx]) + corr
        out_diag[i, j, k] = wsum + tail[idx] + cdiag


def stencil_vectors(dim: int) -> np.ndarray:
    """Lattice directions (one per +-pair) carrying the second-difference correction."""
    if dim == 2:
        vecs = [(1, 0), (0, 1), (1, 1), (1, -1), (1, 2), (2, 1), (1, -2), (2, -1)]
    else:
        vecs = []
        for a in (-1, 0, 1):
            for b in (-1, 0, 1):
                for c in (-1, 0, 1):
                    v = (a, b, c)
                    first = next((x for x in v if x != 0), 0)
                    if first > 0:
                        vecs.append(v)
    return np.array(vecs, dtype=np.int64)


def decompose_correction(corr: np.ndarray, vectors: np.ndarray, h: float) -> tuple[np.ndarray, float]:
    """Nonnegative weights c_e with sum_e c_e e e^T ~ C, per node.

    Each node is a small nonnegative least-squares problem. Returns the
    weights divided by h^2 (ready for (g(v+he) + g(v-he) - 2g(v)) differences)
    and the largest relative residual |C - sum c_e e e^T| / |C|.
    """
    from scipy.optimize import nnls

    nodes, dim, _ = corr.shape
    iu = np.triu_indices(dim)
    scale = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
    basis = np.stack([np.outer(e, e)[iu] * scale for e in vectors.astype(float)], axis=1)
    weights = np.zeros((nodes, len(vectors)))
    worst = 0.0
    for i in range(nodes):
        target = corr[i][iu] * scale
        norm = float(np.linalg.norm(target))
        if norm == 0.0:
            continue
        w, res = nnls(basis, target)
        weights[i] = w
        worst = max(worst, res / norm)
    return weights / h**2, worst


# ------------------------------------------------------------- operator


@dataclass(frozen=True)
class OperatorConfig:
    n_directions: int = 64
    near_field: int | None = None  # cells with |k|_inf <= near_field get cell-averaged weights
    near_samples: int | None = None
    plane_spacing: float | None = None  # default h/2
    order: int | None = None  # 3 (cubic) for N=2, 1 (multilinear) for N=3
    n_alpha: int = 24
    tail_directions: int | None = None


@dataclass(frozen=True)
class FrozenKernel:
    """Everything of Q(f, .) that depends on f only."""

    phi: np.ndarray
    tail: np.ndarray
    near: np.ndarray
    stencil: np.ndarray
    convolution: np.ndarray
    correction_residual: float


@dataclass(frozen=True)
class OperatorParts:
    q1: np.ndarray
    q2: np.ndarray
    diagonal: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.q1 + self.q2


class CollisionOperator:
    """Q(f, g) on every node of a grid, for the reference cross section."""

    def __init__(self, xs: CrossSection, grid: VelocityGrid, config: OperatorConfig | None = None,
                 model: BtildeModel | None = None):
        if not xs.is_reference:
            raise DomainError("the full-grid operator needs the reference cross section (separable kernel)")
        if xs.dim != grid.dim:
            raise DomainError(f"cross section is {xs.dim}-d but grid is {grid.dim}-d")
        self.xs = xs
        self.grid = grid
        self.config = config or OperatorConfig()
        self.model = btilde(xs) if model is None else model
        cfg = self.config
        dim, n, h = grid.dim, grid.n, grid.h
        if dim == 2:
            self.table = DirectionTable(2, 1, cfg.n_directions)
        else:
            n_pol = max(4, 2 * int(round(math.sqrt(cfg.n_directions / 2))))
            self.table = DirectionTable(3, n_pol, 2 * n_pol)
        self.dirs = self.table.vectors()
        self.order = cfg.order if cfg.order is not None else (3 if dim == 2 else 1)
        self.spacing = cfg.plane_spacing if cfg.plane_spacing is not None else h / 2
        ext = math.sqrt(dim) * 2 * grid.L
        nr = int(math.ceil(ext / self.spacing)) + 1
        edges = np.arange(nr + 1) * self.spacing
        p = xs.gamma + xs.nu + 1 + dim - 2
        self.cell_w = (edges[1:] ** (p + 1) - edges[:-1] ** (p + 1)) / (p + 1)
        k = np.arange(-(n - 1), n) * h
        mesh = np.meshgrid(*([k] * dim), indexing="ij")
        dist = np.sqrt(sum(m**2 for m in mesh))
        with np.errstate(divide="ignore"):
            self.pref = 2.0 ** (dim - 1) * dist ** (-dim - xs.nu) * h**dim
        self.pref[(n - 1,) * dim] = 0.0
        if dim == 2:
            # direction bin and interpolation fraction of every lattice offset
            ang = np.mod(np.arctan2(mesh[1], mesh[0]), math.pi)
            t = ang / (math.pi / cfg.n_directions) - 0.5
            k0 = np.floor(t)
            self.frac = t - k0
            self.bin0 = np.mod(k0, cfg.n_directions).astype(np.int64)
        # fine direction rule over the whole sphere for the tail and the cube moments
        if dim == 2:
            m = cfg.tail_directions or 8 * cfg.n_directions
            a = 2 * math.pi * (np.arange(m) + 0.5) / m
            self.quad_dirs = np.stack([np.cos(a), np.sin(a), np.zeros(m)], axis=1)
            self.quad_w = np.full(m, 2 * math.pi / m)
        else:
            from .collision import half_sphere_directions

            d, w = half_sphere_directions(3, cfg.tail_directions or 8 * cfg.n_directions)
            self.quad_dirs = np.concatenate([d, -d])
            self.quad_w = np.concatenate([w, w])
        self.offsets = stencil_vectors(dim)
        self.r_near = cfg.near_field if cfg.near_field is not None else (6 if dim == 2 else 2)
        self.sub = cfg.near_samples if cfg.near_samples is not None else (4 if dim == 2 else 2)

    def phi_cache(self, f_values: np.ndarray) -> np.ndarray:
        grid = self.grid
        vals = np.ascontiguousarray(f_values, dtype=float)
        coeffs = spline_coefficients(vals) if self.order == 3 else vals
        pad = SPLINE_PAD if self.order == 3 else 0
        if grid.dim == 2:
            return _phi_2d(coeffs, self.order, pad, grid.L, grid.h, grid.n, self.dirs, self.cell_w, self.spacing)
        return _phi_3d(
            coeffs, self.order, pad, grid.L, grid.h, grid.n, self.dirs, self.table.n_polar,
            self.table.n_azimuth, self.cell_w, self.spacing, self.config.n_alpha,
        )

    def freeze(self, f: DistributionFunction | np.ndarray) -> FrozenKernel:
        grid = self.grid
        vals = f.values if isinstance(f, DistributionFunction) else np.asarray(f, dtype=float)
        phi = self.phi_cache(vals)
        tail, corr, near = _node_terms(
            phi, grid.dim, self.table.n_polar, self.table.n_azimuth, grid.L, grid.h, grid.n,
            self.xs.nu, self.r_near, self.sub, self.quad_dirs, self.quad_w,
        )
        stencil, residual = decompose_correction(corr, self.offsets, grid.h)
        conv = btilde_convolution(DistributionFunction(grid, np.maximum(vals, 0.0)), self.model)
        return FrozenKernel(phi, tail, near, stencil, conv, residual)

    def apply(self, kernel: FrozenKernel, g: np.ndarray) -> OperatorParts:
        grid = self.grid
        g = np.ascontiguousarray(g, dtype=float)
        q1 = np.zeros(grid.shape)
        diag = np.zeros(grid.shape)
        if grid.dim == 2:
            _apply_2d(kernel.phi, self.bin0, self.frac, g, grid.n, self.pref, kernel.near, self.r_near,
                      kernel.tail, kernel.stencil, self.offsets, q1, diag)
        else:
            _apply_3d(kernel.phi, self.table.n_polar, self.table.n_azimuth, g, grid.n, self.pref,
                      kernel.near, self.r_near, kernel.tail, kernel.stencil, self.offsets, q1, diag)
        return OperatorParts(q1, kernel.convolution * g, diag)

    def parts(self, f, g=None) -> OperatorParts:
        kernel = self.freeze(f)
        gv = f if g is None else g
        gv = gv.values if isinstance(gv, DistributionFunction) else gv
        return self.apply(kernel, gv)

    def __call__(self, f, g=None) -> np.ndarray:
        return self.parts(f, g).total


# -------------------------------------------------------- conservation


def collision_invariants(grid: VelocityGrid) -> np.ndarray:
    """1, v_1, ..., v_N, |v|^2 stacked along the first axis."""
    pts = grid.points()
    comps = [np.ones(grid.shape)] + [pts[..., i] for i in range(grid.dim)] + [np.sum(pts**2, axis=-1)]
    return np.stack(comps)


def project_conservative(q: np.ndarray, f: np.ndarray, invariants: np.ndarray) -> np.ndarray:
    """Subtract f * (linear combination of invariants) so q has zero moments.

    The correction is proportional to f, so it vanishes wherever f does.
    """
    phi = invariants.reshape(len(invariants), -1)
    fv = f.reshape(-1)
    gram = (phi * fv) @ phi.T
    rhs = phi @ q.reshape(-1)
    if not np.any(fv > 0):
        return q
    lam = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return q - f * (lam @ phi).reshape(q.shape)


# ------------------------------------------------------------- stepping


class ClippingError(RuntimeError):
    """A step produced negative values carrying too much mass."""


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 0.01
    t_end: float = 1.0
    scheme: str = "ssp2"
    stride: int = 1
    sigma_cfl: float = 0.5
    clip_abort: float = 0.01
    conservative: bool = True
    equilibrium: bool = True
    operator: OperatorConfig = field(default_factory=OperatorConfig)

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if not self.t_end > 0:
            raise DomainError(f"t_end must be positive, got {self.t_end}")
        if self.scheme not in ("euler", "ssp2"):
            raise DomainError(f"scheme must be 'euler' or 'ssp2', got {self.scheme!r}")
        if int(self.stride) != self.stride or self.stride < 1:
            raise DomainError(f"stride must be a positive integer, got {self.stride}")
        if not 0 < self.sigma_cfl <= 1:
            raise DomainError(f"sigma_cfl must lie in (0, 1], got {self.sigma_cfl}")


@dataclass(frozen=True)
class MaxRecord:
    """Operator diagnostics at the maximum point of f."""

    t: float
    index: tuple[int, ...]
    v: np.ndarray
    m: float
    q1: float
    q2: float
    c_tilde: float
    C_tilde: float


def max_record(xs: CrossSection, grid: VelocityGrid, f: np.ndarray, parts: OperatorParts, t: float) -> MaxRecord:
    # argmax with ties broken by the smallest lexicographic index (C order)
    flat = int(np.argmax(f.reshape(-1)))
    idx = tuple(int(i) for i in np.unravel_index(flat, grid.shape))
    v = grid.node(idx)
    m = float(f[idx])
    q1 = float(parts.q1[idx])
    q2 = float(parts.q2[idx])
    dim, nu, gamma = grid.dim, xs.nu, xs.gamma
    speed = 1.0 + float(np.linalg.norm(v))
    c_tilde = -q1 / (m ** (1 + nu / dim) * speed ** (nu * (1 + 1 / dim) + gamma)) if m > 0 else 0.0
    if gamma >= 0:
        C_tilde = q2 / (m * speed**gamma) if m > 0 else 0.0
    else:
        C_tilde = q2 / m ** (1 - gamma / dim) if m > 0 else 0.0
    return MaxRecord(t, idx, v, m, q1, q2, c_tilde, C_tilde)


@dataclass
class Trajectory:
    grid: VelocityGrid
    times: list[float] = field(default_factory=list)
    states: list[MacroscopicState] = field(default_factory=list)
    snapshot_times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)
    max_records: list[MaxRecord] = field(default_factory=list)
    clipped_mass: list[float] = field(default_factory=list)
    substeps: list[int] = field(default_factory=list)
    dt_ceiling: list[float] = field(default_factory=list)
    equilibrium_residual: float = 0.0
    ball_radius: float | None = None
    ball_minima: list[float] = field(default_factory=list)

    def snapshot(self, k: int) -> DistributionFunction:
        return DistributionFunction(self.grid, np.maximum(self.snapshots[k], 0.0))

    @property
    def mass(self) -> np.ndarray:
        return np.array([s.mass for s in self.states])

    @property
    def energy(self) -> np.ndarray:
        return np.array([s.energy for s in self.states])

    @property
    def entropy(self) -> np.ndarray:
        return np.array([s.entropy for s in self.states])

    @property
    def maxima(self) -> np.ndarray:
        return np.array([r.m for r in self.max_records])


class Solver:
    """Explicit integration of f_t = Q(f, f) or of g_t = Q(f, g) + source with f frozen."""

    def __init__(self, xs: CrossSection, grid: VelocityGrid, config: SolverConfig | None = None,
                 model: BtildeModel | None = None):
        self.xs = xs
        self.grid = grid
        self.config = config or SolverConfig()
        self.operator = CollisionOperator(xs, grid, self.config.operator, model)
        self.invariants = collision_invariants(grid)
        self.residual: np.ndarray | None = None

    def set_equilibrium(self, f: DistributionFunction | np.ndarray) -> np.ndarray:
        """Subtract (Q(M_f, M_f) / M_f) g from every later evaluation Q(f, g).

        M_f is the discrete Maxwellian of f. The scheme conserves mass, momentum
        and energy, so M_f is the equilibrium of the whole run, and the corrected
        operator keeps it exactly stationary. Writing the correction as a rate
        times g keeps forward Euler substeps positive. Returns Q(M_f, M_f).
        """
        dist = f if isinstance(f, DistributionFunction) else DistributionFunction(self.grid, np.asarray(f, float))
        eq = discrete_maxwellian(DistributionFunction(self.grid, np.maximum(dist.values, 0.0)))
        raw = self.operator(eq)
        self.residual = raw / eq.values
        return raw

    def _q(self, kernel: FrozenKernel, f: np.ndarray) -> tuple[np.ndarray, OperatorParts]:
        parts = self.operator.apply(kernel, f)
        q = parts.total
        if self.residual is not None:
            q = q - self.residual * f
        if self.config.conservative:
            q = project_conservative(q, np.maximum(f, 0.0), self.invariants)
        return q, parts

    def _clip(self, f: np.ndarray) -> tuple[np.ndarray, float]:
        neg = f < 0
        if not np.any(neg):
            return f, 0.0
        lost = float(-np.sum(f[neg])) * self.grid.cell_volume
        return np.where(neg, 0.0, f), lost

    def _ceiling(self, parts: OperatorParts) -> float:
        diag = parts.diagonal
        if self.residual is not None:
            diag = diag + np.maximum(self.residual, 0.0)
        top = float(np.max(diag))
        return self.config.sigma_cfl / top if top > 0 else math.inf

    def _frozen_flow(self, f: np.ndarray, dt: float) -> tuple[np.ndarray, float, int, float, OperatorParts]:
        """Forward Euler substeps of f_t = Q(f_0, f) with the kernel of f_0 held fixed."""
        kernel = self.operator.freeze(np.maximum(f, 0.0))
        q, parts = self._q(kernel, f)
        ceiling = self._ceiling(parts)
        k = max(1, int(math.ceil(dt / ceiling - 1e-12)))
        tau = dt / k
        clipped = 0.0
        for sub in range(k):
            if sub > 0:
                q, _ = self._q(kernel, f)
            f, lost = self._clip(f + tau * q)
            clipped += lost
        return f, clipped, k, ceiling, parts

    def step(self, f: np.ndarray, dt: float | None = None) -> tuple[np.ndarray, float, int, float, OperatorParts]:
        """Advance by dt.

        The kernel (Phi cache, tail, corrections, convolution) is computed once
        per stage; within a stage, forward Euler substeps respect the stability
        ceiling sigma_cfl / max diagonal weight. 'ssp2' averages the start value
        with a second frozen-kernel stage (Heun form), which keeps every update a
        convex combination of positivity-preserving Euler steps.
        Returns (f_next, clipped mass, substeps, ceiling, operator parts at f).
        """
        cfg = self.config
        dt = cfg.dt if dt is None else dt
        f = np.asarray(f, dtype=float)
        mass = float(np.sum(f)) * self.grid.cell_volume
        f1, clipped, k, ceiling, parts0 = self._frozen_flow(f, dt)
        if cfg.scheme == "ssp2":
            f2, lost, k2, _, _ = self._frozen_flow(f1, dt)
            f1 = 0.5 * f + 0.5 * f2
            clipped += lost
            k += k2
        if mass > 0 and clipped > cfg.clip_abort * mass:
            raise ClippingError(
                f"clipped mass {clipped:.3e} exceeds {cfg.clip_abort:g} of M={mass:.3e}; reduce dt"
            )
        if clipped > 0:
            log.info("clipped negative mass %.3e (%d substeps)", clipped, k)
        return f1, clipped, k, ceiling, parts0

    def run(self, f0: DistributionFunction, ball_radius: float | None = None) -> Trajectory:
        """Integrate to t_end; with ball_radius, min over B_R of f is recorded every step."""
        cfg = self.config
        if not float(np.sum(f0.values)) > 0:
            raise DomainError("initial distribution has no mass")
        traj = Trajectory(self.grid, ball_radius=ball_radius)
        if cfg.equilibrium:
            traj.equilibrium_residual = float(np.max(np.abs(self.set_equilibrium(f0))))
        n_steps = int(round(cfg.t_end / cfg.dt))
        f = np.array(f0.values, dtype=float)
        t = 0.0
        for k in range(n_steps + 1):
            if k < n_steps:
                f_next, clipped, subs, ceil, parts = self.step(f)
            else:
                parts = self.operator.parts(f)
                clipped, subs, ceil = 0.0, 0, self._ceiling(parts)
            self._record(traj, f, t, parts, k)
            if k == n_steps:
                break
            traj.clipped_mass.append(clipped)
            traj.substeps.append(subs)
            traj.dt_ceiling.append(ceil)
            f = f_next
            t = (k + 1) * cfg.dt
        return traj

    def _record(self, traj: Trajectory, f: np.ndarray, t: float, parts: OperatorParts, k: int) -> None:
        dist = DistributionFunction(self.grid, np.maximum(f, 0.0))
        traj.times.append(t)
        traj.states.append(moments(dist))
        traj.max_records.append(max_record(self.xs, self.grid, f, parts, t))
        if traj.ball_radius is not None:
            inside = np.linalg.norm(self.grid.points(), axis=-1) <= traj.ball_radius + 1e-12
            traj.ball_minima.append(float(np.min(f[inside])))
        if k % self.config.stride == 0:
            traj.snapshot_times.append(t)
            traj.snapshots.append(np.array(f))

    def run_linear(self, g0: np.ndarray, f: DistributionFunction, source: np.ndarray | float = 0.0) -> Trajectory:
        """g_t = Q(f, g) + source with f frozen; g may change sign, nothing is clipped."""
        cfg = self.config
        kernel = self.operator.freeze(f)
        g = np.array(g0, dtype=float) * np.ones(self.grid.shape)
        src = np.asarray(source, dtype=float) * np.ones(self.grid.shape)
        parts = self.operator.apply(kernel, g)
        ceiling = self._ceiling(parts)
        k_sub = max(1, int(math.ceil(cfg.dt / ceiling - 1e-12)))
        tau = cfg.dt / k_sub
        traj = Trajectory(self.grid)
        n_steps = int(round(cfg.t_end / cfg.dt))
        vol = self.grid.cell_volume
        for k in range(n_steps + 1):
            t = k * cfg.dt
            traj.times.append(t)
            traj.states.append(MacroscopicState(float(np.sum(g)) * vol,
                                                float(np.sum(self.grid.speed_squared() * g)) * vol, math.nan))
            if k % cfg.stride == 0:
                traj.snapshot_times.append(t)
                traj.snapshots.append(g.copy())
            if k == n_steps:
                break
            for _ in range(k_sub):
                r0 = self.operator.apply(kernel, g).total + src
                if cfg.scheme == "ssp2":
                    g1 = g + tau * r0
                    r1 = self.operator.apply(kernel, g1).total + src
                    g = 0.5 * g + 0.5 * (g1 + tau * r1)
                else:
                    g = g + tau * r0
            traj.substeps.append(k_sub)
            traj.dt_ceiling.append(ceiling)
            traj.clipped_mass.append(0.0)
        return traj


def run(f0: DistributionFunction, config: SolverConfig, xs: CrossSection) -> Trajectory:
    return Solver(xs, f0.grid, config).run(f0)


def run_linear(g0, f: DistributionFunction, source, config: SolverConfig, xs: CrossSection) -> Trajectory:
    return Solver(xs, f.grid, config).run_linear(g0, f, source)


def step(f: DistributionFunction, config: SolverConfig, xs: CrossSection) -> DistributionFunction:
    f_next, *_ = Solver(xs, f.grid, config).step(f.values)
    return DistributionFunction(f.grid, f_next)
