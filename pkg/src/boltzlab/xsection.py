"""Cross sections B(r, theta) = r^gamma b(cos theta) and the convolution weight Btilde.

Angles are handled through their half-angle sine and cosine, which keeps both
singular ends (theta -> 0 and theta -> pi) free of cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain where the model is defined."""


class QuadratureError(RuntimeError):
    """A quadrature did not reach its requested tolerance."""


def sphere_area(dim: int) -> float:
    return 2.0 * math.pi ** (dim / 2) / math.gamma(dim / 2)


def ball_volume(dim: int, radius: float) -> float:
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * radius**dim


def parameters_from_inverse_power(s: float, dim: int) -> tuple[float, float]:
    """(gamma, nu) for an inverse-power interaction of exponent ``s``."""
    if s <= 2:
        raise DomainError(f"inverse-power exponent must exceed 2, got {s}")
    return (s - (2 * dim - 1)) / (s - 1), 2.0 / (s - 1)


def validate_parameters(gamma: float, nu: float, dim: int) -> None:
    if dim not in (2, 3):
        raise DomainError(f"dimension must be 2 or 3, got {dim}")
    if not 0 < nu < 2:
        raise DomainError(
            f"angular singularity nu={nu} violates 0 < nu < 2 required by B(r,theta) = r^gamma b(cos theta)"
        )
    if not gamma > -dim:
        raise DomainError(
            f"gamma={gamma} violates gamma > -N (N={dim}) required by B(r,theta) = r^gamma b(cos theta)"
        )


@dataclass(frozen=True)
class CrossSection:
    gamma: float
    nu: float
    dim: int
    kind: str = "reference"
    table: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        validate_parameters(self.gamma, self.nu, self.dim)
        if self.kind not in ("reference", "tabulated"):
            raise DomainError(f"unknown cross-section kind {self.kind!r}")
        if self.kind == "tabulated":
            if self.table is None:
                raise DomainError("tabulated cross section needs a (theta, b) table")
            theta, b = (np.asarray(a, dtype=float) for a in self.table)
            if theta.shape != b.shape or theta.ndim != 1 or len(theta) < 2:
                raise DomainError("table must be two 1-d arrays of equal length >= 2")
            if np.any(b <= 0) or np.any(np.abs(theta) >= math.pi) or np.any(theta == 0):
                raise DomainError("table needs b > 0 and 0 < |theta| < pi")
            object.__setattr__(self, "table", (theta, b))

    @property
    def is_reference(self) -> bool:
        return self.kind == "reference"

    def angular(self, sin_half: np.ndarray, cos_half: np.ndarray) -> np.ndarray:
        """b(cos theta) given sin(theta/2) >= 0 and cos(theta/2) >= 0."""
        sin_half = np.asarray(sin_half, dtype=float)
        cos_half = np.asarray(cos_half, dtype=float)
        if self.is_reference:
            with np.errstate(divide="ignore"):
                return cos_half ** (self.gamma + self.nu + 1) * sin_half ** (1 - self.dim - self.nu)
        return self._table_eval(np.log(sin_half) - np.log(cos_half), positive=True)

    def log_angular(self, sin_half: np.ndarray, cos_half: np.ndarray) -> np.ndarray:
        """log b(cos theta); finite even where b itself would overflow."""
        sin_half = np.asarray(sin_half, dtype=float)
        cos_half = np.asarray(cos_half, dtype=float)
        with np.errstate(divide="ignore"):
            ls = np.log(sin_half)
            lc = np.log(cos_half)
        if self.is_reference:
            return (self.gamma + self.nu + 1) * lc + (1 - self.dim - self.nu) * ls
        return np.log(self._table_eval(ls - lc, positive=True))

    def _table_eval(self, u: np.ndarray, positive: bool) -> np.ndarray:
        theta, b = self.table
        sel = theta > 0 if positive else theta < 0
        if not np.any(sel):
            sel = ~sel
        t = np.abs(theta[sel])
        order = np.argsort(t)
        knots = np.log(np.tan(t[order] / 2))
        logb = np.log(b[sel][order])
        if len(knots) == 1:
            return np.full_like(u, math.exp(logb[0]))
        out = np.interp(u, knots, logb)
        lo = u < knots[0]
        hi = u > knots[-1]
        slope_lo = (logb[1] - logb[0]) / (knots[1] - knots[0])
        slope_hi = (logb[-1] - logb[-2]) / (knots[-1] - knots[-2])
        out = np.where(lo, logb[0] + slope_lo * (u - knots[0]), out)
        out = np.where(hi, logb[-1] + slope_hi * (u - knots[-1]), out)
        return np.exp(out)

    def b(self, theta: np.ndarray) -> np.ndarray:
        """Angular function as a function of theta in (-pi, pi)."""
        half = np.abs(np.asarray(theta, dtype=float)) / 2
        return self.angular(np.sin(half), np.cos(half))

    def b_cos(self, cos_theta: np.ndarray) -> np.ndarray:
        c = np.clip(np.asarray(cos_theta, dtype=float), -1.0, 1.0)
        return self.angular(np.sqrt((1 - c) / 2), np.sqrt((1 + c) / 2))


def reference_b(gamma: float, nu: float, dim: int) -> CrossSection:
    """Built-in b = cos(theta/2)^(gamma+nu+1) sin(theta/2)^(1-N-nu).

    With |w| = r cos(theta/2) and |v'-v| = r sin(theta/2) this makes
    r^(gamma-N+2) b = |w|^(gamma+nu+1) |v'-v|^(1-N-nu) an identity.
    """
    return CrossSection(gamma, nu, dim, "reference")


def load_table(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or line.lower().startswith("theta"):
            continue
        a, b = line.split(",")[:2]
        rows.append((float(a), float(b)))
    if not rows:
        raise DomainError(f"empty cross-section table {path}")
    arr = np.array(rows)
    return arr[:, 0], arr[:, 1]


def tabulated_b(gamma: float, nu: float, dim: int, theta, b) -> CrossSection:
    return CrossSection(gamma, nu, dim, "tabulated", (np.asarray(theta), np.asarray(b)))


def eval_B(xs: CrossSection, r, theta):
    """r^gamma b(cos theta); theta = 0 is the non-integrable grazing point."""
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta == 0):
        raise DomainError("B(r, theta) is singular at theta = 0")
    if np.any(r <= 0):
        raise DomainError("B(r, theta) needs r > 0")
    if np.any(np.abs(theta) >= math.pi + 1e-15):
        raise DomainError("theta must lie in (-pi, pi]")
    out = r**xs.gamma * xs.b(theta)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class InvariantReport:
    even: bool
    evenness_residual: float
    grazing_constant: float
    other_side_constant: float
    passed: bool
    messages: tuple[str, ...] = ()


def check_invariants(xs: CrossSection, max_constant: float = 1e3) -> InvariantReport:
    """Sample the structural assumptions on b.

    Evenness, the two-sided bound b ~ |theta|^(-(N-1)-nu) on theta in (0, pi/2],
    and b ~ |sin theta|^(gamma+nu+1) on the far side cos theta < 0.
    """
    msgs = []
    resid = 0.0
    if xs.kind == "tabulated":
        theta, b = xs.table
        neg = theta < 0
        if np.any(neg) and np.any(~neg):
            t = np.abs(theta[neg])
            u = np.log(np.tan(t / 2))
            pos_vals = xs._table_eval(u, positive=True)
            resid = float(np.max(np.abs(b[neg] - pos_vals) / pos_vals))
    even = resid <= 1e-9
    if not even:
        msgs.append(f"b is not even: relative mismatch {resid:.3e} between b(theta) and b(-theta)")
    th = np.geomspace(1e-4, math.pi / 2, 400)
    ratio = xs.b(th) / th ** (-(xs.dim - 1) - xs.nu)
    c_graze = float(max(ratio.max(), 1 / ratio.min()))
    t = np.geomspace(1e-4, math.pi / 2 - 1e-3, 400)
    far = math.pi - t
    ratio2 = xs.b(far) / np.sin(far) ** (xs.gamma + xs.nu + 1)
    c_other = float(max(ratio2.max(), 1 / ratio2.min()))
    if not c_graze <= max_constant:
        msgs.append(f"grazing bound constant {c_graze:.3e} exceeds {max_constant:g}")
    if not c_other <= max_constant:
        msgs.append(f"far-side bound constant {c_other:.3e} exceeds {max_constant:g}")
    passed = even and c_graze <= max_constant and c_other <= max_constant
    return InvariantReport(even, resid, c_graze, c_other, passed, tuple(msgs))


@dataclass(frozen=True)
class BtildeModel:
    """Btilde(r) = coefficient * r^gamma."""

    coefficient: float
    gamma: float
    nodes: int
    error_estimate: float

    def __call__(self, r):
        return self.coefficient * np.asarray(r, dtype=float) ** self.gamma


def _orthonormal_frame(e: np.ndarray) -> np.ndarray:
    """Rows: e followed by an orthonormal basis of its complement."""
    dim = len(e)
    m = np.eye(dim)
    m[:, 0] = e
    q, _ = np.linalg.qr(m)
    q = q.T
    if np.dot(q[0], e) < 0:
        q[0] = -q[0]
    return q


def _log_cos_half(sin_half: np.ndarray, cos_half: np.ndarray) -> np.ndarray:
    # log cos(theta/2) without cancellation when theta is tiny
    small = sin_half < 0.5
    with np.errstate(divide="ignore"):
        return np.where(small, 0.5 * np.log1p(-np.minimum(sin_half, 0.5) ** 2), np.log(cos_half))


def _grading_exponent(endpoint_power: float) -> float:
    # midpoint rule on s^q with integrand ~ theta^a: exponent q(1+a) >= 2 keeps O(n^-2)
    return 2.0 / (1.0 + endpoint_power) + 1.0


def _btilde_sum(xs: CrossSection, e: np.ndarray, n: int) -> float:
    dim = xs.dim
    frame = _orthonormal_frame(e)
    s = (np.arange(n) + 0.5) / n
    total = 0.0
    # two halves, graded toward theta = 0 and theta = pi respectively
    for near_zero in (True, False):
        a = (1.0 - xs.nu) if near_zero else (xs.nu - 1.0)
        q = _grading_exponent(a)
        t = (math.pi / 2) * s**q
        dt = (math.pi / 2) * q * s ** (q - 1) / n
        if dim == 2:
            azimuths = np.array([0.0, math.pi])
            az_weight = 1.0
        else:
            azimuths = np.linspace(0, 2 * math.pi, 4, endpoint=False)
            az_weight = 2 * math.pi / 4
        for phi in azimuths:
            if dim == 2:
                perp = frame[1] * (1.0 if phi == 0.0 else -1.0)
            else:
                perp = math.cos(phi) * frame[1] + math.sin(phi) * frame[2]
            if near_zero:
                # sigma = cos(t) e + sin(t) perp, built so sigma - e stays accurate
                diff = -2 * np.sin(t / 2)[:, None] ** 2 * e + np.sin(t)[:, None] * perp
                summ = 2 * e - 2 * np.sin(t / 2)[:, None] ** 2 * e + np.sin(t)[:, None] * perp
                sin_theta = np.sin(t)
            else:
                # theta = pi - t: sigma = -cos(t) e + sin(t) perp
                summ = 2 * np.sin(t / 2)[:, None] ** 2 * e + np.sin(t)[:, None] * perp
                diff = -2 * e + 2 * np.sin(t / 2)[:, None] ** 2 * e + np.sin(t)[:, None] * perp
                sin_theta = np.sin(t)
            sin_half = np.linalg.norm(diff, axis=1) / 2
            cos_half = np.linalg.norm(summ, axis=1) / 2
            log_cos = _log_cos_half(sin_half, cos_half)
            with np.errstate(divide="ignore"):
                log_factor = np.log(np.expm1(-(dim + xs.gamma) * log_cos))
            vals = np.exp(log_factor + xs.log_angular(sin_half, cos_half))
            measure = sin_theta ** (dim - 2) * az_weight
            total += float(np.sum(vals * measure * dt))
    return total


def btilde(
    xs: CrossSection,
    e: np.ndarray | None = None,
    rtol: float = 1e-9,
    n0: int = 256,
    max_nodes: int = 2**21,
) -> BtildeModel:
    """Coefficient of Btilde(r) = C r^gamma by graded quadrature on the sphere.

    The integrand (2/(1+sigma.e))^((N+gamma)/2) - 1) b is singular at both
    poles; each half of the polar range is graded toward its pole and the
    node count doubled until the Richardson estimate is below ``rtol``.
    """
    dim = xs.dim
    if e is None:
        e = np.zeros(dim)
        e[0] = 1.0
    e = np.asarray(e, dtype=float)
    e = e / np.linalg.norm(e)
    n = n0
    prev = _btilde_sum(xs, e, n)
    while True:
        n *= 2
        cur = _btilde_sum(xs, e, n)
        err = abs(cur - prev) / 3.0
        value = cur + (cur - prev) / 3.0
        if err <= rtol * abs(value):
            break
        if n >= max_nodes:
            raise QuadratureError(
                f"Btilde quadrature not converged: estimate {err:.3e} at {n} nodes for {xs}"
            )
        prev = cur
    if not value > 0:
        raise QuadratureError(f"Btilde coefficient not positive: {value}")
    return BtildeModel(value, xs.gamma, n, err)


def btilde_at(xs: CrossSection, r, e: np.ndarray | None = None) -> np.ndarray:
    return btilde(xs, e)(r)


def btilde_direct(xs: CrossSection, r: float, e: np.ndarray | None = None, n: int = 2**15) -> float:
    """Btilde(r) from its defining sphere integral, with r kept explicit.

    Integrand: 2^(N/2) (1 + sigma.e)^(-N/2) B(sqrt(2) r / sqrt(1 + sigma.e), theta) - B(r, theta),
    cos theta = sigma.e. Graded midpoint rule in theta on both halves; the N = 3
    azimuth is exact by symmetry. This route does not use the r^gamma factorization.
    """
    dim = xs.dim
    if not r > 0:
        raise DomainError(f"Btilde needs r > 0, got {r}")
    s = (np.arange(n) + 0.5) / n
    total = 0.0
    for near_zero in (True, False):
        a = (1.0 - xs.nu) if near_zero else (xs.nu - 1.0)
        q = _grading_exponent(a)
        t = (math.pi / 2) * s**q
        dt = (math.pi / 2) * q * s ** (q - 1) / n
        theta = t if near_zero else math.pi - t
        one_plus = 2.0 * np.cos(theta / 2) ** 2
        b = xs.b(theta)
        gain = 2.0 ** (dim / 2) * one_plus ** (-dim / 2) * (math.sqrt(2.0) * r / np.sqrt(one_plus)) ** xs.gamma * b
        loss = r**xs.gamma * b
        ring = 2.0 if dim == 2 else 2 * math.pi * np.sin(theta)
        total += float(np.sum((gain - loss) * ring * dt))
    return total
