"""Wasserstein distances between particle (or 1D density) measures.

In 1D the distance is computed exactly from cumulative distribution or
quantile functions.  In higher dimension small equal-weight clouds go through
an exact min-cost assignment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import InvalidMeasure, MassMismatch, SizeCap, ZeroMass
from .measure import Measure

MASS_TOL = 1e-9
DEFAULT_CAP = 2000
METHODS = ("quantile_1d", "assignment")


@dataclass(frozen=True)
class DistanceParams:
    p: float = 1.0
    method: str = "assignment"
    cap: int = DEFAULT_CAP
    seed: int = 0

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("p must be >= 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


def _check_masses(mu: Measure, nu: Measure) -> float:
    a, b = mu.total_mass, nu.total_mass
    if abs(a - b) > MASS_TOL * max(1.0, abs(a), abs(b)):
        raise MassMismatch("total masses differ", left=a, right=b)
    return a


def _require_1d(mu: Measure):
    if mu.dim != 1:
        raise InvalidMeasure("1D method used on a measure of dimension %d" % mu.dim)


def _particle_cdf(x_sorted, cum, q, left: bool):
    side = "left" if left else "right"
    k = np.searchsorted(x_sorted, q, side=side)
    return np.concatenate(([0.0], cum))[k]


def _density_cdf(pieces, q):
    out = np.zeros_like(q, dtype=float)
    for a, b, v in pieces:
        out += v * np.clip(q - a, 0.0, b - a)
    return out


class _Cdf:
    """Right-continuous CDF with access to left limits."""

    def __init__(self, mu: Measure):
        self.pieces = mu.density_1d
        if self.pieces is None:
            order = np.argsort(mu.positions[:, 0], kind="stable")
            self.x = mu.positions[order, 0]
            self.cum = np.cumsum(mu.weights[order])

    def breakpoints(self):
        if self.pieces is not None:
            return np.array([e for a, b, _ in self.pieces for e in (a, b)])
        return self.x

    def right(self, q):
        if self.pieces is not None:
            return _density_cdf(self.pieces, q)
        return _particle_cdf(self.x, self.cum, q, left=False)

    def left(self, q):
        if self.pieces is not None:
            return _density_cdf(self.pieces, q)
        return _particle_cdf(self.x, self.cum, q, left=True)


def w1_1d(mu: Measure, nu: Measure) -> float:
    """Exact ``int |F - G| dx`` where F, G are the CDFs of ``mu`` and ``nu``.

    Uses the exact density of a measure when one is attached and the particles
    otherwise.  Between merged breakpoints both CDFs are affine, so the
    integral of the absolute difference is computed in closed form.
    """
    _require_1d(mu)
    _require_1d(nu)
    _check_masses(mu, nu)
    f, g = _Cdf(mu), _Cdf(nu)
    pts = np.unique(np.concatenate([f.breakpoints(), g.breakpoints()]))
    if pts.size < 2:
        return 0.0
    lo, hi = pts[:-1], pts[1:]
    d_lo = f.right(lo) - g.right(lo)
    d_hi = f.left(hi) - g.left(hi)
    length = hi - lo
    same = d_lo * d_hi >= 0
    a, b = np.abs(d_lo), np.abs(d_hi)
    denom = np.where(same, 1.0, a + b)
    piece = np.where(same, 0.5 * (a + b), (a * a + b * b) / (2.0 * denom))
    return float(np.sum(piece * length))


def wp_quantile_1d(mu: Measure, nu: Measure, p: float = 1.0) -> float:
    """Exact 1D ``W_p`` between weighted particle clouds via quantile functions."""
    _require_1d(mu)
    _require_1d(nu)
    m = _check_masses(mu, nu)
    if m <= 0:
        return 0.0
    ox = np.argsort(mu.positions[:, 0], kind="stable")
    oy = np.argsort(nu.positions[:, 0], kind="stable")
    x, y = mu.positions[ox, 0], nu.positions[oy, 0]
    cx, cy = np.cumsum(mu.weights[ox]), np.cumsum(nu.weights[oy])
    cy = cy * (cx[-1] / cy[-1])
    levels = np.unique(np.concatenate([[0.0], cx, cy]))
    levels = levels[levels <= cx[-1]]
    mid = 0.5 * (levels[:-1] + levels[1:])
    qx = x[np.minimum(np.searchsorted(cx, mid, side="left"), x.size - 1)]
    qy = y[np.minimum(np.searchsorted(cy, mid, side="left"), y.size - 1)]
    total = float(np.sum(np.abs(qx - qy) ** p * np.diff(levels)))
    return total ** (1.0 / p)


def _uniform_weights(mu: Measure) -> bool:
    w = mu.weights
    return bool(np.all(np.abs(w - w[0]) <= 1e-12 * max(1.0, abs(w[0]))))


def equalize(mu: Measure, nu: Measure, cap: int = DEFAULT_CAP, seed: int = 0):
    """Bring two clouds to a common size with uniform weights.

    Clouds that already satisfy this are returned unchanged.  Otherwise both
    are resampled by weighted bootstrap (fixed seed) to
    ``min(max(sizes), cap)``, which is a Monte-Carlo approximation.
    """
    if mu.size == nu.size and _uniform_weights(mu) and _uniform_weights(nu):
        return mu, nu
    rng = np.random.default_rng(seed)
    m = min(max(mu.size, nu.size), cap)
    return mu.resample(m, rng), nu.resample(m, rng)


def subsample(mu: Measure, m: int, seed: int = 0) -> Measure:
    """Equal-weight random subset of at most ``m`` particles, mass preserved."""
    if mu.size <= m:
        return mu
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(mu.size, size=m, replace=False))
    sub = mu.subset(idx)
    return Measure(sub.positions, np.full(m, mu.total_mass / m))


def wp_assignment(mu: Measure, nu: Measure, params: DistanceParams | None = None) -> float:
    """``W_p`` from an exact optimal assignment between equal-weight clouds.

    The solver is scipy's Jonker-Volgenant implementation, which is exact.
    """
    params = params or DistanceParams()
    m = _check_masses(mu, nu)
    if mu.dim != nu.dim:
        raise InvalidMeasure("dimension mismatch")
    mu, nu = equalize(mu, nu, params.cap, params.seed)
    n = mu.size
    if n > params.cap:
        raise SizeCap("too many particles for exact assignment", size=n, cap=params.cap)
    if n == 0 or m <= 0:
        return 0.0
    cost = cdist(mu.positions, nu.positions) ** params.p
    rows, cols = linear_sum_assignment(cost)
    total = float(np.sum(cost[rows, cols])) * m / n
    return total ** (1.0 / params.p)


def distance(mu: Measure, nu: Measure, params: DistanceParams | None = None) -> float:
    params = params or DistanceParams()
    if params.method == "quantile_1d":
        if params.p == 1:
            return w1_1d(mu, nu)
        return wp_quantile_1d(mu, nu, params.p)
    return wp_assignment(mu, nu, params)


def rescaled_distance(mu: Measure, nu: Measure, params: DistanceParams | None = None) -> float:
    """Distance between equal-mass positive measures of any total mass.

    Both are normalized to probability, the distance is computed, and the
    result is multiplied by ``mass ** (1/p)``.
    """
    params = params or DistanceParams()
    a, b = mu.total_mass, nu.total_mass
    if a <= 0 or b <= 0:
        raise ZeroMass("rescaled distance needs positive masses", left=a, right=b)
    m = _check_masses(mu, nu)
    return m ** (1.0 / params.p) * distance(mu.normalized(), nu.normalized(), params)


def w1(mu: Measure, nu: Measure, cap: int = DEFAULT_CAP, seed: int = 0) -> float:
    """W1 with the natural method: exact in 1D, subsampled assignment otherwise."""
    if mu.dim == 1:
        return w1_1d(mu, nu)
    a, b = subsample(mu, cap, seed), subsample(nu, cap, seed + 1)
    return wp_assignment(a, b, DistanceParams(p=1.0, cap=cap, seed=seed))
