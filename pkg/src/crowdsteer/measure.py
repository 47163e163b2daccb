"""Particle measures, box regions and the quantile cell decomposition.

A :class:`Measure` is a weighted particle ensemble, optionally carrying an exact
piecewise-constant density in 1D.  Regions are finite unions of axis-aligned
boxes.  :func:`quantile_grid_decompose` and :func:`inner_cell_margins` build the
equal-mass cell grid used by the cell-transport control.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateMeasure, InvalidMeasure, MarginCollapse

MASS_TOL = 1e-9


@dataclass(frozen=True)
class Box:
    """Axis-aligned box.  Bounds are closed unless flagged open per axis."""

    lo: np.ndarray
    hi: np.ndarray
    lo_closed: tuple = None
    hi_closed: tuple = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidMeasure("box bounds must be 1-d arrays of equal length")
        if np.any(hi <= lo):
            raise InvalidMeasure("box must have positive volume", lo=lo, hi=hi)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        d = lo.size
        for name in ("lo_closed", "hi_closed"):
            flags = getattr(self, name)
            flags = (True,) * d if flags is None else tuple(bool(f) for f in flags)
            if len(flags) != d:
                raise InvalidMeasure(f"{name} needs one flag per axis")
            object.__setattr__(self, name, flags)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.width))

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        lo_ok = np.where(self.lo_closed, x >= self.lo, x > self.lo)
        hi_ok = np.where(self.hi_closed, x <= self.hi, x < self.hi)
        return np.all(lo_ok & hi_ok, axis=1)

    def distance(self, x) -> np.ndarray:
        """Euclidean distance from each point to the closed box (0 inside)."""
        x = _as_points(x, self.dim)
        gap = np.maximum(np.maximum(self.lo - x, x - self.hi), 0.0)
        if self.dim == 1:
            return gap[:, 0]
        return np.sqrt(np.sum(gap * gap, axis=1))

    def interior_distance(self, x) -> np.ndarray:
        """Distance from points inside the box to its boundary (0 outside)."""
        x = _as_points(x, self.dim)
        d = np.minimum(x - self.lo, self.hi - x).min(axis=1)
        return np.maximum(d, 0.0)

    def shrink(self, fraction: float) -> "Box":
        """Inset every face by ``fraction`` of the box width on that axis."""
        inset = fraction * self.width
        return Box(self.lo + inset, self.hi - inset)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(d["lo"], d["hi"])


@dataclass(frozen=True)
class Region:
    """Finite union of boxes."""

    boxes: tuple

    def __post_init__(self):
        boxes = tuple(self.boxes)
        if not boxes:
            raise InvalidMeasure("region needs at least one box")
        dims = {b.dim for b in boxes}
        if len(dims) != 1:
            raise InvalidMeasure("all boxes of a region must share a dimension")
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def box(cls, lo, hi) -> "Region":
        return cls((Box(lo, hi),))

    @property
    def dim(self) -> int:
        return self.boxes[0].dim

    def contains(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        inside = np.zeros(len(x), dtype=bool)
        for b in self.boxes:
            inside |= b.contains(x)
        return inside

    def distance(self, x) -> np.ndarray:
        if len(self.boxes) == 1:
            return self.boxes[0].distance(x)
        return np.min([b.distance(x) for b in self.boxes], axis=0)

    @property
    def hull(self) -> Box:
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return Box(lo, hi)

    def as_box(self) -> Box:
        if len(self.boxes) != 1:
            raise InvalidMeasure("operation needs a single-box region")
        return self.boxes[0]

    def to_dict(self) -> dict:
        return {"boxes": [b.to_dict() for b in self.boxes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        if "boxes" in d:
            return cls(tuple(Box.from_dict(b) for b in d["boxes"]))
        return cls.box(d["lo"], d["hi"])


def as_region(r) -> Region:
    if isinstance(r, Region):
        return r
    if isinstance(r, Box):
        return Region((r,))
    raise TypeError(f"expected Region or Box, got {type(r).__name__}")


def _as_points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(-1, 1) if dim == 1 else x.reshape(1, -1)
    return x


@dataclass(frozen=True)
class Measure:
    """Weighted particle ensemble in R^d.

    ``density_1d`` optionally holds ``(lo, hi, value)`` pieces of an exact 1D
    piecewise-constant density carried alongside the particles; mass queries
    then integrate the density instead of counting particles.
    """

    positions: np.ndarray
    weights: np.ndarray
    density_1d: tuple | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pos.ndim != 2 or len(pos) != len(w):
            raise InvalidMeasure("positions must be (N, d) with one weight per particle")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidMeasure("weights must be finite and nonnegative")
        if not np.all(np.isfinite(pos)):
            raise InvalidMeasure("positions must be finite (compact support)")
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        if self.density_1d is not None:
            pieces = tuple((float(a), float(b), float(v)) for a, b, v in self.density_1d)
            if pos.shape[1] != 1:
                raise InvalidMeasure("density_1d only applies to 1D measures")
            if any(b <= a or v < 0 for a, b, v in pieces):
                raise InvalidMeasure("density pieces need lo < hi and value >= 0")
            object.__setattr__(self, "density_1d", pieces)

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def total_mass(self) -> float:
        if self.density_1d is not None:
            return math.fsum((b - a) * v for a, b, v in self.density_1d)
        # compensated sum, so that n weights of 1/n add up to exactly 1
        return math.fsum(self.weights)

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def is_probability(self, tol: float = MASS_TOL) -> bool:
        return abs(self.total_mass - 1.0) <= tol

    def normalized(self) -> "Measure":
        m = self.total_mass
        if m <= 0:
            raise InvalidMeasure("cannot normalize a zero measure")
        dens = None
        if self.density_1d is not None:
            dens = tuple((a, b, v / m) for a, b, v in self.density_1d)
        return Measure(self.positions, self.weights / self.weights.sum(), dens)

    def scaled(self, factor: float) -> "Measure":
        dens = None
        if self.density_1d is not None:
            dens = tuple((a, b, v * factor) for a, b, v in self.density_1d)
        return Measure(self.positions, self.weights * factor, dens)

    def subset(self, index) -> "Measure":
        """Particles selected by index or mask, weights unchanged, density dropped."""
        return Measure(self.positions[index], self.weights[index])

    def with_positions(self, positions) -> "Measure":
        return Measure(positions, self.weights)

    def resample(self, m: int, rng: np.random.Generator) -> "Measure":
        """Weighted bootstrap to ``m`` equal-weight particles of the same total mass."""
        p = self.weights / self.weights.sum()
        idx = rng.choice(self.size, size=m, replace=True, p=p)
        return Measure(self.positions[idx], np.full(m, self.total_mass / m))

    def mass_in(self, r) -> float:
        return mass_in(self, r)

    def restrict(self, r) -> "Measure":
        return restrict(self, r)

    def push_forward(self, gamma) -> "Measure":
        return push_forward(self, gamma)

    # constructors -------------------------------------------------------
    @classmethod
    def point_cloud(cls, points, weights=None) -> "Measure":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if weights is None:
            weights = np.full(len(pts), 1.0 / len(pts))
        return cls(pts, weights)

    @classmethod
    def uniform_box(cls, lo, hi, n: int, rng: np.random.Generator, mass: float = 1.0) -> "Measure":
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        pts = rng.uniform(lo, hi, size=(n, lo.size))
        dens = None
        if lo.size == 1:
            dens = ((lo[0], hi[0], mass / (hi[0] - lo[0])),)
        return cls(pts, np.full(n, mass / n), dens)

    @classmethod
    def from_density_1d(cls, pieces, n: int, rng: np.random.Generator) -> "Measure":
        """Sample ``n`` particles i.i.d. from a piecewise-constant 1D density."""
        pieces = tuple((float(a), float(b), float(v)) for a, b, v in pieces)
        masses = np.array([(b - a) * v for a, b, v in pieces])
        total = masses.sum()
        if total <= 0:
            raise InvalidMeasure("density has zero mass")
        which = rng.choice(len(pieces), size=n, p=masses / total)
        lo = np.array([p[0] for p in pieces])[which]
        hi = np.array([p[1] for p in pieces])[which]
        pts = lo + (hi - lo) * rng.uniform(size=n)
        return cls(pts.reshape(-1, 1), np.full(n, total / n), pieces)

    # serialization ------------------------------------------------------
    def to_csv(self, path) -> None:
        cols = [f"x{k + 1}" for k in range(self.dim)] + ["weight"]
        with open(path, "w", newline="") as f:
            f.write("# schema: " + ",".join(cols) + "\n")
            w = csv.writer(f)
            w.writerow(cols)
            for p, wt in zip(self.positions, self.weights):
                w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])

    @classmethod
    def from_csv(cls, path) -> "Measure":
        with open(path, newline="") as f:
            rows = [r for r in csv.reader(line for line in f if not line.startswith("#"))]
        header, body = rows[0], rows[1:]
        if header[-1] != "weight" or not all(h.startswith("x") for h in header[:-1]):
            raise InvalidMeasure(f"{path}: expected columns x1..xd,weight", header=header)
        data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
        return cls(data[:, :-1], data[:, -1])


def density_to_json(pieces) -> str:
    return json.dumps([{"lo": a, "hi": b, "value": v} for a, b, v in pieces])


def density_from_json(text: str) -> tuple:
    return tuple((float(p["lo"]), float(p["hi"]), float(p["value"])) for p in json.loads(text))


# operations -------------------------------------------------------------


def _interval_union(region: Region) -> list[tuple[float, float]]:
    spans = sorted((float(b.lo[0]), float(b.hi[0])) for b in region.boxes)
    merged: list[list[float]] = []
    for a, b in spans:
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])
    return [(a, b) for a, b in merged]


def mass_in(mu: Measure, r) -> float:
    """Mass of ``mu`` inside region ``r``."""
    region = as_region(r)
    if mu.density_1d is not None and region.dim == 1:
        total = 0.0
        for a, b in _interval_union(region):
            for lo, hi, v in mu.density_1d:
                total += v * max(0.0, min(b, hi) - max(a, lo))
        return total
    return float(mu.weights[region.contains(mu.positions)].sum())


def push_forward(mu: Measure, gamma: Callable[[np.ndarray], np.ndarray]) -> Measure:
    """Image measure: every particle moved by ``gamma``, weights untouched.

    ``gamma`` receives the full ``(N, d)`` position array.
    """
    moved = np.asarray(gamma(np.array(mu.positions)), dtype=float).reshape(mu.positions.shape)
    return Measure(moved, mu.weights)


def restrict(mu: Measure, r) -> Measure:
    region = as_region(r)
    keep = region.contains(mu.positions)
    dens = None
    if mu.density_1d is not None and region.dim == 1:
        clipped = []
        for a, b in _interval_union(region):
            for lo, hi, v in mu.density_1d:
                lo2, hi2 = max(a, lo), min(b, hi)
                if hi2 > lo2:
                    clipped.append((lo2, hi2, v))
        dens = tuple(clipped) if clipped else None
    return Measure(mu.positions[keep], mu.weights[keep], dens)


# quantile grid ----------------------------------------------------------


@dataclass
class GridDecomposition:
    """Equal-mass cell grid of one measure (one side of a transport plan).

    Cells are numbered ``i * n + j`` (column ``i`` along x1, row ``j`` along
    x2); in 1D there are ``n`` cells.  ``outer[c]`` and ``inner[c]`` are
    ``(d, 2)`` arrays of ``[lo, hi]`` per axis.  ``inner`` is ``None`` until
    :func:`inner_cell_margins` fills it.
    """

    n: int
    dim: int
    col_breaks: np.ndarray
    row_breaks: np.ndarray | None
    outer: np.ndarray
    members: list
    total_mass: float
    inner: np.ndarray | None = None
    inner_members: list | None = None
    margin_mass: dict = field(default_factory=dict)

    @property
    def n_cells(self) -> int:
        return len(self.outer)

    def cell_masses(self, mu: Measure) -> np.ndarray:
        return np.array([mu.weights[m].sum() for m in self.members])

    def inner_masses(self, mu: Measure) -> np.ndarray:
        return np.array([mu.weights[m].sum() for m in self.inner_members])

    def inner_boxes(self) -> list[Box]:
        return [Box(c[:, 0], c[:, 1]) for c in self.inner]

    def controlled_index(self) -> np.ndarray:
        return np.sort(np.concatenate(self.inner_members)) if self.inner_members else np.array([], int)


def _split_by_levels(values, weights, levels, tol):
    """Sort by ``values`` and cut at the smallest value whose cumulative mass
    reaches each level.  Returns (order, end-index per level, cut values)."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(weights[order])
    ends = np.searchsorted(cum, np.asarray(levels) - tol, side="left") + 1
    ends = np.minimum(ends, len(v))
    ends[-1] = len(v)
    cuts = v[ends - 1]
    starts = np.concatenate([[0], ends[:-1]])
    if np.any(ends <= starts):
        raise DegenerateMeasure("empty quantile slab: too few particles for the grid")
    inner_cuts = ends[:-1]
    if np.any(v[inner_cuts - 1] >= v[inner_cuts]):
        raise DegenerateMeasure("tied positions straddle a quantile cut (atomic mass)")
    return order, ends, cuts


def quantile_grid_decompose(mu: Measure, n: int, lower=None) -> GridDecomposition:
    """Equal-mass grid: ``n`` columns along x1, each cut into ``n`` rows along x2.

    Breakpoints are the smallest particle positions at which the cumulative
    mass reaches ``k/n`` (lower tie-breaking).  ``lower`` fixes the left/bottom
    outer boundary; it defaults to the smallest particle coordinate.
    """
    if n < 1:
        raise ValueError("n must be positive")
    d = mu.dim
    if d not in (1, 2):
        raise ValueError("grid decomposition is implemented for d = 1 and d = 2")
    X, w = mu.positions, mu.weights
    M = float(w.sum())
    tol = 1e-12 * max(M, 1.0)
    lo = X.min(axis=0) if lower is None else np.broadcast_to(np.asarray(lower, float), (d,))
    if np.any(lo > X.min(axis=0)):
        raise DegenerateMeasure("lower boundary lies above some particles")

    levels = M * np.arange(1, n + 1) / n
    order, ends, cuts = _split_by_levels(X[:, 0], w, levels, tol)
    col_breaks = np.concatenate([[lo[0]], cuts])
    starts = np.concatenate([[0], ends[:-1]])
    columns = [order[s:e] for s, e in zip(starts, ends)]

    if d == 1:
        outer = np.array([[[col_breaks[i], col_breaks[i + 1]]] for i in range(n)])
        return GridDecomposition(n, 1, col_breaks, None, outer, columns, M)

    row_breaks = np.empty((n, n + 1))
    members, outer = [], []
    for i, col in enumerate(columns):
        wc = w[col]
        o, e, c = _split_by_levels(X[col, 1], wc, wc.sum() * np.arange(1, n + 1) / n, tol)
        row_breaks[i] = np.concatenate([[lo[1]], c])
        s = np.concatenate([[0], e[:-1]])
        for j in range(n):
            members.append(col[o[s[j]:e[j]]])
            outer.append([[col_breaks[i], col_breaks[i + 1]], [row_breaks[i, j], row_breaks[i, j + 1]]])
    return GridDecomposition(n, 2, col_breaks, row_breaks, np.array(outer), members, M)


class _CarryRounder:
    """Chooses particle counts whose running mass tracks the running target.

    Each individual margin is within one particle weight of its target, and
    the accumulated error over all cells stays bounded by one weight.
    """

    def __init__(self):
        self.carry = 0.0

    def take(self, cum: np.ndarray, target: float) -> int:
        goal = target + self.carry
        c = np.concatenate([[0.0], cum])
        k = int(np.searchsorted(c, goal))
        if k >= len(c):
            k = len(c) - 1
        elif k > 0 and goal - c[k - 1] <= c[k] - goal:
            k -= 1
        self.carry = goal - c[k]
        return k


def _cut_edges(vals, k_lo, k_hi, lo_bound, hi_bound):
    """Inner interval leaving ``k_lo`` sorted values below and ``k_hi`` above.

    Cut points sit halfway between neighbouring particles so no particle lies
    on the inner box boundary.
    """
    m = len(vals)
    if k_lo + k_hi >= m:
        raise DegenerateMeasure("margins swallow the whole cell")
    a = 0.5 * (vals[k_lo - 1] + vals[k_lo]) if k_lo > 0 else 0.5 * (lo_bound + vals[0])
    top = m - k_hi
    b = 0.5 * (vals[top - 1] + vals[top]) if k_hi > 0 else 0.5 * (vals[-1] + hi_bound)
    if (k_lo > 0 and vals[k_lo - 1] >= vals[k_lo]) or (k_hi > 0 and vals[top - 1] >= vals[top]):
        raise DegenerateMeasure("tied positions at a margin cut (atomic mass)")
    return a, b


def inner_cell_margins(mu: Measure, g: GridDecomposition) -> GridDecomposition:
    """Fill the inner boxes, leaving uncontrolled margins in every cell.

    Along x1 each side margin carries ``1/n**3`` of the total mass.  In 2D
    the bottom and top margins of the remaining strip carry
    ``(1/n) (1/n**2 - 2/n**3)`` each, so each inner box holds
    ``(n - 2)**2 / n**4`` of the mass.
    """
    n = g.n
    if n < 3:
        raise MarginCollapse(f"n = {n} leaves empty inner boxes; need n >= 3", n=n)
    X, w = mu.positions, mu.weights
    side_x = g.total_mass / n**3
    side_y = g.total_mass * (1.0 / n) * (1.0 / n**2 - 2.0 / n**3)
    rounders = [_CarryRounder() for _ in range(4)]
    inner, inner_members = [], []
    margins = {k: np.zeros(g.n_cells) for k in ("left", "right", "bottom", "top")}
    for c, idx in enumerate(g.members):
        o = np.argsort(X[idx, 0], kind="stable")
        idx_s = idx[o]
        x1 = X[idx_s, 0]
        ws = w[idx_s]
        kl = rounders[0].take(np.cumsum(ws), side_x)
        kr = rounders[1].take(np.cumsum(ws[::-1]), side_x)
        a_lo, a_hi = _cut_edges(x1, kl, kr, g.outer[c, 0, 0], g.outer[c, 0, 1])
        margins["left"][c] = ws[:kl].sum()
        margins["right"][c] = ws[len(ws) - kr:].sum()
        strip = idx_s[kl:len(idx_s) - kr]
        if g.dim == 1:
            inner.append([[a_lo, a_hi]])
            inner_members.append(np.sort(strip))
            continue
        o2 = np.argsort(X[strip, 1], kind="stable")
        strip = strip[o2]
        x2 = X[strip, 1]
        ws2 = w[strip]
        kb = rounders[2].take(np.cumsum(ws2), side_y)
        kt = rounders[3].take(np.cumsum(ws2[::-1]), side_y)
        b_lo, b_hi = _cut_edges(x2, kb, kt, g.outer[c, 1, 0], g.outer[c, 1, 1])
        margins["bottom"][c] = ws2[:kb].sum()
        margins["top"][c] = ws2[len(ws2) - kt:].sum()
        inner.append([[a_lo, a_hi], [b_lo, b_hi]])
        inner_members.append(np.sort(strip[kb:len(strip) - kt]))
    g.inner = np.array(inner)
    g.inner_members = inner_members
    g.margin_mass = margins
    return g


def partition_masses(mu: Measure, regions: Iterable) -> np.ndarray:
    return np.array([mass_in(mu, r) for r in regions])


__all__: Sequence[str] = [
    "Box",
    "Region",
    "Measure",
    "GridDecomposition",
    "mass_in",
    "push_forward",
    "restrict",
    "quantile_grid_decompose",
    "inner_cell_margins",
    "density_to_json",
    "density_from_json",
]
