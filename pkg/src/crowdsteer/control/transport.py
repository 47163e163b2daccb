"""Cell-by-cell affine transport between two equal-mass grids.

Every inner box of the source grid moves to the matching inner box of the
target grid, lower corners moving linearly in time.  Inside a moving box the
velocity is affine per axis, so the box is carried exactly onto its target.
Around each box the field fades to zero over a band of half the smallest
margin.  Margin mass is not controlled: it is partly dragged along by the
bands and partly left behind.

Box widths follow either the linear corner paths or, with
``path="geometric"``, ``w(t) = w_a**(1-s) * w_b**s`` (left corners stay
linear).  The geometric path has a constant stretch rate per cell and stays
stable under fixed-step integration when widths are very unequal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PlanDegenerate, SupportViolation
from ..fields import SMOOTHSTEP_SLOPE, VectorField, field_from_dict, register, smoothstep
from ..measure import GridDecomposition, Measure, as_region, inner_cell_margins, quantile_grid_decompose
from .schedule import TIME_TOL, ControlSchedule, Phase


@dataclass(frozen=True)
class GridFrame:
    """The geometric part of a grid decomposition (no particle indices)."""

    cols: np.ndarray
    rows: np.ndarray | None
    inner: np.ndarray

    @classmethod
    def of(cls, g: GridDecomposition) -> "GridFrame":
        if g.inner is None:
            raise PlanDegenerate("grid has no inner boxes; run inner_cell_margins first")
        rows = None if g.row_breaks is None else np.asarray(g.row_breaks, float)
        return cls(np.asarray(g.col_breaks, float), rows, np.asarray(g.inner, float))

    def margins(self) -> np.ndarray:
        """Gap between each inner box and its outer cell, per cell, axis and side."""
        n = len(self.cols) - 1
        per = []
        for c, box in enumerate(self.inner):
            i, j = divmod(c, n) if self.rows is not None else (c, 0)
            gaps = [box[0, 0] - self.cols[i], self.cols[i + 1] - box[0, 1]]
            if self.rows is not None:
                gaps += [box[1, 0] - self.rows[i, j], self.rows[i, j + 1] - box[1, 1]]
            per.append(gaps)
        return np.array(per)

    def to_dict(self) -> dict:
        return {
            "cols": self.cols.tolist(),
            "rows": None if self.rows is None else self.rows.tolist(),
            "inner": self.inner.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridFrame":
        rows = None if d["rows"] is None else np.asarray(d["rows"], float)
        return cls(np.asarray(d["cols"], float), rows, np.asarray(d["inner"], float))


@dataclass
class CellTransportPlan:
    source: GridDecomposition
    target: GridDecomposition
    T: float
    path: str = "linear"

    def __post_init__(self):
        if self.path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}")
        if self.T <= 0:
            raise ValueError("transport duration must be positive")
        if self.source.n != self.target.n or self.source.dim != self.target.dim:
            raise PlanDegenerate("source and target grids differ in shape")
        self.src = GridFrame.of(self.source)
        self.tgt = GridFrame.of(self.target)
        if np.any(self.src.inner[:, :, 1] <= self.src.inner[:, :, 0]) or np.any(
            self.tgt.inner[:, :, 1] <= self.tgt.inner[:, :, 0]
        ):
            raise PlanDegenerate("an inner box has zero width")

    @property
    def n(self) -> int:
        return self.source.n

    def corners(self, t: float) -> np.ndarray:
        """Moving inner boxes ``(ncells, d, 2)`` at local time ``t``."""
        s = np.clip(t / self.T, 0.0, 1.0)
        lo = (1.0 - s) * self.src.inner[:, :, 0] + s * self.tgt.inner[:, :, 0]
        width = _width(self._wa, self._wb, s, self.path)
        return np.stack([lo, lo + width], axis=2)

    @property
    def _wa(self):
        return self.src.inner[:, :, 1] - self.src.inner[:, :, 0]

    @property
    def _wb(self):
        return self.tgt.inner[:, :, 1] - self.tgt.inner[:, :, 0]

    def alpha(self, t: float) -> np.ndarray:
        """Per-cell, per-axis stretch rate ``w'(t) / w(t)``.

        For the linear path this is ``(w_target - w_source) / (T w(t))``.
        """
        s = np.clip(t / self.T, 0.0, 1.0)
        return _stretch(self._wa, self._wb, s, self.T, self.path)

    def beta(self, t: float) -> np.ndarray:
        """Offsets so that the cell velocity is ``alpha * x + beta``."""
        box = self.corners(t)
        drift = (self.tgt.inner[:, :, 0] - self.src.inner[:, :, 0]) / self.T
        return drift - self.alpha(t) * box[:, :, 0]

    def closed_form(self, x0: np.ndarray, cell: int, t: float) -> np.ndarray:
        """Exact position at time ``t`` of a point starting in inner cell ``cell``."""
        a = self.src.inner[cell]
        frac = (x0 - a[:, 0]) / (a[:, 1] - a[:, 0])
        box = self.corners(t)[cell]
        return box[:, 0] + frac * (box[:, 1] - box[:, 0])

    def band(self) -> float:
        m = min(float(self.src.margins().min()), float(self.tgt.margins().min()))
        return 0.5 * m


PATHS = ("linear", "geometric")


def _width(wa, wb, s, path):
    if path == "linear":
        return (1.0 - s) * wa + s * wb
    return wa ** (1.0 - s) * wb**s


def _stretch(wa, wb, s, T, path):
    if path == "linear":
        return (wb - wa) / (T * _width(wa, wb, s, path))
    return np.log(wb / wa) / T


@register("cell_transport")
class CellTransportField(VectorField):
    """Velocity realizing a cell transport plan on local time ``[0, T]``,
    placed on the global clock at ``t0``."""

    def __init__(self, src: GridFrame, tgt: GridFrame, T: float, band: float, t0: float = 0.0, path: str = "linear"):
        if path not in PATHS:
            raise ValueError(f"path must be one of {PATHS}")
        self.path = path
        if band <= 0:
            raise PlanDegenerate("margin band has zero width (need n >= 3 and distinct particles)", band=band)
        self.src, self.tgt = src, tgt
        self.T, self.h, self.t0 = float(T), float(band), float(t0)
        self.n = len(src.cols) - 1
        self.dim = src.inner.shape[1]
        self._wa = src.inner[:, :, 1] - src.inner[:, :, 0]
        self._wb = tgt.inner[:, :, 1] - tgt.inner[:, :, 0]
        self._drift = (tgt.inner[:, :, 0] - src.inner[:, :, 0]) / self.T
        widths = np.minimum(self._wa, self._wb)
        if path == "linear":
            stretch = float(np.max(np.abs(self._wb - self._wa) / (self.T * widths)))
        else:
            stretch = float(np.max(np.abs(np.log(self._wb / self._wa)))) / self.T
        ends = np.concatenate([tgt.inner - src.inner]).reshape(-1)
        speed = float(np.max(np.abs(ends))) / self.T * np.sqrt(self.dim)
        self.sup_bound = speed
        self.lipschitz = stretch + speed * SMOOTHSTEP_SLOPE / self.h

    def _locate(self, x, s):
        cols = (1.0 - s) * self.src.cols + s * self.tgt.cols
        i = np.clip(np.searchsorted(cols, x[:, 0], side="right") - 1, 0, self.n - 1)
        if self.dim == 1:
            return i
        rows = (1.0 - s) * self.src.rows + s * self.tgt.rows
        # one sorted array of all interior row breaks, column i shifted by i * span
        base = rows[0, 0]
        span = float(rows.max() - base) + 1.0 + float(np.max(np.abs(x[:, 1] - base)))
        shift = span * np.arange(self.n)
        flat = (rows[:, 1:-1] - base + shift[:, None]).ravel()
        key = x[:, 1] - base + shift[i]
        j = np.searchsorted(flat, key, side="right") - i * (self.n - 1)
        return i * self.n + np.clip(j, 0, self.n - 1)

    def _local(self, t):
        # RK4 stages land on the window ends up to rounding; keep them inside
        tau = t - self.t0
        tol = TIME_TOL * max(1.0, abs(t))
        if tau < -tol or tau > self.T + tol:
            return None
        return min(max(tau / self.T, 0.0), 1.0)

    def weight_and_velocity(self, x, t):
        """Bump weight (1 in the moving boxes, 0 beyond the band) and the
        affine cell velocity, or ``(None, None)`` outside the time window."""
        s = self._local(t)
        if s is None:
            return None, None
        c = self._locate(x, s)
        box_lo = (1.0 - s) * self.src.inner[:, :, 0] + s * self.tgt.inner[:, :, 0]
        box_w = _width(self._wa, self._wb, s, self.path)
        alpha = _stretch(self._wa, self._wb, s, self.T, self.path)
        lo = box_lo[c]
        hi = lo + box_w[c]
        vel = self._drift[c] + alpha[c] * (x - lo)
        gap = np.max(np.maximum(np.maximum(lo - x, x - hi), 0.0), axis=1)
        return 1.0 - smoothstep(gap / self.h), vel

    def __call__(self, x, t):
        bump, vel = self.weight_and_velocity(x, t)
        if bump is None:
            return np.zeros_like(x, dtype=float)
        return bump[:, None] * vel

    def to_dict(self):
        return {
            "kind": self.kind,
            "source": self.src.to_dict(),
            "target": self.tgt.to_dict(),
            "T": self.T,
            "band": self.h,
            "t0": self.t0,
            "path": self.path,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            GridFrame.from_dict(d["source"]),
            GridFrame.from_dict(d["target"]),
            d["T"],
            d["band"],
            d["t0"],
            d.get("path", "linear"),
        )


def cell_transport_field(plan: CellTransportPlan, t0: float = 0.0) -> CellTransportField:
    return CellTransportField(plan.src, plan.tgt, plan.T, plan.band(), t0, plan.path)


def build_plan(mu0: Measure, mu1: Measure, n: int, T: float, path: str = "linear") -> CellTransportPlan:
    """Quantile grids with inner margins on both sides, matched cell by cell."""
    if n < 3:
        raise PlanDegenerate(f"n = {n} leaves no margin band; need n >= 3", n=n)
    g0 = inner_cell_margins(mu0, quantile_grid_decompose(mu0, n))
    g1 = inner_cell_margins(mu1, quantile_grid_decompose(mu1, n))
    return CellTransportPlan(g0, g1, T, path)


def residual_mass(plan: CellTransportPlan, mu0: Measure) -> float:
    """Mass outside the inner source boxes, i.e. left uncontrolled."""
    return float(mu0.total_mass - plan.source.inner_masses(mu0).sum())


def transfer_inside_omega(mu0: Measure, mu1: Measure, omega, T: float, n: int, t0: float = 0.0) -> ControlSchedule:
    """One-phase schedule moving ``mu0`` close to ``mu1`` within ``omega``."""
    region = as_region(omega)
    for name, mu in (("source", mu0), ("target", mu1)):
        if not np.all(region.contains(mu.positions)):
            raise SupportViolation(f"{name} support leaks outside the control region", side=name)
    plan = build_plan(mu0, mu1, n, T)
    u = cell_transport_field(plan, t0)
    info = {
        "n": n,
        "T": T,
        "band": plan.band(),
        "residual_mass": residual_mass(plan, mu0),
        "residual_bound": 4.0 * (n - 1) / n**2 if mu0.dim == 2 else 2.0 / n**2,
    }
    sched = ControlSchedule([Phase(t0, t0 + T, u, "cell_transport")], region, info)
    sched.plan = plan
    return sched


@register("release_window")
class ReleaseWindowField(VectorField):
    """Storage control with a cell transport running on top of it.

    Inside the moving boxes the drift is cancelled completely, so the total
    velocity is exactly the affine cell velocity; beyond the fade band the
    plain storage control acts.  Both pieces vanish outside the control
    region.
    """

    def __init__(self, store: VectorField, cell: CellTransportField):
        self.store, self.cell = store, cell
        self.v = store.v
        self.dim = cell.dim
        sups = (store.sup_bound, cell.sup_bound)
        self.sup_bound = None if None in sups else float(sum(sups)) + float(sups[0])
        lips = (store.lipschitz, cell.lipschitz, self.v.lipschitz)
        self.lipschitz = None if None in lips else float(sum(lips)) + float(sups[0] or 0) * SMOOTHSTEP_SLOPE / cell.h

    def __call__(self, x, t):
        out = self.store(x, t)
        bump, vel = self.cell.weight_and_velocity(x, t)
        if bump is None:
            return out
        total = self.v(x, t) + out
        return out + bump[:, None] * (vel - total)

    def to_dict(self):
        return {"kind": self.kind, "store": self.store.to_dict(), "cell": self.cell.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(field_from_dict(d["store"]), field_from_dict(d["cell"]))
