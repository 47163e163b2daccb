"""Characteristics of the continuity equation.

Fixed-step classical RK4 over whole particle arrays.  Solving the continuity
equation is a push-forward of the initial particles along the flow; weights
are never touched, so mass is conserved exactly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFiniteState
from .fields import VectorField
from .measure import Measure, as_region

DEFAULT_DT = 1e-3
GUARD = 1e6
REFINE = 100


class _Reversed(VectorField):
    """Field for integrating backward in time from ``t_start``.

    ``y'(s) = -w(y, t_start - s)`` so a forward integrator in ``s`` realizes
    the backward flow of ``w``.
    """

    def __init__(self, base: VectorField, t_start: float):
        self.base = base
        self.t_start = t_start
        self.dim = base.dim

    def __call__(self, x, s):
        return -self.base(x, self.t_start - s)


def rk4_step(w: VectorField, x: np.ndarray, t: float, h: float) -> np.ndarray:
    k1 = w(x, t)
    k2 = w(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = w(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = w(x + h * k3, t + h)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _n_steps(span: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return max(1, math.ceil(span / dt - 1e-9)) if span > 0 else 0


def _check_guard(x, guard):
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > guard):
        bad = np.flatnonzero(~np.all(np.isfinite(x) & (np.abs(x) <= guard), axis=1))
        raise NonFiniteState(
            "state left the guard box; the field is probably unbounded or buggy",
            first_particle=int(bad[0]),
        )


def integrate(
    w: VectorField,
    x0,
    t0: float,
    t1: float,
    dt: float = DEFAULT_DT,
    observer: Callable[[float, np.ndarray], None] | None = None,
    guard: float = GUARD,
) -> np.ndarray:
    """Flow an ``(N, d)`` array of points from ``t0`` to ``t1`` (either direction).

    The step is shrunk to land exactly on ``t1``.  ``observer(t, x)`` is
    called at the start and after every step with the *physical* time.
    """
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, w.dim)
    span = abs(t1 - t0)
    steps = _n_steps(span, dt)
    if observer is not None:
        observer(t0, x)
    if steps == 0:
        return x
    h = span / steps
    if t1 >= t0:
        field, sign, s0 = w, 1.0, t0
    else:
        field, sign, s0 = _Reversed(w, t0), -1.0, 0.0
    for k in range(steps):
        s = s0 + k * h
        x = rk4_step(field, x, s, h)
        if observer is not None:
            observer(t0 + sign * (k + 1) * h, x)
        if k % 64 == 63:
            _check_guard(x, guard)
    _check_guard(x, guard)
    return x


def flow_map(w: VectorField, x0, t0: float, t1: float, dt: float = DEFAULT_DT) -> np.ndarray:
    """Position at ``t1`` of the characteristic through ``x0`` at ``t0``."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return integrate(w, x0.reshape(1, -1), t0, t1, dt)[0]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        cols = ["t"] + [f"x{k + 1}" for k in range(d)]
        with open(path, "w", newline="") as f:
            f.write("# schema: " + ",".join(cols) + "\n")
            wr = csv.writer(f)
            wr.writerow(cols)
            for t, s in zip(self.times, self.states):
                wr.writerow([repr(float(t))] + [repr(float(v)) for v in s])


def trajectory(w: VectorField, x0, t0: float, t1: float, dt: float = DEFAULT_DT) -> Trajectory:
    times, states = [], []

    def obs(t, x):
        times.append(t)
        states.append(x[0].copy())

    integrate(w, np.atleast_1d(np.asarray(x0, float)).reshape(1, -1), t0, t1, dt, observer=obs)
    return Trajectory(np.array(times), np.array(states))


def solve_continuity(
    w: VectorField, mu0: Measure, t_grid, dt: float = DEFAULT_DT, t_start: float = 0.0
) -> list[Measure]:
    """Snapshots ``mu(t_k)`` of the solution, one per entry of ``t_grid``."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t_grid) < 0) or (t_grid.size and t_grid[0] < t_start):
        raise ValueError("t_grid must be increasing and start at or after t_start")
    out = []
    x, t = np.array(mu0.positions), t_start
    for tk in t_grid:
        x = integrate(w, x, t, tk, dt)
        t = tk
        out.append(Measure(x.copy(), mu0.weights))
    return out


def hitting_times(
    w: VectorField,
    points,
    r,
    t_max: float,
    direction: str = "forward",
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
) -> np.ndarray:
    """First entrance times into ``r`` for many points; ``nan`` if never by ``t_max``.

    Entry is detected on the step grid, then located inside the step by
    bisection on the cubic Hermite interpolant of the step (built from the
    end states and velocities) down to ``dt / 100``; the bracket midpoint is
    reported.  Excursions shorter than one step
    can be missed.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    region = as_region(r)
    x = np.array(points, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, w.dim)
    field = w if direction == "forward" else _Reversed(w, t0)
    s0 = t0 if direction == "forward" else 0.0
    out = np.full(len(x), np.nan)
    inside = region.contains(x)
    out[inside] = 0.0
    active = np.flatnonzero(~inside)
    xa = x[active]
    steps = _n_steps(t_max, dt)
    h = t_max / steps if steps else 0.0
    for k in range(steps):
        if active.size == 0:
            break
        s = s0 + k * h
        xn = rk4_step(field, xa, s, h)
        hit = region.contains(xn)
        if hit.any():
            idx = np.flatnonzero(hit)
            out[active[idx]] = k * h + _entry_offset(field, xa[idx], xn[idx], s, h, region, h / REFINE)
            active = active[~hit]
            xa = xn[~hit]
        else:
            xa = xn
        if k % 64 == 63:
            _check_guard(xa, GUARD)
    return out


def _entry_offset(w, x0, x1, t, h, region, tol):
    """Bisection for the first entry within one step, on the Hermite cubic."""
    f0 = w(x0, t)
    f1 = w(x1, t + h)
    lo = np.zeros(len(x0))
    hi = np.full(len(x0), h)
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        th = (mid / h)[:, None]
        h00 = (1 + 2 * th) * (1 - th) ** 2
        h10 = th * (1 - th) ** 2
        h01 = th * th * (3 - 2 * th)
        h11 = th * th * (th - 1)
        xm = h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1
        ins = region.contains(xm)
        hi = np.where(ins, mid, hi)
        lo = np.where(ins, lo, mid)
    return 0.5 * (lo + hi)


def hitting_time(
    w: VectorField, x0, r, t_max: float, direction: str = "forward", dt: float = DEFAULT_DT
) -> float | None:
    """Single-point version of :func:`hitting_times`; ``None`` if never entered."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)).reshape(1, -1)
    t = hitting_times(w, x0, r, t_max, direction, dt)[0]
    return None if np.isnan(t) else float(t)
