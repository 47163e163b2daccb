"""Rarefaction of a unit block on the line.

The worked scenario: ``mu0`` is the indicator of ``[0, 1]``, the drift is
``v = 1``, control acts on ``omega = [2, 3]`` and the target is half the
indicator of ``[4, 6]``.  Stretching the block to twice its length halves
its density.

The elementary tool is the window field ``psi(a, b)``, linear from 0 at ``a``
to 1 at ``b``.  Under ``v + psi`` the window's left end moves at speed 1 and
its right end at speed 2, and a block of constant density inside the window
stays of constant density.

Two schedules are provided:

``"literal"``
    ``n`` windows ``psi(2 + s, 2 + 1/n + 2 s)`` (``s`` the time since the
    window opened), one per slice of mass ``1/n``, opened at
    ``1 + (k + 1) / n``.  Every slice is stretched once, but each slice's
    rear end moves at speed 1 all along, so the slices do not land on their
    share of the target.
``"fan"`` (default)
    The continuum version: total velocity ``(x - 1) / (t - t_c)`` on
    ``omega`` with ``t_c = 1 - 1/n``, a rarefaction fan centred at
    ``(x, t) = (1, t_c)``.  The particle starting at ``x0`` leaves ``omega`` at
    ``3 + 1/n - 2 x0`` and sits exactly at ``4 + 2 x0`` at time ``4 + 1/n``.

Both end at ``4 + 1/n`` and both are made Lipschitz by linear tapers of
width ``w_m`` kept inside ``omega``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .control.schedule import ControlSchedule, Phase, simulate
from .errors import DegenerateWindow, WindowOverflow
from .fields import ConstantField, VectorField, ZeroField, register
from .flow import DEFAULT_DT
from .measure import Measure, Region
from .wasserstein import w1_1d

OMEGA = (2.0, 3.0)
DEFAULT_WM = 0.02
VARIANTS = ("fan", "literal")
TARGET_DENSITY = ((4.0, 6.0, 0.5),)
INITIAL_DENSITY = ((0.0, 1.0, 1.0),)


def _psi(x, a, b, taper):
    """``psi(a, b)`` with a linear decay from 1 to 0 over ``[b, b + taper]``."""
    out = np.where((x >= a) & (x <= b), (x - a) / (b - a), 0.0)
    if taper > 0:
        tail = (x > b) & (x < b + taper)
        out = np.where(tail, 1.0 - (x - b) / taper, out)
    return out


@register("psi")
class PsiField(VectorField):
    """Time-frozen window ``psi(a, b)``, optionally tapered to the right."""

    def __init__(self, a: float, b: float, taper: float = 0.0):
        if not b > a:
            raise DegenerateWindow("window needs a < b", a=a, b=b)
        if taper < 0:
            raise ValueError("taper width must be nonnegative")
        self.a, self.b, self.taper = float(a), float(b), float(taper)
        self.dim = 1
        self.sup_bound = 1.0
        # discontinuous at b without a taper
        self.lipschitz = max(1.0 / (b - a), 1.0 / taper) if taper > 0 else None

    def __call__(self, x, t):
        return _psi(x, self.a, self.b, self.taper)

    def to_dict(self):
        return {"kind": self.kind, "a": self.a, "b": self.b, "taper": self.taper}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["b"], d.get("taper", 0.0))


def psi_field(a: float, b: float) -> PsiField:
    """Exact window: ``(x - a) / (b - a)`` on ``[a, b]`` and 0 elsewhere."""
    return PsiField(a, b)


def mollify(window: PsiField, w_m: float) -> PsiField:
    """Replace the jump at ``b`` by a linear taper to 0 over ``[b, b + w_m]``.

    The field is unchanged for ``x <= b``.
    """
    if w_m <= 0:
        raise ValueError("mollification width must be positive")
    if not isinstance(window, PsiField):
        raise TypeError("only window fields can be mollified")
    return PsiField(window.a, window.b, w_m)


@dataclass(frozen=True)
class Window:
    """A moving window ``psi(a(t), b(t))`` active on ``[t_start, t_end]``."""

    t_start: float
    t_end: float
    a0: float
    b0: float
    speed_a: float = 1.0
    speed_b: float = 2.0

    def a(self, t: float) -> float:
        return self.a0 + self.speed_a * (t - self.t_start)

    def b(self, t: float) -> float:
        return self.b0 + self.speed_b * (t - self.t_start)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@register("psi_window")
class MovingPsiField(VectorField):
    """``psi(a(t), b(t))`` with a taper of width ``min(w_m, limit - b(t))``
    so that the support never passes ``limit``."""

    def __init__(self, window: Window, w_m: float, limit: float = OMEGA[1]):
        self.window, self.w_m, self.limit = window, float(w_m), float(limit)
        self.dim = 1
        self.sup_bound = 1.0
        width = window.b0 - window.a0
        self.lipschitz = max(1.0 / width, 1.0 / w_m) if w_m > 0 else None

    def __call__(self, x, t):
        wd = self.window
        a, b = wd.a(t), wd.b(t)
        taper = max(0.0, min(self.w_m, self.limit - b))
        return _psi(x, a, b, taper)

    def to_dict(self):
        return {"kind": self.kind, "window": self.window.to_dict(), "w_m": self.w_m, "limit": self.limit}

    @classmethod
    def from_dict(cls, d):
        return cls(Window(**d["window"]), d["w_m"], d["limit"])


@register("fan")
class FanField(VectorField):
    """Control turning the unit drift into the fan ``(x - x_c) / (t - t_c)``.

    Acts on ``[lo, hi]`` during ``[t_on, t_off]``; linear ramps of width
    ``w_m`` at both ends of the interval make it vanish continuously.
    """

    def __init__(self, x_c, t_c, t_on, t_off, lo=OMEGA[0], hi=OMEGA[1], w_m=DEFAULT_WM, drift=1.0):
        if not t_on > t_c:
            raise DegenerateWindow("fan centre must precede its activation", t_c=t_c, t_on=t_on)
        self.x_c, self.t_c, self.t_on, self.t_off = float(x_c), float(t_c), float(t_on), float(t_off)
        self.lo, self.hi, self.w_m, self.drift = float(lo), float(hi), float(w_m), float(drift)
        self.dim = 1
        speed = max(abs(self.hi - self.x_c), abs(self.lo - self.x_c)) / (self.t_on - self.t_c)
        self.sup_bound = speed + abs(self.drift)
        self.lipschitz = 1.0 / (self.t_on - self.t_c) + self.sup_bound / self.w_m

    def ramp(self, x):
        w = self.w_m
        return np.clip((x - self.lo) / w, 0.0, 1.0) * np.clip((self.hi - x) / w, 0.0, 1.0)

    def __call__(self, x, t):
        if t < self.t_on or t > self.t_off:
            return np.zeros_like(x, dtype=float)
        u = (x - self.x_c) / (t - self.t_c) - self.drift
        return self.ramp(x) * u

    def to_dict(self):
        keys = ("x_c", "t_c", "t_on", "t_off", "lo", "hi", "w_m", "drift")
        return {"kind": self.kind, **{k: getattr(self, k) for k in keys}}

    @classmethod
    def from_dict(cls, d):
        return cls(*(d[k] for k in ("x_c", "t_c", "t_on", "t_off", "lo", "hi", "w_m", "drift")))


@dataclass
class RarefactionSchedule:
    n: int
    variant: str
    w_m: float
    windows: list = field(default_factory=list)

    @property
    def horizon(self) -> float:
        return 4.0 + 1.0 / self.n

    def breakpoints(self) -> list[float]:
        """Times at which the control changes: window ends plus the horizon."""
        pts = sorted({w.t_start for w in self.windows} | {w.t_end for w in self.windows})
        return pts + [self.horizon]

    def slice_bounds(self) -> np.ndarray:
        """Initial positions splitting the block into slices of mass ``1/n``."""
        return np.linspace(0.0, 1.0, self.n + 1)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "variant": self.variant,
            "w_m": self.w_m,
            "horizon": self.horizon,
            "windows": [w.to_dict() for w in self.windows],
        }


def build_schedule(n: int, w_m: float = DEFAULT_WM, variant: str = "fan"):
    """``(RarefactionSchedule, ControlSchedule)`` ending at ``4 + 1/n``."""
    if n < 1:
        raise ValueError("need at least one slice")
    if w_m <= 0:
        raise ValueError("mollification width must be positive")
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    lo, hi = OMEGA
    rs = RarefactionSchedule(n, variant, w_m)
    T = rs.horizon
    phases = []
    if variant == "literal":
        d = 1.0 / n
        rs.windows = [Window(1.0 + (k + 1) * d, 1.0 + (k + 2) * d, lo, lo + d) for k in range(n)]
        for wd in rs.windows:
            if wd.b(wd.t_end) > hi + 1e-12:
                raise WindowOverflow("a window leaves the control region", b=wd.b(wd.t_end), limit=hi, n=n)
        phases.append(Phase(0.0, rs.windows[0].t_start, ZeroField(1), "idle"))
        for k, wd in enumerate(rs.windows):
            phases.append(Phase(wd.t_start, wd.t_end, MovingPsiField(wd, min(w_m, hi - lo)), f"slice_{k}"))
    else:
        t_c = 1.0 - 1.0 / n
        wd = Window(1.0, 3.0 + 1.0 / n, lo, hi, 0.0, 0.0)
        rs.windows = [wd]
        wm = min(w_m, 0.5 * (hi - lo))
        phases.append(Phase(0.0, wd.t_start, ZeroField(1), "idle"))
        phases.append(Phase(wd.t_start, wd.t_end, FanField(1.0, t_c, wd.t_start, wd.t_end, lo, hi, wm), "fan"))
    if T > phases[-1].t_end:
        phases.append(Phase(phases[-1].t_end, T, ZeroField(1), "idle"))
    info = {"n": n, "variant": variant, "w_m": w_m, "horizon": T}
    return rs, ControlSchedule(phases, Region.box([lo], [hi]), info)


def quantile_particles(pieces, N: int) -> Measure:
    """``N`` equal-weight particles at the midpoint quantiles of a 1D density."""
    pieces = tuple((float(a), float(b), float(v)) for a, b, v in pieces)
    masses = np.array([(b - a) * v for a, b, v in pieces])
    total = float(masses.sum())
    levels = (np.arange(N) + 0.5) / N * total
    edges = np.concatenate([[0.0], np.cumsum(masses)])
    k = np.clip(np.searchsorted(edges, levels, side="right") - 1, 0, len(pieces) - 1)
    a = np.array([p[0] for p in pieces])[k]
    v = np.array([p[2] for p in pieces])[k]
    x = a + (levels - edges[k]) / v
    return Measure(x.reshape(-1, 1), np.full(N, total / N), pieces)


def target_measure(N: int) -> Measure:
    return quantile_particles(TARGET_DENSITY, N)


def initial_measure(N: int) -> Measure:
    return quantile_particles(INITIAL_DENSITY, N)


@dataclass
class ExampleResult:
    final: Measure
    w1: float
    times: np.ndarray
    grid: np.ndarray
    density: np.ndarray
    control: np.ndarray
    schedule: RarefactionSchedule

    def dump_rows(self):
        for i, t in enumerate(self.times):
            for j, x in enumerate(self.grid):
                yield float(t), float(x), float(self.density[i, j]), float(self.control[i, j])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("# schema: t,x,density,control_value\n")
            w = csv.writer(f)
            w.writerow(["t", "x", "density", "control_value"])
            for row in self.dump_rows():
                w.writerow([repr(v) for v in row])


def run_example(
    n: int = 3,
    w_m: float = DEFAULT_WM,
    N: int = 10_000,
    variant: str = "fan",
    dt: float = DEFAULT_DT,
    n_times: int = 27,
    x_range=(0.0, 6.5),
    n_bins: int = 130,
) -> ExampleResult:
    """Simulate the scenario and compare the final state with the target.

    The initial block is sampled at its midpoint quantiles; the distance to
    the target uses the target's exact density.  Snapshots of the particle
    density (histogram) and of the control are taken at ``n_times`` uniform
    times on ``[0, 4 + 1/n]``.
    """
    rs, sched = build_schedule(n, w_m, variant)
    v = ConstantField([1.0])
    mu0 = initial_measure(N)
    edges = np.linspace(x_range[0], x_range[1], n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    times = np.linspace(0.0, rs.horizon, n_times)
    dens, ctrl = [], []
    x, t_prev = np.array(mu0.positions), 0.0
    for t in times:
        x = simulate(sched, v, x, dt, until=t, start=t_prev) if t > t_prev else x
        t_prev = t
        hist, _ = np.histogram(x[:, 0], bins=edges, weights=mu0.weights)
        dens.append(hist / np.diff(edges))
        ctrl.append(sched.control(centers.reshape(-1, 1), float(t))[:, 0])
    final = Measure(x, mu0.weights)
    target = Measure(target_measure(N).positions, np.full(N, 1.0 / N), TARGET_DENSITY)
    return ExampleResult(final, w1_1d(final, target), times, centers, np.array(dens), np.array(ctrl), rs)


__all__ = [
    "PsiField",
    "psi_field",
    "mollify",
    "Window",
    "MovingPsiField",
    "FanField",
    "RarefactionSchedule",
    "build_schedule",
    "quantile_particles",
    "initial_measure",
    "target_measure",
    "ExampleResult",
    "run_example",
]
