"""Piecewise-in-time control schedules and their simulation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import SynthesisError
from ..fields import VectorField, field_from_dict
from ..flow import DEFAULT_DT, integrate
from ..measure import Measure, Region, as_region

TIME_TOL = 1e-12


@dataclass(frozen=True)
class Phase:
    t_start: float
    t_end: float
    field: VectorField
    label: str

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "t_start": float(self.t_start),
            "t_end": float(self.t_end),
            "field": self.field.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Phase":
        return cls(float(d["t_start"]), float(d["t_end"]), field_from_dict(d["field"]), d["label"])


@dataclass
class ControlSchedule:
    """Ordered, contiguous control phases acting inside ``omega``.

    ``info`` carries synthesis diagnostics (hitting-time bounds, gains, ...)
    and is serialized alongside the phases.
    """

    phases: list
    omega: Region
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = as_region(self.omega)
        for p in self.phases:
            if p.t_end < p.t_start:
                raise SynthesisError("phase ends before it starts", label=p.label)
        for a, b in zip(self.phases, self.phases[1:]):
            if abs(a.t_end - b.t_start) > TIME_TOL * max(1.0, abs(a.t_end)):
                raise SynthesisError("phases must be contiguous", left=a.label, right=b.label)

    @property
    def t_start(self) -> float:
        return self.phases[0].t_start if self.phases else 0.0

    @property
    def horizon(self) -> float:
        return self.phases[-1].t_end if self.phases else 0.0

    @property
    def labels(self) -> list[str]:
        return [p.label for p in self.phases]

    def phase_at(self, t: float) -> Phase | None:
        for p in self.phases:
            if p.t_start <= t < p.t_end:
                return p
        if self.phases and t == self.horizon:
            return self.phases[-1]
        return None

    def control(self, x: np.ndarray, t: float) -> np.ndarray:
        p = self.phase_at(t)
        if p is None:
            return np.zeros_like(x, dtype=float)
        return p.field(x, t)

    def vanishes_outside_omega(self, n: int = 10_000, seed: int = 0, pad: float = 1.0) -> bool:
        """Sampled check that every phase field is 0 outside ``omega``.

        Points are drawn from the hull of ``omega`` padded by ``pad`` times its
        width, keeping only those outside ``omega``.
        """
        rng = np.random.default_rng(seed)
        hull = self.omega.hull
        lo, hi = hull.lo - pad * hull.width, hull.hi + pad * hull.width
        for p in self.phases:
            x = rng.uniform(lo, hi, size=(n, hull.dim))
            x = x[~self.omega.contains(x)]
            ts = rng.uniform(p.t_start, max(p.t_end, p.t_start + 1e-12), size=4)
            for t in ts:
                if np.any(p.field(x, float(t)) != 0.0):
                    return False
        return True

    def to_dict(self) -> dict:
        return {
            "schema": "control_schedule/1",
            "omega": self.omega.to_dict(),
            "phases": [p.to_dict() for p in self.phases],
            "info": self.info,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSchedule":
        return cls([Phase.from_dict(p) for p in d["phases"]], Region.from_dict(d["omega"]), d.get("info", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ControlSchedule":
        return cls.from_dict(json.loads(text))


def simulate(
    schedule: ControlSchedule,
    v: VectorField,
    x0,
    dt: float = DEFAULT_DT,
    until: float | None = None,
    observer=None,
    start: float | None = None,
) -> np.ndarray:
    """Integrate ``v + u`` phase by phase (exact phase endpoints).

    ``x0`` is the state at ``start`` (default: the schedule start).
    """
    x = np.array(x0.positions if isinstance(x0, Measure) else x0, dtype=float)
    stop = schedule.horizon if until is None else until
    begin = schedule.t_start if start is None else start
    for p in schedule.phases:
        if p.t_start >= stop:
            break
        lo, hi = max(p.t_start, begin), min(p.t_end, stop)
        if hi > lo:
            x = integrate(v + p.field, x, lo, hi, dt, observer=observer)
    if stop > schedule.horizon:
        x = integrate(v, x, max(schedule.horizon, begin), stop, dt, observer=observer)
    return x


def simulate_measure(schedule, v, mu0: Measure, dt: float = DEFAULT_DT, until=None) -> Measure:
    return Measure(simulate(schedule, v, mu0.positions, dt, until), mu0.weights)
