"""Storage control: slow the drift to a stop inside the control region.

The cutoff ``theta`` is 0 on ``omega0``, 1 at distance ``alpha / (2k)`` and
beyond, and the control is ``(theta - 1) v``.  The controlled velocity is
``theta * v``, so controlled paths retrace the uncontrolled ones, only slower.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..fields import SMOOTHSTEP_SLOPE, VectorField, field_from_dict, register, smoothstep
from ..flow import DEFAULT_DT, rk4_step
from ..measure import Region, as_region


@dataclass(frozen=True)
class StorageParams:
    """Cutoff geometry.  ``alpha`` is the gap between ``omega0`` and the
    boundary of the control region, ``k`` the sharpness."""

    omega0: Region
    alpha: float
    k: float

    def __post_init__(self):
        object.__setattr__(self, "omega0", as_region(self.omega0))
        if self.alpha <= 0 or self.k <= 0:
            raise ValueError("alpha and k must be positive")

    @classmethod
    def inside(cls, omega, inset: float = 0.1, k: float = 64) -> "StorageParams":
        """``omega0`` = the box ``omega`` inset by ``inset`` of its width per side."""
        box = as_region(omega).as_box()
        omega0 = box.shrink(inset)
        alpha = float(np.min(inset * box.width))
        return cls(Region((omega0,)), alpha, k)

    @property
    def layer(self) -> float:
        """Width of the transition layer around ``omega0``."""
        return self.alpha / (2.0 * self.k)

    def theta(self, x) -> np.ndarray:
        return smoothstep(self.omega0.distance(x) / self.layer)

    def in_transition(self, x) -> np.ndarray:
        """Points of the set where ``theta < 1`` (``omega0`` plus the layer)."""
        return self.omega0.distance(x) < self.layer

    def in_omega1(self, x) -> np.ndarray:
        return self.omega0.distance(x) < 0.5 * self.alpha

    def to_dict(self) -> dict:
        return {"omega0": self.omega0.to_dict(), "alpha": self.alpha, "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "StorageParams":
        return cls(Region.from_dict(d["omega0"]), float(d["alpha"]), float(d["k"]))


@register("storage")
class StorageField(VectorField):
    def __init__(self, v: VectorField, params: StorageParams):
        self.v = v
        self.params = params
        self.dim = v.dim
        sup_v = v.sup_bound
        self.sup_bound = sup_v
        if v.lipschitz is not None and sup_v is not None:
            self.lipschitz = v.lipschitz + sup_v * SMOOTHSTEP_SLOPE / params.layer
        else:
            self.lipschitz = None

    def __call__(self, x, t):
        theta = self.params.theta(x)
        return (theta - 1.0)[:, None] * self.v(x, t)

    def to_dict(self):
        return {"kind": self.kind, "v": self.v.to_dict(), "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(field_from_dict(d["v"]), StorageParams.from_dict(d["params"]))


def storage_field(v: VectorField, params: StorageParams) -> StorageField:
    return StorageField(v, params)


def _paths(w, x0, t_end, dt):
    """Positions of every starting point at each step, shape ``(steps + 1, N, d)``."""
    steps = max(1, int(np.ceil(t_end / dt - 1e-9)))
    h = t_end / steps
    pts = np.empty((steps + 1,) + x0.shape)
    pts[0] = x0
    x = x0
    for k in range(steps):
        x = rk4_step(w, x, k * h, h)
        pts[k + 1] = x
    return pts, np.arange(steps + 1) * h


def check_reparametrization(
    v: VectorField, params: StorageParams, points, t_end: float, dt: float = DEFAULT_DT
) -> dict:
    """Compare controlled and uncontrolled paths from each starting point.

    For every controlled path point the nearest uncontrolled path point gives
    a distance and an implied time ``gamma(t)``.  Returns the worst distance,
    the worst decrease of ``gamma`` and the worst excess ``gamma(t) - t``.
    """
    total = v + storage_field(v, params)
    pts = np.atleast_2d(np.asarray(points, float))
    free, times = _paths(v, pts, t_end, dt)
    ctrl, _ = _paths(total, pts, t_end, dt)
    worst_dist = worst_drop = worst_excess = 0.0
    for i in range(pts.shape[0]):
        dist, idx = cKDTree(free[:, i]).query(ctrl[:, i])
        gamma = times[idx]
        worst_dist = max(worst_dist, float(dist.max()))
        worst_drop = max(worst_drop, float(np.max(gamma[:-1] - gamma[1:], initial=0.0)))
        worst_excess = max(worst_excess, float(np.max(gamma - times)))
    return {"max_distance": worst_dist, "max_gamma_drop": worst_drop, "max_gamma_excess": worst_excess}


__all__ = ["StorageParams", "StorageField", "storage_field", "check_reparametrization"]
