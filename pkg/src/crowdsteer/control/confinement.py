"""Confinement control ``k * grad(eta)`` pushing mass into a hypercube S.

``eta`` is a product of sines on the box control region: positive inside,
zero on the boundary, maximal at the centre.  Extended by zero outside.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import KTooSmall, SupportViolation
from ..fields import VectorField, register
from ..measure import Box, as_region


@dataclass(frozen=True)
class EtaBarrier:
    omega: Box
    S: Box

    def __post_init__(self):
        if not (np.all(self.S.lo > self.omega.lo) and np.all(self.S.hi < self.omega.hi)):
            raise SupportViolation("S must be compactly inside the control region")
        if not self.S.contains(self.omega.center[None, :])[0]:
            raise SupportViolation("S must contain the critical point of eta (the box centre)")

    @property
    def dim(self) -> int:
        return self.omega.dim

    def _phase(self, x):
        return np.pi * (x - self.omega.lo) / self.omega.width

    def inside(self, x) -> np.ndarray:
        return np.all((x > self.omega.lo) & (x < self.omega.hi), axis=1)

    def eta(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        val = np.prod(np.sin(self._phase(x)), axis=1)
        return np.where(self.inside(x), val, 0.0)

    def grad(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        ph = self._phase(x)
        s, c = np.sin(ph), np.cos(ph)
        scale = np.pi / self.omega.width
        d = x.shape[1]
        g = np.empty_like(x, dtype=float)
        for i in range(d):
            others = np.prod(np.delete(s, i, axis=1), axis=1) if d > 1 else 1.0
            g[:, i] = scale[i] * c[:, i] * others
        g[~self.inside(x)] = 0.0
        return g

    def kappas(self, x) -> tuple[float, float]:
        """Sampled (min, max) of ``|grad eta|`` over the given points that lie
        in the control region but outside S."""
        x = np.atleast_2d(x)
        keep = self.inside(x) & ~self.S.contains(x)
        if not keep.any():
            return float("inf"), 0.0
        g = np.linalg.norm(self.grad(x[keep]), axis=1)
        return float(g.min()), float(g.max())

    def boundary_samples(self, per_face: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Deterministic points on every face (midpoints of a uniform face grid)
        with their outward normals.  Face corners are excluded, where the
        gradient of a product of sines vanishes."""
        d, lo, hi = self.dim, self.omega.lo, self.omega.hi
        pts, normals = [], []
        u = (np.arange(per_face) + 0.5) / per_face
        for i in range(d):
            for side, value in ((-1.0, lo[i]), (1.0, hi[i])):
                if d == 1:
                    face = np.array([[value]])
                else:
                    grids = np.meshgrid(*[lo[j] + u * (hi[j] - lo[j]) for j in range(d) if j != i], indexing="ij")
                    rest = np.stack([g.ravel() for g in grids], axis=1)
                    face = np.insert(rest, i, value, axis=1)
                n = np.zeros((len(face), d))
                n[:, i] = side
                pts.append(face)
                normals.append(n)
        return np.concatenate(pts), np.concatenate(normals)

    def normal_gradient(self, x, normals) -> np.ndarray:
        """``n . grad eta`` evaluated with the interior formula (on the boundary)."""
        ph = self._phase(x)
        s, c = np.sin(ph), np.cos(ph)
        scale = np.pi / self.omega.width
        d = x.shape[1]
        out = np.zeros(len(x))
        for i in range(d):
            others = np.prod(np.delete(s, i, axis=1), axis=1) if d > 1 else 1.0
            out += normals[:, i] * scale[i] * c[:, i] * others
        return out

    def to_dict(self) -> dict:
        return {"omega": self.omega.to_dict(), "S": self.S.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EtaBarrier":
        return cls(Box.from_dict(d["omega"]), Box.from_dict(d["S"]))


def product_sine_barrier(omega, S: Box | None = None, fraction: float = 0.5) -> EtaBarrier:
    """Barrier on the box ``omega``; ``S`` defaults to the central box holding
    ``fraction`` of the width on every axis."""
    box = as_region(omega).as_box()
    if S is None:
        S = box.shrink(0.5 * (1.0 - fraction))
    return EtaBarrier(box, S)


def boundary_gain(barrier: EtaBarrier, v: VectorField, times=(0.0,)) -> float:
    """Smallest sampled gain making ``n . (v + k grad eta) < 0`` on the boundary."""
    x, n = barrier.boundary_samples()
    ng = barrier.normal_gradient(x, n)
    need = 0.0
    for t in times:
        vn = np.sum(v(x, t) * n, axis=1)
        ratio = vn / np.maximum(-ng, 1e-300)
        need = max(need, float(ratio.max(initial=0.0)))
    return need


def admissible_gain(
    barrier: EtaBarrier, v: VectorField, support, duration: float, times=(0.0,), margin: float = 1.1
) -> float:
    """Gain that drives the given support into S within ``duration``.

    Along ``v + k grad eta`` the barrier grows at least at rate
    ``k kappa0^2 - |v| kappa1`` outside S, where the kappas are sampled on the
    part of the superlevel set ``{eta >= min eta(support)}`` outside S.  The
    rate must lift ``eta`` by its maximum within ``duration``.
    """
    support = np.atleast_2d(np.asarray(support, float))
    inside = support[barrier.inside(support)]
    if len(inside) == 0:
        raise SupportViolation("no support point lies inside the control region")
    eta_min = float(barrier.eta(inside).min())
    rng = np.random.default_rng(0)
    probe = rng.uniform(barrier.omega.lo, barrier.omega.hi, size=(20_000, barrier.dim))
    probe = np.concatenate([probe, inside])
    probe = probe[barrier.eta(probe) >= eta_min]
    k0, k1 = barrier.kappas(probe)
    if not np.isfinite(k0):
        return margin * boundary_gain(barrier, v, times)
    vmax = max(float(np.max(np.linalg.norm(v(probe, t), axis=1))) for t in times)
    rate_need = 1.0 / duration + vmax * k1
    k = max(boundary_gain(barrier, v, times), rate_need / max(k0 * k0, 1e-300))
    return margin * k


@register("confinement")
class ConfinementField(VectorField):
    """``gain * grad(eta)`` inside the control region, 0 outside."""

    def __init__(self, barrier: EtaBarrier, gain: float):
        self.barrier = barrier
        self.gain = float(gain)
        self.dim = barrier.dim
        w = barrier.omega.width
        self.sup_bound = abs(self.gain) * float(np.linalg.norm(np.pi / w))
        self.lipschitz = abs(self.gain) * float(np.sum((np.pi / w) ** 2))

    def __call__(self, x, t):
        return self.gain * self.barrier.grad(x)

    def to_dict(self):
        return {"kind": self.kind, "barrier": self.barrier.to_dict(), "gain": self.gain}

    @classmethod
    def from_dict(cls, d):
        return cls(EtaBarrier.from_dict(d["barrier"]), d["gain"])


def confinement_field(barrier: EtaBarrier, k: float, v: VectorField | None = None, times=(0.0,)) -> ConfinementField:
    """``k * grad(eta)``.  With ``v`` given, checks the boundary sign condition.

    Raises KTooSmall (with the minimal sampled admissible gain) if some
    boundary sample has ``n . (v + k grad eta) >= 0``.
    """
    if k <= 0:
        raise KTooSmall("gain must be positive", k=k, k_min=0.0)
    if v is not None:
        need = boundary_gain(barrier, v, times)
        if k <= need:
            raise KTooSmall("boundary sign condition fails", k=k, k_min=need)
    return ConfinementField(barrier, k)
