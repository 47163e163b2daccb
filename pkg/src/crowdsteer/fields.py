"""Time-dependent velocity fields.

Fields are evaluated on whole particle arrays: ``field(x, t)`` takes an
``(N, d)`` array and a scalar time and returns ``(N, d)`` velocities.  Each
concrete field serializes to a ``{"kind": ..., ...}`` dict so schedules can
be written to JSON and rebuilt bit-identically.
"""
from __future__ import annotations

import numpy as np

_REGISTRY: dict[str, type] = {}


def register(kind: str):
    def deco(cls):
        cls.kind = kind
        _REGISTRY[kind] = cls
        return cls

    return deco


def field_from_dict(d: dict) -> "VectorField":
    try:
        cls = _REGISTRY[d["kind"]]
    except KeyError:
        raise ValueError(f"unknown field kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


class VectorField:
    """Base class.  ``lipschitz`` and ``sup_bound`` may be ``None`` (unknown)."""

    kind = "abstract"
    dim: int = 1
    lipschitz: float | None = None
    sup_bound: float | None = None

    def __call__(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_dict(cls, d: dict) -> "VectorField":
        raise NotImplementedError

    def __add__(self, other: "VectorField") -> "VectorField":
        return SumField((self, other))


@register("zero")
class ZeroField(VectorField):
    def __init__(self, dim: int = 1):
        self.dim = int(dim)
        self.lipschitz = 0.0
        self.sup_bound = 0.0

    def __call__(self, x, t):
        return np.zeros_like(x, dtype=float)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}

    @classmethod
    def from_dict(cls, d):
        return cls(d["dim"])


@register("constant")
class ConstantField(VectorField):
    def __init__(self, value):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))
        self.dim = self.value.size
        self.lipschitz = 0.0
        self.sup_bound = float(np.linalg.norm(self.value))

    def __call__(self, x, t):
        return np.broadcast_to(self.value, x.shape).copy()

    def to_dict(self):
        return {"kind": self.kind, "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["value"])


@register("affine")
class AffineField(VectorField):
    """``x -> A x + b``.  Unbounded on R^d, so ``sup_bound`` is left unknown."""

    def __init__(self, matrix, offset):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.offset = np.atleast_1d(np.asarray(offset, dtype=float))
        self.dim = self.offset.size
        self.lipschitz = float(np.linalg.norm(self.matrix, 2))

    def __call__(self, x, t):
        return x @ self.matrix.T + self.offset

    def to_dict(self):
        return {"kind": self.kind, "matrix": self.matrix.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["matrix"], d["offset"])


@register("table1d")
class TableField1D(VectorField):
    """Tabulated 1D field, linear interpolation, constant beyond the table."""

    def __init__(self, grid, values):
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.grid.ndim != 1 or self.grid.shape != self.values.shape or np.any(np.diff(self.grid) <= 0):
            raise ValueError("table needs a strictly increasing grid and matching values")
        self.dim = 1
        self.lipschitz = float(np.max(np.abs(np.diff(self.values) / np.diff(self.grid)), initial=0.0))
        self.sup_bound = float(np.max(np.abs(self.values)))

    def __call__(self, x, t):
        return np.interp(x[:, 0], self.grid, self.values).reshape(-1, 1)

    def to_dict(self):
        return {"kind": self.kind, "grid": self.grid.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["grid"], d["values"])


@register("sum")
class SumField(VectorField):
    def __init__(self, parts):
        self.parts = tuple(parts)
        self.dim = self.parts[0].dim
        lips = [p.lipschitz for p in self.parts]
        sups = [p.sup_bound for p in self.parts]
        self.lipschitz = None if any(v is None for v in lips) else float(sum(lips))
        self.sup_bound = None if any(v is None for v in sups) else float(sum(sups))

    def __call__(self, x, t):
        out = self.parts[0](x, t)
        for p in self.parts[1:]:
            out = out + p(x, t)
        return out

    def to_dict(self):
        return {"kind": self.kind, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d):
        return cls([field_from_dict(p) for p in d["parts"]])


@register("shifted")
class TimeShifted(VectorField):
    """``base`` evaluated at ``t - t0``: places a locally-timed field on a schedule."""

    def __init__(self, base: VectorField, t0: float):
        self.base = base
        self.t0 = float(t0)
        self.dim = base.dim
        self.lipschitz = base.lipschitz
        self.sup_bound = base.sup_bound

    def __call__(self, x, t):
        return self.base(x, t - self.t0)

    def to_dict(self):
        return {"kind": self.kind, "t0": self.t0, "base": self.base.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(field_from_dict(d["base"]), d["t0"])


class FunctionField(VectorField):
    """Wraps a plain callable; not serializable.  Used in tests and one-offs."""

    kind = "function"

    def __init__(self, fn, dim: int = 1, lipschitz=None, sup_bound=None):
        self.fn = fn
        self.dim = dim
        self.lipschitz = lipschitz
        self.sup_bound = sup_bound

    def __call__(self, x, t):
        return np.asarray(self.fn(x, t), dtype=float).reshape(x.shape)

    def to_dict(self):
        raise TypeError("FunctionField cannot be serialized")


def estimate_lipschitz(
    field: VectorField,
    lo,
    hi,
    times=(0.0,),
    n_pairs: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest finite-difference ratio ``|w(x)-w(y)|/|x-y|`` over random pairs.

    This only bounds the true constant from below.  Half the pairs are close
    neighbours so that sharp local slopes are seen.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    x = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    y = rng.uniform(lo, hi, size=(n_pairs, lo.size))
    half = n_pairs // 2
    y[:half] = x[:half] + 1e-3 * (hi - lo) * rng.standard_normal((half, lo.size))
    best = 0.0
    for t in times:
        dv = np.linalg.norm(field(x, t) - field(y, t), axis=1)
        dx = np.linalg.norm(x - y, axis=1)
        ok = dx > 0
        if ok.any():
            best = max(best, float(np.max(dv[ok] / dx[ok])))
    return best


def sample_sup(field: VectorField, lo, hi, t: float = 0.0, n: int = 10_000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    x = rng.uniform(lo, hi, size=(n, lo.size))
    return float(np.max(np.linalg.norm(field(x, t), axis=1)))


def smoothstep(s):
    """Quintic ``10s^3 - 15s^4 + 6s^5`` clamped to [0, 1]; C2 with flat ends."""
    s = np.clip(s, 0.0, 1.0)
    return s * s * s * (10.0 + s * (-15.0 + 6.0 * s))


SMOOTHSTEP_SLOPE = 15.0 / 8.0
