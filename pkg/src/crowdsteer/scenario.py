"""Scenario files: measures, drift, control region and numeric parameters.

A scenario is a YAML mapping::

    dim: 1
    initial: {kind: uniform_box, lo: [0], hi: [1]}
    target:  {kind: density_1d, pieces: [[4, 6, 0.5]]}
    field:   {kind: constant, value: [1]}
    omega:   {lo: [2], hi: [3]}
    params:  {slices: 3, horizon: 4.5}
    output:  out

Measures are ``uniform_box`` (``lo``, ``hi``, optional ``mass``),
``density_1d`` (``pieces`` of ``[lo, hi, value]``) or ``particle_file``
(``path`` to a CSV with columns ``x1..xd,weight``, relative to the scenario
file).  Fields are ``constant`` (``value``), ``affine`` (``matrix``,
``offset``) or ``table`` (1D, ``grid`` and ``values``).
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
import yaml

from .errors import ParseError, ValidationError
from .fields import AffineField, ConstantField, TableField1D, VectorField
from .measure import Measure, Region

MEASURE_KINDS = ("uniform_box", "density_1d", "particle_file")
FIELD_KINDS = ("constant", "affine", "table")
METHODS = ("full", "bucket")
TOP_KEYS = ("name", "dim", "initial", "target", "field", "omega", "params", "output")


@dataclass(frozen=True)
class Params:
    dt: float = 1e-3
    N: int = 10_000
    n: int = 8
    K: float = 64.0
    eps: float = 0.02
    w_m: float = 0.02
    seed: int = 42
    horizon: float | None = None
    t_max: float = 100.0
    method: str = "full"
    delta: float = 1.5
    storage_k: float = 4.0
    buckets: int = 8
    slack: float = 1.0 / 3.0
    T0: float | None = None
    variant: str = "fan"
    slices: int = 3
    snapshots: int = 21
    track: int = 20
    bins: int = 130
    cap: int = 2000

    POSITIVE = ("dt", "N", "n", "K", "eps", "w_m", "t_max", "delta", "storage_k", "buckets", "snapshots", "cap", "bins", "slices")

    def validate(self):
        for name in self.POSITIVE:
            if not getattr(self, name) > 0:
                raise ValidationError(f"params.{name} must be positive", field=f"params.{name}")
        for name in ("horizon", "T0"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValidationError(f"params.{name} must be positive", field=f"params.{name}")
        if self.slack < 0 or self.track < 0 or self.seed < 0:
            raise ValidationError("params.slack, params.track and params.seed must be nonnegative", field="params")
        if self.method not in METHODS:
            raise ValidationError(f"params.method must be one of {METHODS}", field="params.method")
        if self.variant not in ("fan", "literal"):
            raise ValidationError("params.variant must be fan or literal", field="params.variant")


_INT_PARAMS = {"N", "n", "seed", "buckets", "snapshots", "track", "bins", "cap", "slices"}
_STR_PARAMS = {"method", "variant"}


@dataclass(frozen=True)
class MeasureSpec:
    kind: str
    lo: tuple | None = None
    hi: tuple | None = None
    mass: float = 1.0
    pieces: tuple | None = None
    path: str | None = None

    def build(self, dim: int, N: int, rng: np.random.Generator) -> Measure:
        if self.kind == "uniform_box":
            return Measure.uniform_box(self.lo, self.hi, N, rng, self.mass)
        if self.kind == "density_1d":
            return Measure.from_density_1d(self.pieces, N, rng)
        return Measure.from_csv(self.path)

    def to_dict(self) -> dict:
        keys = {
            "uniform_box": ("lo", "hi", "mass"),
            "density_1d": ("pieces",),
            "particle_file": ("path",),
        }[self.kind]
        out = {"kind": self.kind}
        for k in keys:
            val = getattr(self, k)
            out[k] = [list(p) for p in val] if k == "pieces" else (list(val) if isinstance(val, tuple) else val)
        return out


@dataclass(frozen=True)
class FieldSpec:
    kind: str
    value: tuple | None = None
    matrix: tuple | None = None
    offset: tuple | None = None
    grid: tuple | None = None
    values: tuple | None = None

    def build(self) -> VectorField:
        if self.kind == "constant":
            return ConstantField(self.value)
        if self.kind == "affine":
            return AffineField(self.matrix, self.offset)
        return TableField1D(self.grid, self.values)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, val in asdict(self).items():
            if k != "kind" and val is not None:
                out[k] = [list(r) for r in val] if k == "matrix" else list(val)
        return out


@dataclass(frozen=True)
class Scenario:
    dim: int
    initial: MeasureSpec
    target: MeasureSpec
    field: FieldSpec
    omega_lo: tuple
    omega_hi: tuple
    params: Params = field(default_factory=Params)
    output: str = "out"
    name: str = ""

    @property
    def omega(self) -> Region:
        return Region.box(self.omega_lo, self.omega_hi)

    def rngs(self):
        """Independent generators for the initial measure, the target and
        any later resampling, all derived from the scenario seed."""
        seqs = np.random.SeedSequence(self.params.seed).spawn(3)
        return [np.random.default_rng(s) for s in seqs]

    def measures(self) -> tuple[Measure, Measure]:
        r0, r1, _ = self.rngs()
        p = self.params
        return self.initial.build(self.dim, p.N, r0), self.target.build(self.dim, p.N, r1)

    def velocity(self) -> VectorField:
        return self.field.build()

    def to_dict(self) -> dict:
        defaults = Params()
        params = {f.name: getattr(self.params, f.name) for f in fields(Params)}
        params = {k: v for k, v in params.items() if v != getattr(defaults, k) or k in ("dt", "N", "seed")}
        out = {
            "dim": self.dim,
            "initial": self.initial.to_dict(),
            "target": self.target.to_dict(),
            "field": self.field.to_dict(),
            "omega": {"lo": list(self.omega_lo), "hi": list(self.omega_hi)},
            "params": params,
            "output": self.output,
        }
        if self.name:
            out["name"] = self.name
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def with_params(self, **changes) -> "Scenario":
        return replace(self, params=replace(self.params, **changes))


# parsing ------------------------------------------------------------------


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ValidationError(f"missing field {where}.{key}", field=f"{where}.{key}")
    return d[key]


def _vector(val, where: str, dim: int | None = None) -> tuple:
    try:
        arr = np.atleast_1d(np.asarray(val, dtype=float))
    except (TypeError, ValueError):
        raise ValidationError(f"{where} must be a list of numbers", field=where) from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ValidationError(f"{where} must be a finite vector", field=where)
    if dim is not None and arr.size != dim:
        raise ValidationError(f"{where} must have {dim} entries", field=where, got=int(arr.size))
    return tuple(float(v) for v in arr)


def _check_keys(d, allowed, where):
    if not isinstance(d, dict):
        raise ValidationError(f"{where} must be a mapping", field=where)
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ValidationError(f"unknown field {where}.{extra[0]}", field=f"{where}.{extra[0]}")


def _measure_spec(d, where: str, dim: int, base_dir: str) -> MeasureSpec:
    _check_keys(d, ("kind", "lo", "hi", "mass", "pieces", "path"), where)
    kind = _require(d, "kind", where)
    if kind not in MEASURE_KINDS:
        raise ValidationError(f"{where}.kind must be one of {MEASURE_KINDS}", field=f"{where}.kind")
    if kind == "uniform_box":
        lo = _vector(_require(d, "lo", where), f"{where}.lo", dim)
        hi = _vector(_require(d, "hi", where), f"{where}.hi", dim)
        if not all(b > a for a, b in zip(lo, hi)):
            raise ValidationError(f"{where}: need lo < hi on every axis", field=f"{where}.hi")
        mass = float(d.get("mass", 1.0))
        if not mass > 0:
            raise ValidationError(f"{where}.mass must be positive", field=f"{where}.mass")
        return MeasureSpec(kind, lo=lo, hi=hi, mass=mass)
    if kind == "density_1d":
        if dim != 1:
            raise ValidationError(f"{where}: density_1d needs dim 1", field=f"{where}.kind")
        raw = _require(d, "pieces", where)
        pieces = tuple(_vector(p, f"{where}.pieces", 3) for p in raw)
        if not pieces or any(b <= a or v < 0 for a, b, v in pieces) or sum((b - a) * v for a, b, v in pieces) <= 0:
            raise ValidationError(f"{where}.pieces need lo < hi, value >= 0 and positive mass", field=f"{where}.pieces")
        return MeasureSpec(kind, pieces=pieces)
    path = str(_require(d, "path", where))
    full = path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))
    if not os.path.isfile(full):
        raise ValidationError(f"{where}.path: file not found", field=f"{where}.path", path=full)
    return MeasureSpec(kind, path=full)


def _field_spec(d, dim: int) -> FieldSpec:
    _check_keys(d, ("kind", "value", "matrix", "offset", "grid", "values"), "field")
    kind = _require(d, "kind", "field")
    if kind not in FIELD_KINDS:
        raise ValidationError(f"field.kind must be one of {FIELD_KINDS}", field="field.kind")
    if kind == "constant":
        return FieldSpec(kind, value=_vector(_require(d, "value", "field"), "field.value", dim))
    if kind == "affine":
        rows = _require(d, "matrix", "field")
        matrix = tuple(_vector(r, "field.matrix", dim) for r in np.atleast_2d(np.asarray(rows, dtype=object)).tolist())
        if len(matrix) != dim:
            raise ValidationError(f"field.matrix must be {dim}x{dim}", field="field.matrix")
        return FieldSpec(kind, matrix=matrix, offset=_vector(_require(d, "offset", "field"), "field.offset", dim))
    if dim != 1:
        raise ValidationError("field.kind table needs dim 1", field="field.kind")
    grid = _vector(_require(d, "grid", "field"), "field.grid")
    values = _vector(_require(d, "values", "field"), "field.values", len(grid))
    if len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValidationError("field.grid must be strictly increasing", field="field.grid")
    return FieldSpec(kind, grid=grid, values=values)


def _params(d) -> Params:
    d = {} if d is None else d
    _check_keys(d, [f.name for f in fields(Params)], "params")
    kw = {}
    for key, val in d.items():
        try:
            if key in _STR_PARAMS:
                kw[key] = str(val)
            elif val is None:
                kw[key] = None
            elif key in _INT_PARAMS:
                if float(val) != int(float(val)):
                    raise ValueError
                kw[key] = int(float(val))
            else:
                kw[key] = float(val)
        except (TypeError, ValueError):
            raise ValidationError(f"params.{key} has the wrong type", field=f"params.{key}") from None
    p = Params(**kw)
    p.validate()
    return p


def scenario_from_dict(d: dict, base_dir: str = ".") -> Scenario:
    _check_keys(d, TOP_KEYS, "scenario")
    dim = _require(d, "dim", "scenario")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise ValidationError("dim must be a positive integer", field="dim")
    omega = _require(d, "omega", "scenario")
    _check_keys(omega, ("lo", "hi"), "omega")
    lo = _vector(_require(omega, "lo", "omega"), "omega.lo", dim)
    hi = _vector(_require(omega, "hi", "omega"), "omega.hi", dim)
    if not all(b > a for a, b in zip(lo, hi)):
        raise ValidationError("omega: need lo < hi on every axis", field="omega.hi")
    return Scenario(
        dim=dim,
        initial=_measure_spec(_require(d, "initial", "scenario"), "initial", dim, base_dir),
        target=_measure_spec(_require(d, "target", "scenario"), "target", dim, base_dir),
        field=_field_spec(_require(d, "field", "scenario"), dim),
        omega_lo=lo,
        omega_hi=hi,
        params=_params(d.get("params")),
        output=str(d.get("output", "out")),
        name=str(d.get("name", "")),
    )


def load_yaml(text: str, source: str = "<string>"):
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark or e.context_mark
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"{source}: {e.problem or e}", line=line, source=source) from None
    except yaml.YAMLError as e:
        raise ParseError(f"{source}: {e}", source=source) from None
    if not isinstance(data, dict):
        raise ParseError(f"{source}: a scenario must be a mapping", line=1, source=source)
    return data


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``key=value`` strings; values are read as YAML scalars.

    Dotted keys address nested sections (``params.n=16``); a bare key that
    is not a top-level field refers to ``params``.
    """
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in d.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not key=value", field=item)
        key, raw = item.split("=", 1)
        value = load_override_value(raw)
        parts = key.strip().split(".")
        if len(parts) == 1 and parts[0] not in TOP_KEYS:
            parts = ["params", parts[0]]
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            elif not isinstance(nxt, dict):
                raise ValidationError(f"override {key!r} descends into a non-mapping", field=key)
            else:
                nxt = node[p] = dict(nxt)
            node = nxt
        node[parts[-1]] = value
    return out


def load_override_value(raw: str):
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def parse_scenario(path, overrides=()) -> Scenario:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror}", source=str(path)) from None
    data = apply_overrides(load_yaml(text, str(path)), overrides)
    return scenario_from_dict(data, os.path.dirname(os.path.abspath(path)))


def parse_scenario_text(text: str, base_dir: str = ".", overrides=()) -> Scenario:
    return scenario_from_dict(apply_overrides(load_yaml(text), overrides), base_dir)


def write_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as f:
        f.write(sc.to_yaml())
