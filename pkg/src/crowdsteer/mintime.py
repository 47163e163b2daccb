"""Minimal-time analysis and near-minimal-time bucket control.

Feasibility of a horizon ``T*`` is checked with the flux criterion: at every
time the mass that has already entered the control region (under storage
control) must cover the mass that still has to leave it, up to ``eps``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .control.schedule import ControlSchedule, Phase
from .control.storage import StorageParams, storage_field
from .control.synthesis import SLACK, entry_times
from .control.transport import ReleaseWindowField, build_plan, cell_transport_field
from .errors import BucketMassDeficit, HorizonExceeded, HorizonTooShort, PlanDegenerate
from .fields import VectorField
from .flow import DEFAULT_DT, integrate
from .measure import Measure, as_region

DEFAULT_K = 64
DEFAULT_EPS = 0.02
GRID_STEPS = 200
RESOLUTION = 0.01


@dataclass(frozen=True)
class HittingProfile:
    t0: np.ndarray
    t1: np.ndarray
    t_max: float


def hitting_profile(mu0, mu1, v, omega, t_max: float = 100.0, dt: float = DEFAULT_DT) -> HittingProfile:
    t0, t1 = entry_times(mu0, mu1, v, omega, t_max, dt)
    return HittingProfile(t0, t1, t_max)


def condition2_extract(mu0, mu1, v, omega, t_max: float = 100.0, dt: float = DEFAULT_DT):
    """Surrogates ``(T0*, T1*, omega0)``: worst entry times times 1.1 and the
    control box inset by 10% of its width on every side."""
    prof = hitting_profile(mu0, mu1, v, omega, t_max, dt)
    box = as_region(omega).as_box()
    return SLACK * float(prof.t0.max()), SLACK * float(prof.t1.max()), box.shrink(0.1)


def lower_bounds_ab(profile: HittingProfile) -> tuple[float, float]:
    """Necessary lower bounds on any feasible horizon (worst entry times)."""
    return float(profile.t0.max(initial=0.0)), float(profile.t1.max(initial=0.0))


@dataclass
class FluxLedger:
    times: np.ndarray
    m_in: np.ndarray
    m_target: np.ndarray
    K: float
    eps: float
    T_star: float

    @property
    def slack(self) -> np.ndarray:
        """``m_in + m_target - 1``; feasible where it is at least ``-eps``."""
        return self.m_in + self.m_target - 1.0

    @property
    def feasible(self) -> bool:
        return bool(np.all(self.slack >= -self.eps))

    def to_csv(self, path) -> None:
        cols = ["t", "m_in", "m_target", "slack"]
        with open(path, "w", newline="") as f:
            f.write("# schema: " + ",".join(cols) + f" (K={self.K!r}, eps={self.eps!r}, T_star={self.T_star!r})\n")
            wr = csv.writer(f)
            wr.writerow(cols)
            for row in zip(self.times, self.m_in, self.m_target, self.slack):
                wr.writerow([repr(float(v)) for v in row])


class FluxCurves:
    """Mass-in-region curves computed once and reused for every ``T*``.

    ``m_in(t)`` is the mass of ``mu0`` inside the region after flowing for
    ``t`` under ``v + u_K``; ``back(s)`` is the mass of ``mu1`` inside after
    flowing backward for ``s``.  Both are recorded at every integration step.
    This assumes ``v`` is autonomous.
    """

    def __init__(self, mu0, mu1, v, omega, K=DEFAULT_K, horizon=10.0, dt=DEFAULT_DT):
        self.region = as_region(omega)
        self.K, self.horizon, self.dt = K, float(horizon), dt
        params = StorageParams.inside(self.region.as_box(), 0.1, K)
        w = v + storage_field(v, params)
        self.fwd_t, self.fwd_m = self._record(w, mu0, 0.0, self.horizon)
        bt, bm = self._record(w, mu1, 0.0, -self.horizon)
        self.back_s, self.back_m = -bt, bm

    def _record(self, w, mu, t0, t1):
        times, mass = [], []

        def obs(t, x):
            times.append(t)
            mass.append(float(mu.weights[self.region.contains(x)].sum()))

        integrate(w, mu.positions, t0, t1, self.dt, observer=obs)
        return np.array(times), np.array(mass)

    def m_in(self, t):
        return np.interp(t, self.fwd_t, self.fwd_m)

    def back(self, s):
        return np.interp(s, self.back_s, self.back_m)

    def ledger(self, T_star: float, eps: float, extra_times=()) -> FluxLedger:
        if T_star > self.horizon + 1e-12:
            raise HorizonExceeded("T* beyond the precomputed horizon", T_star=T_star, horizon=self.horizon)
        t = np.linspace(0.0, T_star, GRID_STEPS + 1) if T_star > 0 else np.zeros(1)
        if len(extra_times):
            t = np.unique(np.concatenate([t, np.asarray(extra_times, float)]))
        return FluxLedger(t, self.m_in(t), self.back(T_star - t), self.K, eps, T_star)


def default_horizon(profile: HittingProfile) -> float:
    Ta, Tb = lower_bounds_ab(profile)
    return 1.2 * (Ta + Tb) + 1.0


def flux_feasible(
    T_star: float,
    mu0,
    mu1,
    v,
    omega,
    K: float = DEFAULT_K,
    eps: float = DEFAULT_EPS,
    dt: float = DEFAULT_DT,
    curves: FluxCurves | None = None,
) -> tuple[bool, FluxLedger]:
    """Flux criterion at horizon ``T_star`` on a uniform grid of 200 steps."""
    if curves is None:
        curves = FluxCurves(mu0, mu1, v, omega, K, max(T_star, dt), dt)
    led = curves.ledger(T_star, eps)
    return led.feasible, led


@dataclass
class MinTimeResult:
    T0: float
    T_a: float
    T_b: float
    K: float
    eps: float
    resolution: float
    method: str
    ledger: FluxLedger
    evaluations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema": "mintime/1",
            "T0": self.T0,
            "T_a": self.T_a,
            "T_b": self.T_b,
            "K": self.K,
            "eps": self.eps,
            "resolution": self.resolution,
            "method": self.method,
            "evaluations": [[float(t), bool(ok)] for t, ok in self.evaluations],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def estimate_T0(
    mu0,
    mu1,
    v,
    omega,
    K: float = DEFAULT_K,
    eps: float = DEFAULT_EPS,
    dt: float = DEFAULT_DT,
    horizon: float | None = None,
    resolution: float = RESOLUTION,
    t_max: float = 100.0,
) -> MinTimeResult:
    """Smallest feasible horizon to ``resolution``, by bisection from the
    lower bound ``max(T_a, T_b)``.  The returned value is the feasible end of
    the final bracket.  If a feasible horizon is followed by an infeasible
    larger one the search falls back to a linear scan."""
    prof = hitting_profile(mu0, mu1, v, omega, t_max, dt)
    Ta, Tb = lower_bounds_ab(prof)
    lo = max(Ta, Tb)
    hi = default_horizon(prof) if horizon is None else float(horizon)
    hi = max(hi, lo)
    curves = FluxCurves(mu0, mu1, v, omega, K, hi, dt)
    evals = []

    def feasible(T):
        led = curves.ledger(T, eps)
        evals.append((T, led.feasible))
        return led.feasible

    def result(T, method):
        return MinTimeResult(T, Ta, Tb, K, eps, resolution, method, curves.ledger(T, eps), evals)

    if feasible(lo):
        return result(lo, "lower_bound")
    if not feasible(hi):
        raise HorizonExceeded("flux criterion fails at the search horizon", horizon=hi, K=K, eps=eps)
    a, b = lo, hi
    while b - a > resolution:
        mid = 0.5 * (a + b)
        if feasible(mid):
            b = mid
        else:
            a = mid
    probes = np.linspace(b, hi, 6)[1:]
    if all(feasible(float(t)) for t in probes):
        return result(b, "bisection")
    steps = int(math.ceil((hi - lo) / resolution))
    for k in range(1, steps + 1):
        T = min(lo + k * resolution, hi)
        if feasible(T):
            return result(T, "scan")
    return result(hi, "scan")


# buckets -----------------------------------------------------------------


@dataclass
class BucketPartition:
    """Time buckets of width ``tau = T / N``.

    ``A[i]``: source particles whose entry time is below ``tau_i``.
    ``B[i]``: target particles that must leave the region (time ``T - t1``)
    within ``[tau_i, tau_{i+1})``; the last bucket is closed at ``T``.
    """

    N: int
    T: float
    A: list
    B: list

    @property
    def tau(self) -> float:
        return self.T / self.N

    def boundaries(self) -> np.ndarray:
        return self.tau * np.arange(self.N + 1)

    @classmethod
    def build(cls, profile: HittingProfile, T: float, N: int) -> "BucketPartition":
        if N < 1:
            raise ValueError("need at least one bucket")
        tau = T / N
        exit_t = T - profile.t1
        b_idx = np.clip(np.floor(exit_t / tau).astype(int), 0, N - 1)
        A = [np.flatnonzero(profile.t0 < i * tau) for i in range(N)]
        B = [np.flatnonzero(b_idx == i) for i in range(N)]
        return cls(N, T, A, B)


MIN_WINDOW_PARTICLES = 54


def _residual_fraction(n: int, dim: int) -> float:
    """Share of a cell grid's mass left in the margins."""
    return 2.0 / n**2 if dim == 1 else 1.0 - (n - 2) ** 2 / n**2


def _count_for_mass(cum, mass) -> int:
    """Fewest leading particles whose cumulative mass reaches ``mass``."""
    return int(np.searchsorted(cum, mass - 1e-12) + 1)


def _split_bucket(idx, exit_t, m):
    """Split a bucket into ``m`` pieces of equal exit-time span (empty pieces dropped)."""
    e = exit_t[idx]
    lo, hi = float(e.min()), float(e.max())
    if m == 1 or hi <= lo:
        return [idx]
    cut = np.clip(np.floor((e - lo) / (hi - lo) * m).astype(int), 0, m - 1)
    return [idx[cut == j] for j in range(m) if np.any(cut == j)]


def _window_lengths(r, base):
    gaps = np.diff(np.concatenate([[0.0], r]))
    gaps[1:] *= 0.5
    return np.minimum(base, gaps)


def plan_release_windows(part, prof, w0, w1, base_xi: float, eps: float, max_split: int = 16):
    """Release windows as ``(bucket, piece, r, xi, target_indices)``.

    Each bucket is released in the fewest equal exit-time pieces for which the
    mass stored at the start of every window (entered and not yet released)
    covers the piece, up to ``eps``.  A window ends at the earliest exit time
    ``r`` of its piece.
    """
    exit_t = part.T - prof.t1
    order = np.argsort(prof.t0, kind="stable")
    t0_sorted, cum_in = prof.t0[order], np.cumsum(w0[order])

    def stored(t):
        k = np.searchsorted(t0_sorted, t, side="left")
        return float(cum_in[k - 1]) if k else 0.0

    windows, released = [], 0.0
    for i, idx in enumerate(part.B):
        if not idx.size:
            continue
        for m in range(1, max_split + 1):
            pieces = sorted(_split_bucket(idx, exit_t, m), key=lambda q: exit_t[q].min())
            r = np.array([float(exit_t[q].min()) for q in pieces])
            prev = [wd[2] for wd in windows]
            xi = _window_lengths(np.concatenate([prev, r]), base_xi)[len(prev):]
            need = np.array([float(w1[q].sum()) for q in pieces])
            avail = np.array([stored(a) for a in r - xi]) - released - np.concatenate([[0.0], np.cumsum(need)[:-1]])
            if np.all(avail >= need - eps) or m == max_split:
                break
        for j, (q, rj, xj) in enumerate(zip(pieces, r, xi)):
            windows.append((i, j if len(pieces) > 1 else None, float(rj), float(xj), q))
        released += float(need.sum())
    return windows


def synthesize_bucket_control(
    mu0: Measure,
    mu1: Measure,
    v: VectorField,
    omega,
    T0: float,
    s: float,
    N: int,
    K: float = 4,
    eps: float = DEFAULT_EPS,
    n: int = 8,
    dt: float = DEFAULT_DT,
    t_max: float = 100.0,
) -> ControlSchedule:
    """Storage control everywhere, interrupted by release windows.

    A window ends at the earliest required exit time ``r`` of the target
    particles it serves.  During it the earliest-stored unreleased particles
    (mass of those targets) are carried by cell transport onto the backward
    storage image of the targets at ``r``; storage control then releases them
    on time.  Buckets too heavy for the mass stored at their first exit are
    released in several pieces.  Margin particles of a window return to the
    pool.  Pieces holding too few particles for a cell grid are left
    unreleased and reported in ``info``.
    """
    box = as_region(omega).as_box()
    region = as_region(box)
    T = float(T0 + s)
    prof = hitting_profile(mu0, mu1, v, box, t_max, dt)
    Ta, Tb = lower_bounds_ab(prof)
    if T < max(Ta, Tb):
        raise HorizonTooShort("horizon is below the hitting-time lower bounds", horizon=T, T_a=Ta, T_b=Tb)
    part = BucketPartition.build(prof, T, N)
    params = StorageParams.inside(box, 0.1, K)
    store = storage_field(v, params)
    w = v + store

    base_xi = min(part.tau, s if s > 0 else part.tau) / 4.0
    windows = plan_release_windows(part, prof, mu0.weights, mu1.weights, base_xi, eps)
    if any(xi <= 0 for *_, xi, _ in windows):
        raise PlanDegenerate("a release window has zero length", shortest=min(wd[3] for wd in windows))

    phases: list[Phase] = []
    x = np.array(mu0.positions, float)
    t = 0.0
    released = np.zeros(mu0.size, dtype=bool)
    skipped, deficits = [], []
    for i, j, r_i, xi, idx in windows:
        name = f"release_{i}" if j is None else f"release_{i}_{j}"
        start = r_i - xi
        if start > t:
            phases.append(Phase(t, start, store, "storage"))
            x = integrate(w, x, t, start, dt)
            t = start
        need = float(mu1.weights[idx].sum())
        pool = np.flatnonzero(~released & region.contains(x))
        pool = pool[np.argsort(prof.t0[pool], kind="stable")]
        cum = np.cumsum(mu0.weights[pool])
        have = float(cum[-1]) if cum.size else 0.0
        if have < need - eps:
            raise BucketMassDeficit(
                f"bucket {i} needs more stored mass than is available",
                bucket=i,
                needed=need,
                stored=have,
            )
        n_i = int(max(3, min(n, math.floor((min(_count_for_mass(cum, need), idx.size) / 2.0) ** (1.0 / 3.0)))))
        # oversize the chunk so that its controlled (inner) part carries the
        # target mass; the margins go back to the pool
        grab = need / (1.0 - _residual_fraction(n_i, mu0.dim))
        m = int(min(np.searchsorted(cum, grab - 1e-12) + 1, pool.size))
        chunk = pool[:m]
        if chunk.size < MIN_WINDOW_PARTICLES or idx.size < MIN_WINDOW_PARTICLES:
            skipped.append(name)
            deficits.append(need)
            continue
        y = integrate(w, mu1.positions[idx], T, r_i, dt)
        src = Measure(x[chunk], np.full(chunk.size, 1.0 / chunk.size))
        tgt = Measure(y, np.full(idx.size, 1.0 / idx.size))
        plan = build_plan(src, tgt, n_i, xi, path="geometric")
        u = ReleaseWindowField(store, cell_transport_field(plan, start))
        phases.append(Phase(start, r_i, u, name))
        x = integrate(v + u, x, start, r_i, dt)
        t = r_i
        released[chunk[plan.source.controlled_index()]] = True
    if T > t:
        phases.append(Phase(t, T, store, "storage"))
    info = {
        "T0": float(T0),
        "slack": float(s),
        "horizon": T,
        "N": N,
        "tau": part.tau,
        "window_lengths": [wd[3] for wd in windows],
        "storage_k": K,
        "bucket_masses": [float(mu1.weights[b].sum()) for b in part.B],
        "pieces_per_bucket": [sum(1 for wd in windows if wd[0] == i) for i in range(N)],
        "skipped_windows": skipped,
        "unreleased_mass": float(sum(deficits)),
    }
    return ControlSchedule(phases, region, info)


__all__ = [
    "HittingProfile",
    "hitting_profile",
    "condition2_extract",
    "lower_bounds_ab",
    "FluxLedger",
    "FluxCurves",
    "flux_feasible",
    "estimate_T0",
    "MinTimeResult",
    "BucketPartition",
    "plan_release_windows",
    "synthesize_bucket_control",
]
