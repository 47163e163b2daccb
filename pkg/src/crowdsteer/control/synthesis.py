"""Five-phase full-transfer controller.

1. storage: bring the initial mass into the control region and hold it;
2. confinement: push it into the hypercube S;
3. cell transport inside S onto the backward image of the target;
4. reversed confinement and 5. storage release, replaying forward what the
   target looks like when flowed backward under the mirrored controls.
"""
from __future__ import annotations

import numpy as np

from ..errors import Condition1Violation
from ..fields import FunctionField, SumField, VectorField, ZeroField
from ..flow import DEFAULT_DT, hitting_times, integrate
from ..measure import Measure, as_region
from .confinement import ConfinementField, admissible_gain, product_sine_barrier
from .schedule import ControlSchedule, Phase
from .storage import StorageParams, storage_field
from .transport import build_plan, cell_transport_field, residual_mass

SLACK = 1.1
LABELS = ("storage", "confinement", "cell_transport", "release_confinement", "release_storage")


def entry_times(mu0: Measure, mu1: Measure, v: VectorField, omega, t_max: float, dt: float = DEFAULT_DT):
    """Forward entry times of ``mu0`` and backward entry times of ``mu1``.

    Raises Condition1Violation naming the first particle that never enters
    within ``t_max``.
    """
    region = as_region(omega)
    out = []
    for mu, side in ((mu0, "forward"), (mu1, "backward")):
        t = hitting_times(v, mu.positions, region, t_max, side, dt)
        bad = np.flatnonzero(np.isnan(t))
        if bad.size:
            raise Condition1Violation(
                f"a particle never reaches the control region ({side})",
                point=mu.positions[bad[0]].tolist(),
                side=side,
                index=int(bad[0]),
            )
        out.append(t)
    return out[0], out[1]


def _negated(v: VectorField) -> VectorField:
    return FunctionField(lambda x, t: -v(x, t), v.dim, v.lipschitz, v.sup_bound)


def _restricted(x: np.ndarray, mask: np.ndarray) -> Measure:
    pts = x[mask]
    return Measure(pts, np.full(len(pts), 1.0 / len(pts)))


def synthesize_full_transfer(
    mu0: Measure,
    mu1: Measure,
    v: VectorField,
    omega,
    delta: float = 1.5,
    n: int = 16,
    k: float = 4,
    dt: float = DEFAULT_DT,
    t_max: float = 100.0,
    S=None,
) -> ControlSchedule:
    """Schedule on ``[0, T0* + T1* + delta]`` steering ``mu0`` towards ``mu1``.

    ``k`` is the storage sharpness.  Moderate values keep the storage layer
    much wider than ``dt`` so that the forward replay of the backward-built
    release phases stays accurate.  Phases of zero length are dropped.
    """
    box = as_region(omega).as_box()
    t0, t1 = entry_times(mu0, mu1, v, box, t_max, dt)
    T0s, T1s = SLACK * float(t0.max()), SLACK * float(t1.max())
    params = StorageParams.inside(box, 0.1, k)
    barrier = product_sine_barrier(box, S)
    d3 = delta / 3.0
    T1, T2, T3 = T0s, T0s + d3, T0s + 2 * d3
    T4 = T3 + d3
    T = T4 + T1s
    store = storage_field(v, params)

    x = np.array(mu0.positions, float)
    if T1 > 0:
        x = integrate(v + store, x, 0.0, T1, dt)
    stored = float(mu0.weights[box.contains(x)].sum())
    if np.all(barrier.S.contains(x)):
        u2, gain2 = ZeroField(box.dim), 0.0
    else:
        gain2 = admissible_gain(barrier, v, x, d3)
        u2 = ConfinementField(barrier, gain2)
    x = integrate(v + u2, x, T1, T2, dt)
    in_S_forward = barrier.S.contains(x)

    y = np.array(mu1.positions, float)
    if T1s > 0:
        y = integrate(v + store, y, T, T4, dt)
    if np.all(barrier.S.contains(y)):
        u4, gain4 = ZeroField(box.dim), 0.0
    else:
        gain4 = admissible_gain(barrier, _negated(v), y, d3)
        u4 = ConfinementField(barrier, -gain4)
    y = integrate(v + u4, y, T4, T3, dt)
    in_S_backward = barrier.S.contains(y)

    src = _restricted(x, in_S_forward)
    tgt = _restricted(y, in_S_backward)
    plan = build_plan(src, tgt, n, d3)
    u3 = SumField((store, cell_transport_field(plan, T2)))

    phases = []
    for (a, b, u), label in zip(((0.0, T1, store), (T1, T2, u2), (T2, T3, u3), (T3, T4, u4), (T4, T, store)), LABELS):
        if b > a:
            phases.append(Phase(a, b, u, label))
    info = {
        "T0_star": T0s,
        "T1_star": T1s,
        "delta": delta,
        "horizon": T,
        "storage_k": k,
        "confinement_gain": gain2,
        "release_gain": gain4,
        "stored_mass": stored,
        "mass_in_S_forward": float(mu0.weights[in_S_forward].sum()),
        "mass_in_S_backward": float(mu1.weights[in_S_backward].sum()),
        "cell_residual_mass": residual_mass(plan, src),
        "n": n,
    }
    return ControlSchedule(phases, as_region(box), info)
