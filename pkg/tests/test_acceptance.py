"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line ``detail``; the conftest hook prints a
pass/fail line per criterion in the terminal summary.
"""
import os
import time

import numpy as np

from crowdsteer.cli import main
from crowdsteer.control import StorageParams, admissible_gain, check_reparametrization, confinement_field
from crowdsteer.control import product_sine_barrier, storage_field
from crowdsteer.fields import ConstantField
from crowdsteer.flow import integrate
from crowdsteer.measure import Measure, Region, mass_in
from crowdsteer.rarefaction import run_example
from crowdsteer.wasserstein import DistanceParams, w1, w1_1d, wp_assignment
from instances import gronwall_gap, subadditivity_gap
from oracles import brute_force_wp
from runs import SCENARIOS, SQUARE_N, block_min_time, block_scenario, full_transfer_1d, square_transfer

DT = 1e-3


def test_criterion_1_minimal_time(record_property):
    res, seconds = block_min_time()
    record_property("detail", f"T0={res.T0:.4f} (K={res.K:g}, eps={res.eps:g}) in {seconds:.1f}s")
    assert 3.95 <= res.T0 <= 4.05
    assert seconds <= 30.0


def test_criterion_2_lower_bounds(record_property):
    res, _ = block_min_time()
    record_property("detail", f"T_a={res.T_a:.4f} T_b={res.T_b:.4f}")
    assert abs(res.T_a - 2.0) <= DT
    assert abs(res.T_b - 3.0) <= DT


def test_criterion_3_rarefaction(record_property):
    out = []
    for n in (3, 6):
        start = time.perf_counter()
        res = run_example(n, 0.02, 10_000)
        out.append((n, res.schedule.horizon, res.w1, time.perf_counter() - start))
    record_property("detail", "  ".join(f"n={n}: T={T:.4f} W1={d:.4f} ({s:.1f}s)" for n, T, d, s in out))
    for n, T, d, s in out:
        assert T == 4.0 + 1.0 / n
        assert d <= 0.05
        assert s <= 10.0


def test_criterion_4_cell_refinement(record_property):
    runs = [square_transfer(n) for n in (4, 8, 16)]
    errs = [r.w1 for r in runs]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    record_property(
        "detail",
        "W1 " + "/".join(f"{e:.4f}" for e in errs)
        + " ratios " + "/".join(f"{q:.2f}" for q in ratios)
        + " residual mass " + "/".join(f"{r.residual_mass:.4f}" for r in runs),
    )
    assert errs[0] > errs[1] > errs[2]
    assert all(q >= 1.5 for q in ratios)
    diam = np.sqrt(2.0)
    for r in runs:
        n = r.n
        assert abs(r.residual_mass - (1 - (n - 2) ** 2 / n**2)) <= 2 / np.sqrt(SQUARE_N)
        assert r.residual_w1 <= 4 * np.sqrt(2) * (n - 1) / n**2 * diam / np.sqrt(2)


def test_criterion_5_storage(record_property):
    mu0, _, v, omega = block_scenario()
    params = StorageParams.inside(omega.as_box(), 0.1, 64)
    x = integrate(v + storage_field(v, params), mu0.positions, 0.0, 2.2)
    stored = mass_in(Measure(x, mu0.weights), omega)
    sample = mu0.positions[np.random.default_rng(0).choice(mu0.size, 100, replace=False)]
    rep = check_reparametrization(v, params, sample, 3.0, DT)
    record_property("detail", f"mass in region at 2.2: {stored:.4f}; path distance {rep['max_distance']:.2e}")
    assert stored >= 0.99
    assert rep["max_distance"] <= 10 * DT
    assert rep["max_gamma_drop"] <= DT
    assert rep["max_gamma_excess"] <= DT


def test_criterion_6_confinement(record_property):
    omega = Region.box([0.0, 0.0], [1.0, 1.0])
    bar = product_sine_barrier(omega)
    v = ConstantField([0.4, -0.2])
    x0 = np.random.default_rng(1).uniform(0.05, 0.95, size=(10_000, 2))
    delta = 0.5
    k = admissible_gain(bar, v, x0, delta)
    worst = [1.0]
    x = integrate(
        v + confinement_field(bar, k, v), x0, 0.0, delta,
        observer=lambda t, y: worst.append(float(omega.contains(y).mean())),
    )
    in_S = float(bar.S.contains(x).mean())
    record_property("detail", f"gain {k:.3f}: mass in S {in_S:.4f}, least mass in region {min(worst):.4f}")
    assert in_S >= 0.99
    assert min(worst) == 1.0


def test_criterion_7_distance_oracles(record_property):
    rng = np.random.default_rng(7)
    worst_1d = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        x, y = rng.normal(size=n), rng.normal(size=n)
        worst_1d = max(worst_1d, abs(w1_1d(Measure.point_cloud(x), Measure.point_cloud(y)) - brute_force_wp(x, y)))
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 8))
        p = float(rng.choice([1.0, 2.0]))
        x, y = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        got = wp_assignment(Measure.point_cloud(x), Measure.point_cloud(y), DistanceParams(p=p))
        mismatches += got != brute_force_wp(x, y, p)
    record_property("detail", f"1D worst gap {worst_1d:.1e}; 2D mismatches {mismatches}/200")
    assert worst_1d <= 1e-9
    assert mismatches == 0


def test_criterion_8_flow_and_mass_properties(record_property):
    rng = np.random.default_rng(8)
    gron = [gronwall_gap(rng)[0] for _ in range(100)]
    sub = [subadditivity_gap(rng)[0] for _ in range(100)]
    record_property("detail", f"stability min slack {min(gron):.2e}; subadditivity min slack {min(sub):.2e}")
    assert min(gron) >= -1e-9
    assert min(sub) >= -1e-9


def test_criterion_9_full_transfer(record_property):
    run = full_transfer_1d()
    d = w1(run.final, run.mu1)
    clean = run.sched.vanishes_outside_omega(n=10_000)
    record_property("detail", f"W1={d:.4f} phases={len(run.sched.phases)} zero outside region: {clean}")
    assert d <= 0.1
    assert clean


DETERMINISM_RUNS = [
    ("simulate", "block_translation.yaml", ["N=2000"]),
    ("synthesize", "block_translation.yaml", ["N=4000", "n=8"]),
    ("synthesize", "block_rarefaction.yaml", ["N=4000", "T0=4", "buckets=3"]),
    ("mintime", "block_rarefaction.yaml", ["N=2000"]),
    ("distance", "square_transfer.yaml", ["N=1000"]),
    ("example", "block_rarefaction.yaml", ["N=2000"]),
]


def _snapshot(directory):
    out = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), "rb") as f:
            out[name] = f.read()
    return out


def test_criterion_10_determinism(record_property, tmp_path, capsys):
    differing = []
    for cmd, scenario, overrides in DETERMINISM_RUNS:
        results = []
        for rep in ("a", "b"):
            out_dir = tmp_path / f"{cmd}_{scenario}_{rep}"
            argv = [cmd, "--scenario", os.path.join(SCENARIOS, scenario), "--out", str(out_dir)]
            for o in overrides:
                argv += ["--override", o]
            assert main(argv) == 0
            stdout = capsys.readouterr().out.replace(str(out_dir), "OUT")
            results.append((stdout, _snapshot(out_dir)))
        if results[0] != results[1]:
            differing.append(f"{cmd}:{scenario}")
    n_files = sum(len(_snapshot(tmp_path / d)) for d in os.listdir(tmp_path)) // 2
    record_property("detail", f"{len(DETERMINISM_RUNS)} commands, {n_files} files compared; differing: {differing or 'none'}")
    assert not differing
