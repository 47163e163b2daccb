"""Command-line front end.

    crowdsteer <command> --scenario FILE [--out DIR] [--override key=value ...]

Commands: ``simulate``, ``synthesize``, ``mintime``, ``distance`` and
``example``.  Each writes its artifacts to the output directory and prints a
JSON summary.  Failures print ``{"error": {"code": ..., ...}}`` to stderr and
exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .control import simulate
from .control.synthesis import synthesize_full_transfer
from .errors import CliError, CrowdSteerError
from .flow import integrate
from .measure import Measure
from .mintime import estimate_T0, synthesize_bucket_control
from .rarefaction import run_example
from .scenario import Scenario, parse_scenario
from .wasserstein import w1

COMMANDS = ("simulate", "synthesize", "mintime", "distance", "example")


def _dump_json(obj, path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _w1(mu, nu, sc: Scenario) -> tuple[float, str]:
    method = "cdf_1d" if mu.dim == 1 else "assignment"
    return w1(mu, nu, sc.params.cap, sc.params.seed), method


def _write_snapshots(sc: Scenario, times, states, weights, out_dir) -> list[str]:
    """Trajectories of the first ``track`` particles, plus either a density
    table (1D) or the terminal cloud (higher dimension)."""
    files = []
    track = min(sc.params.track, states[0].shape[0])
    path = os.path.join(out_dir, "trajectory.csv")
    cols = ["t", "particle"] + [f"x{k + 1}" for k in range(sc.dim)]
    with open(path, "w", newline="") as f:
        f.write("# schema: " + ",".join(cols) + "\n")
        w = csv.writer(f)
        w.writerow(cols)
        for t, x in zip(times, states):
            for i in range(track):
                w.writerow([repr(float(t)), i] + [repr(float(v)) for v in x[i]])
    files.append(path)
    if sc.dim == 1:
        lo = min(float(np.min(x)) for x in states)
        hi = max(float(np.max(x)) for x in states)
        edges = np.linspace(lo, hi if hi > lo else lo + 1.0, sc.params.bins + 1)
        centers = 0.5 * (edges[:-1] + edges[1:])
        path = os.path.join(out_dir, "density.csv")
        with open(path, "w", newline="") as f:
            f.write("# schema: t,x,density\n")
            w = csv.writer(f)
            w.writerow(["t", "x", "density"])
            for t, x in zip(times, states):
                hist, _ = np.histogram(x[:, 0], bins=edges, weights=weights)
                for c, d in zip(centers, hist / np.diff(edges)):
                    w.writerow([repr(float(t)), repr(float(c)), repr(float(d))])
        files.append(path)
    else:
        path = os.path.join(out_dir, "final.csv")
        Measure(states[-1], weights).to_csv(path)
        files.append(path)
    return files


def cmd_simulate(sc: Scenario, out_dir: str) -> dict:
    """Uncontrolled push-forward of the initial measure up to ``horizon``."""
    if sc.params.horizon is None:
        raise CliError("simulate needs params.horizon", field="params.horizon")
    mu0, mu1 = sc.measures()
    v = sc.velocity()
    T, dt = sc.params.horizon, sc.params.dt
    times = np.linspace(0.0, T, sc.params.snapshots)
    states, x = [np.array(mu0.positions)], np.array(mu0.positions)
    for a, b in zip(times[:-1], times[1:]):
        x = integrate(v, x, float(a), float(b), dt)
        states.append(x)
    files = _write_snapshots(sc, times, states, mu0.weights, out_dir)
    dist, method = _w1(Measure(x, mu0.weights), mu1, sc)
    return {"command": "simulate", "horizon": T, "w1_to_target": dist, "method": method, "files": files}


def cmd_synthesize(sc: Scenario, out_dir: str) -> dict:
    mu0, mu1 = sc.measures()
    v, p = sc.velocity(), sc.params
    if p.method == "full":
        sched = synthesize_full_transfer(mu0, mu1, v, sc.omega, p.delta, p.n, p.storage_k, p.dt, p.t_max)
    else:
        T0 = p.T0
        if T0 is None:
            T0 = estimate_T0(mu0, mu1, v, sc.omega, p.K, p.eps, p.dt, t_max=p.t_max).T0
        sched = synthesize_bucket_control(
            mu0, mu1, v, sc.omega, T0, p.slack, p.buckets, p.storage_k, p.eps, p.n, p.dt, p.t_max
        )
    path = os.path.join(out_dir, "schedule.json")
    with open(path, "w") as f:
        f.write(sched.to_json() + "\n")
    final = Measure(simulate(sched, v, mu0.positions, p.dt), mu0.weights)
    dist, method = _w1(final, mu1, sc)
    report = {
        "schema": "synthesis_report/1",
        "method": p.method,
        "horizon": sched.horizon,
        "labels": sched.labels,
        "w1": dist,
        "distance_method": method,
        "vanishes_outside_omega": sched.vanishes_outside_omega(seed=p.seed),
    }
    rpath = os.path.join(out_dir, "report.json")
    _dump_json(report, rpath)
    return {"command": "synthesize", **report, "files": [path, rpath]}


def cmd_mintime(sc: Scenario, out_dir: str) -> dict:
    mu0, mu1 = sc.measures()
    p = sc.params
    res = estimate_T0(mu0, mu1, sc.velocity(), sc.omega, p.K, p.eps, p.dt, t_max=p.t_max)
    path = os.path.join(out_dir, "mintime.json")
    with open(path, "w") as f:
        f.write(res.to_json() + "\n")
    lpath = os.path.join(out_dir, "flux_ledger.csv")
    res.ledger.to_csv(lpath)
    return {"command": "mintime", **res.to_dict(), "files": [path, lpath]}


def cmd_distance(sc: Scenario, out_dir: str) -> dict:
    mu0, mu1 = sc.measures()
    dist, method = _w1(mu0, mu1, sc)
    out = {"schema": "distance/1", "w1": dist, "method": method}
    path = os.path.join(out_dir, "distance.json")
    _dump_json(out, path)
    return {"command": "distance", **out, "files": [path]}


def cmd_example(sc: Scenario, out_dir: str) -> dict:
    """The block-rarefaction scenario (drift 1, region [2, 3])."""
    p = sc.params
    res = run_example(p.slices, p.w_m, p.N, p.variant, p.dt)
    path = os.path.join(out_dir, "example.csv")
    res.to_csv(path)
    summary = {
        "schema": "rarefaction_example/1",
        "slices": p.slices,
        "variant": p.variant,
        "w_m": p.w_m,
        "horizon": res.schedule.horizon,
        "breakpoints": res.schedule.breakpoints(),
        "w1": res.w1,
    }
    spath = os.path.join(out_dir, "example.json")
    _dump_json(summary, spath)
    return {"command": "example", **summary, "files": [path, spath]}


HANDLERS = {
    "simulate": cmd_simulate,
    "synthesize": cmd_synthesize,
    "mintime": cmd_mintime,
    "distance": cmd_distance,
    "example": cmd_example,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crowdsteer", description="Steer crowds with localized controls.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", required=True, help="YAML scenario file")
    ap.add_argument("--out", help="output directory (default: the scenario's output entry)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="override a scenario entry")
    return ap


def run_command(cmd: str, sc: Scenario, out_dir: str | None = None) -> dict:
    out_dir = out_dir or sc.output
    os.makedirs(out_dir, exist_ok=True)
    return HANDLERS[cmd](sc, out_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = parse_scenario(args.scenario, args.override)
        summary = run_command(args.command, sc, args.out)
    except CrowdSteerError as e:
        sys.stderr.write(json.dumps({"error": e.to_dict()}, sort_keys=True) + "\n")
        return 2 if isinstance(e, CliError) else 1
    sys.stdout.write(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
