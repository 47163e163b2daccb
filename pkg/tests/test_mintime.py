import json

import numpy as np
import pytest

from crowdsteer.control import simulate
from crowdsteer.errors import HorizonExceeded, HorizonTooShort
from crowdsteer.fields import ZeroField
from crowdsteer.measure import Measure
from crowdsteer.mintime import (
    BucketPartition,
    FluxCurves,
    condition2_extract,
    estimate_T0,
    flux_feasible,
    hitting_profile,
    lower_bounds_ab,
    synthesize_bucket_control,
)
from crowdsteer.wasserstein import w1
from runs import BLOCK_OMEGA, TRANSLATED_TARGET, block_scenario

DT = 1e-3


@pytest.fixture(scope="module")
def block():
    return block_scenario(N=2000)


@pytest.fixture(scope="module")
def block_curves(block):
    return FluxCurves(*block, horizon=10.0)


def _inside_pair():
    mu = Measure.point_cloud(np.linspace(2.2, 2.8, 200))
    return mu, mu, ZeroField(1), BLOCK_OMEGA


def test_condition2_surrogates(block):
    T0s, T1s, omega0 = condition2_extract(*block)
    assert T0s == pytest.approx(2.2, abs=1.1 * DT)
    assert T1s == pytest.approx(3.3, abs=1.1 * DT)
    np.testing.assert_allclose(omega0.lo, [2.1])
    np.testing.assert_allclose(omega0.hi, [2.9])


def test_condition2_inside_region():
    T0s, T1s, omega0 = condition2_extract(*_inside_pair())
    assert T0s == 0.0 and T1s == 0.0
    assert omega0.lo[0] > 2.0 and omega0.hi[0] < 3.0


def test_lower_bounds(block):
    Ta, Tb = lower_bounds_ab(hitting_profile(*block))
    assert Ta == pytest.approx(2.0, abs=DT)
    assert Tb == pytest.approx(3.0, abs=DT)
    assert lower_bounds_ab(hitting_profile(*_inside_pair())) == (0.0, 0.0)


@pytest.mark.parametrize("T_star, expected", [(4.0, True), (3.0, False), (10.0, True)])
def test_flux_feasibility(block, block_curves, T_star, expected):
    ok, led = flux_feasible(T_star, *block, curves=block_curves)
    assert ok is expected
    assert led.times.size == 201 and led.times[-1] == T_star


def test_flux_without_precomputed_curves(block):
    ok, led = flux_feasible(4.0, *block)
    assert ok
    assert led.K == 64 and led.eps == 0.02


def test_stored_mass_never_released(block_curves):
    m = block_curves.fwd_m
    assert np.all(np.diff(m) >= -2 / np.sqrt(2000))
    assert m.min() >= 0.0 and m.max() <= 1.0 + 1e-12


def test_curves_reject_longer_horizon(block_curves):
    with pytest.raises(HorizonExceeded):
        block_curves.ledger(11.0, 0.02)


def test_minimal_time_of_block():
    res = estimate_T0(*block_scenario(N=2000))
    assert res.T0 == pytest.approx(4.0, abs=0.05)
    assert res.T0 >= max(res.T_a, res.T_b)
    assert res.ledger.feasible


def test_minimal_time_of_translated_block():
    res = estimate_T0(*block_scenario(N=2000, target=TRANSLATED_TARGET))
    assert res.T0 == pytest.approx(3.0, abs=0.05)


def test_minimal_time_already_inside():
    res = estimate_T0(*_inside_pair())
    assert res.T0 <= 0.01
    assert res.method == "lower_bound"


def test_unreachable_within_horizon(block):
    with pytest.raises(HorizonExceeded):
        estimate_T0(*block, horizon=3.5)


def test_result_json_lists_parameters(block):
    res = estimate_T0(*block)
    d = json.loads(res.to_json())
    assert {"T0", "K", "eps", "resolution", "T_a", "T_b"} <= d.keys()
    assert d["resolution"] == 0.01


def test_ledger_csv_has_schema_header(block_curves, tmp_path):
    path = tmp_path / "ledger.csv"
    block_curves.ledger(4.0, 0.02).to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# schema: t,m_in,m_target,slack")
    assert lines[1] == "t,m_in,m_target,slack"
    assert len(lines) == 2 + 201


# buckets -----------------------------------------------------------------


def test_partition_is_exhaustive_and_disjoint(block):
    prof = hitting_profile(*block)
    part = BucketPartition.build(prof, 4.0, 5)
    joined = np.concatenate(part.B)
    assert joined.size == block[1].size
    assert np.unique(joined).size == joined.size
    assert sum(block[1].weights[b].sum() for b in part.B) == pytest.approx(1.0)
    for a, b in zip(part.A, part.A[1:]):
        assert set(a) <= set(b)
    np.testing.assert_allclose(part.boundaries(), [0.0, 0.8, 1.6, 2.4, 3.2, 4.0])


def test_single_bucket_is_storage_then_release():
    mu0, mu1, v, omega = block_scenario(N=4000, target=((5.0, 5.5, 2.0),))
    sched = synthesize_bucket_control(mu0, mu1, v, omega, 5.0, 1.0, 1)
    assert sched.labels == ["storage", "release_0", "storage"]
    assert sched.horizon == pytest.approx(6.0)
    x = simulate(sched, v, mu0.positions)
    assert w1(Measure(x, mu0.weights), mu1) <= 0.1


def test_three_buckets_on_block():
    mu0, mu1, v, omega = block_scenario(N=10_000)
    sched = synthesize_bucket_control(mu0, mu1, v, omega, 4.0, 1.0 / 3.0, 3)
    assert sum(sched.info["bucket_masses"]) == pytest.approx(1.0)
    assert sched.horizon == pytest.approx(13.0 / 3.0)
    assert sched.vanishes_outside_omega(n=10_000)
    x = simulate(sched, v, mu0.positions)
    assert w1(Measure(x, mu0.weights), mu1) <= 0.1


def test_horizon_below_lower_bounds(block):
    with pytest.raises(HorizonTooShort):
        synthesize_bucket_control(*block, 2.0, 0.5, 2)


def test_partition_needs_a_bucket(block):
    with pytest.raises(ValueError):
        BucketPartition.build(hitting_profile(*block), 4.0, 0)
