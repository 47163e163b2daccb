import numpy as np
import pytest

from crowdsteer.control import (
    ControlSchedule,
    EtaBarrier,
    Phase,
    StorageParams,
    admissible_gain,
    build_plan,
    cell_transport_field,
    check_reparametrization,
    confinement_field,
    product_sine_barrier,
    simulate,
    storage_field,
    synthesize_full_transfer,
    transfer_inside_omega,
)
from crowdsteer.errors import Condition1Violation, KTooSmall, PlanDegenerate, SupportViolation, SynthesisError
from crowdsteer.fields import ConstantField, FunctionField, ZeroField
from crowdsteer.flow import flow_map, integrate
from crowdsteer.measure import Box, Measure, Region
from crowdsteer.wasserstein import w1
from runs import UNIT_SQUARE, block_scenario, full_transfer_1d, halton_box, square_transfer


@pytest.fixture(scope="module")
def small_plan():
    mu0 = halton_box(0.1, 0.4, 4000, 1)
    mu1 = Measure.point_cloud(0.5 + np.array([[0.5, 0.3]]) * (halton_box(0.0, 1.0, 4000, 2).positions))
    return build_plan(mu0, mu1, 4, 0.7)


def _inner_points(plan, t, per_cell=5, seed=0):
    r = np.random.default_rng(seed)
    boxes = plan.corners(t)
    return np.concatenate([r.uniform(b[:, 0], b[:, 1], size=(per_cell, b.shape[0])) for b in boxes])


# cell transport ---------------------------------------------------------------


def test_identity_plan_gives_zero_field():
    mu = halton_box(0.1, 0.4, 3000, 3)
    plan = build_plan(mu, mu, 4, 1.0)
    u = cell_transport_field(plan)
    for t in (0.0, 0.4, 1.0):
        np.testing.assert_array_equal(u(_inner_points(plan, t), t), 0.0)


def test_translated_plan_gives_constant_field():
    mu = halton_box(0.1, 0.4, 3000, 3)
    c = np.array([0.3, -0.05])
    T = 0.5
    plan = build_plan(mu, Measure.point_cloud(mu.positions + c), 4, T)
    np.testing.assert_allclose(plan.alpha(0.2), 0.0, atol=1e-12)
    np.testing.assert_allclose(plan.beta(0.2), np.broadcast_to(c / T, plan.beta(0.2).shape), atol=1e-12)
    u = cell_transport_field(plan)
    for t in (0.0, 0.25, 0.5):
        np.testing.assert_allclose(u(_inner_points(plan, t), t), np.broadcast_to(c / T, (16 * 5, 2)), atol=1e-12)


def test_moving_boxes_start_and_end_on_inner_boxes(small_plan):
    np.testing.assert_array_equal(small_plan.corners(0.0), small_plan.src.inner)
    np.testing.assert_allclose(small_plan.corners(small_plan.T), small_plan.tgt.inner, atol=1e-15)
    for t in np.linspace(0.0, small_plan.T, 11):
        box = small_plan.corners(t)
        assert np.all(box[:, :, 1] > box[:, :, 0])


def test_corners_land_on_target_corners(small_plan):
    def corners(boxes):
        return np.array([[b[0, ix], b[1, iy]] for b in boxes for ix in (0, 1) for iy in (0, 1)])

    u = cell_transport_field(small_plan)
    x_end = integrate(u, corners(small_plan.src.inner), 0.0, small_plan.T)
    np.testing.assert_allclose(x_end, corners(small_plan.tgt.inner), atol=1e-6)


def test_rk4_flow_matches_closed_form(small_plan):
    u = cell_transport_field(small_plan)
    T = small_plan.T
    cells = np.repeat(np.arange(small_plan.source.n_cells), 3)
    x0 = np.concatenate([np.stack([a[:, 0], a[:, 1], a.mean(axis=1)]) for a in small_plan.src.inner])
    for t in (0.3 * T, T):
        got = integrate(u, x0, 0.0, t)
        want = np.array([small_plan.closed_form(x, c, t) for x, c in zip(x0, cells)])
        np.testing.assert_allclose(got, want, atol=1e-6)


def test_geometric_width_path_also_lands_on_target():
    mu0 = halton_box(0.1, 0.4, 4000, 1)
    mu1 = Measure.point_cloud(0.5 + 0.1 * halton_box(0.0, 1.0, 4000, 2).positions)
    plan = build_plan(mu0, mu1, 4, 1.0, path="geometric")
    u = cell_transport_field(plan)
    for c in (0, 7, 15):
        a, b = plan.src.inner[c], plan.tgt.inner[c]
        np.testing.assert_allclose(flow_map(u, a[:, 1], 0.0, 1.0), b[:, 1], atol=1e-6)
        np.testing.assert_allclose(plan.alpha(0.1), plan.alpha(0.9))


def test_field_fades_outside_band(small_plan):
    u = cell_transport_field(small_plan)
    far = np.array([[0.95, 0.05], [0.02, 0.98]])
    np.testing.assert_array_equal(u(far, 0.3), 0.0)
    np.testing.assert_array_equal(u(_inner_points(small_plan, 0.3), 1.5), 0.0)


def test_plan_needs_three_cells():
    mu = halton_box(0.1, 0.4, 1000, 3)
    with pytest.raises(PlanDegenerate):
        build_plan(mu, mu, 2, 1.0)


def test_transfer_of_measure_onto_itself():
    mu = halton_box(0.1, 0.4, 3000, 4)
    sched = transfer_inside_omega(mu, mu, UNIT_SQUARE, 1.0, 4)
    x = simulate(sched, ZeroField(2), mu.positions)
    assert np.abs(x - mu.positions).max() <= 1e-12


def test_transfer_rejects_support_outside_region():
    mu = halton_box(0.1, 0.4, 1000, 4)
    with pytest.raises(SupportViolation):
        transfer_inside_omega(mu, Measure.point_cloud(mu.positions + 0.7), UNIT_SQUARE, 1.0, 4)


def test_transfer_below_residual_bound_at_eight():
    run = square_transfer(8)
    bound = 4 * np.sqrt(2) * 7 / 64
    assert bound == pytest.approx(0.6187, abs=1e-4)
    assert run.w1 < bound


@pytest.mark.parametrize("n", [4, 8, 16])
def test_residual_accounting(n):
    run = square_transfer(n)
    assert run.residual_mass == pytest.approx(1 - (n - 2) ** 2 / n**2, abs=3 / run.mu0.size)


def test_doubling_cells_shrinks_error():
    # Mass left behind outside every band scales like 1/n^2 and the cell
    # geometry error like 1/n, so the ratio lies between 2 and 4.
    ratio = square_transfer(8).w1 / square_transfer(16).w1
    assert 1.5 <= ratio < 4.0


# storage ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def storage_setup():
    omega = Box([0.0, 0.0], [2.0, 1.0])
    params = StorageParams.inside(omega, 0.1, 16)
    v = FunctionField(lambda x, t: np.column_stack([np.ones(len(x)), 0.3 * np.sin(2 * x[:, 0])]), 2, 0.6, 1.05)
    return omega, params, v


def test_cutoff_invariants(storage_setup):
    omega, params, _ = storage_setup
    x = np.random.default_rng(0).uniform(-1.0, 3.0, size=(20_000, 2))
    theta = params.theta(x)
    assert np.all((theta >= 0) & (theta <= 1))
    assert np.all(theta[~params.in_transition(x)] == 1.0)
    assert np.all(theta[params.omega0.contains(x)] == 0.0)


def test_storage_field_values(storage_setup):
    omega, params, v = storage_setup
    u = storage_field(v, params)
    inside = np.array([[1.0, 0.5], [0.5, 0.3]])
    np.testing.assert_array_equal(u(inside, 0.0), -v(inside, 0.0))
    outside = np.array([[-0.5, 0.5], [1.0, 0.0], [2.5, 2.0]])
    np.testing.assert_array_equal(u(outside, 0.0), 0.0)


def test_storage_support_inside_region(storage_setup):
    omega, params, v = storage_setup
    u = storage_field(v, params)
    x = np.random.default_rng(1).uniform(-1.0, 3.0, size=(20_000, 2))
    x = x[~omega.contains(x)]
    np.testing.assert_array_equal(u(x, 0.0), 0.0)


def test_storage_only_slows_trajectories(storage_setup):
    _, params, v = storage_setup
    starts = np.column_stack([np.linspace(-0.5, 0.0, 10), np.linspace(0.3, 0.7, 10)])
    dt = 1e-3
    rep = check_reparametrization(v, params, starts, 3.0, dt)
    assert rep["max_distance"] <= 10 * dt
    assert rep["max_gamma_drop"] <= dt
    assert rep["max_gamma_excess"] <= dt


def test_storage_holds_mass(storage_setup):
    omega, params, v = storage_setup
    x0 = np.column_stack([np.linspace(-0.5, 0.0, 50), np.full(50, 0.5)])
    x = integrate(v + storage_field(v, params), x0, 0.0, 10.0)
    assert np.all(omega.contains(x))


# confinement ----------------------------------------------------------------


def test_sine_barrier_gradient_in_1d():
    bar = product_sine_barrier(Region.box([0.0], [1.0]))
    k = 3.0
    u = confinement_field(bar, k)
    assert u(np.array([[0.25]]), 0.0)[0, 0] == pytest.approx(k * np.pi * np.cos(np.pi / 4))
    assert u(np.array([[0.5]]), 0.0)[0, 0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_array_equal(u(np.array([[-0.1], [1.2]]), 0.0), 0.0)


def test_barrier_invariants():
    bar = product_sine_barrier(Region.box([0.0, 0.0], [1.0, 2.0]))
    x = np.random.default_rng(2).uniform([0, 0], [1, 2], size=(10_000, 2))
    assert np.all(bar.eta(x) > 0)
    pts, _ = bar.boundary_samples()
    np.testing.assert_allclose(bar.eta(pts), 0.0, atol=0.0)
    k0, k1 = bar.kappas(x)
    assert 0 < k0 <= k1
    np.testing.assert_allclose(bar.grad(bar.omega.center[None, :]), [[0.0, 0.0]], atol=1e-14)


def test_S_must_contain_centre():
    with pytest.raises(SupportViolation):
        EtaBarrier(Box([0.0], [1.0]), Box([0.1], [0.3]))


def test_gain_below_boundary_threshold():
    bar = product_sine_barrier(Region.box([0.0, 0.0], [1.0, 1.0]))
    v = ConstantField([2.0, 0.0])
    with pytest.raises(KTooSmall) as err:
        confinement_field(bar, 0.1, v)
    k_min = err.value.details["k_min"]
    u = confinement_field(bar, 1.01 * k_min, v)
    pts, normals = bar.boundary_samples()
    assert np.all(np.sum((v(pts, 0.0) + 1.01 * k_min * bar.normal_gradient(pts, normals)[:, None] * normals) * normals, axis=1) < 0)
    assert u.gain > k_min


def test_confinement_never_leaves_region():
    omega = Region.box([0.0, 0.0], [1.0, 1.0])
    bar = product_sine_barrier(omega)
    v = ConstantField([0.8, 0.3])
    x0 = np.random.default_rng(3).uniform(0.02, 0.98, size=(2000, 2))
    k = admissible_gain(bar, v, x0, 1.0)
    u = confinement_field(bar, k, v)
    inside = []
    integrate(v + u, x0, 0.0, 3.0, observer=lambda t, x: inside.append(omega.contains(x).all()))
    assert all(inside)


# schedules ------------------------------------------------------------------


def test_schedule_phases_must_be_contiguous():
    z = ZeroField(1)
    with pytest.raises(SynthesisError):
        ControlSchedule([Phase(0.0, 1.0, z, "a"), Phase(1.5, 2.0, z, "b")], Region.box([0.0], [1.0]))


def test_schedule_json_replays_bit_identically():
    mu0 = halton_box(0.1, 0.3, 3000, 5)
    mu1 = halton_box(0.5, 0.4, 3000, 6)
    sched = transfer_inside_omega(mu0, mu1, UNIT_SQUARE, 0.2, 4)
    back = ControlSchedule.from_json(sched.to_json())
    assert back.to_json() == sched.to_json()
    a = simulate(sched, ZeroField(2), mu0.positions[:200])
    b = simulate(back, ZeroField(2), mu0.positions[:200])
    np.testing.assert_array_equal(a, b)


def test_simulate_continues_uncontrolled_after_horizon():
    z = ZeroField(1)
    sched = ControlSchedule([Phase(0.0, 1.0, z, "idle")], Region.box([0.0], [1.0]))
    x = simulate(sched, ConstantField([1.0]), np.array([[0.0]]), until=2.5)
    assert x[0, 0] == pytest.approx(2.5)


# five-phase synthesis -----------------------------------------------------------


def test_supports_inside_S_reduce_to_cell_transport():
    mu0 = halton_box(0.3, 0.15, 6000, 7)
    mu1 = halton_box(0.55, 0.15, 6000, 8)
    v = ZeroField(2)
    sched = synthesize_full_transfer(mu0, mu1, v, UNIT_SQUARE, delta=0.6, n=6)
    for p in sched.phases:
        if p.label != "cell_transport":
            assert isinstance(p.field, ZeroField)
    x = simulate(sched, v, mu0.positions)
    assert w1(Measure.point_cloud(x), mu1, cap=1500) < 0.05


def test_full_transfer_in_1d():
    run = full_transfer_1d()
    assert run.sched.labels == ["storage", "confinement", "cell_transport", "release_confinement", "release_storage"]
    assert run.sched.info["stored_mass"] >= 0.99
    assert w1(run.final, run.mu1) <= 0.1
    assert run.sched.vanishes_outside_omega(n=10_000)


def test_unreachable_region_is_reported():
    mu0, mu1, _, omega = block_scenario(N=200)
    with pytest.raises(Condition1Violation) as err:
        synthesize_full_transfer(mu0, mu1, ConstantField([-1.0]), omega, t_max=5.0)
    assert err.value.details["side"] == "forward"
