from dataclasses import dataclass, field, replace

import numpy as np
import pytest

from brachiation import dynamics as dyn
from brachiation.config import RESOURCES, load_config
from brachiation.configspace import BarLayout
from brachiation.errors import ConfigError, MissedTarget, NotCaught
from brachiation.simulator import (
    CycleFrame,
    DisturbanceSpec,
    TrajectoryPlanner,
    catch_check,
    energy_residual,
    hold_ratio,
    run_brachiation,
    simulate_swing,
    swap_roles,
)
from brachiation.tracking import ControlSample, TrackerConfig, TrackingController, ZeroController, build_reference
from brachiation.trajopt import OptimizerSettings

QUICK = OptimizerSettings(horizon=0.66, steps=30, max_iters=3)


@dataclass
class CountingController:
    """Returns a different torque on every call so held blocks are visible."""

    control_dt: float = 1e-3
    calls: list[float] = field(default_factory=list)

    def __call__(self, t, x):
        self.calls.append(t)
        u = 0.01 * len(self.calls) * np.array([1.0, -1.0])
        nan = np.full(2, np.nan)
        return ControlSample(u, u, np.zeros(2), nan, nan, False)


@dataclass
class WavingController:
    control_dt: float = 1e-3

    def __call__(self, t, x):
        u = np.array([0.3 * np.sin(20 * t), 0.2 * np.cos(15 * t)])
        nan = np.full(2, np.nan)
        return ControlSample(u, u, np.zeros(2), nan, nan, False)


@pytest.fixture
def lopsided(proto):
    return replace(proto, body_com_offset=0.02)


def angle_gap(a, b) -> np.ndarray:
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


def test_zero_controller_at_equilibrium_stays_put(proto):
    outcome = simulate_swing(proto, np.zeros(6), ZeroController(), None, 0.1)
    np.testing.assert_allclose(outcome.trajectory.states, 0.0, atol=1e-10)
    assert not outcome.caught
    assert outcome.target is None
    assert np.isnan(outcome.max_ee_error)
    assert outcome.trajectory.states.shape == (1001, 6)


def test_hanging_hand_catches_its_own_bar(proto):
    outcome = simulate_swing(proto, np.zeros(6), ZeroController(), None, 0.05, target=(0.0, -proto.body_length))
    assert outcome.caught


def test_catch_check_boundary_counts(proto):
    x = np.zeros(6)
    target = dyn.fk_hand(proto, np.zeros(3)) + np.array([0.03, 0.0])
    tol = float(np.linalg.norm(dyn.fk_hand(proto, np.zeros(3)) - target))
    assert catch_check(proto, x, target, tol)
    assert not catch_check(proto, x, target, np.nextafter(tol, 0.0))


def test_hold_ratio():
    assert hold_ratio(1e-4, 1e-3) == 10
    assert hold_ratio(1e-4, 1e-4) == 1
    with pytest.raises(ConfigError):
        hold_ratio(1e-4, 2.5e-4)
    with pytest.raises(ConfigError):
        hold_ratio(1e-3, 1e-4)


def test_simulate_rejects_mismatched_rates(proto):
    with pytest.raises(ConfigError):
        simulate_swing(proto, np.zeros(6), ZeroController(control_dt=2.5e-4), None, 0.01)
    with pytest.raises(ValueError):
        simulate_swing(proto, np.zeros(6), ZeroController(), None, 0.0)


def test_controls_are_held_between_updates(proto, proto_endpoints):
    controller = CountingController()
    outcome = simulate_swing(proto, proto_endpoints.x0, controller, None, 0.01)
    assert len(controller.calls) == 10
    np.testing.assert_allclose(controller.calls, 1e-3 * np.arange(10), atol=1e-12)
    blocks = outcome.trajectory.controls.reshape(10, 10, 2)
    assert np.all(blocks == blocks[:, :1, :])
    assert len(np.unique(blocks[:, 0, 0])) == 10
    np.testing.assert_array_equal(outcome.telemetry.u, blocks[:, 0, :])


def test_disturbance_window_is_half_open(proto):
    d = DisturbanceSpec(force=(0.0, 20.0), window=(0.1, 0.2))
    assert not d.active(0.0999)
    assert d.active(0.1)
    assert not d.active(0.2)
    q = np.array([0.3, 0.1, -0.2])
    assert d.joint_torque(proto, q, 0.05) is None
    np.testing.assert_allclose(d.joint_torque(proto, q, 0.15), dyn.jacobian_hand(proto, q).T @ np.array([0.0, 20.0]))


@pytest.mark.parametrize("force, window", [((np.nan, 0.0), (0.0, 0.1)), ((0.0, 1.0), (0.2, 0.1))])
def test_disturbance_validation(force, window):
    with pytest.raises(ConfigError):
        DisturbanceSpec(force, window)


def test_disturbance_changes_the_motion(proto, proto_endpoints):
    calm = simulate_swing(proto, proto_endpoints.x0, ZeroController(), None, 0.1)
    pushed = simulate_swing(
        proto,
        proto_endpoints.x0,
        ZeroController(),
        None,
        0.1,
        disturbance=DisturbanceSpec((0.0, 20.0), (0.02, 0.05)),
    )
    np.testing.assert_array_equal(calm.trajectory.states[:201], pushed.trajectory.states[:201])
    assert not np.allclose(calm.final_state, pushed.final_state)


def test_energy_balance_with_motors_and_disturbance(proto, proto_endpoints):
    outcome = simulate_swing(
        proto,
        proto_endpoints.x0,
        WavingController(),
        None,
        0.3,
        disturbance=DisturbanceSpec((5.0, 10.0), (0.1, 0.15)),
    )
    assert abs(energy_residual(proto, outcome)) < 1e-6


def test_simulation_is_deterministic(proto, proto_endpoints):
    runs = [simulate_swing(proto, proto_endpoints.x0, WavingController(), None, 0.05) for _ in range(2)]
    np.testing.assert_array_equal(runs[0].trajectory.states, runs[1].trajectory.states)


def test_cycle_frame_round_trip():
    frame = CycleFrame(base_bar=2, origin=np.array([0.3, 0.1]), mirrored=True)
    np.testing.assert_allclose(frame.to_world((0.4, 0.0)), [-0.1, 0.1])
    p = np.array([0.25, -0.3])
    np.testing.assert_allclose(frame.to_base(frame.to_world(p)), p)


def test_swap_roles_keeps_every_joint_in_place(lopsided, rng):
    frame = CycleFrame()
    for _ in range(20):
        x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.uniform(-2, 2, 3)])
        x_new, new_frame = swap_roles(lopsided, x, frame, caught_bar=1)
        assert new_frame.swing_hand == "left"
        assert new_frame.base_bar == 1
        swapped = new_frame.cycle_params(lopsided)
        before = dyn.fk_all(lopsided, x[:3])
        after = new_frame.to_world(dyn.fk_all(swapped, x_new[:3]))
        np.testing.assert_allclose(after, before[::-1], atol=1e-12)
        com_before = dyn.com_positions(lopsided, x[:3])
        com_after = new_frame.to_world(dyn.com_positions(swapped, x_new[:3]))
        np.testing.assert_allclose(com_after, com_before[::-1], atol=1e-12)


def test_swap_roles_velocities(lopsided, rng):
    x = np.concatenate([rng.uniform(-np.pi, np.pi, 3), rng.uniform(-2, 2, 3)])
    x_new, new_frame = swap_roles(lopsided, x, CycleFrame(), caught_bar=1)
    swapped = new_frame.cycle_params(lopsided)
    # The old bar is fixed, so seen from the caught hand it moves at minus the hand velocity.
    np.testing.assert_allclose(dyn.hand_velocity(swapped, x_new), -dyn.hand_velocity(lopsided, x), atol=1e-12)
    assert x_new[3] == pytest.approx(x[3:].sum())


def test_swap_roles_twice_is_identity(lopsided, rng):
    frame = CycleFrame(origin=np.array([0.5, 0.2]))
    x = np.concatenate([rng.uniform(-3, 3, 3), rng.uniform(-2, 2, 3)])
    once, mid = swap_roles(lopsided, x, frame, caught_bar=1)
    twice, back = swap_roles(lopsided, once, mid, caught_bar=0)
    assert np.all(angle_gap(twice[:3], x[:3]) < 1e-12)
    np.testing.assert_allclose(twice[3:], x[3:], atol=1e-12)
    np.testing.assert_allclose(back.origin, frame.origin, atol=1e-12)
    assert back.swing_hand == "right"


def test_swap_roles_requires_a_catch(proto):
    with pytest.raises(NotCaught):
        swap_roles(proto, np.zeros(6), CycleFrame(), caught_bar=1, bar_position=(0.4, 0.0))


def test_planner_reuses_repeated_geometry(proto):
    planner = TrajectoryPlanner(QUICK, catch_tolerance=np.inf)
    first = planner.plan(proto, (-0.4, 0.0), (0.4, 0.0))
    again = planner.plan(proto, (-0.4, 0.0), (0.4, 0.0))
    assert again is first
    assert planner.solves == 1
    planner.plan(proto, (-0.4, 0.0), (0.3, 0.0))
    assert planner.solves == 2
    assert first.horizon == 0.66
    assert first.freefall is None


def test_planner_rejects_a_plan_that_misses_the_bar(proto):
    planner = TrajectoryPlanner(QUICK, catch_tolerance=1e-9)
    with pytest.raises(MissedTarget) as info:
        planner.plan(proto, (-0.4, 0.0), (0.4, 0.0))
    assert info.value.error > info.value.tolerance == 1e-9
    assert planner.solves == 0


def test_missed_plan_ends_the_run(proto, proto_layout):
    planner = TrajectoryPlanner(QUICK, catch_tolerance=1e-9)
    result = run_brachiation(proto, proto_layout, planner, TrackerConfig())
    assert result.failed_cycle == 0
    assert result.outcomes == []
    assert "from the bar" in result.error
    assert not result.all_caught


def test_vector_to_base_ignores_the_origin():
    frame = CycleFrame(origin=np.array([0.3, 0.1]), mirrored=True)
    np.testing.assert_array_equal(frame.vector_to_base((5.0, 2.0)), [-5.0, 2.0])
    np.testing.assert_array_equal(CycleFrame(origin=np.array([0.3, 0.1])).vector_to_base((5.0, 2.0)), [5.0, 2.0])


def test_disturbance_force_is_given_in_world_coordinates(proto):
    # Swinging left under a push to the right is the mirror image of swinging right under a push to the left.
    runs = []
    for bars, force in ((((0.0, 0.0), (-0.4, 0.0)), (5.0, 0.0)), (((0.0, 0.0), (0.4, 0.0)), (-5.0, 0.0))):
        result = run_brachiation(
            proto,
            BarLayout(bars),
            TrajectoryPlanner(QUICK, catch_tolerance=np.inf),
            TrackerConfig(alpha=0.0),
            disturbance=DisturbanceSpec(force, (0.1, 0.2)),
        )
        runs.append(result.outcomes[0].trajectory.states)
    np.testing.assert_array_equal(runs[0], runs[1])


def test_outcome_summary_reports_centre_of_mass(proto):
    outcome = simulate_swing(proto, np.zeros(6), ZeroController(), None, 0.01)
    np.testing.assert_allclose(outcome.summary()["final_com"], dyn.com_position(proto, np.zeros(3)), atol=1e-12)


@pytest.mark.slow
def test_nominal_swing_is_tracked_to_the_bar(proto):
    planner = TrajectoryPlanner(OptimizerSettings(horizon=0.66))
    plan = planner.plan(proto, (-0.4, 0.0), (0.4, 0.0))
    reference = build_reference(proto, plan.trajectory)
    controller = TrackingController(proto, reference, TrackerConfig(), saturate=False)
    outcome = simulate_swing(proto, reference.start_state, controller, reference, reference.duration, target=(0.4, 0.0))
    assert outcome.caught
    assert outcome.final_ee_error < 0.005


@pytest.mark.slow
def test_task_term_rejects_hand_disturbance():
    config = load_config(RESOURCES / "disturbance_robot.json")
    planner = TrajectoryPlanner(config.optimizer, catch_tolerance=config.sim.catch_tolerance)
    plan = planner.plan(config.robot, -config.bars.target(), config.bars.target())
    reference = build_reference(config.robot, plan.trajectory)
    errors = {}
    for alpha in (0.0, 1.0):
        tracker = replace(config.tracker, alpha=alpha)
        outcome = simulate_swing(
            config.robot,
            reference.start_state,
            TrackingController(config.robot, reference, tracker, saturate=False),
            reference,
            reference.duration,
            disturbance=config.sim.disturbance,
            target=config.bars.target(),
        )
        errors[alpha] = outcome.final_ee_error
    assert errors[1.0] * 2 <= errors[0.0]


@pytest.mark.slow
@pytest.mark.parametrize("name, solves", [("brachiate_even.json", 1), ("brachiate_mixed.json", 2)])
def test_brachiation_along_bars(name, solves):
    config = load_config(RESOURCES / name)
    planner = TrajectoryPlanner(config.optimizer, config.offset_angle, config.sim.catch_tolerance)
    result = run_brachiation(config.robot, config.bars, planner, config.tracker, plant_dt=config.sim.plant_dt)
    assert result.error is None
    assert result.all_caught
    assert len(result.outcomes) == 2
    assert planner.solves == solves
    assert [f.swing_hand for f in result.frames] == ["right", "left"]
    np.testing.assert_allclose(result.frames[1].origin, config.bars.bars[1])
