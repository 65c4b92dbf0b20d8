import numpy as np
import pytest
from scipy.integrate import quad

from brachiation import dynamics as dyn
from brachiation.configspace import SwingEndpoints
from brachiation.dynamics import RobotParams
from brachiation.errors import ConfigError, NoMinimumFound, NotPositiveDefinite
from brachiation.trajopt import (
    LINE_SEARCH,
    DEFAULT_WEIGHTS,
    GainSchedule,
    IlqrProblem,
    LinearDynamics,
    OptimizerSettings,
    RobotDynamics,
    backward_pass,
    forward_pass,
    freefall_time,
    rollout,
    solve,
    swing_horizon,
    swing_problem,
    terminal_hand_error,
    total_cost,
)


# Hanging at home with nowhere to go.
REST = SwingEndpoints(np.zeros(3), np.zeros(3), 0.0, np.zeros(2), np.zeros(2))


def riccati(A, B, Q, R, Qf, steps):
    """Finite-horizon LQR for sum x'Qx + u'Ru + x_N'Qf x_N; returns gains and P_0."""
    P = Qf
    gains = []
    for _ in range(steps):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        gains.append(K)
    return gains[::-1], P


@pytest.fixture
def lq_problem() -> IlqrProblem:
    dt = 0.1
    # Two decoupled double integrators padded to the robot's state size.
    A = np.eye(6)
    A[:3, 3:] = dt * np.eye(3)
    B = np.zeros((6, 2))
    B[4, 0] = B[5, 1] = dt
    return IlqrProblem(
        dynamics=LinearDynamics(A, B),
        x0=np.array([1.0, -0.5, 0.3, 0.0, 0.2, -0.1]),
        x_target=np.zeros(6),
        dt=dt,
        steps=40,
        Q=np.diag([1.0, 1.0, 1.0, 0.1, 0.1, 0.1]),
        R=np.diag([0.5, 0.2]),
        Qf=np.diag([10.0] * 6),
    )


def naive_cost(problem, states, controls) -> float:
    cost = 0.0
    for x, u in zip(states[:-1], controls):
        cost += x @ problem.Q @ x + u @ problem.R @ u
    e = states[-1] - problem.x_target
    return cost + e @ problem.Qf @ e


def test_problem_rejects_bad_weights(lq_problem):
    with pytest.raises(ConfigError):
        IlqrProblem(lq_problem.dynamics, lq_problem.x0, lq_problem.x_target, 0.1, 10, np.eye(6), np.zeros((2, 2)), np.eye(6))
    with pytest.raises(ConfigError):
        IlqrProblem(lq_problem.dynamics, lq_problem.x0, lq_problem.x_target, 0.0, 10, np.eye(6), np.eye(2), np.eye(6))


def test_total_cost_terminal_weight(proto):
    problem = swing_problem(proto, REST, horizon=0.66, steps=10)
    states = np.zeros((11, 6))
    controls = np.zeros((10, 2))
    assert total_cost(problem, states, controls) == 0.0
    states[-1, 0] = 1.0
    assert total_cost(problem, states, controls) == pytest.approx(6400.0)


def test_rollout_matches_euler_and_cost(proto_endpoints, proto, rng):
    problem = swing_problem(proto, proto_endpoints, horizon=0.66, steps=30)
    controls = rng.normal(scale=0.1, size=(30, 2))
    traj = rollout(problem, controls)
    for i in range(30):
        np.testing.assert_array_equal(traj.states[i + 1], dyn.step(proto, traj.states[i], controls[i], problem.dt))
    assert traj.cost == pytest.approx(naive_cost(problem, traj.states, traj.controls), rel=1e-13)
    again = rollout(problem, controls)
    assert np.array_equal(again.states, traj.states)


def test_rollout_from_rest_stays_at_rest(proto):
    traj = rollout(swing_problem(proto, REST, horizon=0.1, steps=10), np.zeros((10, 2)))
    np.testing.assert_allclose(traj.states, 0.0, atol=1e-12)


def test_backward_pass_matches_riccati(lq_problem):
    traj = rollout(lq_problem, np.zeros((lq_problem.steps, 2)))
    gains, _ = backward_pass(lq_problem, traj)
    dyn_ = lq_problem.dynamics
    expected, _ = riccati(dyn_.A, dyn_.B, lq_problem.Q, lq_problem.R, lq_problem.Qf, lq_problem.steps)
    for K_ilqr, K_lqr in zip(gains.K, expected):
        np.testing.assert_allclose(K_ilqr, -K_lqr, atol=1e-8)


def test_solve_matches_riccati_cost(lq_problem):
    solution = solve(lq_problem)
    dyn_ = lq_problem.dynamics
    _, P0 = riccati(dyn_.A, dyn_.B, lq_problem.Q, lq_problem.R, lq_problem.Qf, lq_problem.steps)
    assert solution.final_cost == pytest.approx(lq_problem.x0 @ P0 @ lq_problem.x0, abs=1e-6)
    assert solution.iterations <= 2
    assert solution.converged


def test_feedforward_vanishes_at_optimum(lq_problem):
    solution = solve(lq_problem)
    gains, _ = backward_pass(lq_problem, solution.trajectory)
    assert np.max(np.abs(gains.k)) < 1e-8


def test_forward_pass_identity_update(lq_problem, rng):
    traj = rollout(lq_problem, rng.normal(size=(lq_problem.steps, 2)))
    zero = GainSchedule(np.zeros((lq_problem.steps, 2)), np.zeros((lq_problem.steps, 2, 6)))
    same = forward_pass(lq_problem, traj, zero, alpha=0.0)
    np.testing.assert_array_equal(same.states, traj.states)
    np.testing.assert_array_equal(same.controls, traj.controls)


def test_forward_pass_reaches_lqr_optimum_in_one_step(lq_problem):
    traj = rollout(lq_problem, np.zeros((lq_problem.steps, 2)))
    gains, (d1, d2) = backward_pass(lq_problem, traj)
    improved = forward_pass(lq_problem, traj, gains, alpha=1.0)
    # Exact quadratic model: realized change equals the predicted one.
    assert improved.cost - traj.cost == pytest.approx(d1 + d2, rel=1e-9)


def test_line_search_ladder():
    assert LINE_SEARCH[0] == 1.0
    assert LINE_SEARCH[-1] == 2.0**-10
    assert len(LINE_SEARCH) == 11


def test_line_search_has_a_decreasing_step_away_from_the_optimum(proto, proto_endpoints):
    problem = swing_problem(proto, proto_endpoints, horizon=0.66, steps=60)
    traj = rollout(problem, np.zeros((60, 2)))
    gains, (d1, d2) = backward_pass(problem, traj)
    assert d1 < 0
    costs = [forward_pass(problem, traj, gains, a).cost for a in LINE_SEARCH]
    assert min(costs) < traj.cost


def test_backward_pass_rejects_negative_mu(lq_problem):
    traj = rollout(lq_problem, np.zeros((lq_problem.steps, 2)))
    with pytest.raises(ValueError):
        backward_pass(lq_problem, traj, mu=-1.0)


def test_backward_pass_indefinite_quu():
    # Indefinite terminal coupling makes the control Hessian indefinite.
    problem = IlqrProblem(
        dynamics=LinearDynamics(np.eye(2), np.eye(2)),
        x0=np.array([1.0, 0.0]),
        x_target=np.zeros(2),
        dt=0.1,
        steps=1,
        Q=np.zeros((2, 2)),
        R=0.1 * np.eye(2),
        Qf=np.array([[0.0, 100.0], [100.0, 0.0]]),
    )
    traj = rollout(problem, np.zeros((1, 2)))
    with pytest.raises(NotPositiveDefinite) as info:
        backward_pass(problem, traj, mu=0.0)
    assert info.value.index == 0
    gains, _ = backward_pass(problem, traj, mu=1e3)
    assert np.all(np.isfinite(gains.k))


def test_stationary_target_needs_no_control(proto):
    solution = solve(swing_problem(proto, REST, horizon=0.2, steps=20))
    np.testing.assert_allclose(solution.controls, 0.0, atol=1e-9)
    assert solution.final_cost == pytest.approx(0.0, abs=1e-12)


def test_accepted_costs_never_increase(proto, proto_endpoints):
    solution = solve(swing_problem(proto, proto_endpoints, horizon=0.66, steps=60, max_iters=8))
    history = np.array(solution.history)
    assert len(history) > 1
    assert np.all(np.diff(history) < 0)
    assert solution.final_cost <= solution.initial_cost


def brute_force_freefall(params, x0, dt=1e-4):
    x = np.asarray(x0, dtype=float)
    vz = dyn.hand_velocity(params, x)[1]
    for i in range(1, 100000):
        x = dyn.step(params, x, np.zeros(2), dt, "rk4")
        vz_next = dyn.hand_velocity(params, x)[1]
        if vz < 0 <= vz_next:
            return i * dt
        vz = vz_next
    raise AssertionError("no minimum")


def test_freefall_matches_brute_force_scan(proto, proto_endpoints):
    t_ff = freefall_time(proto, proto_endpoints.x0)
    assert t_ff == pytest.approx(brute_force_freefall(proto, proto_endpoints.x0), abs=2e-4)
    assert 0.1 < t_ff < 1.0


def test_freefall_needs_a_minimum(proto, proto_endpoints):
    with pytest.raises(NoMinimumFound):
        freefall_time(proto, proto_endpoints.x0, limit=0.01)


def test_freefall_from_hanging_rest_is_immediate(proto):
    assert freefall_time(proto, np.array([0.0, 0.0, np.pi, 0.0, 0.0, 0.0])) == 0.0


def test_freefall_of_a_falling_hand_is_not_immediate(proto):
    x0 = np.array([0.3, 0.0, np.pi, -0.5, 0.0, 0.0])
    assert dyn.hand_velocity(proto, x0)[1] < 0
    assert freefall_time(proto, x0) > 0


def test_freefall_is_a_quarter_pendulum_period():
    # Body and far arm have their centres on the shoulder pivot; only the first arm swings.
    m_a, m_b, L = 0.4, 2.0, 0.3
    params = RobotParams(
        arm_length=L,
        arm_mass=m_a,
        arm_inertia=1e-4,
        body_length=0.0,
        body_mass=m_b,
        body_inertia=1e-3,
        arm_com_offset=0.0,
        body_com_offset=0.0,
    )
    theta0 = 0.8
    m = m_a + m_b
    inertia = params.arm_inertia + m * L * L
    k = np.sin(theta0 / 2)
    quarter, _ = quad(lambda phi: 1.0 / np.sqrt(1.0 - (k * np.sin(phi)) ** 2), 0.0, np.pi / 2)
    expected = np.sqrt(inertia / (m * params.gravity * L)) * quarter
    t_ff = freefall_time(params, np.array([theta0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    assert t_ff == pytest.approx(expected, rel=1e-6)


def test_swing_horizon_is_twice_freefall(proto, proto_endpoints):
    horizon, t_ff = swing_horizon(proto, proto_endpoints.x0)
    assert t_ff == freefall_time(proto, proto_endpoints.x0)
    assert horizon == 2 * t_ff


def test_optimizer_settings_horizon_rule(proto, proto_endpoints):
    fixed = OptimizerSettings(horizon=0.66)
    assert fixed.resolve_horizon(proto, proto_endpoints.x0) == (0.66, None)
    auto = OptimizerSettings(horizon="auto")
    horizon, t_ff = auto.resolve_horizon(proto, proto_endpoints.x0)
    assert horizon == 2 * t_ff
    problem = auto.problem(proto, proto_endpoints, horizon)
    assert problem.steps == 300
    assert problem.dt == pytest.approx(horizon / 300)


@pytest.mark.parametrize(
    "kwargs",
    [{"horizon": "soon"}, {"horizon": -1.0}, {"steps": 0}, {"max_iters": 0}, {"rel_tol": 0.0}],
)
def test_optimizer_settings_validation(kwargs):
    with pytest.raises(ConfigError):
        OptimizerSettings(**kwargs)


def test_robot_dynamics_uses_euler(proto, rng):
    model = RobotDynamics(proto, 0.01)
    x = np.concatenate([rng.uniform(-1, 1, 3), np.zeros(3)])
    u = rng.normal(size=2)
    np.testing.assert_array_equal(model.step(x, u), dyn.step(proto, x, u, 0.01, "euler"))


@pytest.mark.slow
def test_prototype_swing_to_the_next_bar(proto, proto_endpoints):
    problem = swing_problem(proto, proto_endpoints, horizon=0.66, steps=300, weights=DEFAULT_WEIGHTS)
    solution = solve(problem)
    assert solution.converged
    assert solution.iterations <= 30
    assert solution.initial_cost / solution.final_cost >= 500
    assert terminal_hand_error(proto, solution.trajectory, (0.4, 0.0)) < 0.02
