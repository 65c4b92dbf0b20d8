"""Swing trajectory optimization with iLQR.

One swing is the finite-horizon problem

    min_u  (x_N - x*)' Qf (x_N - x*) + sum_i (x_i' Q x_i + u_i' R u_i)
    s.t.   x_{i+1} = x_i + f(x_i, u_i) dt,   x_0 given

solved from a zero control sequence by alternating a linearized backward
value recursion with line-searched closed-loop forward rollouts.
"""

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from . import dynamics as dyn
from .configspace import SwingEndpoints
from .dynamics import RobotParams
from .errors import (
    ConfigError,
    Diverged,
    LinearSolveFailure,
    NoMinimumFound,
    NonFiniteState,
    NotPositiveDefinite,
)

logger = logging.getLogger(__name__)

MU_MIN = 1e-9
MU_MAX = 1e6
MU_GROWTH = 10.0
MU_DECAY = 2.0
LINE_SEARCH = tuple(2.0 ** -i for i in range(11))

FREEFALL_DT = 1e-4
FREEFALL_LIMIT = 10.0
REST_TOLERANCE = 1e-9


class Dynamics(Protocol):
    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray: ...

    def linearize(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class RobotDynamics:
    """Euler-discretized robot model."""

    params: RobotParams
    dt: float

    def step(self, x, u):
        return dyn.step(self.params, x, u, self.dt, "euler")

    def linearize(self, x, u):
        return dyn.linearize_discrete(self.params, x, u, self.dt)


@dataclass(frozen=True)
class LinearDynamics:
    """x' = A x + B u, exposed through the same interface as the robot."""

    A: np.ndarray
    B: np.ndarray

    def step(self, x, u):
        x_next = self.A @ x + self.B @ u
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteState("linear rollout produced non-finite state")
        return x_next

    def linearize(self, x, u):
        return self.A, self.B


@dataclass(frozen=True)
class CostWeights:
    Q: tuple[float, ...]
    R: tuple[float, ...]
    Qf: tuple[float, ...]


DEFAULT_WEIGHTS = CostWeights(
    Q=(0.0, 0.0, 0.0, 0.02, 0.02, 0.02),
    R=(0.3, 0.3),
    Qf=(6400.0, 6400.0, 6400.0, 1e-5, 1e-5, 1e-5),
)


def _as_matrix(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.diag(w) if w.ndim == 1 else w


@dataclass(frozen=True, eq=False)
class IlqrProblem:
    dynamics: Dynamics
    x0: np.ndarray
    x_target: np.ndarray
    dt: float
    steps: int
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    max_iters: int = 100
    rel_tol: float = 1e-6
    params: RobotParams | None = None

    def __post_init__(self) -> None:
        for name in ("x0", "x_target"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("Q", "R", "Qf"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))
        if self.dt <= 0:
            raise ConfigError("optimizer: dt must be > 0")
        if self.steps < 1:
            raise ConfigError("optimizer: horizon must span at least one step")
        if np.any(np.diag(self.Q) < 0) or np.any(np.diag(self.Qf) < 0):
            raise ConfigError("optimizer: Q and Qf entries must be >= 0")
        try:
            linalg.cho_factor(self.R)
        except linalg.LinAlgError as e:
            raise ConfigError("optimizer: R must be positive definite") from e
        if self.max_iters < 1:
            raise ConfigError("optimizer.max_iters must be >= 1")
        if self.rel_tol <= 0:
            raise ConfigError("optimizer.rel_tol must be > 0")

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @property
    def nu(self) -> int:
        return self.R.shape[0]


@dataclass(frozen=True, eq=False)
class GainSchedule:
    k: np.ndarray  # (N, nu)
    K: np.ndarray  # (N, nu, nx)


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (N+1, nx)
    controls: np.ndarray  # (N, nu)
    cost: float = float("nan")

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class IlqrSolution:
    trajectory: Trajectory
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def controls(self) -> np.ndarray:
        return self.trajectory.controls

    @property
    def initial_cost(self) -> float:
        return self.history[0]

    @property
    def final_cost(self) -> float:
        return self.trajectory.cost


def total_cost(problem: IlqrProblem, states: np.ndarray, controls: np.ndarray) -> float:
    xs = states[:-1]
    running = np.einsum("ij,jk,ik->", xs, problem.Q, xs) + np.einsum("ij,jk,ik->", controls, problem.R, controls)
    e = states[-1] - problem.x_target
    return float(e @ problem.Qf @ e + running)


def _times(problem: IlqrProblem) -> np.ndarray:
    return problem.dt * np.arange(problem.steps + 1)


def rollout(problem: IlqrProblem, controls: np.ndarray) -> Trajectory:
    controls = np.asarray(controls, dtype=float).reshape(problem.steps, problem.nu)
    states = np.empty((problem.steps + 1, problem.x0.size))
    states[0] = problem.x0
    for i in range(problem.steps):
        states[i + 1] = problem.dynamics.step(states[i], controls[i])
    return Trajectory(_times(problem), states, controls, total_cost(problem, states, controls))


def linearize_trajectory(problem: IlqrProblem, traj: Trajectory) -> tuple[np.ndarray, np.ndarray]:
    pairs = [problem.dynamics.linearize(x, u) for x, u in zip(traj.states[:-1], traj.controls)]
    return np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])


def backward_pass(
    problem: IlqrProblem,
    traj: Trajectory,
    mu: float = 0.0,
    derivatives: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[GainSchedule, tuple[float, float]]:
    """Gains of the local quadratic model and its expected cost change terms.

    Returns (gains, (d1, d2)); stepping with line-search scale a changes the
    model cost by a*d1 + a^2*d2.
    """
    if mu < 0:
        raise ValueError("mu must be >= 0")
    A, B = derivatives if derivatives is not None else linearize_trajectory(problem, traj)
    Q, R, Qf = problem.Q, problem.R, problem.Qf
    nx, nu, n = problem.x0.size, problem.nu, problem.steps

    k = np.zeros((n, nu))
    K = np.zeros((n, nu, nx))
    v_x = 2.0 * Qf @ (traj.states[-1] - problem.x_target)
    v_xx = 2.0 * Qf
    d1 = d2 = 0.0

    for i in reversed(range(n)):
        x, u = traj.states[i], traj.controls[i]
        q_x = 2.0 * Q @ x + A[i].T @ v_x
        q_u = 2.0 * R @ u + B[i].T @ v_x
        q_xx = 2.0 * Q + A[i].T @ v_xx @ A[i]
        q_uu = 2.0 * R + B[i].T @ v_xx @ B[i]
        q_ux = B[i].T @ v_xx @ A[i]

        try:
            factor = linalg.cho_factor(q_uu + mu * np.eye(nu))
        except linalg.LinAlgError:
            raise NotPositiveDefinite(i, mu) from None
        k[i] = -linalg.cho_solve(factor, q_u)
        K[i] = -linalg.cho_solve(factor, q_ux)

        d1 += k[i] @ q_u
        d2 += 0.5 * k[i] @ q_uu @ k[i]

        v_x = q_x + K[i].T @ q_uu @ k[i] + K[i].T @ q_u + q_ux.T @ k[i]
        v_xx = q_xx + K[i].T @ q_uu @ K[i] + K[i].T @ q_ux + q_ux.T @ K[i]
        v_xx = 0.5 * (v_xx + v_xx.T)

    return GainSchedule(k, K), (float(d1), float(d2))


def forward_pass(problem: IlqrProblem, traj: Trajectory, gains: GainSchedule, alpha: float = 1.0) -> Trajectory:
    states = np.empty_like(traj.states)
    controls = np.empty_like(traj.controls)
    states[0] = problem.x0
    for i in range(problem.steps):
        controls[i] = traj.controls[i] + alpha * gains.k[i] + gains.K[i] @ (states[i] - traj.states[i])
        states[i + 1] = problem.dynamics.step(states[i], controls[i])
    return Trajectory(traj.times, states, controls, total_cost(problem, states, controls))


def _line_search(problem, traj, gains) -> Trajectory | None:
    for alpha in LINE_SEARCH:
        try:
            candidate = forward_pass(problem, traj, gains, alpha)
        except (NonFiniteState, LinearSolveFailure):
            logger.debug("forward pass blew up at alpha=%g", alpha)
            continue
        if candidate.cost < traj.cost:
            return candidate
    return None


def solve(problem: IlqrProblem, initial_controls: np.ndarray | None = None) -> IlqrSolution:
    """Run iLQR from zero controls until the relative cost change drops below rel_tol."""
    if initial_controls is None:
        initial_controls = np.zeros((problem.steps, problem.nu))
    traj = rollout(problem, initial_controls)
    solution = IlqrSolution(trajectory=traj, history=[traj.cost])
    derivatives = linearize_trajectory(problem, traj)
    mu = 0.0

    for it in range(1, problem.max_iters + 1):
        solution.iterations = it
        try:
            gains, (d1, d2) = backward_pass(problem, traj, mu, derivatives)
        except NotPositiveDefinite as e:
            mu = max(MU_MIN, mu * MU_GROWTH)
            logger.debug("%s; raising mu to %.3g", e, mu)
            if mu > MU_MAX:
                raise Diverged("regularization exhausted in backward pass", best=solution) from e
            continue

        expected = -(d1 + d2)
        if expected <= problem.rel_tol * max(traj.cost, np.finfo(float).tiny):
            solution.converged = True
            break

        candidate = _line_search(problem, traj, gains)
        if candidate is None:
            mu = max(MU_MIN, mu * MU_GROWTH)
            logger.warning("line search failed at iteration %d; mu=%.3g", it, mu)
            if mu > MU_MAX:
                raise Diverged(f"no cost decrease after {it} iterations", best=solution)
            continue

        change = (traj.cost - candidate.cost) / max(traj.cost, np.finfo(float).tiny)
        traj = candidate
        solution.trajectory = traj
        solution.history.append(traj.cost)
        logger.debug("iter %d: cost %.6g (mu=%.3g)", it, traj.cost, mu)
        mu = mu / MU_DECAY
        if mu < MU_MIN:
            mu = 0.0
        if change < problem.rel_tol:
            solution.converged = True
            break
        derivatives = linearize_trajectory(problem, traj)

    if not solution.converged:
        logger.warning("iLQR stopped at max_iters=%d (cost %.6g)", problem.max_iters, traj.cost)
    logger.info(
        "iLQR: cost %.6g -> %.6g in %d iterations", solution.initial_cost, solution.final_cost, solution.iterations
    )
    return solution


def freefall_time(params: RobotParams, x0: np.ndarray, limit: float = FREEFALL_LIMIT) -> float:
    """Time for the swing hand to reach its first lowest point with zero torque.

    A start at rest where the hand is not accelerating downward is already
    that lowest point, so the answer is zero.
    """
    x0 = np.asarray(x0, dtype=float)
    zero = np.zeros(2)
    if _resting_at_minimum(params, x0):
        return 0.0

    def rhs(t, x):
        return dyn.state_derivative(params, x, zero)

    def hand_rising(t, x):
        return dyn.hand_velocity(params, x)[1]

    hand_rising.terminal = True
    hand_rising.direction = 1.0

    sol = solve_ivp(
        rhs,
        (0.0, limit),
        x0,
        method="DOP853",
        events=hand_rising,
        rtol=1e-10,
        atol=1e-12,
        max_step=100 * FREEFALL_DT,
    )
    if sol.status == -1:
        raise NonFiniteState(f"free swing integration failed: {sol.message}")
    if not sol.t_events[0].size:
        raise NoMinimumFound(f"hand height has no minimum within {limit} s")
    return float(sol.t_events[0][0])


def _resting_at_minimum(params: RobotParams, x0: np.ndarray) -> bool:
    q, dq = dyn.split_state(x0)
    if abs(dyn.hand_velocity(params, x0)[1]) > REST_TOLERANCE:
        return False
    ddq = dyn.forward_dynamics(params, x0, np.zeros(2))
    jdot = dyn.jacobian_dot(params, q, dq)
    accel = dyn.jacobian_hand(params, q) @ ddq + jdot @ dq
    return bool(accel[1] >= -REST_TOLERANCE)


def swing_horizon(params: RobotParams, x0: np.ndarray) -> tuple[float, float]:
    """Automatic horizon: twice the free-fall time, returned with that time."""
    t_ff = freefall_time(params, x0)
    return 2.0 * t_ff, t_ff


def swing_problem(
    params: RobotParams,
    endpoints: SwingEndpoints,
    horizon: float,
    steps: int = 300,
    weights: CostWeights = DEFAULT_WEIGHTS,
    max_iters: int = 100,
    rel_tol: float = 1e-6,
) -> IlqrProblem:
    dt = horizon / steps
    return IlqrProblem(
        dynamics=RobotDynamics(params, dt),
        x0=endpoints.x0,
        x_target=endpoints.x_target,
        dt=dt,
        steps=steps,
        Q=weights.Q,
        R=weights.R,
        Qf=weights.Qf,
        max_iters=max_iters,
        rel_tol=rel_tol,
        params=params,
    )


def terminal_hand_error(params: RobotParams, traj: Trajectory, target) -> float:
    q_final, _ = dyn.split_state(traj.final_state)
    return float(np.linalg.norm(dyn.fk_hand(params, q_final) - np.asarray(target, dtype=float)))


@dataclass(frozen=True)
class OptimizerSettings:
    """How one swing is posed: horizon rule, discretization, weights, stopping."""

    horizon: float | str = 0.66
    steps: int = 300
    weights: CostWeights = DEFAULT_WEIGHTS
    max_iters: int = 100
    rel_tol: float = 1e-6

    def __post_init__(self) -> None:
        if isinstance(self.horizon, str):
            if self.horizon != "auto":
                raise ConfigError("optimizer.horizon must be a number of seconds or \"auto\"")
        elif not self.horizon > 0:
            raise ConfigError("optimizer.horizon must be > 0")
        if self.steps < 1:
            raise ConfigError("optimizer.steps must be >= 1")
        if len(self.weights.Q) != 6 or len(self.weights.Qf) != 6 or len(self.weights.R) != 2:
            raise ConfigError("optimizer: Q and Qf need 6 entries, R needs 2")
        if min(self.weights.Q + self.weights.Qf) < 0:
            raise ConfigError("optimizer: Q and Qf entries must be >= 0")
        if min(self.weights.R) <= 0:
            raise ConfigError("optimizer.R entries must be > 0")
        if self.max_iters < 1:
            raise ConfigError("optimizer.max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("optimizer.rel_tol must be > 0")

    def resolve_horizon(self, params: RobotParams, x0: np.ndarray) -> tuple[float, float | None]:
        """Horizon in seconds and, for the automatic rule, the free-fall time it came from."""
        if self.horizon == "auto":
            return swing_horizon(params, x0)
        return float(self.horizon), None

    def problem(self, params: RobotParams, endpoints: SwingEndpoints, horizon: float) -> IlqrProblem:
        return swing_problem(
            params,
            endpoints,
            horizon,
            steps=self.steps,
            weights=self.weights,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
        )
