"""Planar rigid-body model of the three-link brachiation robot.

The chain is bar -> left arm -> body -> right arm. Joint q1 (bar/left arm) is
unactuated; the shoulder motors drive q2 and q3. Link k points along the
absolute angle theta_k measured from the downward vertical:

    theta1 = q1, theta2 = q1 + q2, theta3 = q1 + q2 + q3 + pi

so q = 0 is the folded home posture with both hands together on the bar.
Positions are in the base frame (bar 2 centre), X forward, Z up.
"""

from dataclasses import dataclass, replace
from functools import cached_property
from typing import Literal, NamedTuple

import numpy as np

from .errors import InvalidParams, LinearSolveFailure, NonFiniteState

# tau = B u: the bar joint has no motor.
SELECTION = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# theta = CHAIN @ q + THETA_OFFSET
CHAIN = np.tril(np.ones((3, 3)))
THETA_OFFSET = np.array([0.0, 0.0, np.pi])

FD_STEP = 1e-6

Method = Literal["euler", "rk4"]


@dataclass(frozen=True)
class RobotParams:
    arm_length: float
    arm_mass: float
    arm_inertia: float
    body_length: float
    body_mass: float
    body_inertia: float
    arm_com_offset: float | None = None
    body_com_offset: float | None = None
    gravity: float = 9.81
    torque_limit: float | None = None

    def __post_init__(self) -> None:
        # Links are uniform cuboids unless told otherwise.
        if self.arm_com_offset is None:
            object.__setattr__(self, "arm_com_offset", 0.5 * self.arm_length)
        if self.body_com_offset is None:
            object.__setattr__(self, "body_com_offset", 0.5 * self.body_length)
        self.validate()

    def validate(self) -> None:
        values = [getattr(self, name) for name in self.__dataclass_fields__ if name != "torque_limit"]
        if not all(np.isfinite(v) for v in values):
            raise InvalidParams("robot parameters must be finite")
        if self.arm_length <= 0:
            raise InvalidParams("robot.arm_length must be > 0")
        if self.body_length < 0:
            raise InvalidParams("robot.body_length must be >= 0")
        if self.arm_mass <= 0:
            raise InvalidParams("robot.arm_mass must be > 0")
        if self.body_mass <= 0:
            raise InvalidParams("robot.body_mass must be > 0")
        if self.arm_inertia < 0:
            raise InvalidParams("robot.arm_inertia must be >= 0")
        if self.body_inertia < 0:
            raise InvalidParams("robot.body_inertia must be >= 0")
        if not 0 <= self.arm_com_offset <= self.arm_length:
            raise InvalidParams("robot.arm_com_offset must lie in [0, arm_length]")
        if not 0 <= self.body_com_offset <= self.body_length:
            raise InvalidParams("robot.body_com_offset must lie in [0, body_length]")
        if self.gravity < 0:
            raise InvalidParams("robot.gravity must be >= 0")
        if self.torque_limit is not None and not self.torque_limit > 0:
            raise InvalidParams("robot.torque_limit must be > 0 or null")

    @classmethod
    def prototype(cls) -> "RobotParams":
        """The robot as built: CAD-measured table values, X-axis inertias."""
        return cls(
            arm_length=0.3098,
            arm_mass=0.384,
            arm_inertia=0.001694,
            body_length=0.08182,
            body_mass=2.111,
            body_inertia=0.01712,
        )

    @property
    def total_mass(self) -> float:
        return 2.0 * self.arm_mass + self.body_mass

    @property
    def arm_mass_fraction(self) -> float:
        return self.arm_mass / self.total_mass

    @property
    def reach(self) -> float:
        return 2.0 * self.arm_length + self.body_length

    def mirrored(self) -> "RobotParams":
        """Same robot seen from the other shoulder (after the hands swap roles)."""
        return replace(self, body_com_offset=self.body_length - self.body_com_offset)

    @cached_property
    def link_lengths(self) -> np.ndarray:
        return np.array([self.arm_length, self.body_length, self.arm_length])

    @cached_property
    def masses(self) -> np.ndarray:
        return np.array([self.arm_mass, self.body_mass, self.arm_mass])

    @cached_property
    def inertias(self) -> np.ndarray:
        return np.array([self.arm_inertia, self.body_inertia, self.arm_inertia])

    @cached_property
    def lever_arms(self) -> np.ndarray:
        """r[k, j]: distance along link j contributing to the COM of link k."""
        L, Lb = self.arm_length, self.body_length
        return np.array([
            [self.arm_com_offset, 0.0, 0.0],
            [L, self.body_com_offset, 0.0],
            [L, Lb, self.arm_com_offset],
        ])

    @cached_property
    def coupling(self) -> np.ndarray:
        r = self.lever_arms
        h = r.T @ (self.masses[:, None] * r)
        return 0.5 * (h + h.T)

    @cached_property
    def gravity_moments(self) -> np.ndarray:
        return self.gravity * (self.masses @ self.lever_arms)


class Energy(NamedTuple):
    total: float
    kinetic: float
    potential: float


def link_angles(q: np.ndarray) -> np.ndarray:
    return CHAIN @ np.asarray(q, dtype=float) + THETA_OFFSET


def _directions(theta: np.ndarray) -> np.ndarray:
    return np.stack([np.sin(theta), -np.cos(theta)], axis=1)


def split_state(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    return x[:3], x[3:]


def make_state(q, dq=None) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    dq = np.zeros(3) if dq is None else np.asarray(dq, dtype=float)
    return np.concatenate([q, dq])


def mass_matrix(params: RobotParams, q: np.ndarray) -> np.ndarray:
    theta = link_angles(q)
    m_theta = params.coupling * np.cos(theta[:, None] - theta[None, :]) + np.diag(params.inertias)
    m = CHAIN.T @ m_theta @ CHAIN
    return 0.5 * (m + m.T)


def coriolis_matrix(params: RobotParams, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Christoffel-form C(q, dq); C @ dq is the Coriolis/centrifugal torque."""
    theta = link_angles(q)
    dtheta = CHAIN @ np.asarray(dq, dtype=float)
    c_theta = params.coupling * np.sin(theta[:, None] - theta[None, :]) * dtheta[None, :]
    return CHAIN.T @ c_theta @ CHAIN


def potential_energy(params: RobotParams, q: np.ndarray) -> float:
    """Gravitational potential relative to the home posture q = 0."""
    theta = link_angles(q)
    return float(-params.gravity_moments @ (np.cos(theta) - np.cos(THETA_OFFSET)))


def gravity_vector(params: RobotParams, q: np.ndarray) -> np.ndarray:
    theta = link_angles(q)
    return CHAIN.T @ (params.gravity_moments * np.sin(theta))


def forward_dynamics(
    params: RobotParams,
    x: np.ndarray,
    u: np.ndarray,
    tau_ext: np.ndarray | None = None,
) -> np.ndarray:
    q, dq = split_state(x)
    tau = SELECTION @ np.asarray(u, dtype=float)
    if tau_ext is not None:
        tau = tau + tau_ext
    rhs = tau - coriolis_matrix(params, q, dq) @ dq - gravity_vector(params, q)
    try:
        return np.linalg.solve(mass_matrix(params, q), rhs)
    except np.linalg.LinAlgError as e:
        raise LinearSolveFailure(f"mass matrix singular at q={q}") from e


def inverse_dynamics(params: RobotParams, q, dq, ddq) -> np.ndarray:
    q, dq, ddq = (np.asarray(v, dtype=float) for v in (q, dq, ddq))
    return mass_matrix(params, q) @ ddq + coriolis_matrix(params, q, dq) @ dq + gravity_vector(params, q)


def fk_all(params: RobotParams, q: np.ndarray) -> np.ndarray:
    """Rows: bar joint, left shoulder, right shoulder, right hand."""
    segments = params.link_lengths[:, None] * _directions(link_angles(q))
    return np.vstack([np.zeros(2), np.cumsum(segments, axis=0)])


def fk_hand(params: RobotParams, q: np.ndarray) -> np.ndarray:
    return fk_all(params, q)[-1]


def com_positions(params: RobotParams, q: np.ndarray) -> np.ndarray:
    """Centre of mass of each link (rows: left arm, body, right arm)."""
    return params.lever_arms @ _directions(link_angles(q))


def com_position(params: RobotParams, q: np.ndarray) -> np.ndarray:
    return params.masses @ com_positions(params, q) / params.total_mass


def jacobian_hand(params: RobotParams, q: np.ndarray) -> np.ndarray:
    theta = link_angles(q)
    j_theta = params.link_lengths * np.vstack([np.cos(theta), np.sin(theta)])
    return j_theta @ CHAIN


def jacobian_dot(params: RobotParams, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    theta = link_angles(q)
    dtheta = CHAIN @ np.asarray(dq, dtype=float)
    jd_theta = params.link_lengths * dtheta * np.vstack([-np.sin(theta), np.cos(theta)])
    return jd_theta @ CHAIN


def hand_velocity(params: RobotParams, x: np.ndarray) -> np.ndarray:
    q, dq = split_state(x)
    return jacobian_hand(params, q) @ dq


def total_energy(params: RobotParams, x: np.ndarray) -> Energy:
    q, dq = split_state(x)
    kinetic = 0.5 * float(dq @ mass_matrix(params, q) @ dq)
    potential = potential_energy(params, q)
    return Energy(kinetic + potential, kinetic, potential)


def state_derivative(params: RobotParams, x: np.ndarray, u: np.ndarray, tau_ext=None) -> np.ndarray:
    _, dq = split_state(x)
    return np.concatenate([dq, forward_dynamics(params, x, u, tau_ext)])


def step(
    params: RobotParams,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
    method: Method = "euler",
    tau_ext: np.ndarray | None = None,
) -> np.ndarray:
    """Advance one step; euler is x + f(x, u) dt exactly as the optimizer models it."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    if method == "euler":
        x_next = x + dt * state_derivative(params, x, u, tau_ext)
    elif method == "rk4":
        k1 = state_derivative(params, x, u, tau_ext)
        k2 = state_derivative(params, x + 0.5 * dt * k1, u, tau_ext)
        k3 = state_derivative(params, x + 0.5 * dt * k2, u, tau_ext)
        k4 = state_derivative(params, x + dt * k3, u, tau_ext)
        x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integration method: {method}")
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("integration produced non-finite state")
    return x_next


def linearize_discrete(
    params: RobotParams,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
    eps: float = FD_STEP,
) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians (A, Bd) of the Euler step.

    The position rows of the Euler map are linear (q' = q + dt*dq) and are
    written down directly; only the acceleration rows are differenced.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)

    d_ddq_dx = np.empty((3, 6))
    for i in range(6):
        dx = np.zeros(6)
        dx[i] = eps
        d_ddq_dx[:, i] = (forward_dynamics(params, x + dx, u) - forward_dynamics(params, x - dx, u)) / (2 * eps)

    d_ddq_du = np.empty((3, 2))
    for i in range(2):
        du = np.zeros(2)
        du[i] = eps
        d_ddq_du[:, i] = (forward_dynamics(params, x, u + du) - forward_dynamics(params, x, u - du)) / (2 * eps)

    A = np.eye(6)
    A[:3, 3:] = dt * np.eye(3)
    A[3:, :] += dt * d_ddq_dx
    Bd = np.zeros((6, 2))
    Bd[3:, :] = dt * d_ddq_du
    return A, Bd
