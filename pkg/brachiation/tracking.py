"""Trajectory tracking: u = u_config + alpha * u_task.

u_config runs a cascaded position/velocity PID on each shoulder joint.
u_task is an input-output linearizing term on the hand position error
y = p_d - FK(q); it renders y'' = -Kp y - Kd y' on the nominal model,
through a pseudo-inverse since only two of three joints are actuated.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import dynamics as dyn
from .dynamics import SELECTION, RobotParams
from .errors import ConfigError, OutOfRange

logger = logging.getLogger(__name__)

ACTUATED = (1, 2)
TIME_EPS = 1e-9


@dataclass(frozen=True)
class PidParams:
    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float | None = None
    output_limit: float | None = None

    def __post_init__(self) -> None:
        if min(self.kp, self.ki, self.kd) < 0:
            raise ConfigError("tracker: PID gains must be >= 0")
        for limit in (self.integral_limit, self.output_limit):
            if limit is not None and not limit > 0:
                raise ConfigError("tracker: PID limits must be > 0 or null")


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


def pid_step(state: PidState, error: float, p: PidParams, dt: float) -> tuple[float, PidState]:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    integral = state.integral + error * dt
    if p.integral_limit is not None:
        integral = float(np.clip(integral, -p.integral_limit, p.integral_limit))
    output = p.kp * error + p.ki * integral + p.kd * (error - state.prev_error) / dt
    if p.output_limit is not None:
        output = float(np.clip(output, -p.output_limit, p.output_limit))
    return output, PidState(integral, error)


DEFAULT_POS_PID = PidParams(kp=30.0)
DEFAULT_VEL_PID = PidParams(kp=1.5, ki=2.0, integral_limit=0.1)


@dataclass(frozen=True)
class TrackerConfig:
    pos_pid: tuple[PidParams, PidParams] = (DEFAULT_POS_PID, DEFAULT_POS_PID)
    vel_pid: tuple[PidParams, PidParams] = (DEFAULT_VEL_PID, DEFAULT_VEL_PID)
    alpha: float = 1.0
    kp_task: tuple[float, float] = (100.0, 100.0)
    kd_task: tuple[float, float] = (20.0, 20.0)
    pinv_tolerance: float = 0.02  # relative to the largest singular value
    control_dt: float = 1e-3

    def __post_init__(self) -> None:
        if len(self.pos_pid) != 2 or len(self.vel_pid) != 2:
            raise ConfigError("tracker: pos_pid and vel_pid need one entry per shoulder joint")
        if self.alpha < 0:
            raise ConfigError("tracker.alpha must be >= 0")
        if len(self.kp_task) != 2 or len(self.kd_task) != 2:
            raise ConfigError("tracker: kp_task and kd_task need two entries")
        if min(self.kp_task) <= 0 or min(self.kd_task) <= 0:
            raise ConfigError("tracker: kp_task and kd_task entries must be > 0")
        if not 0 < self.pinv_tolerance < 1:
            raise ConfigError("tracker.pinv_tolerance must lie in (0, 1)")
        if not self.control_dt > 0:
            raise ConfigError("tracker.control_dt must be > 0")

    @property
    def Kp(self) -> np.ndarray:
        return np.diag(self.kp_task)

    @property
    def Kd(self) -> np.ndarray:
        return np.diag(self.kd_task)


@dataclass(frozen=True)
class TrackerState:
    pos: tuple[PidState, PidState] = (PidState(), PidState())
    vel: tuple[PidState, PidState] = (PidState(), PidState())


@dataclass(frozen=True, eq=False)
class ReferenceSample:
    t: float
    q: np.ndarray
    dq: np.ndarray
    p: np.ndarray
    dp: np.ndarray
    ddp: np.ndarray


class Reference:
    """Reference signal interpolated from trajectory knots."""

    def __init__(self, params: RobotParams, times: np.ndarray, states: np.ndarray):
        self.params = params
        self.times = np.asarray(times, dtype=float)
        self.states = np.asarray(states, dtype=float)
        if self.times.size < 2 or np.any(np.diff(self.times) <= 0):
            raise ValueError("reference needs at least two strictly increasing knots")
        self._dp = np.array([dyn.hand_velocity(params, x) for x in self.states])
        self._ddp = np.gradient(self._dp, self.times, axis=0)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def start_state(self) -> np.ndarray:
        return self.states[0].copy()

    def _locate(self, t: float) -> tuple[int, float]:
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        w = (t - self.times[i]) / (self.times[i + 1] - self.times[i])
        return i, w

    def at(self, t: float, clamp: bool = False) -> ReferenceSample:
        t0, t1 = self.times[0], self.times[-1]
        if clamp:
            t = float(np.clip(t, t0, t1))
        elif t < t0 - TIME_EPS or t > t1 + TIME_EPS:
            raise OutOfRange(f"t={t:.6g}s outside reference span [{t0:.6g}, {t1:.6g}]")
        else:
            t = float(np.clip(t, t0, t1))
        i, w = self._locate(t)
        x = (1.0 - w) * self.states[i] + w * self.states[i + 1]
        q, dq = dyn.split_state(x)
        ddp = (1.0 - w) * self._ddp[i] + w * self._ddp[i + 1]
        return ReferenceSample(
            t=t,
            q=q,
            dq=dq,
            p=dyn.fk_hand(self.params, q),
            dp=dyn.jacobian_hand(self.params, q) @ dq,
            ddp=ddp,
        )


def build_reference(params: RobotParams, traj) -> Reference:
    return Reference(params, traj.times, traj.states)


class TaskTorque(NamedTuple):
    u: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    singular: bool


class ControlSample(NamedTuple):
    u: np.ndarray
    u_config: np.ndarray
    u_task: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    singular: bool


def u_config(
    t: float,
    x: np.ndarray,
    ref: Reference,
    cfg: TrackerConfig,
    state: TrackerState,
) -> tuple[np.ndarray, TrackerState]:
    s = ref.at(t, clamp=True)
    q, dq = dyn.split_state(x)
    u = np.zeros(2)
    pos, vel = list(state.pos), list(state.vel)
    for n, j in enumerate(ACTUATED):
        outer, pos[n] = pid_step(state.pos[n], s.q[j] - q[j], cfg.pos_pid[n], cfg.control_dt)
        u[n], vel[n] = pid_step(state.vel[n], outer + s.dq[j] - dq[j], cfg.vel_pid[n], cfg.control_dt)
    return u, TrackerState(tuple(pos), tuple(vel))


def u_task(t: float, x: np.ndarray, ref: Reference, params: RobotParams, cfg: TrackerConfig) -> TaskTorque:
    s = ref.at(t, clamp=True)
    q, dq = dyn.split_state(x)
    M = dyn.mass_matrix(params, q)
    bias = dyn.coriolis_matrix(params, q, dq) @ dq + dyn.gravity_vector(params, q)
    J = dyn.jacobian_hand(params, q)
    Jd = dyn.jacobian_dot(params, q, dq)

    y = s.p - dyn.fk_hand(params, q)
    dy = s.dp - J @ dq
    v = -cfg.Kp @ y - cfg.Kd @ dy

    gain = -J @ np.linalg.solve(M, SELECTION)
    rhs = v - s.ddp - J @ np.linalg.solve(M, bias) + Jd @ dq
    gain_pinv, rank = linalg.pinv(gain, atol=0.0, rtol=cfg.pinv_tolerance, return_rank=True)
    return TaskTorque(gain_pinv @ rhs, y, dy, rank < 2)


def control(
    t: float,
    x: np.ndarray,
    ref: Reference,
    params: RobotParams,
    cfg: TrackerConfig,
    state: TrackerState,
    saturate: bool = True,
) -> tuple[ControlSample, TrackerState]:
    uc, state = u_config(t, x, ref, cfg, state)
    task = u_task(t, x, ref, params, cfg)
    u = uc + cfg.alpha * task.u
    if saturate and params.torque_limit is not None:
        u = np.clip(u, -params.torque_limit, params.torque_limit)
    return ControlSample(u, uc, task.u, task.y, task.dy, task.singular), state


class TrackingController:
    """Owns the PID state of one tracking run."""

    def __init__(self, params: RobotParams, reference: Reference, config: TrackerConfig, saturate: bool = True):
        self.params = params
        self.reference = reference
        self.config = config
        self.saturate = saturate
        self.state = TrackerState()

    @property
    def control_dt(self) -> float:
        return self.config.control_dt

    def reset(self) -> None:
        self.state = TrackerState()

    def __call__(self, t: float, x: np.ndarray) -> ControlSample:
        sample, self.state = control(t, x, self.reference, self.params, self.config, self.state, self.saturate)
        if sample.singular:
            logger.debug("u_task pseudo-inverse truncated at t=%.4f", t)
        return sample


@dataclass
class ZeroController:
    control_dt: float = 1e-3

    def reset(self) -> None:
        pass

    def __call__(self, t: float, x: np.ndarray) -> ControlSample:
        zero = np.zeros(2)
        nan = np.full(2, np.nan)
        return ControlSample(zero, zero, zero, nan, nan, False)
