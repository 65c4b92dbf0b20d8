"""Closed-loop swing simulation and multi-bar brachiation runs."""

import logging
from dataclasses import dataclass, field, replace
from typing import Literal, Protocol

import numpy as np

from . import dynamics as dyn
from .configspace import BarLayout, SwingEndpoints, endpoints_for, wrap_angle
from .dynamics import SELECTION, RobotParams
from .errors import ConfigError, MissedTarget, NonFiniteState, NotCaught
from .tracking import ControlSample, Reference, TrackerConfig, TrackingController, build_reference
from .trajopt import IlqrSolution, OptimizerSettings, Trajectory, solve, terminal_hand_error

logger = logging.getLogger(__name__)

PLANT_DT = 1e-4
CATCH_TOLERANCE = 0.03

Hand = Literal["left", "right"]


class Controller(Protocol):
    control_dt: float

    def __call__(self, t: float, x: np.ndarray) -> ControlSample: ...


@dataclass(frozen=True)
class DisturbanceSpec:
    force: tuple[float, float]
    window: tuple[float, float]

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.force)) or len(self.force) != 2:
            raise ConfigError("sim.disturbance.force must be two finite numbers")
        t0, t1 = self.window
        if not t0 < t1:
            raise ConfigError("sim.disturbance.window must satisfy start < end")

    def active(self, t: float) -> bool:
        return self.window[0] <= t < self.window[1]

    def joint_torque(self, params: RobotParams, q: np.ndarray, t: float) -> np.ndarray | None:
        """Hand force mapped to joint torques, J^T F, inside the window."""
        if not self.active(t):
            return None
        return dyn.jacobian_hand(params, q).T @ np.asarray(self.force, dtype=float)


@dataclass(frozen=True, eq=False)
class Telemetry:
    times: np.ndarray
    states: np.ndarray
    u: np.ndarray
    u_config: np.ndarray
    u_task: np.ndarray
    y: np.ndarray
    dy: np.ndarray
    singular: np.ndarray


@dataclass(frozen=True, eq=False)
class SwingOutcome:
    trajectory: Trajectory
    telemetry: Telemetry
    applied: np.ndarray  # generalized torques B u + tau_ext per plant step
    ee_error: np.ndarray
    max_ee_error: float
    final_ee_error: float
    caught: bool
    catch_position: np.ndarray
    target: np.ndarray | None = None
    final_com: np.ndarray | None = None

    @property
    def final_state(self) -> np.ndarray:
        return self.trajectory.final_state

    def summary(self) -> dict:
        return {
            "caught": self.caught,
            "catch_position": [float(v) for v in self.catch_position],
            "target": None if self.target is None else [float(v) for v in self.target],
            "max_ee_error": self.max_ee_error,
            "final_ee_error": self.final_ee_error,
            "duration": float(self.trajectory.times[-1]),
            "singular_samples": int(np.count_nonzero(self.telemetry.singular)),
            "final_com": None if self.final_com is None else [float(v) for v in self.final_com],
        }


def catch_check(params: RobotParams, x_T: np.ndarray, target_rel, tol: float = CATCH_TOLERANCE) -> bool:
    """Hand within tol of the bar at the end of the cycle; the boundary counts as caught."""
    q, _ = dyn.split_state(x_T)
    return bool(np.linalg.norm(dyn.fk_hand(params, q) - np.asarray(target_rel, dtype=float)) <= tol)


def hold_ratio(plant_dt: float, control_dt: float) -> int:
    hold = int(round(control_dt / plant_dt))
    if hold < 1 or abs(hold * plant_dt - control_dt) > 1e-9 * control_dt:
        raise ConfigError("control_dt must be an integer multiple of plant_dt")
    return hold


def _tracking_error(params: RobotParams, reference: Reference | None, t: float, x: np.ndarray) -> np.ndarray:
    if reference is None:
        return np.full(2, np.nan)
    q, _ = dyn.split_state(x)
    return reference.at(t, clamp=True).p - dyn.fk_hand(params, q)


def simulate_swing(
    params: RobotParams,
    x0: np.ndarray,
    controller: Controller,
    reference: Reference | None,
    T: float,
    plant_dt: float = PLANT_DT,
    control_dt: float | None = None,
    disturbance: DisturbanceSpec | None = None,
    target=None,
    catch_tolerance: float = CATCH_TOLERANCE,
) -> SwingOutcome:
    """RK4 plant at plant_dt with the controller zero-order held over control_dt."""
    if T <= 0:
        raise ValueError("T must be > 0")
    control_dt = controller.control_dt if control_dt is None else control_dt
    hold = hold_ratio(plant_dt, control_dt)
    n = int(round(T / plant_dt))

    states = np.empty((n + 1, 6))
    controls = np.empty((n, 2))
    applied = np.empty((n, 3))
    rows: list[tuple[float, np.ndarray, ControlSample, np.ndarray]] = []

    x = np.asarray(x0, dtype=float).copy()
    states[0] = x
    u = np.zeros(2)
    for i in range(n):
        t = i * plant_dt
        if i % hold == 0:
            sample = controller(t, x)
            u = np.asarray(sample.u, dtype=float)
            rows.append((t, x.copy(), sample, _tracking_error(params, reference, t, x)))
        tau_ext = disturbance.joint_torque(params, x[:3], t) if disturbance is not None else None
        try:
            x = dyn.step(params, x, u, plant_dt, "rk4", tau_ext)
        except NonFiniteState as e:
            raise NonFiniteState("plant simulation blew up", time=t) from e
        states[i + 1] = x
        controls[i] = u
        applied[i] = SELECTION @ u + (0.0 if tau_ext is None else tau_ext)

    t_end = n * plant_dt
    y_end = _tracking_error(params, reference, t_end, x)
    telemetry = Telemetry(
        times=np.array([r[0] for r in rows]),
        states=np.array([r[1] for r in rows]),
        u=np.array([r[2].u for r in rows]),
        u_config=np.array([r[2].u_config for r in rows]),
        u_task=np.array([r[2].u_task for r in rows]),
        y=np.array([r[3] for r in rows]),
        dy=np.array([r[2].dy for r in rows]),
        singular=np.array([r[2].singular for r in rows], dtype=bool),
    )
    ee_error = np.vstack([telemetry.y, y_end])
    norms = np.linalg.norm(ee_error, axis=1)

    hand = dyn.fk_hand(params, x[:3])
    if target is None:
        caught = False
    else:
        target = np.asarray(target, dtype=float)
        caught = catch_check(params, x, target, catch_tolerance)

    trajectory = Trajectory(plant_dt * np.arange(n + 1), states, controls)
    return SwingOutcome(
        trajectory=trajectory,
        telemetry=telemetry,
        applied=applied,
        ee_error=ee_error,
        max_ee_error=float(np.max(norms)) if reference is not None else float("nan"),
        final_ee_error=float(norms[-1]),
        caught=caught,
        catch_position=hand,
        target=target,
        final_com=dyn.com_position(params, x[:3]),
    )


def energy_residual(params: RobotParams, outcome: SwingOutcome) -> float:
    """Energy change minus work done by motors and disturbance over the run."""
    states = outcome.trajectory.states
    energy = np.array([dyn.total_energy(params, x).total for x in (states[0], states[-1])])
    work = np.einsum("ij,ij->", outcome.applied, np.diff(states[:, :3], axis=0))
    return float(energy[1] - energy[0] - work)


@dataclass(frozen=True, eq=False)
class CycleFrame:
    """Where the holding bar sits in the world and which hand swings."""

    base_bar: int = 0
    swing_hand: Hand = "right"
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mirrored: bool = False

    @property
    def _sign(self) -> np.ndarray:
        return np.array([-1.0 if self.mirrored else 1.0, 1.0])

    def to_world(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) * self._sign + self.origin

    def to_base(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.origin) * self._sign

    def vector_to_base(self, v) -> np.ndarray:
        """Direction or force, so the origin does not apply."""
        return np.asarray(v, dtype=float) * self._sign

    def cycle_params(self, params: RobotParams) -> RobotParams:
        """Robot parameters as seen from the holding hand."""
        return params if self.swing_hand == "right" else params.mirrored()


# Re-expresses a state for the chain reversed at the swing hand.
_SWAP = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, -1.0], [0.0, -1.0, 0.0]])


def swap_roles(
    params: RobotParams,
    x_T: np.ndarray,
    frame: CycleFrame,
    caught_bar: int,
    bar_position=None,
    tol: float = CATCH_TOLERANCE,
) -> tuple[np.ndarray, CycleFrame]:
    """Hand the base over to the bar just caught.

    The swing hand becomes the holding hand, the kinematic chain is reversed
    and the new frame is anchored at the caught hand so every joint keeps its
    world position. bar_position is the caught bar in world coordinates; when
    given, the hand must be within tol of it.
    """
    cycle = frame.cycle_params(params)
    q, dq = dyn.split_state(x_T)
    hand_world = frame.to_world(dyn.fk_hand(cycle, q))
    if bar_position is not None and np.linalg.norm(hand_world - np.asarray(bar_position, dtype=float)) > tol:
        raise NotCaught(f"hand is {np.linalg.norm(hand_world - bar_position):.4f} m from bar {caught_bar}")

    q_new = _SWAP @ q + np.array([0.0, -np.pi, -np.pi])
    q_new = np.array([wrap_angle(a) for a in q_new])
    dq_new = _SWAP @ dq
    new_frame = CycleFrame(
        base_bar=caught_bar,
        swing_hand="left" if frame.swing_hand == "right" else "right",
        origin=hand_world,
        mirrored=frame.mirrored,
    )
    return np.concatenate([q_new, dq_new]), new_frame


@dataclass(frozen=True, eq=False)
class PlannedSwing:
    endpoints: SwingEndpoints
    solution: IlqrSolution
    horizon: float
    freefall: float | None

    @property
    def trajectory(self) -> Trajectory:
        return self.solution.trajectory


class TrajectoryPlanner:
    """Solves swings on demand and reuses them for repeated bar geometry.

    A plan whose final hand position is farther than catch_tolerance from the
    bar raises MissedTarget and is not cached.
    """

    def __init__(
        self,
        settings: OptimizerSettings,
        offset_angle: float = 0.0,
        catch_tolerance: float = CATCH_TOLERANCE,
    ):
        self.settings = settings
        self.offset_angle = offset_angle
        self.catch_tolerance = catch_tolerance
        self._cache: dict[tuple, PlannedSwing] = {}

    @property
    def solves(self) -> int:
        return len(self._cache)

    def plan(self, params: RobotParams, rear, target) -> PlannedSwing:
        rear = np.asarray(rear, dtype=float)
        target = np.asarray(target, dtype=float)
        key = (params, tuple(np.round(rear, 9)), tuple(np.round(target, 9)))
        if key in self._cache:
            logger.info("reusing swing for rear=%s target=%s", rear, target)
            return self._cache[key]

        endpoints = endpoints_for(params, rear, target, self.offset_angle)
        horizon, freefall = self.settings.resolve_horizon(params, endpoints.x0)
        solution = solve(self.settings.problem(params, endpoints, horizon))
        miss = terminal_hand_error(params, solution.trajectory, target)
        logger.info("planned swing to %s: cost %.4g, hand error %.4f m", target, solution.final_cost, miss)
        if miss > self.catch_tolerance:
            raise MissedTarget(miss, self.catch_tolerance)
        planned = PlannedSwing(endpoints, solution, horizon, freefall)
        self._cache[key] = planned
        return planned


@dataclass
class BrachiationResult:
    outcomes: list[SwingOutcome] = field(default_factory=list)
    plans: list[PlannedSwing] = field(default_factory=list)
    frames: list[CycleFrame] = field(default_factory=list)
    failed_cycle: int | None = None
    error: str | None = None

    @property
    def all_caught(self) -> bool:
        return self.failed_cycle is None and all(o.caught for o in self.outcomes)


def run_brachiation(
    params: RobotParams,
    layout: BarLayout,
    planner: TrajectoryPlanner,
    tracker: TrackerConfig,
    plant_dt: float = PLANT_DT,
    catch_tolerance: float = CATCH_TOLERANCE,
    disturbance: DisturbanceSpec | None = None,
    saturate: bool = False,
) -> BrachiationResult:
    """Swing bar to bar from layout.base_index to the last bar, stopping at the first miss.

    Between cycles the robot hangs on two bars and re-poses to the next swing's
    initial configuration before releasing, so every cycle starts from its
    planned x0. The gripper closing centres the caught bar in the hand, so the
    new frame is snapped onto the bar. The disturbance force is given in world
    coordinates. A plan that misses the bar or a plant that diverges ends the
    run with the cycle recorded as failed.
    """
    layout.check_reach(params)
    bars = np.array(layout.bars)
    start = layout.base_index
    frame = CycleFrame(
        base_bar=start,
        origin=bars[start].copy(),
        mirrored=bool(bars[start + 1][0] < bars[start][0]),
    )
    result = BrachiationResult()

    for base in range(start, len(bars) - 1):
        cycle = frame.cycle_params(params)
        target = frame.to_base(bars[base + 1])
        # The first bar has no predecessor; the robot starts from a symmetric hang.
        rear = frame.to_base(bars[base - 1]) if base > 0 else np.array([-target[0], target[1]])
        pushed = disturbance
        if disturbance is not None:
            pushed = replace(disturbance, force=tuple(frame.vector_to_base(disturbance.force)))
        try:
            plan = planner.plan(cycle, rear, target)
            reference = build_reference(cycle, plan.trajectory)
            controller = TrackingController(cycle, reference, tracker, saturate=saturate)
            outcome = simulate_swing(
                cycle,
                reference.start_state,
                controller,
                reference,
                reference.duration,
                plant_dt=plant_dt,
                disturbance=pushed,
                target=target,
                catch_tolerance=catch_tolerance,
            )
        except (MissedTarget, NonFiniteState) as e:
            result.failed_cycle = len(result.outcomes)
            result.error = str(e)
            logger.warning("cycle %d (bar %d -> %d) failed: %s", result.failed_cycle, base, base + 1, e)
            break
        result.outcomes.append(outcome)
        result.plans.append(plan)
        result.frames.append(frame)
        cycle_index = len(result.outcomes) - 1
        logger.info(
            "cycle %d (bar %d -> %d): caught=%s, hand miss %.4f m",
            cycle_index,
            base,
            base + 1,
            outcome.caught,
            np.linalg.norm(outcome.catch_position - target),
        )
        if not outcome.caught:
            result.failed_cycle = cycle_index
            logger.warning("missed bar %d on cycle %d", base + 1, cycle_index)
            break
        _, frame = swap_roles(params, outcome.final_state, frame, base + 1, bars[base + 1], catch_tolerance)
        frame = replace(frame, origin=bars[base + 1].copy())

    return result
