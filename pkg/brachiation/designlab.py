"""Design-parameter studies: final swing cost against body length or arm mass."""

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .configspace import endpoints_for, reachable_offset
from .dynamics import RobotParams
from .errors import BrachiationError, ConfigError, InvalidParams
from .trajopt import OptimizerSettings, solve, terminal_hand_error

logger = logging.getLogger(__name__)

Axis = Literal["body_length", "arm_mass_fraction"]
AXES = ("body_length", "arm_mass_fraction")

THREADS_ENV = "BRACHIATE_THREADS"


def standard_mass_cases() -> list[tuple[float, float]]:
    """(body_mass, per-arm mass) in kg for the three printed mass distributions."""
    return [(3.5, 2.025), (3.0, 3.025), (3.0675, 3.0675)]


def default_grid(axis: Axis) -> list[float]:
    if axis == "body_length":
        return [round(0.1 * i, 10) for i in range(10)]
    return [round(0.05 + 0.025 * i, 10) for i in range(9)]


@dataclass(frozen=True)
class SweepSpec:
    base_params: RobotParams
    axis: Axis
    values: tuple[float, ...]
    mass_cases: tuple[tuple[float, float], ...] = ()
    optimizer: OptimizerSettings = field(default_factory=lambda: OptimizerSettings(horizon="auto"))
    target: tuple[float, float] = (0.4, 0.0)
    offset_angle: float = 0.0

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise ConfigError(f"sweep.axis must be one of {', '.join(AXES)}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "mass_cases", tuple((float(b), float(a)) for b, a in self.mass_cases))
        if not self.values:
            raise ConfigError("sweep.values must not be empty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ConfigError("sweep.values must be strictly increasing")
        if self.axis == "arm_mass_fraction" and not all(0 < v < 0.5 for v in self.values):
            raise ConfigError("sweep.values: arm mass fractions must lie in (0, 0.5)")
        if self.axis == "body_length" and self.values[0] < 0:
            raise ConfigError("sweep.values: body lengths must be >= 0")

    @property
    def cases(self) -> list[int]:
        """Mass case indices; a sweep without cases runs the base masses as case 0."""
        return list(range(len(self.mass_cases))) or [0]

    def points(self) -> list[tuple[float, int]]:
        return [(value, case) for case in self.cases for value in self.values]


@dataclass(frozen=True)
class SweepRecord:
    axis: str
    value: float
    case: int
    final_cost: float
    iterations: int
    converged: bool
    terminal_hand_error: float
    offset_angle: float = 0.0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and math.isfinite(self.final_cost)

    def row(self) -> list:
        return [
            self.axis,
            repr(self.value),
            self.case,
            repr(self.final_cost),
            self.iterations,
            int(self.converged),
            repr(self.terminal_hand_error),
        ]


def _scaled_body_inertia(base: RobotParams, mass: float, length: float) -> float:
    # Keep the non-rod part of the base body (motors, electronics) and swap
    # the uniform-rod term for the new length; scale both with mass.
    rod = base.body_mass * base.body_length**2 / 12.0
    return (mass / base.body_mass) * (base.body_inertia - rod) + mass * length**2 / 12.0


def derive_params(spec: SweepSpec, axis_value: float, mass_case: int = 0) -> RobotParams:
    """Robot for one sweep point; arm length stays fixed, COMs at half-length."""
    base = spec.base_params
    if spec.mass_cases:
        body_mass, arm_mass = spec.mass_cases[mass_case]
    else:
        body_mass, arm_mass = base.body_mass, base.arm_mass
    body_length = base.body_length

    if spec.axis == "body_length":
        body_length = axis_value
    else:
        total = body_mass + 2.0 * arm_mass
        arm_mass = axis_value * total
        body_mass = total - 2.0 * arm_mass
        if body_mass <= 0:
            raise InvalidParams(f"arm mass fraction {axis_value} leaves no body mass")

    if (body_length, body_mass, arm_mass) == (base.body_length, base.body_mass, base.arm_mass):
        return base
    return replace(
        base,
        body_length=body_length,
        body_mass=body_mass,
        arm_mass=arm_mass,
        arm_inertia=base.arm_inertia * arm_mass / base.arm_mass,
        body_inertia=_scaled_body_inertia(base, body_mass, body_length),
        arm_com_offset=None,
        body_com_offset=None,
    )


def run_point(spec: SweepSpec, value: float, case: int) -> SweepRecord:
    """Solve one design; numerical failures become a flagged record.

    Designs whose straight body cannot span the bars are posed with the body
    bent by the smallest offset angle that reaches them.
    """
    rear = (-spec.target[0], spec.target[1])
    try:
        params = derive_params(spec, value, case)
        offset = reachable_offset(params, [np.hypot(*rear), np.hypot(*spec.target)], spec.offset_angle)
        if offset != spec.offset_angle:
            logger.info("sweep point %s=%g case %d: bending body to %.4f rad", spec.axis, value, case, offset)
        endpoints = endpoints_for(params, rear, spec.target, offset)
        horizon, _ = spec.optimizer.resolve_horizon(params, endpoints.x0)
        solution = solve(spec.optimizer.problem(params, endpoints, horizon))
    except BrachiationError as e:
        logger.warning("sweep point %s=%g case %d failed: %s", spec.axis, value, case, e)
        return SweepRecord(spec.axis, value, case, float("nan"), 0, False, float("nan"), error=str(e))

    record = SweepRecord(
        axis=spec.axis,
        value=value,
        case=case,
        final_cost=solution.final_cost,
        iterations=solution.iterations,
        converged=solution.converged,
        terminal_hand_error=terminal_hand_error(params, solution.trajectory, spec.target),
        offset_angle=offset,
    )
    logger.info("sweep point %s=%g case %d: cost %.6g", spec.axis, value, case, record.final_cost)
    return record


def _run_point(args: tuple[SweepSpec, float, int]) -> SweepRecord:
    return run_point(*args)


def worker_count(env: dict | None = None) -> int:
    env = os.environ if env is None else env
    raw = env.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[SweepRecord]:
    """Solve every (value, case) point; records come back in grid order."""
    points = spec.points()
    workers = min(worker_count() if workers is None else workers, len(points))
    logger.info("sweeping %s over %d points with %d workers", spec.axis, len(points), workers)
    jobs = [(spec, value, case) for value, case in points]
    if workers <= 1:
        return [_run_point(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_point, jobs))


def cost_minimizer(records: list[SweepRecord], case: int = 0) -> SweepRecord:
    """Lowest-cost successful record of one mass case."""
    candidates = [r for r in records if r.case == case and r.ok]
    if not candidates:
        raise ValueError(f"no successful sweep points for case {case}")
    return min(candidates, key=lambda r: r.final_cost)


def is_non_decreasing(records: list[SweepRecord], case: int = 0) -> bool:
    costs = np.array([r.final_cost for r in records if r.case == case and r.ok])
    return bool(np.all(np.diff(costs) >= 0))
