"""Handhold geometry to joint configurations."""

import logging
from dataclasses import dataclass

import numpy as np

from .dynamics import RobotParams, fk_hand
from .errors import ConfigError, DegenerateBearing, Unreachable

logger = logging.getLogger(__name__)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = np.remainder(a + np.pi, 2.0 * np.pi) - np.pi
    return float(np.pi if w == -np.pi else w)


def _bearing(v: np.ndarray) -> float:
    """Absolute angle of a vector, measured from the downward vertical."""
    return float(np.arctan2(v[0], -v[1]))


@dataclass(frozen=True)
class BarLayout:
    bars: tuple[tuple[float, float], ...]
    base_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "bars", tuple((float(x), float(z)) for x, z in self.bars))
        if len(self.bars) < 2:
            raise ConfigError("bars.positions needs at least 2 bars")
        if not 0 <= self.base_index < len(self.bars) - 1:
            raise ConfigError("bars.base_index must name a bar with a successor")
        gaps = np.linalg.norm(np.diff(np.array(self.bars), axis=0), axis=1)
        if np.any(gaps <= 0):
            raise ConfigError("bars.positions must be distinct consecutive bars")

    def check_reach(self, params: RobotParams) -> None:
        for gap in self.gaps:
            if gap >= params.reach:
                raise Unreachable(gap, (0.0, params.reach))

    @property
    def gaps(self) -> np.ndarray:
        return np.linalg.norm(np.diff(np.array(self.bars), axis=0), axis=1)

    def relative(self, index: int, base: int | None = None) -> np.ndarray:
        base = self.base_index if base is None else base
        return np.subtract(self.bars[index], self.bars[base])

    def target(self, base: int | None = None) -> np.ndarray:
        base = self.base_index if base is None else base
        return self.relative(base + 1, base)

    def rear(self, base: int | None = None) -> np.ndarray:
        """Previous bar, or the mirror of the target when the base is the first bar."""
        base = self.base_index if base is None else base
        if base == 0:
            tx, tz = self.target(base)
            return np.array([-tx, tz])
        return self.relative(base - 1, base)


@dataclass(frozen=True, eq=False)
class SwingEndpoints:
    q0: np.ndarray
    qT: np.ndarray
    offset_angle: float
    rear: np.ndarray
    target: np.ndarray

    @property
    def x0(self) -> np.ndarray:
        return np.concatenate([self.q0, np.zeros(3)])

    @property
    def x_target(self) -> np.ndarray:
        return np.concatenate([self.qT, np.zeros(3)])


def closed_form_catch_config(L: float, p, q2: float) -> np.ndarray:
    """Closed-form catch posture as printed; ignores the body length."""
    px, pz = float(p[0]), float(p[1])
    reach = np.hypot(px, pz)
    if reach > 2.0 * L:
        raise Unreachable(reach, (0.0, 2.0 * L))
    if px == 0.0:
        raise DegenerateBearing("px = 0: bearing atan(pz/px) undefined")
    spread = np.arcsin(reach / (2.0 * L))
    q1 = spread + np.arctan(pz / px)
    q3 = spread - 2.0 * np.pi + q2
    return np.array([q1, q2, q3])


def exact_catch_config(params: RobotParams, p, q2: float = 0.0) -> np.ndarray:
    """Joint angles putting the swing hand at p with the offset angle held at q2.

    With q2 fixed the left arm and body form one rigid lever of length rho, so
    the right shoulder lies on a circle of radius rho about the bar and on a
    circle of radius L about the target; the two intersections are the elbow
    branches. The branch with the shoulder lower (body hanging under the bars)
    is returned; ties go to the smaller |q3 - pi|.
    """
    p = np.asarray(p, dtype=float)
    L = params.arm_length
    lever = L * np.array([0.0, -1.0]) + params.body_length * np.array([np.sin(q2), -np.cos(q2)])
    rho = float(np.linalg.norm(lever))
    d = float(np.linalg.norm(p))

    lo, hi = abs(rho - L), rho + L
    tol = 1e-12 * max(1.0, hi)
    if d < lo - tol or d > hi + tol or (d == 0.0 and rho != L):
        raise Unreachable(d, (lo, hi))

    if d == 0.0:
        # Both circles coincide; any shoulder position works. Keep it straight down.
        shoulders = [np.array([0.0, -rho])]
    else:
        a = (d * d + rho * rho - L * L) / (2.0 * d)
        h = np.sqrt(max(rho * rho - a * a, 0.0))
        e = p / d
        n = np.array([-e[1], e[0]])
        base = a * e
        shoulders = [base + h * n, base - h * n]

    candidates = []
    for s in shoulders:
        q1 = wrap_angle(_bearing(s) - _bearing(lever))
        theta3 = _bearing(p - s)
        q3 = wrap_angle(theta3 - q1 - q2 - np.pi)
        candidates.append((s[1], abs(q3 - np.pi), np.array([q1, q2, q3])))

    candidates.sort(key=lambda c: (round(c[0], 12), c[1]))
    q = candidates[0][2]
    residual = float(np.linalg.norm(fk_hand(params, q) - p))
    if residual > 1e-9:
        logger.warning("catch configuration residual %.3g m for target %s", residual, p)
    return q


REACH_MARGIN = 0.02


def _lever_length(params: RobotParams, q2: float) -> float:
    L, Lb = params.arm_length, params.body_length
    return float(np.sqrt(max(L * L + Lb * Lb + 2.0 * L * Lb * np.cos(q2), 0.0)))


def reachable_offset(params: RobotParams, distances, preferred: float = 0.0, margin: float = REACH_MARGIN) -> float:
    """Offset angle that puts every hand distance inside the chain's reach.

    preferred is kept when its lever leaves margin of slack at each distance.
    Otherwise the body is bent just far enough (same sign as preferred,
    positive for zero) to bring the lever into range.
    """
    L, Lb = params.arm_length, params.body_length
    d = np.abs(np.asarray(distances, dtype=float))
    need_lo = float(np.max(np.abs(d - L))) + margin
    need_hi = float(np.min(d)) + L - margin
    rho = _lever_length(params, preferred)
    if need_lo <= rho <= need_hi:
        return preferred

    achievable = (max(0.0, Lb - 2.0 * L), 2.0 * L + Lb)
    rho_min, rho_max = abs(L - Lb), L + Lb
    goal = min(max(rho, need_lo), need_hi)
    if need_lo > need_hi or Lb == 0.0 or not rho_min <= goal <= rho_max:
        worst = float(np.min(d)) if goal < rho_min or need_hi < rho_min else float(np.max(d))
        raise Unreachable(worst, achievable)

    c = (goal * goal - L * L - Lb * Lb) / (2.0 * L * Lb)
    q2 = float(np.arccos(np.clip(c, -1.0, 1.0)))
    return -q2 if preferred < 0 else q2


def swing_endpoints(
    params: RobotParams,
    layout: BarLayout,
    offset_angle: float = 0.0,
    base: int | None = None,
) -> SwingEndpoints:
    return endpoints_for(params, layout.rear(base), layout.target(base), offset_angle)


def endpoints_for(params: RobotParams, rear, target, offset_angle: float = 0.0) -> SwingEndpoints:
    """Endpoints for one swing from hand positions relative to the holding bar."""
    rear = np.asarray(rear, dtype=float)
    target = np.asarray(target, dtype=float)
    return SwingEndpoints(
        q0=exact_catch_config(params, rear, offset_angle),
        qT=exact_catch_config(params, target, offset_angle),
        offset_angle=offset_angle,
        rear=rear,
        target=target,
    )
