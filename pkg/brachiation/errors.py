"""Exceptions raised by the brachiation toolkit."""


class BrachiationError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(BrachiationError, ValueError):
    """Invalid or malformed configuration."""


class InvalidParams(ConfigError):
    """Robot parameters violate their invariants."""


class ArtifactFormatError(BrachiationError, ValueError):
    """A CSV/JSON artifact has the wrong schema or version."""


class LinearSolveFailure(BrachiationError, ArithmeticError):
    """Mass matrix is numerically singular."""


class NonFiniteState(BrachiationError, ArithmeticError):
    def __init__(self, message: str, time: float | None = None):
        super().__init__(message if time is None else f"{message} (t={time:.6g}s)")
        self.time = time


class Unreachable(BrachiationError, ValueError):
    def __init__(self, distance: float, reach: tuple[float, float]):
        lo, hi = reach
        super().__init__(
            f"target at distance {distance:.6g} m outside achievable interval [{lo:.6g}, {hi:.6g}] m"
        )
        self.distance = distance
        self.reach = reach


class DegenerateBearing(BrachiationError, ValueError):
    """Bearing to the target is undefined (px = 0)."""


class NoMinimumFound(BrachiationError, RuntimeError):
    """Free swing never reached a hand-height minimum."""


class NotPositiveDefinite(BrachiationError, ArithmeticError):
    def __init__(self, index: int, mu: float):
        super().__init__(f"Quu + mu*I not positive definite at step {index} (mu={mu:.3g})")
        self.index = index
        self.mu = mu


class Diverged(BrachiationError, RuntimeError):
    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


class OutOfRange(BrachiationError, ValueError):
    """Reference queried outside its time span."""


class NotCaught(BrachiationError, RuntimeError):
    """Role swap requested without a successful catch."""


class MissedTarget(BrachiationError, RuntimeError):
    def __init__(self, error: float, tolerance: float):
        super().__init__(f"planned swing ends {error:.4g} m from the bar (tolerance {tolerance:.4g} m)")
        self.error = error
        self.tolerance = tolerance
