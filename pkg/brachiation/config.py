"""Run configuration: JSON documents mapped onto the toolkit's dataclasses."""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .artifacts import atomic_writer
from .configspace import BarLayout
from .designlab import AXES, SweepSpec, default_grid
from .dynamics import RobotParams
from .errors import ConfigError
from .simulator import CATCH_TOLERANCE, PLANT_DT, DisturbanceSpec, hold_ratio
from .tracking import PidParams, TrackerConfig
from .trajopt import DEFAULT_WEIGHTS, CostWeights, OptimizerSettings

RESOURCES = Path(__file__).parent / "resources"
DEFAULT_CONFIG = RESOURCES / "prototype.json"

ROBOT_KEYS = tuple(RobotParams.__dataclass_fields__)
ROBOT_REQUIRED = ("arm_length", "arm_mass", "arm_inertia", "body_length", "body_mass", "body_inertia")


@dataclass(frozen=True)
class SimSettings:
    plant_dt: float = PLANT_DT
    catch_tolerance: float = CATCH_TOLERANCE
    saturate: bool = False
    disturbance: DisturbanceSpec | None = None

    def __post_init__(self) -> None:
        if not self.plant_dt > 0:
            raise ConfigError("sim.plant_dt must be > 0")
        if not self.catch_tolerance > 0:
            raise ConfigError("sim.catch_tolerance must be > 0")


@dataclass(frozen=True)
class RunConfig:
    robot: RobotParams
    bars: BarLayout
    offset_angle: float = 0.0
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    output_dir: Path = Path("out")

    def __post_init__(self) -> None:
        try:
            hold_ratio(self.sim.plant_dt, self.tracker.control_dt)
        except ConfigError:
            raise ConfigError("tracker.control_dt must be an integer multiple of sim.plant_dt") from None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _check_keys(data, "", ("robot", "bars", "optimizer", "tracker", "sim", "output_dir"), ("robot", "bars"))
        bars = data["bars"]
        _check_keys(bars, "bars", ("positions", "base_index", "offset_angle"), ("positions",))
        return cls(
            robot=_robot(data["robot"], "robot"),
            bars=_build(BarLayout, "bars", bars=bars["positions"], base_index=bars.get("base_index", 0)),
            offset_angle=_number(bars.get("offset_angle", 0.0), "bars.offset_angle"),
            optimizer=_optimizer(data.get("optimizer", {})),
            tracker=_tracker(data.get("tracker", {})),
            sim=_sim(data.get("sim", {})),
            output_dir=Path(data.get("output_dir", "out")),
        )

    def to_dict(self) -> dict:
        r, o, t, s = self.robot, self.optimizer, self.tracker, self.sim
        return {
            "robot": {k: getattr(r, k) for k in ROBOT_KEYS},
            "bars": {
                "positions": [list(b) for b in self.bars.bars],
                "base_index": self.bars.base_index,
                "offset_angle": self.offset_angle,
            },
            "optimizer": {
                "horizon": o.horizon,
                "steps": o.steps,
                "Q": list(o.weights.Q),
                "R": list(o.weights.R),
                "Qf": list(o.weights.Qf),
                "max_iters": o.max_iters,
                "rel_tol": o.rel_tol,
            },
            "tracker": {
                "pos_pid": [asdict(p) for p in t.pos_pid],
                "vel_pid": [asdict(p) for p in t.vel_pid],
                "alpha": t.alpha,
                "kp_task": list(t.kp_task),
                "kd_task": list(t.kd_task),
                "pinv_tolerance": t.pinv_tolerance,
                "control_dt": t.control_dt,
            },
            "sim": {
                "plant_dt": s.plant_dt,
                "catch_tolerance": s.catch_tolerance,
                "saturate": s.saturate,
                "disturbance": None
                if s.disturbance is None
                else {"force": list(s.disturbance.force), "window": list(s.disturbance.window)},
            },
            "output_dir": str(self.output_dir),
        }

    def save(self, path: Path) -> None:
        """Write the resolved config; load_config reads it back unchanged."""
        with atomic_writer(path) as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")


def _check_keys(data: Any, path: str, allowed: tuple[str, ...], required: tuple[str, ...] = ()) -> None:
    where = path or "config"
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{_join(path, key)}: unknown key")
    for key in required:
        if key not in data:
            raise ConfigError(f"{_join(path, key)}: missing")


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _build(cls, path: str, **kwargs):
    """Construct a dataclass, reporting bad values against the config path."""
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


def _robot(data: dict, path: str) -> RobotParams:
    _check_keys(data, path, ROBOT_KEYS, ROBOT_REQUIRED)
    values = {}
    for key, value in data.items():
        values[key] = None if value is None else _number(value, _join(path, key))
    return _build(RobotParams, path, **values)


def _optimizer(data: dict) -> OptimizerSettings:
    keys = ("horizon", "steps", "Q", "R", "Qf", "max_iters", "rel_tol")
    _check_keys(data, "optimizer", keys)
    horizon = data.get("horizon", OptimizerSettings.horizon)
    if horizon != "auto":
        horizon = _number(horizon, "optimizer.horizon")
    weights = _build(
        CostWeights,
        "optimizer",
        Q=tuple(_number(v, "optimizer.Q") for v in data.get("Q", DEFAULT_WEIGHTS.Q)),
        R=tuple(_number(v, "optimizer.R") for v in data.get("R", DEFAULT_WEIGHTS.R)),
        Qf=tuple(_number(v, "optimizer.Qf") for v in data.get("Qf", DEFAULT_WEIGHTS.Qf)),
    )
    return _build(
        OptimizerSettings,
        "optimizer",
        horizon=horizon,
        steps=_integer(data.get("steps", OptimizerSettings.steps), "optimizer.steps"),
        weights=weights,
        max_iters=_integer(data.get("max_iters", OptimizerSettings.max_iters), "optimizer.max_iters"),
        rel_tol=_number(data.get("rel_tol", OptimizerSettings.rel_tol), "optimizer.rel_tol"),
    )


def _pid_pair(value: Any, path: str, default: tuple[PidParams, PidParams]) -> tuple[PidParams, PidParams]:
    """One PID block for both shoulders, or a list of two."""
    if value is None:
        return default
    blocks = value if isinstance(value, list) else [value, value]
    if len(blocks) != 2:
        raise ConfigError(f"{path}: expected one PID object or a list of two")
    pair = []
    for i, block in enumerate(blocks):
        where = f"{path}.{i}"
        _check_keys(block, where, tuple(PidParams.__dataclass_fields__), ("kp",))
        pair.append(_build(PidParams, where, **block))
    return tuple(pair)


def _tracker(data: dict) -> TrackerConfig:
    keys = tuple(TrackerConfig.__dataclass_fields__)
    _check_keys(data, "tracker", keys)
    defaults = TrackerConfig()
    kwargs = {
        "pos_pid": _pid_pair(data.get("pos_pid"), "tracker.pos_pid", defaults.pos_pid),
        "vel_pid": _pid_pair(data.get("vel_pid"), "tracker.vel_pid", defaults.vel_pid),
    }
    for key in ("kp_task", "kd_task"):
        if key in data:
            kwargs[key] = tuple(_number(v, f"tracker.{key}") for v in data[key])
    for key in ("alpha", "pinv_tolerance", "control_dt"):
        if key in data:
            kwargs[key] = _number(data[key], f"tracker.{key}")
    return _build(TrackerConfig, "tracker", **kwargs)


def _sim(data: dict) -> SimSettings:
    _check_keys(data, "sim", tuple(SimSettings.__dataclass_fields__))
    disturbance = data.get("disturbance")
    if disturbance is not None:
        _check_keys(disturbance, "sim.disturbance", ("force", "window"), ("force", "window"))
        disturbance = _build(
            DisturbanceSpec,
            "sim.disturbance",
            force=tuple(_number(v, "sim.disturbance.force") for v in disturbance["force"]),
            window=tuple(_number(v, "sim.disturbance.window") for v in disturbance["window"]),
        )
    return _build(
        SimSettings,
        "sim",
        plant_dt=_number(data.get("plant_dt", PLANT_DT), "sim.plant_dt"),
        catch_tolerance=_number(data.get("catch_tolerance", CATCH_TOLERANCE), "sim.catch_tolerance"),
        saturate=bool(data.get("saturate", False)),
        disturbance=disturbance,
    )


def parse_override(text: str) -> tuple[str, Any]:
    """KEY=VALUE with VALUE parsed as JSON, falling back to a plain string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r}: expected KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Set dotted-path keys in a raw config document; list items by index."""
    for text in overrides:
        key, value = parse_override(text)
        *parents, leaf = key.split(".")
        node = data
        for i, part in enumerate(parents):
            where = ".".join(parents[: i + 1])
            if isinstance(node, list):
                node = node[_index(part, node, where)]
            else:
                node = node.setdefault(part, {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override {key}: {where} is not a section")
        if isinstance(node, list):
            node[_index(leaf, node, key)] = value
        else:
            node[leaf] = value
    return data


def _index(part: str, node: list, where: str) -> int:
    try:
        i = int(part)
        node[i]
    except (ValueError, IndexError):
        raise ConfigError(f"override: {where} is not a valid list index") from None
    return i


def read_document(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from e


def load_config(path: Path | None = None, overrides: list[str] = ()) -> RunConfig:
    data = read_document(DEFAULT_CONFIG if path is None else path)
    return RunConfig.from_dict(apply_overrides(data, list(overrides)))


def load_sweep(path: Path, config: RunConfig) -> SweepSpec:
    """Sweep file on top of a run config: base robot, optimizer and first gap come from the config."""
    data = read_document(path)
    _check_keys(data, "sweep", ("axis", "values", "mass_cases", "robot"), ("axis",))
    axis = data["axis"]
    if axis not in AXES:
        raise ConfigError(f"sweep.axis: expected one of {', '.join(AXES)}, got {axis!r}")
    robot = config.robot if "robot" not in data else _robot(data["robot"], "sweep.robot")
    values = data.get("values", default_grid(axis))
    if not isinstance(values, list):
        raise ConfigError("sweep.values: expected a list of numbers")
    cases = data.get("mass_cases", [])
    for i, case in enumerate(cases):
        if not isinstance(case, list) or len(case) != 2:
            raise ConfigError(f"sweep.mass_cases.{i}: expected [body_mass, arm_mass]")
    return _build(
        SweepSpec,
        "sweep",
        base_params=robot,
        axis=axis,
        values=tuple(_number(v, "sweep.values") for v in values),
        mass_cases=tuple((_number(b, "sweep.mass_cases"), _number(a, "sweep.mass_cases")) for b, a in cases),
        optimizer=config.optimizer,
        target=tuple(config.bars.target()),
        offset_angle=config.offset_angle,
    )


_config: RunConfig | None = None


def get_default_config() -> RunConfig:
    global _config
    if _config is None:
        _config = load_config()
    return _config
