"""CSV and JSON artifacts: trajectories, telemetry, sweeps and run summaries.

CSV files start with a version comment line, e.g. ``# brachiation-trajectory v1``;
readers reject any other version. Floats use 17 significant digits so values
survive a write/read cycle bit for bit.
"""

import csv
import io
import json
import math
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, TextIO

import numpy as np

from .errors import ArtifactFormatError
from .trajopt import Trajectory

TRAJECTORY_KIND = "brachiation-trajectory"
TELEMETRY_KIND = "brachiation-telemetry"
SWEEP_KIND = "brachiation-sweep"
FORMAT_VERSION = 1

TRAJECTORY_COLUMNS = ("t", "q1", "q2", "q3", "dq1", "dq2", "dq3", "u2", "u3")
TELEMETRY_COLUMNS = TRAJECTORY_COLUMNS + (
    "ex", "ez", "dex", "dez", "uc2", "uc3", "ut2", "ut3", "singular",
)
SWEEP_COLUMNS = ("axis", "value", "case", "final_cost", "iterations", "converged", "terminal_hand_error")


def fmt(value: float) -> str:
    return format(float(value), ".17g")


@contextmanager
def atomic_writer(path: Path) -> Iterator[TextIO]:
    """Write to a temp file next to path and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _header(kind: str) -> str:
    return f"# {kind} v{FORMAT_VERSION}\n"


def _write_rows(path: Path, kind: str, columns: tuple[str, ...], rows) -> None:
    with atomic_writer(path) as f:
        f.write(_header(kind))
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def write_trajectory(path: Path, traj: Trajectory) -> None:
    """One row per knot; the final knot has no control and stores NaN."""
    controls = np.vstack([traj.controls, np.full((1, traj.controls.shape[1]), np.nan)])
    rows = (
        [fmt(t), *map(fmt, x), *map(fmt, u)]
        for t, x, u in zip(traj.times, traj.states, controls)
    )
    _write_rows(path, TRAJECTORY_KIND, TRAJECTORY_COLUMNS, rows)


def write_telemetry(path: Path, telemetry) -> None:
    """Controller samples, one row per control period."""
    rows = (
        [fmt(t), *map(fmt, x), *map(fmt, u), *map(fmt, y), *map(fmt, dy), *map(fmt, uc), *map(fmt, ut), int(s)]
        for t, x, u, y, dy, uc, ut, s in zip(
            telemetry.times,
            telemetry.states,
            telemetry.u,
            telemetry.y,
            telemetry.dy,
            telemetry.u_config,
            telemetry.u_task,
            telemetry.singular,
        )
    )
    _write_rows(path, TELEMETRY_KIND, TELEMETRY_COLUMNS, rows)


def write_sweep(path: Path, records) -> None:
    """Design sweep results in grid order; failed points carry nan cost and error."""
    _write_rows(path, SWEEP_KIND, SWEEP_COLUMNS, (r.row() for r in records))


def _read_table(path: Path, kind: str, columns: tuple[str, ...]) -> np.ndarray:
    path = Path(path)
    first, _, body = path.read_text().partition("\n")
    expected = _header(kind).strip()
    if first.strip() != expected:
        raise ArtifactFormatError(f"{path}: expected header {expected!r}, found {first.strip()!r}")

    reader = csv.reader(io.StringIO(body))
    header = next(reader, None)
    if header is None or tuple(header) != columns:
        raise ArtifactFormatError(f"{path}: expected columns {','.join(columns)}")
    try:
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    except ValueError as e:
        raise ArtifactFormatError(f"{path}: {e}") from e
    if data.ndim != 2 or data.shape[0] < 2:
        raise ArtifactFormatError(f"{path}: needs at least two rows")
    return data


def read_trajectory(path: Path) -> Trajectory:
    data = _read_table(path, TRAJECTORY_KIND, TRAJECTORY_COLUMNS)
    return Trajectory(times=data[:, 0], states=data[:, 1:7], controls=data[:-1, 7:9])


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        # JSON has no NaN/inf
        return float(value) if math.isfinite(value) else None
    return value


def write_summary(path: Path, summary: dict) -> None:
    with atomic_writer(path) as f:
        json.dump(_jsonable(summary), f, indent=2, sort_keys=True)
        f.write("\n")


def read_summary(path: Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ArtifactFormatError(f"{path}: {e}") from e
