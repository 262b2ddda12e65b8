"""
Trajectory CSV and summary artifacts. Every file is written whole: temp file, then rename.
"""
import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from app.models import AttackSignal, SummaryReport, SweepRow, TimeGrid, Trajectory

logger = logging.getLogger(__name__)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def atomic_write(path: Union[str, Path], text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except Exception:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info(f"Wrote {path}")
    return path


def trajectory_header(n: int, k: int) -> List[str]:
    return (
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(k)]
        + [f"u_plus_delta{i + 1}" for i in range(k)]
        + [f"delta{i + 1}" for i in range(k)]
        + ["residual"]
    )


def trajectory_csv(
    grid: TimeGrid, traj: Trajectory, attack: AttackSignal, residual: Optional[np.ndarray] = None
) -> str:
    """
    One row per grid point. ``u`` is the administrator's command -K z, ``u_plus_delta``
    the input the plant actually receives.
    """
    n, k = traj.x.shape[1], traj.u.shape[1]
    if residual is None:
        residual = np.zeros(grid.n_points)
    command = traj.u - attack.samples

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(trajectory_header(n, k))
    for i, t in enumerate(grid.times):
        row = [t, *traj.x[i], *command[i], *traj.u[i], *attack.samples[i], residual[i]]
        writer.writerow([_fmt(v) for v in row])
    return buffer.getvalue()


def write_trajectory_csv(path, grid, traj, attack, residual=None) -> Path:
    return atomic_write(path, trajectory_csv(grid, traj, attack, residual))


def write_summary(path, report: SummaryReport) -> Path:
    return atomic_write(path, report.model_dump_json(indent=2) + "\n")


def sweep_csv(parameter: str, rows: Iterable[SweepRow]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow([parameter, "S_attack", "E_attack", "E_unscaled", "mu0", "percent_S_increase", "error"])
    for row in rows:
        numbers = [row.value, row.S_attack, row.E_attack, row.E_unscaled, row.mu0, row.percent_S_increase]
        writer.writerow(["" if v is None else _fmt(v) for v in numbers] + [row.error or ""])
    return buffer.getvalue()
