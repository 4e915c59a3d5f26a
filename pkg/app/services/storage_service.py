"""
File IO for scenarios and results: TOML/JSON scenario loading, CSV emission
with round-trip float precision, meta files and gnuplot stubs.
"""
import csv
import json
import logging
import platform
import re
import tomllib
from importlib import metadata
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import ScenarioConfigError, TrajectoryFormatError
from app.schemas import ScenarioConfig
from app.services.integrator import Trajectory

logger = logging.getLogger(__name__)

_GRID_COLUMN = re.compile(r"^([yz])\[(\d+)\]\[(\d+)\]$")


def fmt(value: float) -> str:
    """Shortest representation that parses back to the same float."""
    return repr(float(value))


def load_scenario(path: str) -> ScenarioConfig:
    """
    Load a scenario from a TOML file or a JSON meta file.

    Args:
        path (str): Path to ``*.toml`` or a ``meta.txt`` written by simulate.

    Returns:
        ScenarioConfig: The validated scenario.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ScenarioConfigError(f"cannot read scenario file {path}: {e}") from e

    try:
        if text.lstrip().startswith("{"):
            data = json.loads(text)
            data = data.get("scenario", data)
        else:
            data = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        raise ScenarioConfigError(f"cannot parse {path}: {e}") from e

    try:
        scenario = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        raise ScenarioConfigError(f"invalid scenario {path}:\n{e}") from e
    logger.info(f"Loaded scenario '{scenario.name}' from {path}")
    return scenario


def _versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "pydantic", "pydantic-settings"):
        try:
            versions[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            versions[pkg] = "unknown"
    return versions


def write_meta(out_dir: Path, scenario: ScenarioConfig, extra: Optional[Dict] = None) -> Path:
    """meta.txt: resolved scenario, numerical settings and package versions as JSON."""
    payload = {
        "scenario": scenario.model_dump(mode="json"),
        "settings": settings.model_dump(mode="json"),
        "versions": _versions(),
    }
    if extra:
        payload["results"] = extra
    path = out_dir / "meta.txt"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    logger.debug(f"Wrote {path}")
    return path


def grid_header(m: int, n_y: int, n_z: int) -> List[str]:
    cols = [f"y[{i}][{l}]" for i in range(m) for l in range(n_y)]
    cols += [f"z[{i}][{l}]" for i in range(m) for l in range(n_z)]
    return cols


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    header = ["t", "nu"] + grid_header(traj.m, traj.n_y, traj.n_z)
    # state vectors store nu last; the CSV puts it second
    rows = (
        [fmt(t), fmt(nu)] + [fmt(v) for v in state[:-1]]
        for t, nu, state in zip(traj.times, traj.nu, traj.states)
    )
    return write_rows(path, header, rows)


def read_trajectory_csv(path: str, stencil: str = "bdf2") -> Trajectory:
    """
    Parse trajectory.csv back into a Trajectory.

    Errors carry the 1-based line number of the offending row.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as e:
        raise TrajectoryFormatError(f"cannot open {path}: {e}", line_number=0) from e

    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise TrajectoryFormatError("empty file", line_number=1)
        if len(header) < 2 or header[0] != "t":
            raise TrajectoryFormatError("first column must be 't'", line_number=1)
        if header[1] != "nu":
            raise TrajectoryFormatError("missing 'nu' column in second position", line_number=1)

        y_idx, z_idx = [], []
        for name in header[2:]:
            match = _GRID_COLUMN.match(name)
            if match is None:
                raise TrajectoryFormatError(f"unexpected column '{name}'", line_number=1)
            (y_idx if match.group(1) == "y" else z_idx).append((int(match.group(2)), int(match.group(3))))
        if not y_idx:
            raise TrajectoryFormatError("no differential grid columns", line_number=1)
        if not z_idx:
            raise TrajectoryFormatError("no algebraic grid columns", line_number=1)
        m = max(i for i, _ in y_idx) + 1
        n_y = max(l for _, l in y_idx) + 1
        n_z = max(l for _, l in z_idx) + 1
        if header[2:] != grid_header(m, n_y, n_z):
            raise TrajectoryFormatError("grid columns are not in line-major, component-minor order", line_number=1)

        times, nus, grids = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise TrajectoryFormatError(f"expected {len(header)} fields, got {len(row)}", line_number=line)
            try:
                values = [float(v) for v in row]
            except ValueError as e:
                raise TrajectoryFormatError(f"non-numeric value: {e}", line_number=line) from e
            if times and values[0] <= times[-1]:
                raise TrajectoryFormatError(f"time {values[0]!r} does not increase", line_number=line)
            times.append(values[0])
            nus.append(values[1])
            grids.append(values[2:])

    if not times:
        raise TrajectoryFormatError("no data rows", line_number=2)
    nu = np.array(nus)
    states = np.column_stack([np.array(grids), nu])
    try:
        return Trajectory(
            times=np.array(times), states=states, nu=nu, m=m, n_y=n_y, n_z=n_z, stencil=stencil, coupling="file"
        )
    except ValueError as e:
        raise TrajectoryFormatError(str(e), line_number=2) from e


def normalised_times(times: np.ndarray) -> np.ndarray:
    span = times[-1] - times[0]
    return (times - times[0]) / span if span > 0 else np.zeros_like(times)


def write_frequency_csv(path: Path, traj: Trajectory) -> Path:
    tn = normalised_times(traj.times)
    return write_rows(path, ["t", "t_normalised", "nu"],
                      ([fmt(t), fmt(s), fmt(nu)] for t, s, nu in zip(traj.times, tn, traj.nu)))


def write_diagnostics_csv(path: Path, traj: Trajectory) -> Path:
    iters = [""] + [str(int(k)) for k in traj.newton_iterations]
    return write_rows(
        path,
        ["t", "newton_iterations", "constraint_residual", "hidden_drift"],
        ([fmt(t), it, fmt(c), fmt(d)] for t, it, c, d in zip(traj.times, iters, traj.constraint_residual, traj.hidden_drift)),
    )


def write_gnuplot_stub(path: Path, data_file: str, title: str, ylabel: str, columns: Sequence[int], labels: Sequence[str], xcol: int = 1) -> Path:
    """Minimal gnuplot script plotting ``columns`` of a CSV against ``xcol``."""
    plots = ", \\\n     ".join(
        f"'{data_file}' using {xcol}:{c} with lines title '{lab}'" for c, lab in zip(columns, labels)
    )
    text = (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set title '{title}'\n"
        "set xlabel 't'\n"
        f"set ylabel '{ylabel}'\n"
        f"plot {plots}\n"
    )
    path.write_text(text, encoding="utf-8")
    return path
