"""File I/O for scenarios, run configs, trajectories and reports.

Scenarios and reports are JSON; trajectories are CSV checked against a pandera
schema on load.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import pandera.polars as pa
import polars as pl
from pandera.errors import SchemaError
from pydantic import BaseModel, ValidationError

from bearing_align.config import RunConfig
from bearing_align.errors import ScenarioParseError
from bearing_align.schema import Scenario, trajectory_columns

logger = logging.getLogger(__name__)


def _format_location(exc: ValidationError) -> tuple[str, str]:
    err = exc.errors()[0]
    location = ".".join(str(part) for part in err["loc"]) or "<root>"
    return location, f"{location}: {err['msg']} ({exc.error_count()} error(s))"


def _read_json(path: Path) -> object:
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}",
            path=str(path),
            location=f"line {e.lineno}, column {e.colno}",
        ) from e


def load_scenario(path: Path) -> Scenario:
    """Load a scenario JSON file.

    Args:
        path: Path to the scenario file.

    Returns:
        The parsed (not yet validated) scenario.

    Raises:
        FileNotFoundError: If the file does not exist.
        ScenarioParseError: On malformed JSON (with line and column) or a
            schema violation (with the offending field).
    """
    data = _read_json(path)
    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        location, message = _format_location(e)
        raise ScenarioParseError(f"{path}: {message}", path=str(path), location=location) from e
    logger.debug("Loaded scenario %s: %d agents, %d landmarks", path, scenario.n, len(scenario.landmarks))
    return scenario


def save_scenario(scenario: Scenario, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(scenario.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_run_config(path: Path) -> RunConfig:
    """Load a RunConfig JSON file; errors are reported like scenario errors."""
    data = _read_json(path)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        location, message = _format_location(e)
        raise ScenarioParseError(f"{path}: {message}", path=str(path), location=location) from e


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------
def _strictly_increasing(data: pa.PolarsData) -> pl.LazyFrame:
    return data.lazyframe.select(pl.col(data.key).diff().fill_null(1.0) > 0.0)


def trajectory_schema(n_agents: int) -> pa.DataFrameSchema:
    """Pandera schema of a trajectory table with ``n_agents`` agent blocks."""
    columns: dict[str, pa.Column] = {
        "t": pa.Column(
            pl.Float64,
            checks=[pa.Check.ge(0.0), pa.Check(_strictly_increasing, error="t must be strictly increasing")],
            nullable=False,
        )
    }
    for name in trajectory_columns(n_agents)[1:]:
        columns[name] = pa.Column(pl.Float64, nullable=False)
    return pa.DataFrameSchema(columns, strict=True, ordered=True, name=f"trajectory_{n_agents}")


def save_trajectory(frame: pl.DataFrame, path: Path) -> Path:
    """Write a trajectory table as CSV (header only when empty)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.write_csv(path)
    return path


def load_trajectory(path: Path) -> pl.DataFrame:
    """Read a trajectory CSV and check it against :func:`trajectory_schema`.

    Raises:
        FileNotFoundError: If the file does not exist.
        ScenarioParseError: If the header or values do not match the schema.
    """
    if not path.exists():
        raise FileNotFoundError(f"Trajectory file not found: {path}")
    header = path.read_text(encoding="utf-8").splitlines()[0].split(",")
    blocks, rem = divmod(len(header) - 1, len(trajectory_columns(1)) - 1)
    if rem or blocks < 1:
        raise ScenarioParseError(f"{path}: unexpected trajectory header", path=str(path), location="header")
    try:
        frame = pl.read_csv(path, schema={c: pl.Float64 for c in header})
    except pl.exceptions.ComputeError as e:
        raise ScenarioParseError(f"{path}: {e}", path=str(path), location="trajectory") from e
    try:
        return trajectory_schema(blocks).validate(frame)
    except SchemaError as e:
        raise ScenarioParseError(f"{path}: {e}", path=str(path), location="trajectory") from e


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------
def save_report(report: BaseModel, path: Path) -> Path:
    """Write a report model as JSON with sorted keys."""
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True, allow_nan=True)
    path.write_text(payload + "\n", encoding="utf-8")
    return path


def save_table(frame: pl.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.write_csv(path)
    return path
