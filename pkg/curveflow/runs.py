from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
import json
from pathlib import Path
import shutil
from typing import Any, Iterable, Literal, Mapping, Sequence

import numpy as np

from .geometry import format_float
from .models import Termination, Trajectory

RunMode = Literal["latest", "archive", "both"]

TRAJECTORY_PREFIX = "trajectory"
TERMINATION_PREFIX = "termination"
VERDICT_FILENAME = "verdict.json"
SUMMARY_FILENAME = "summary.txt"
CONFIG_FILENAME = "config.json"
IDENTITIES_FILENAME = "identities.json"
INEQUALITIES_FILENAME = "inequalities.json"
MANIFEST_FILENAME = "latest_run.json"
RUNS_DIRNAME = "runs"

TRAJECTORY_COLUMNS = (
    "t",
    "dt",
    "L",
    "A",
    "n",
    "R",
    "W",
    "I_m1",
    "I0",
    "I1",
    "tildeI_m1",
    "J3",
    "J4",
    "g",
    "kappa_max",
    "kappa_min",
    "c_x",
    "c_y",
    "r",
    "sigma_over_L",
    "rho_L2",
    "rho_C0",
)

_DIAGNOSTIC_FIELDS = {
    "L": "length",
    "A": "area",
    "n": "rotation_number",
    "R": "total_curvature",
    "W": "curvature_energy",
    "I_m1": "i_m1",
    "I0": "i0",
    "I1": "i1",
    "tildeI_m1": "tilde_i_m1",
    "J3": "j3",
    "J4": "j4",
    "g": "g",
    "kappa_max": "kappa_max",
    "kappa_min": "kappa_min",
}


class RunArtifactError(RuntimeError):
    """Raised when a run directory is missing files or holds malformed ones."""


@dataclass(frozen=True)
class RunContext:
    run_id: str
    run_mode: RunMode
    output_root: Path
    build_dir: Path


def generate_run_id(now: datetime | None = None) -> str:
    stamp = now or datetime.now(timezone.utc)
    return stamp.strftime("%Y%m%d-%H%M%S-%f")[:-3]


def create_run_context(output_root: Path, run_mode: RunMode, *, now: datetime | None = None) -> RunContext:
    normalized_root = output_root.expanduser()
    run_id = generate_run_id(now)
    if run_mode == "latest":
        build_dir = normalized_root
    else:
        build_dir = normalized_root / RUNS_DIRNAME / run_id
    return RunContext(
        run_id=run_id,
        run_mode=run_mode,
        output_root=normalized_root,
        build_dir=build_dir,
    )


def case_filename(prefix: str, case_id: str | None, suffix: str) -> str:
    return f"{prefix}{suffix}" if case_id is None else f"{prefix}-{case_id}{suffix}"


def _cell(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format_float(float(value))


def trajectory_rows(traj: Trajectory) -> Iterable[list[str]]:
    for sample in traj.samples:
        d = sample.diagnostics
        row: list[float | int | None] = [sample.t, sample.dt]
        row.extend(getattr(d, _DIAGNOSTIC_FIELDS[name]) for name in TRAJECTORY_COLUMNS[2:16])
        fit = sample.circle_fit
        if fit is None:
            row.extend([None] * 6)
        else:
            row.extend(
                [fit.centre[0], fit.centre[1], fit.radius, fit.sigma_over_length, fit.rho_l2, fit.rho_c0]
            )
        yield [_cell(value) for value in row]


def write_trajectory_csv(path: Path, traj: Trajectory) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        writer.writerows(trajectory_rows(traj))
    return path


def read_trajectory_csv(path: Path) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV; empty circle-fit cells read as NaN."""
    try:
        handle = path.open("r", encoding="utf-8", newline="")
    except OSError as exc:
        raise RunArtifactError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(header) != TRAJECTORY_COLUMNS:
            raise RunArtifactError(f"{path}: unexpected header {header!r}")
        columns: list[list[float]] = [[] for _ in header]
        for line_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise RunArtifactError(f"{path}:{line_number}: expected {len(header)} cells, got {len(row)}")
            try:
                for index, cell in enumerate(row):
                    columns[index].append(float(cell) if cell else float("nan"))
            except ValueError as exc:
                raise RunArtifactError(f"{path}:{line_number}: {exc}") from exc
    return {name: np.array(values, dtype=float) for name, values in zip(header, columns)}


def termination_payload(traj: Trajectory) -> dict[str, Any]:
    termination: Termination = traj.termination
    return {
        "flow": traj.flow.value,
        "kind": termination.kind.value,
        "t_end": termination.t_end,
        "t_num": termination.t_num,
        "cause": termination.cause,
        "steps": termination.steps,
        "rejected_steps": termination.rejected_steps,
        "samples": len(traj.samples),
        "max_ratio_increase": traj.max_ratio_increase,
    }


def write_json(path: Path, payload: Mapping[str, Any] | Sequence[Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise RunArtifactError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise RunArtifactError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def trajectory_files(run_dir: Path) -> list[Path]:
    return sorted(run_dir.glob(f"{TRAJECTORY_PREFIX}*.csv"))


def publish_latest_artifacts(run_dir: Path, output_root: Path, filenames: Sequence[str]) -> None:
    output_root.mkdir(parents=True, exist_ok=True)
    for filename in filenames:
        source = run_dir / filename
        target = output_root / filename
        if source.exists():
            shutil.copy2(source, target)
        else:
            target.unlink(missing_ok=True)


def write_latest_run_manifest(
    context: RunContext,
    *,
    name: str,
    all_passed: bool,
    filenames: Sequence[str],
    published_latest: bool,
) -> Path:
    context.output_root.mkdir(parents=True, exist_ok=True)
    build_artifacts = {}
    latest_artifacts = {}
    for filename in filenames:
        build_path = context.build_dir / filename
        latest_path = context.output_root / filename
        build_artifacts[filename] = str(build_path) if build_path.exists() else None
        latest_artifacts[filename] = str(latest_path) if published_latest and latest_path.exists() else None

    payload = {
        "run_id": context.run_id,
        "run_mode": context.run_mode,
        "generated_at_utc": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
        "output_root": str(context.output_root),
        "build_dir": str(context.build_dir),
        "published_latest": published_latest,
        "experiment": name,
        "all_passed": all_passed,
        "artifacts": {"build": build_artifacts, "latest": latest_artifacts},
    }
    return write_json(context.output_root / MANIFEST_FILENAME, payload)
