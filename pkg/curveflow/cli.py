from __future__ import annotations

import argparse
from pathlib import Path
import sys
import time
from typing import Callable, Sequence

from .config import ConfigError, ExperimentConfig, load_config, preset, preset_names, with_overrides
from .experiments import run_experiment
from .plotting import plot_run
from .runs import SUMMARY_FILENAME, VERDICT_FILENAME, RunArtifactError, RunMode, read_json

EXIT_PASSED = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_status_reporter() -> tuple[Callable[[str], None], Callable[[], float]]:
    started = time.monotonic()
    state = {"step": 0}

    def report(message: str) -> None:
        state["step"] += 1
        elapsed = time.monotonic() - started
        print(f"[{state['step']}] {message} ({elapsed:.1f}s)", file=sys.stderr)

    def elapsed_seconds() -> float:
        return time.monotonic() - started

    return report, elapsed_seconds


def error_origin(exc: BaseException) -> str:
    return type(exc).__module__.rsplit(".", 1)[-1]


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config) if args.config else preset(args.preset)
    out_dir = Path(args.out_dir) if args.out_dir else None
    return with_overrides(config, seed=args.seed, output_dir=out_dir)


def run_command(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    status_reporter, elapsed_seconds = build_status_reporter()
    status = None if args.quiet else status_reporter
    run_mode: RunMode = args.run_mode
    result = run_experiment(config, run_mode=run_mode, status=status)
    context = result.context

    if context.run_mode == "archive":
        destination = context.build_dir
        destination_label = "archive run"
    elif context.run_mode == "both":
        destination = context.output_root
        destination_label = "latest output (archive also written)"
    else:
        destination = context.output_root
        destination_label = "latest output"
    summary = result.verdict["summary"]
    print(
        f"{config.name}: {summary['passed']}/{summary['total']} checks passed; "
        f"wrote {len(result.filenames)} files to {destination} ({destination_label}) "
        f"in {elapsed_seconds():.1f}s"
    )
    for name in summary["failed"]:
        print(f"failed: {name}", file=sys.stderr)
    return EXIT_PASSED if result.all_passed else EXIT_FAILED


def report_command(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    try:
        verdict = read_json(run_dir / VERDICT_FILENAME)
    except RunArtifactError as exc:
        print(f"error: {error_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summary_path = run_dir / SUMMARY_FILENAME
    if summary_path.exists():
        print(summary_path.read_text(encoding="utf-8"), end="")
    else:
        for check in verdict.get("checks", []):
            print(f"{'PASS' if check.get('pass') else 'FAIL'} {check.get('name')}")
    return EXIT_PASSED if verdict.get("summary", {}).get("all_passed") else EXIT_FAILED


def plot_command(args: argparse.Namespace) -> int:
    for path in plot_run(Path(args.run_dir)):
        print(f"Wrote plot: {path}")
    return EXIT_PASSED


def presets_command(args: argparse.Namespace) -> int:
    for name in preset_names():
        print(name)
    return EXIT_PASSED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curveflow",
        description="Simulate non-local curvature flows of plane curves and check their theorems.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run an experiment from a config file or a preset.")
    source_group = run.add_mutually_exclusive_group(required=True)
    source_group.add_argument("--config", help="Path to a JSON experiment config.")
    source_group.add_argument("--preset", choices=preset_names(), help="Named preset experiment.")
    run.add_argument(
        "--out-dir",
        default=None,
        help="Output root (default: config output_dir, then $CURVEFLOW_OUT, then ./curveflow_out)",
    )
    run.add_argument(
        "--run-mode",
        choices=("latest", "archive", "both"),
        default="both",
        help=(
            "Output lifecycle mode: latest=overwrite root files, "
            "archive=write timestamped run only, both=archive and publish root files"
        ),
    )
    run.add_argument("--seed", type=int, default=None, help="Override the ensemble seed")
    run.add_argument("--quiet", action="store_true", help="Suppress progress lines on stderr.")
    run.set_defaults(handler=run_command)

    report = commands.add_parser("report", help="Print the summary of a finished run directory.")
    report.add_argument("run_dir")
    report.set_defaults(handler=report_command)

    plot = commands.add_parser("plot", help="Plot the trajectory CSVs of a run directory.")
    plot.add_argument("run_dir")
    plot.set_defaults(handler=plot_command)

    presets = commands.add_parser("presets", help="List the preset names.")
    presets.set_defaults(handler=presets_command)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(list(sys.argv[1:] if argv is None else argv))
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"error: {error_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"error: {error_origin(exc)}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
