from __future__ import annotations

from dataclasses import dataclass, replace
import math
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .config import CheckKind, ExperimentConfig, config_to_dict, default_output_root
from .flow import evolve
from .functionals import (
    IDENTITY_TOLERANCE,
    SLACK_TOLERANCE,
    EnsembleSummary,
    check_inequality_ensemble,
    fourier_coefficients,
    verify_identity_ensemble,
)
from .geometry import make_test_curve
from .models import FlowKind, FlowState, StatusCallback, Trajectory, emit_status
from .runs import (
    CONFIG_FILENAME,
    IDENTITIES_FILENAME,
    INEQUALITIES_FILENAME,
    SUMMARY_FILENAME,
    TERMINATION_PREFIX,
    TRAJECTORY_PREFIX,
    VERDICT_FILENAME,
    RunContext,
    RunMode,
    case_filename,
    create_run_context,
    publish_latest_artifacts,
    termination_payload,
    write_json,
    write_latest_run_manifest,
    write_trajectory_csv,
)
from .theorems import (
    SIGN_CHECKS,
    CheckResult,
    audit_monotonicity,
    build_verdict,
    check_blow_up_bound,
    fit_blow_up_rates,
    fit_convergence,
    fit_decay,
    is_n_fold_circle,
    predicted_fate,
    rate_checks,
    stationary_classifier,
)

CONSERVATION_TOLERANCE = 1e-6
RATIO_STEP_TOLERANCE = 1e-8
STATIONARY_DRIFT = 1e-9


@dataclass(frozen=True)
class ExperimentResult:
    context: RunContext
    verdict: dict[str, Any]
    filenames: tuple[str, ...]

    @property
    def all_passed(self) -> bool:
        return bool(self.verdict["summary"]["all_passed"])


def _prefixed(checks: list[CheckResult], case_id: Optional[str]) -> list[CheckResult]:
    if case_id is None:
        return checks
    return [replace(check, name=f"{case_id}:{check.name}") for check in checks]


def ensemble_payload(summary: EnsembleSummary) -> dict[str, Any]:
    return {
        "count": summary.count,
        "seed": summary.seed,
        "worst": {name: (value if math.isfinite(value) else None) for name, value in summary.worst.items()},
        "failures": list(summary.failures),
        "pass": summary.passed,
    }


def identity_checks(summary: EnsembleSummary) -> list[CheckResult]:
    return [
        CheckResult(
            name=f"identity_{name}",
            paper_ref="Fourier identities of closed curves",
            value=value,
            bound=IDENTITY_TOLERANCE,
            passed=value <= IDENTITY_TOLERANCE,
        )
        for name, value in summary.worst.items()
    ]


def inequality_checks(summary: EnsembleSummary) -> list[CheckResult]:
    checks = []
    for name, value in summary.worst.items():
        if name.startswith("interpolation"):
            checks.append(
                CheckResult(
                    name=name,
                    paper_ref="interpolation inequality (largest observed ratio)",
                    value=value,
                    bound=None,
                    passed=math.isfinite(value),
                )
            )
        else:
            checks.append(
                CheckResult(
                    name=name,
                    paper_ref="inequalities of closed curves (smallest slack)",
                    value=value,
                    bound=-SLACK_TOLERANCE,
                    passed=value >= -SLACK_TOLERANCE,
                )
            )
    return checks


def _conservation(name: str, paper_ref: str, value: float, bound: float) -> CheckResult:
    return CheckResult(name=name, paper_ref=paper_ref, value=value, bound=bound, passed=value <= bound)


def conservation_checks(traj: Trajectory) -> list[CheckResult]:
    if traj.flow == FlowKind.AP:
        area = traj.column("area")
        drift = float(np.max(np.abs(area - area[0])) / area[0])
        return [_conservation("area_conserved", "AP flow preserves the area", drift, CONSERVATION_TOLERANCE)]
    if traj.flow == FlowKind.LP:
        length = traj.column("length")
        drift = float(np.max(np.abs(length - length[0])) / length[0])
        return [_conservation("length_conserved", "LP flow preserves the length", drift, CONSERVATION_TOLERANCE)]
    return [
        _conservation(
            "ratio_non_increasing", "JP flow decreases L^2/A", traj.max_ratio_increase, RATIO_STEP_TOLERANCE
        )
    ]


def stationary_checks(traj: Trajectory, initial: FlowState) -> list[CheckResult]:
    curve = initial.curve
    classified = stationary_classifier(curve, traj.flow)
    circle = is_n_fold_circle(curve)
    drift = float(np.max(np.abs(traj.final_state.curve.points - curve.points)))
    label = "stationary solutions are n-fold circles"
    return [
        CheckResult(name="stationary_velocity", paper_ref=label, value=None, bound=None, passed=classified),
        CheckResult(
            name="stationary_agrees_with_circle_test",
            paper_ref=label,
            value=None,
            bound=None,
            passed=classified == circle,
        ),
        _conservation("stationary_drift", "n-fold circles do not move", drift, STATIONARY_DRIFT),
    ]


def trajectory_checks(config: ExperimentConfig, traj: Trajectory, initial: FlowState) -> list[CheckResult]:
    checks: list[CheckResult] = []
    selected = set(config.checks)
    d0 = traj.samples[0].diagnostics
    if CheckKind.BLOW_UP in selected:
        fate = predicted_fate(d0)
        checks.append(
            CheckResult(
                name="predicted_blow_up",
                paper_ref="negative isoperimetric deficit forces blow-up",
                value=d0.i_m1,
                bound=0.0,
                passed=fate == "blow_up",
            )
        )
        checks.extend(check_blow_up_bound(traj).checks())
        if len(traj.samples) >= 10:
            checks.extend(audit_monotonicity(traj).to_checks(names=SIGN_CHECKS))
    if CheckKind.RATES in selected:
        checks.extend(rate_checks(fit_blow_up_rates(traj)))
    if CheckKind.DECAY in selected:
        checks.extend(fit_decay(traj).checks())
    if CheckKind.CONVERGENCE in selected:
        checks.extend(fit_convergence(traj).checks())
    if CheckKind.CONSERVATION in selected:
        checks.extend(conservation_checks(traj))
    if CheckKind.STATIONARY in selected:
        checks.extend(stationary_checks(traj, initial))
    if CheckKind.AUDIT in selected:
        checks.extend(audit_monotonicity(traj).to_checks())
    return checks


def format_summary(
    config: ExperimentConfig,
    context: RunContext,
    verdict: dict[str, Any],
    cases: list[str],
) -> str:
    lines = [f"curveflow experiment {config.name} (run {context.run_id})"]
    lines.extend(cases)
    for check in verdict["checks"]:
        status = "PASS" if check["pass"] else "FAIL"
        value = "-" if check["value"] is None else f"{check['value']:.6g}"
        bound = "-" if check["bound"] is None else f"{check['bound']:.6g}"
        lines.append(f"{status} {check['name']}: value={value} bound={bound} ({check['paper_ref']})")
    summary = verdict["summary"]
    lines.append(f"{summary['passed']}/{summary['total']} checks passed")
    return "\n".join(lines) + "\n"


def run_experiment(
    config: ExperimentConfig,
    *,
    output_root: Path | None = None,
    run_mode: RunMode = "both",
    status: StatusCallback | None = None,
) -> ExperimentResult:
    root = output_root or config.output_dir or default_output_root()
    context = create_run_context(Path(root), run_mode)
    context.build_dir.mkdir(parents=True, exist_ok=True)
    emit_status(status, f"Running {config.name} into {context.build_dir}")

    filenames: list[str] = []
    checks: list[CheckResult] = []
    case_lines: list[str] = []

    if CheckKind.IDENTITIES in config.checks:
        emit_status(status, f"Identity suite over {config.ensemble_size} random curves")
        summary = verify_identity_ensemble(
            config.ensemble_size,
            config.seed,
            rotation_numbers=config.rotation_numbers,
            node_count=config.node_count,
            bandwidth=config.bandwidth,
            status=status,
        )
        write_json(context.build_dir / IDENTITIES_FILENAME, ensemble_payload(summary))
        filenames.append(IDENTITIES_FILENAME)
        checks.extend(identity_checks(summary))

    if CheckKind.INEQUALITIES in config.checks:
        emit_status(status, f"Inequality suite over {config.ensemble_size} random curves")
        summary = check_inequality_ensemble(
            config.ensemble_size,
            config.seed,
            rotation_numbers=config.rotation_numbers,
            node_count=config.node_count,
            bandwidth=config.bandwidth,
            status=status,
        )
        write_json(context.build_dir / INEQUALITIES_FILENAME, ensemble_payload(summary))
        filenames.append(INEQUALITIES_FILENAME)
        checks.extend(inequality_checks(summary))

    if config.needs_trajectories:
        multiple = len(config.flows) * len(config.curves) > 1
        for index, spec in enumerate(config.curves):
            curve = make_test_curve(replace(spec, node_count=config.node_count))
            if config.bandwidth is not None:
                fourier_coefficients(curve, config.bandwidth)
            initial = FlowState(curve=curve)
            for flow in config.flows:
                case_id = f"{flow.value}-{index}" if multiple else None
                emit_status(status, f"Case {case_id or flow.value}: {spec.kind.value} n={curve.rotation_number}")
                traj = evolve(
                    initial,
                    flow,
                    config.policy,
                    sample_every=config.sample_every,
                    dt_policy=config.dt_policy,
                    status=status,
                    status_every=config.status_every,
                    config=config_to_dict(config),
                )
                csv_name = case_filename(TRAJECTORY_PREFIX, case_id, ".csv")
                termination_name = case_filename(TERMINATION_PREFIX, case_id, ".json")
                write_trajectory_csv(context.build_dir / csv_name, traj)
                write_json(context.build_dir / termination_name, termination_payload(traj))
                filenames.extend([csv_name, termination_name])
                termination = traj.termination
                case_lines.append(
                    f"case {case_id or flow.value}: {termination.kind.value} at t={termination.t_end:.6g} "
                    f"after {termination.steps} steps"
                    + (f" ({termination.cause})" if termination.cause else "")
                )
                checks.extend(_prefixed(trajectory_checks(config, traj, initial), case_id))

    verdict = build_verdict(checks, title=config.name)
    write_json(context.build_dir / VERDICT_FILENAME, verdict)
    write_json(context.build_dir / CONFIG_FILENAME, config_to_dict(config))
    (context.build_dir / SUMMARY_FILENAME).write_text(
        format_summary(config, context, verdict, case_lines), encoding="utf-8"
    )
    filenames.extend([VERDICT_FILENAME, CONFIG_FILENAME, SUMMARY_FILENAME])

    published_latest = context.run_mode == "both"
    if published_latest:
        emit_status(status, f"Publishing latest artifacts to {context.output_root}")
        publish_latest_artifacts(context.build_dir, context.output_root, filenames)
    write_latest_run_manifest(
        context,
        name=config.name,
        all_passed=bool(verdict["summary"]["all_passed"]),
        filenames=filenames,
        published_latest=published_latest or context.run_mode == "latest",
    )
    summary = verdict["summary"]
    emit_status(status, f"Finished {config.name}: {summary['passed']}/{summary['total']} checks passed")
    return ExperimentResult(context=context, verdict=verdict, filenames=tuple(filenames))
