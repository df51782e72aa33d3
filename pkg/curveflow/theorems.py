from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import curve_fit

from .flow import evolve
from .functionals import (
    CIRCLE_TOLERANCE,
    circle_fit,
    functionals,
    oversample,
)
from .geometry import frenet_data, scale_curve
from .models import (
    ArcLengthCurve,
    CircleFit,
    Diagnostics,
    DtPolicy,
    FlowKind,
    FlowState,
    StatusCallback,
    StoppingPolicy,
    TerminationKind,
    Trajectory,
    emit_status,
)
from .oracle import explicit_limit, oracle_evolve

__all__ = [
    "AuditReport",
    "BlowUpBoundReport",
    "CheckResult",
    "ConvergenceReport",
    "DecayReport",
    "InsufficientResolutionError",
    "NotApplicableError",
    "NotDecayingError",
    "OrderStudy",
    "RateFit",
    "ScalingReport",
    "TheoremCheckError",
    "audit_monotonicity",
    "blow_up_bound",
    "build_verdict",
    "check_blow_up_bound",
    "circle_fit",
    "curve_distance",
    "fit_blow_up_rates",
    "fit_convergence",
    "fit_decay",
    "identity_refinement_study",
    "is_n_fold_circle",
    "predicted_fate",
    "rate_checks",
    "scaling_check",
    "stationary_classifier",
    "stepper_convergence_study",
]

MIN_AUDIT_SAMPLES = 10
AUDIT_TOLERANCE = 1e-2
SIGN_SLACK = 1e-8
DEFICIT_SLACK = 1e-10
BOUND_SLACK = 1e-2
STATIONARY_TOLERANCE = 1e-9

MIN_RATE_SAMPLES = 30
RATE_WINDOW = (20.0, 200.0)
RATE_RESIDUAL_GATE = 0.2
EXPONENT_TOLERANCE = 0.15
W_EXPONENT_RANGE = (-0.65, -0.35)
BOUND_FRACTION = 0.95

DECAY_MARGIN = 0.9
INCREASE_SLACK = 1e-8
GLOBAL_DEFICIT_SLACK = 1e-8
RELATIVE_FLOOR = 1e-11
LIMIT_TOLERANCE = 1e-4
ENVELOPE_SLACK = 1e-6
TAIL_TOLERANCE = 1e-2
CAUCHY_TOLERANCE = 1e-5
SCALING_TOLERANCE = 0.05
RESIDUAL_FLOOR = 1e-9


class TheoremCheckError(RuntimeError):
    """Raised when a trajectory cannot be checked against a statement."""


class NotApplicableError(TheoremCheckError):
    """Raised when the hypotheses of a statement do not hold for the input."""


class InsufficientResolutionError(TheoremCheckError):
    """Raised when too few samples fall into the window a fit needs."""


class NotDecayingError(TheoremCheckError):
    """Raised when the isoperimetric deficit grows along a trajectory."""


def _finite_or_none(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


@dataclass(frozen=True)
class CheckResult:
    name: str
    paper_ref: str
    value: Optional[float]
    bound: Optional[float]
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "paper_ref": self.paper_ref,
            "value": _finite_or_none(self.value),
            "bound": _finite_or_none(self.bound),
            "pass": bool(self.passed),
        }


def build_verdict(checks: Sequence[CheckResult], *, title: str = "") -> dict[str, Any]:
    failed = [check.name for check in checks if not check.passed]
    return {
        "checks": [check.to_dict() for check in checks],
        "summary": {
            "title": title,
            "total": len(checks),
            "passed": len(checks) - len(failed),
            "failed": failed,
            "all_passed": not failed,
        },
    }


# --- blow-up time bound ------------------------------------------------------


@dataclass(frozen=True)
class BlowUpBoundReport:
    flow: FlowKind
    t_bound: float
    length0: float
    area0: float
    i_m1_0: float
    rotation_number: int
    t_num: Optional[float] = None
    slack: float = BOUND_SLACK

    @property
    def passed(self) -> Optional[bool]:
        if self.t_num is None:
            return None
        return self.t_num <= self.t_bound * (1.0 + self.slack)

    def checks(self) -> list[CheckResult]:
        return [
            CheckResult(
                name="blow_up_time_bound",
                paper_ref="upper bound on the blow-up time",
                value=self.t_num,
                bound=self.t_bound * (1.0 + self.slack),
                passed=bool(self.passed),
            )
        ]


def blow_up_bound(d0: Diagnostics, flow: FlowKind) -> BlowUpBoundReport:
    flow = FlowKind(flow)
    if d0.i_m1 >= 0.0:
        raise NotApplicableError(f"blow-up bound needs I_-1(0) < 0, got {d0.i_m1:.6g}")
    if d0.area <= 0.0:
        raise NotApplicableError(f"blow-up bound needs A(0) > 0, got {d0.area:.6g}")
    n = d0.rotation_number
    deficit = -8.0 * math.pi**2 * d0.i_m1
    if flow == FlowKind.AP:
        t_bound = (d0.length**2 - 4.0 * math.pi * d0.area) / (n * deficit)
    elif flow == FlowKind.LP:
        t_bound = (d0.length**2 - 4.0 * math.pi * d0.area) / deficit
    else:
        t_bound = d0.length**2 / (n * deficit)
    return BlowUpBoundReport(
        flow=flow,
        t_bound=t_bound,
        length0=d0.length,
        area0=d0.area,
        i_m1_0=d0.i_m1,
        rotation_number=n,
    )


def check_blow_up_bound(traj: Trajectory, *, slack: float = BOUND_SLACK) -> BlowUpBoundReport:
    """Blow-up bound of the initial curve compared with the observed breakdown time."""
    report = blow_up_bound(traj.samples[0].diagnostics, traj.flow)
    t_num = traj.termination.t_num if traj.blew_up else math.inf
    return replace(report, t_num=t_num, slack=slack)


def predicted_fate(d0: Diagnostics, *, slack: float = DEFICIT_SLACK) -> str:
    """What the sign of I_-1(0) says about the maximal existence time.

    "blow_up" for I_-1(0) < 0 and for non-circles with I_-1(0) = 0,
    "stationary" for n-fold circles, "undetermined" otherwise.
    """
    if d0.i_m1 < -slack:
        return "blow_up"
    if d0.i_m1 <= slack:
        return "stationary" if d0.tilde_i_m1 <= CIRCLE_TOLERANCE else "blow_up"
    return "undetermined"


# --- finite-difference audit of the evolution identities ----------------------


@dataclass(frozen=True)
class AuditCheck:
    name: str
    label: str
    value: float
    tolerance: float
    passed: bool


@dataclass(frozen=True)
class AuditReport:
    flow: FlowKind
    checks: tuple[AuditCheck, ...]

    def get(self, name: str) -> AuditCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def residual(self, name: str) -> float:
        return self.get(name).value

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_checks(self, *, names: Optional[Sequence[str]] = None) -> list[CheckResult]:
        return [
            CheckResult(
                name=f"audit_{check.name}",
                paper_ref=check.label,
                value=check.value,
                bound=check.tolerance,
                passed=check.passed,
            )
            for check in self.checks
            if names is None or check.name in names
        ]


IDENTITY_CHECKS = ("deficit", "area", "length", "energy", "scaled_i0")
SIGN_CHECKS = ("deficit_monotone", "deficit_range", "ratio_range", "flow_monotone")


def _relative_residual(lhs: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.max(np.abs(lhs - rhs)) / (1.0 + np.max(np.abs(rhs))))


def audit_monotonicity(
    traj: Trajectory,
    flow: FlowKind | None = None,
    *,
    tolerance: float = AUDIT_TOLERANCE,
    sign_slack: float = SIGN_SLACK,
) -> AuditReport:
    """Evolution identities checked by centred differences at interior samples."""
    flow = FlowKind(flow or traj.flow)
    if len(traj.samples) < MIN_AUDIT_SAMPLES:
        raise InsufficientResolutionError(
            f"audit needs at least {MIN_AUDIT_SAMPLES} samples, got {len(traj.samples)}"
        )
    t = traj.column("t")
    if np.any(np.diff(t) <= 0.0):
        raise InsufficientResolutionError("sample times must be strictly increasing")
    length = traj.column("length")
    area = traj.column("area")
    i_m1 = traj.column("i_m1")
    i0 = traj.column("i0")
    i1 = traj.column("i1")
    j3 = traj.column("j3")
    j4 = traj.column("j4")
    g = traj.column("g")
    energy = traj.column("curvature_energy")
    total = traj.column("total_curvature")
    n = traj.samples[0].diagnostics.rotation_number

    def rate(values: np.ndarray) -> np.ndarray:
        return np.gradient(values, t)[1:-1]

    inner = slice(1, -1)
    squared = length**2
    checks: list[AuditCheck] = []

    def identity(name: str, label: str, lhs: np.ndarray, rhs: np.ndarray) -> None:
        value = _relative_residual(lhs, rhs[inner])
        checks.append(AuditCheck(name, label, value, tolerance, value <= tolerance))

    identity("deficit", "evolution of L^2 I_-1", rate(squared * i_m1), -2.0 * i0)
    identity("area", "evolution of the enclosed area", rate(area), g)
    identity("length", "evolution of L^2", rate(squared), 4.0 * math.pi * n * g - 2.0 * i0)
    identity(
        "energy",
        "evolution of the total squared curvature",
        rate(energy),
        (-2.0 * i1 + j4 + (3.0 * total - g) * j3 + 3.0 * total * (total - g) * i0 - total**3 * g)
        / length**3,
    )
    identity(
        "scaled_i0",
        "evolution of L^2 I_0",
        rate(squared * i0),
        -2.0 * i1 - 3.0 * i0**2 + j4 + (3.0 * total - g) * j3 + 2.0 * total**2 * i0,
    )

    def sign(name: str, label: str, worst: float) -> None:
        checks.append(AuditCheck(name, label, worst, 0.0, worst <= 0.0))

    scale = 1.0 + float(np.max(np.abs(i_m1)))
    sign(
        "deficit_monotone",
        "I_-1 is non-increasing",
        float(np.max(rate(i_m1))) - sign_slack * scale,
    )
    sign(
        "deficit_range",
        "1 - n <= I_-1 <= I_-1(0)",
        max(float(np.max(i_m1 - i_m1[0])), float(np.max((1.0 - n) - i_m1))) - sign_slack * scale,
    )
    ratio = squared / area
    ratio_scale = float(np.max(np.abs(ratio)))
    sign(
        "ratio_range",
        "4 pi <= L^2/A <= L(0)^2/A(0)",
        max(float(np.max(ratio - ratio[0])), float(np.max(4.0 * math.pi - ratio)))
        - sign_slack * ratio_scale,
    )
    if flow == FlowKind.AP:
        worst = float(np.max(rate(squared))) - sign_slack * (1.0 + float(np.max(squared)))
        sign("flow_monotone", "L^2 is non-increasing", worst)
    elif flow == FlowKind.LP:
        worst = -float(np.min(rate(area))) - sign_slack * (1.0 + float(np.max(np.abs(area))))
        sign("flow_monotone", "A is non-decreasing", worst)
    else:
        sign("flow_monotone", "A stays positive", -float(np.min(area)))
    return AuditReport(flow=flow, checks=tuple(checks))


# --- blow-up rates -------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    quantity: str
    window: tuple[float, float]
    sample_count: int
    exponent: Optional[float]
    prefactor: Optional[float]
    residual: float
    blow_up_time: float
    reference_exponent: float
    reference_prefactor: Optional[float] = None
    bound_fraction: Optional[float] = None
    blows_up: bool = True
    t_star: Optional[float] = None
    c_star: Optional[float] = None
    anchored_exponent: Optional[float] = None
    anchored_prefactor: Optional[float] = None
    anchored_residual: Optional[float] = None

    @property
    def exponent_ok(self) -> bool:
        if self.exponent is None:
            return False
        if self.quantity == "W":
            low, high = W_EXPONENT_RANGE
            return low <= self.exponent <= high
        return abs(self.exponent - self.reference_exponent) <= EXPONENT_TOLERANCE

    @property
    def bound_ok(self) -> Optional[bool]:
        if self.bound_fraction is None:
            return None
        return self.bound_fraction >= BOUND_FRACTION


def _log_rms(observed: np.ndarray, model: np.ndarray) -> float:
    return float(np.sqrt(np.mean((observed - model) ** 2)))


def _power_law_fit(
    gap_origin: float,
    t: np.ndarray,
    values: np.ndarray,
    tail: float,
    span: float,
    *,
    offset: bool = False,
) -> tuple[float, float, float, float]:
    """Fit values ~ [b +] M (T - t)^p with T free; returns (p, M, T, rms log residual)."""
    logs = np.log(values)
    guess_time = gap_origin + tail

    try:
        if offset:

            def model(x: np.ndarray, b: float, log_m: float, p: float, blow_up: float) -> np.ndarray:
                return np.log(b + np.exp(log_m + p * np.log(blow_up - x)))

            ceiling = 0.99 * float(np.min(values))
            start = (0.1 * ceiling, float(logs[-1]) + 0.5 * math.log(gap_origin + tail - t[-1]), -0.5, guess_time)
            lower = (0.0, -np.inf, -3.0, gap_origin)
            upper = (ceiling, np.inf, -0.01, gap_origin + span)
            params, _ = curve_fit(model, t, logs, p0=start, bounds=(lower, upper), maxfev=20000)
            _, log_m, p, blow_up = params
        else:

            def model(x: np.ndarray, log_m: float, p: float, blow_up: float) -> np.ndarray:
                return log_m + p * np.log(blow_up - x)

            start = (float(logs[-1]) + 0.5 * math.log(gap_origin + tail - t[-1]), -0.5, guess_time)
            lower = (-np.inf, -3.0, gap_origin)
            upper = (np.inf, -0.01, gap_origin + span)
            params, _ = curve_fit(model, t, logs, p0=start, bounds=(lower, upper), maxfev=20000)
            log_m, p, blow_up = params
        rms = _log_rms(logs, model(t, *params))
        return float(p), float(math.exp(log_m)), float(blow_up), rms
    except (RuntimeError, ValueError):
        gaps = np.log(guess_time - t)
        p, log_m = np.polyfit(gaps, logs, 1)
        rms = _log_rms(logs, log_m + p * gaps)
        return float(p), float(math.exp(log_m)), guess_time, rms


def _anchored_fit(gaps: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Fit values ~ M (t_num - t)^p with the blow-up time pinned; returns (p, M, rms log residual)."""
    logs = np.log(values)
    log_gaps = np.log(gaps)
    p, log_m = np.polyfit(log_gaps, logs, 1)
    return float(p), float(math.exp(log_m)), _log_rms(logs, log_m + p * log_gaps)


def _first_crossing(kappa_max: np.ndarray, kappa_min: np.ndarray) -> Optional[int]:
    hits = np.nonzero(-kappa_min >= kappa_max)[0]
    return int(hits[0]) if hits.size else None


def fit_blow_up_rates(traj: Trajectory) -> list[RateFit]:
    """Power-law fits of W, kappa_max and -kappa_min over one decade before breakdown.

    The window is t_num - t in [20, 200] times 1/(2 K^2), so it ends well
    before the under-resolved final steps. K is the largest |kappa| over the
    samples before the final one: those all passed the resolution check, so
    a kink in the last step cannot shrink the window below the grid scale.
    """
    if not traj.blew_up or traj.termination.t_num is None:
        raise InsufficientResolutionError("trajectory did not end in a declared blow-up")
    flow = traj.flow
    t = traj.column("t")
    t_num = float(traj.termination.t_num)
    energy = traj.column("curvature_energy")
    kappa_max = traj.column("kappa_max")
    kappa_min = traj.column("kappa_min")
    d0 = traj.samples[0].diagnostics
    n = d0.rotation_number

    if t.shape[0] < 2:
        raise InsufficientResolutionError("trajectory has no samples before breakdown")
    kappa_abs = np.maximum(np.abs(kappa_max), np.abs(kappa_min))
    kappa_final = float(np.max(kappa_abs[:-1]))
    if kappa_final <= 0.0:
        raise InsufficientResolutionError("curvature vanished at breakdown")
    tail = 1.0 / (2.0 * kappa_final**2)
    gap = t_num - t
    near, far = RATE_WINDOW
    mask = (gap >= near * tail) & (gap <= far * tail)
    count = int(np.count_nonzero(mask))
    if count < MIN_RATE_SAMPLES:
        raise InsufficientResolutionError(
            f"only {count} samples in the fit window before t_num={t_num:.6g}; "
            f"need {MIN_RATE_SAMPLES}"
        )
    window_t = t[mask]
    window = (float(window_t[0]), float(window_t[-1]))
    span = (far - near) * tail

    max_blows = abs(kappa_max[-2]) >= 0.5 * kappa_final and kappa_max[-2] > 0.0
    min_blows = abs(kappa_min[-2]) >= 0.5 * kappa_final and kappa_min[-2] < 0.0
    crossing = _first_crossing(kappa_max, kappa_min)
    t_star = float(t[crossing]) if crossing is not None else None
    c_star: Optional[float] = None
    if crossing is not None:
        at_star = traj.samples[crossing].diagnostics
        c_star = 1.0 + at_star.length**2 / (4.0 * math.pi * n * at_star.area)

    fits: list[RateFit] = []

    def fit(
        quantity: str,
        values: np.ndarray,
        reference_exponent: float,
        reference_prefactor: Optional[float],
        bound: Optional[np.ndarray],
        blows_up: bool,
        *,
        offset: bool = False,
        **extra: Any,
    ) -> None:
        selected = values[mask]
        if np.any(selected <= 0.0):
            fits.append(
                RateFit(
                    quantity=quantity,
                    window=window,
                    sample_count=count,
                    exponent=None,
                    prefactor=None,
                    residual=math.inf,
                    blow_up_time=math.nan,
                    reference_exponent=reference_exponent,
                    reference_prefactor=reference_prefactor,
                    blows_up=blows_up,
                    **extra,
                )
            )
            return
        p, prefactor, blow_up, rms = _power_law_fit(t_num, window_t, selected, tail, span, offset=offset)
        accepted = rms <= RATE_RESIDUAL_GATE
        anchored_p, anchored_m, anchored_rms = _anchored_fit(t_num - window_t, selected)
        anchored_ok = anchored_rms <= RATE_RESIDUAL_GATE
        fraction = None
        if bound is not None:
            fraction = float(np.mean(selected >= bound[mask]))
        fits.append(
            RateFit(
                quantity=quantity,
                window=window,
                sample_count=count,
                exponent=p if accepted else None,
                prefactor=prefactor if accepted else None,
                residual=rms,
                blow_up_time=blow_up,
                reference_exponent=reference_exponent,
                reference_prefactor=reference_prefactor,
                bound_fraction=fraction,
                blows_up=blows_up,
                anchored_exponent=anchored_p if anchored_ok else None,
                anchored_prefactor=anchored_m if anchored_ok else None,
                anchored_residual=anchored_rms,
                **extra,
            )
        )

    with np.errstate(divide="ignore", invalid="ignore"):
        safe_gap = np.where(gap > 0.0, gap, np.nan)
        max_bound = 1.0 / np.sqrt(2.0 * safe_gap)
        if flow == FlowKind.AP:
            min_exponent, min_prefactor = -0.5, 0.5
            min_bound = 1.0 / np.sqrt(4.0 * safe_gap)
        elif flow == FlowKind.LP:
            min_exponent = -1.0 / 3.0
            min_prefactor = (2.0 * math.pi * n / (9.0 * d0.length)) ** (1.0 / 3.0)
            min_bound = min_prefactor * safe_gap ** (-1.0 / 3.0)
        else:
            min_exponent = -0.5
            min_prefactor = 1.0 / math.sqrt(2.0 * c_star) if c_star is not None else None
            min_bound = 1.0 / np.sqrt(2.0 * c_star * safe_gap) if c_star is not None else None

    fit("W", energy, -0.5, None, None, True, offset=True)
    fit("kappa_max", kappa_max, -0.5, 1.0 / math.sqrt(2.0), max_bound if max_blows else None, max_blows)
    fit(
        "minus_kappa_min",
        -kappa_min,
        min_exponent,
        min_prefactor,
        min_bound if (min_blows and not max_blows) else None,
        min_blows,
        t_star=t_star,
        c_star=c_star,
    )
    return fits


def rate_checks(fits: Sequence[RateFit]) -> list[CheckResult]:
    """Exponent and bound checks of the free-T fits; pinned-T exponents are reported alongside."""
    checks: list[CheckResult] = []

    def anchored(fit: RateFit, label: str) -> None:
        residual = fit.anchored_residual
        checks.append(
            CheckResult(
                name=f"rate_{fit.quantity}_anchored_exponent",
                paper_ref=f"blow-up rate of the {label} against t_num (informational)",
                value=fit.anchored_exponent,
                bound=None,
                passed=residual is not None and math.isfinite(residual),
            )
        )

    for fit in fits:
        if fit.quantity == "W":
            checks.append(
                CheckResult(
                    name="rate_W_exponent",
                    paper_ref="blow-up rate of the total squared curvature",
                    value=fit.exponent,
                    bound=fit.reference_exponent,
                    passed=fit.exponent_ok,
                )
            )
            anchored(fit, "total squared curvature")
            continue
        if not fit.blows_up:
            continue
        label = "maximum curvature" if fit.quantity == "kappa_max" else "minimum curvature"
        checks.append(
            CheckResult(
                name=f"rate_{fit.quantity}_exponent",
                paper_ref=f"blow-up rate of the {label}",
                value=fit.exponent,
                bound=fit.reference_exponent,
                passed=fit.exponent_ok,
            )
        )
        anchored(fit, label)
        if fit.bound_fraction is not None:
            checks.append(
                CheckResult(
                    name=f"rate_{fit.quantity}_bound_fraction",
                    paper_ref=f"lower bound on the {label} near blow-up",
                    value=fit.bound_fraction,
                    bound=BOUND_FRACTION,
                    passed=bool(fit.bound_ok),
                )
            )
    return checks


# --- decay of global solutions ---------------------------------------------------


@dataclass(frozen=True)
class DecayReport:
    flow: FlowKind
    lambda_m1: float
    lambda_0: float
    rate_bound: float
    length_bar: float
    length_inf: float
    length_inf_error: float
    area_inf: float
    area_inf_error: float
    terminal_deficit: float
    limit_residual: Optional[float]
    envelope_passed: bool
    tail_residual: float
    trivial: bool = False
    lambda_tilde: float = math.inf
    min_deficit: float = 0.0

    @property
    def rate_passed(self) -> bool:
        return self.trivial or self.lambda_m1 >= DECAY_MARGIN * self.rate_bound

    @property
    def deficit_non_negative(self) -> bool:
        return self.min_deficit >= -GLOBAL_DEFICIT_SLACK

    @property
    def passed(self) -> bool:
        if self.trivial:
            return True
        return (
            self.rate_passed
            and self.lambda_0 > 0.0
            and self.lambda_tilde > 0.0
            and self.deficit_non_negative
            and abs(self.terminal_deficit) <= LIMIT_TOLERANCE
            and (self.limit_residual is None or self.limit_residual <= LIMIT_TOLERANCE)
            and self.envelope_passed
            and self.tail_residual <= TAIL_TOLERANCE
        )

    def checks(self) -> list[CheckResult]:
        checks = [
            CheckResult(
                name="decay_rate_deficit",
                paper_ref="exponential decay of the isoperimetric deficit",
                value=self.lambda_m1,
                bound=DECAY_MARGIN * self.rate_bound,
                passed=self.rate_passed,
            ),
            CheckResult(
                name="decay_rate_i0",
                paper_ref="exponential decay of I_0",
                value=self.lambda_0,
                bound=0.0,
                passed=self.trivial or self.lambda_0 > 0.0,
            ),
            CheckResult(
                name="decay_rate_tilde_i_m1",
                paper_ref="exponential decay of the circle distance tilde I_-1",
                value=self.lambda_tilde,
                bound=0.0,
                passed=self.trivial or self.lambda_tilde > 0.0,
            ),
            CheckResult(
                name="terminal_circle",
                paper_ref="limit is an n-fold circle",
                value=abs(self.terminal_deficit),
                bound=LIMIT_TOLERANCE,
                passed=abs(self.terminal_deficit) <= LIMIT_TOLERANCE,
            ),
            CheckResult(
                name="deficit_non_negative",
                paper_ref="global solutions keep I_-1 >= 0",
                value=self.min_deficit,
                bound=-GLOBAL_DEFICIT_SLACK,
                passed=self.deficit_non_negative,
            ),
            CheckResult(
                name="deficit_envelope",
                paper_ref="pointwise decay estimate of I_-1",
                value=None,
                bound=None,
                passed=self.envelope_passed,
            ),
            CheckResult(
                name="i0_tail_integral",
                paper_ref="integral of I_0 over [t, infinity)",
                value=self.tail_residual,
                bound=TAIL_TOLERANCE,
                passed=self.trivial or self.tail_residual <= TAIL_TOLERANCE,
            ),
        ]
        if self.limit_residual is not None:
            checks.append(
                CheckResult(
                    name="limit_length_area",
                    paper_ref="limits of length and area",
                    value=self.limit_residual,
                    bound=LIMIT_TOLERANCE,
                    passed=self.limit_residual <= LIMIT_TOLERANCE,
                )
            )
        return checks


def _exponential_rate(t: np.ndarray, values: np.ndarray, floor: float) -> float:
    """Log-linear decay rate over the last half of the samples above ``floor``."""
    half = len(t) // 2
    keep = values[half:] > floor
    tt, yy = t[half:][keep], values[half:][keep]
    if tt.size < 3:
        keep = values > floor
        tt, yy = t[keep], values[keep]
    if tt.size < 3 or tt[-1] <= tt[0]:
        raise InsufficientResolutionError(f"only {tt.size} samples above the round-off floor")
    slope, _ = np.polyfit(tt, np.log(yy), 1)
    return float(-slope)


def _terminal_rate(t: np.ndarray, values: np.ndarray) -> float:
    return float((values[-1] - values[-2]) / (t[-1] - t[-2]))


def fit_decay(traj: Trajectory, flow: FlowKind | None = None) -> DecayReport:
    flow = FlowKind(flow or traj.flow)
    if traj.termination.kind != TerminationKind.REACHED_T_MAX:
        raise NotApplicableError(f"decay fit needs a run that reached t_max, got {traj.termination.kind.value}")
    d0 = traj.samples[0].diagnostics
    n = d0.rotation_number
    t = traj.column("t")
    length = traj.column("length")
    area = traj.column("area")
    i_m1 = traj.column("i_m1")
    i0 = traj.column("i0")
    length_bar = float(np.max(length))
    rate_bound = 8.0 * math.pi**2 * n / length_bar**2

    if d0.i_m1 < -DEFICIT_SLACK:
        raise NotApplicableError(f"decay fit needs I_-1(0) >= 0, got {d0.i_m1:.6g}")
    if d0.i_m1 <= DEFICIT_SLACK:
        if d0.tilde_i_m1 > CIRCLE_TOLERANCE:
            raise NotApplicableError("I_-1(0) = 0 on a curve that is not an n-fold circle")
        return DecayReport(
            flow=flow,
            lambda_m1=math.inf,
            lambda_0=math.inf,
            rate_bound=rate_bound,
            length_bar=length_bar,
            length_inf=float(length[-1]),
            length_inf_error=0.0,
            area_inf=float(area[-1]),
            area_inf_error=0.0,
            terminal_deficit=float(i_m1[-1]),
            limit_residual=None,
            envelope_passed=True,
            tail_residual=0.0,
            trivial=True,
            min_deficit=float(np.min(i_m1)),
        )

    increases = np.diff(i_m1)
    if np.any(increases > INCREASE_SLACK):
        index = int(np.argmax(increases))
        raise NotDecayingError(
            f"I_-1 increased by {increases[index]:.3e} between t={t[index]:.6g} and t={t[index + 1]:.6g}"
        )

    scaled = length**2 * i_m1
    lambda_m1 = _exponential_rate(t, scaled, RELATIVE_FLOOR * float(np.max(scaled)) + 1e-14 * length_bar**2)
    lambda_0 = _exponential_rate(t, i0, RELATIVE_FLOOR * float(np.max(i0)) + 1e-20)
    tilde = traj.column("tilde_i_m1")
    lambda_tilde = _exponential_rate(t, tilde, RELATIVE_FLOOR * float(np.max(tilde)) + 1e-20)

    decay = lambda_m1 if lambda_m1 > 0.0 else rate_bound
    length_inf_error = abs(_terminal_rate(t, length)) / decay
    area_inf_error = abs(_terminal_rate(t, area)) / decay

    limit_residual: Optional[float] = None
    if flow == FlowKind.AP:
        target = 4.0 * math.pi * n * d0.area
        limit_residual = abs(length[-1] ** 2 - target) / target
    elif flow == FlowKind.LP:
        target = d0.length**2 / (4.0 * math.pi * n)
        limit_residual = abs(area[-1] - target) / target

    exponent = cumulative_trapezoid(8.0 * math.pi**2 * n / length**2, t, initial=0.0)
    envelope = scaled[0] * np.exp(-exponent) * (1.0 + ENVELOPE_SLACK) + 1e-12 * scaled[0]
    envelope_passed = bool(np.all(scaled <= envelope))

    integral = float(cumulative_trapezoid(i0, t)[-1])
    tail_residual = abs(integral + scaled[-1] / 2.0 - scaled[0] / 2.0) / (scaled[0] / 2.0)

    return DecayReport(
        flow=flow,
        lambda_m1=lambda_m1,
        lambda_0=lambda_0,
        rate_bound=rate_bound,
        length_bar=length_bar,
        length_inf=float(length[-1]),
        length_inf_error=length_inf_error,
        area_inf=float(area[-1]),
        area_inf_error=area_inf_error,
        terminal_deficit=float(i_m1[-1]),
        limit_residual=limit_residual,
        envelope_passed=envelope_passed,
        tail_residual=tail_residual,
        lambda_tilde=lambda_tilde,
        min_deficit=float(np.min(i_m1)),
    )


# --- convergence to an n-fold circle ---------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    rates: dict[str, float]
    centre_variation: float
    radius_variation: float
    phase_variation: float
    final: CircleFit

    @property
    def rates_passed(self) -> bool:
        return self.rates["rho_c0"] > 0.0 and self.rates["rho_c1"] > 0.0

    @property
    def cauchy_passed(self) -> bool:
        return max(self.centre_variation, self.radius_variation, self.phase_variation) <= CAUCHY_TOLERANCE

    @property
    def passed(self) -> bool:
        return self.rates_passed and self.cauchy_passed

    def checks(self) -> list[CheckResult]:
        checks = [
            CheckResult(
                name=f"convergence_rate_{norm}",
                paper_ref="exponential convergence to an n-fold circle",
                value=self.rates[norm],
                bound=0.0,
                passed=self.rates[norm] > 0.0,
            )
            for norm in ("rho_c0", "rho_c1")
        ]
        for name, value in (
            ("centre", self.centre_variation),
            ("radius", self.radius_variation),
            ("phase", self.phase_variation),
        ):
            checks.append(
                CheckResult(
                    name=f"convergence_{name}_cauchy",
                    paper_ref="centre, radius and phase converge",
                    value=value,
                    bound=CAUCHY_TOLERANCE,
                    passed=value <= CAUCHY_TOLERANCE,
                )
            )
        return checks


def fit_convergence(traj: Trajectory) -> ConvergenceReport:
    fitted = [(sample.t, sample.circle_fit) for sample in traj.samples if sample.circle_fit is not None]
    if len(fitted) < 4:
        raise InsufficientResolutionError(f"only {len(fitted)} samples carry a circle fit")
    t = np.array([item[0] for item in fitted])
    fits = [item[1] for item in fitted]
    n = traj.samples[0].diagnostics.rotation_number
    length_scale = float(np.max(traj.column("length")))

    rates: dict[str, float] = {}
    for norm in ("rho_l2", "rho_c0", "rho_c1", "rho_c2"):
        values = np.array([getattr(fit, norm) for fit in fits])
        floor = RELATIVE_FLOOR * float(np.max(values)) + 1e-12 * length_scale
        try:
            rates[norm] = _exponential_rate(t, values, floor)
        except InsufficientResolutionError:
            rates[norm] = math.nan

    half = len(fits) // 2
    tail = fits[half:]
    centres = np.array([complex(*fit.centre) for fit in tail])
    radii = np.array([fit.radius for fit in tail])
    phases = np.unwrap(np.array([2.0 * math.pi * n * fit.sigma_over_length for fit in tail]))
    phases = phases / (2.0 * math.pi * n)
    return ConvergenceReport(
        rates=rates,
        centre_variation=float(np.max(np.abs(centres - centres[0]))),
        radius_variation=float(np.ptp(radii)),
        phase_variation=float(np.ptp(phases)),
        final=fits[-1],
    )


# --- stationary solutions ------------------------------------------------------


def is_n_fold_circle(curve: ArcLengthCurve, *, tolerance: float = CIRCLE_TOLERANCE) -> bool:
    return functionals(curve).tilde_i_m1 <= tolerance


def stationary_classifier(
    curve: ArcLengthCurve,
    flow: FlowKind,
    *,
    tolerance: float = STATIONARY_TOLERANCE,
) -> bool:
    """True iff the normal velocity kappa - R/L - g/L vanishes in sup-norm."""
    d = functionals(curve, flow)
    if not math.isfinite(d.g):
        return False
    kappa = frenet_data(curve).curvature
    velocity = kappa - (d.total_curvature + d.g) / d.length
    return float(np.max(np.abs(velocity))) <= tolerance


# --- scaling and refinement studies --------------------------------------------


@dataclass(frozen=True)
class ScalingReport:
    base_t_num: float
    base_t_bound: float
    ratios: dict[float, tuple[float, float]]

    @property
    def passed(self) -> bool:
        return all(
            abs(t_ratio - 1.0) <= SCALING_TOLERANCE and abs(b_ratio - 1.0) <= SCALING_TOLERANCE
            for t_ratio, b_ratio in self.ratios.values()
        )

    def checks(self) -> list[CheckResult]:
        checks = []
        for factor, (t_ratio, b_ratio) in sorted(self.ratios.items()):
            checks.append(
                CheckResult(
                    name=f"scaling_t_num_{factor:g}",
                    paper_ref="parabolic scaling of the blow-up time",
                    value=t_ratio,
                    bound=1.0,
                    passed=abs(t_ratio - 1.0) <= SCALING_TOLERANCE,
                )
            )
            checks.append(
                CheckResult(
                    name=f"scaling_t_bound_{factor:g}",
                    paper_ref="parabolic scaling of the blow-up time bound",
                    value=b_ratio,
                    bound=1.0,
                    passed=abs(b_ratio - 1.0) <= SCALING_TOLERANCE,
                )
            )
        return checks


def _scaled_policies(
    policy: StoppingPolicy, dt_policy: DtPolicy, factor: float
) -> tuple[StoppingPolicy, DtPolicy]:
    square = factor**2
    scaled_policy = replace(
        policy,
        t_max=policy.t_max * square,
        dt_min=policy.dt_min * square,
        w_max=policy.w_max / factor,
    )
    scaled_dt = replace(
        dt_policy,
        dt_max=None if dt_policy.dt_max is None else dt_policy.dt_max * square,
        fixed_dt=None if dt_policy.fixed_dt is None else dt_policy.fixed_dt * square,
    )
    return scaled_policy, scaled_dt


def scaling_check(
    curve: ArcLengthCurve,
    flow: FlowKind,
    policy: StoppingPolicy,
    dt_policy: DtPolicy | None = None,
    *,
    scales: Sequence[float] = (0.5, 2.0),
    status: StatusCallback | None = None,
) -> ScalingReport:
    """Blow-up time and its bound under x -> lambda x, both divided by lambda^2."""
    dt_policy = dt_policy or DtPolicy()

    def run(factor: float) -> tuple[float, float]:
        scaled_policy, scaled_dt = _scaled_policies(policy, dt_policy, factor)
        traj = evolve(
            FlowState(curve=scale_curve(curve, factor)),
            flow,
            scaled_policy,
            sample_every=1_000_000,
            dt_policy=scaled_dt,
            status_every=0,
        )
        if not traj.blew_up or traj.termination.t_num is None:
            raise NotApplicableError(f"run scaled by {factor:g} did not blow up")
        report = blow_up_bound(traj.samples[0].diagnostics, flow)
        return float(traj.termination.t_num), report.t_bound

    emit_status(status, "Scaling study: base run")
    base_t_num, base_bound = run(1.0)
    ratios: dict[float, tuple[float, float]] = {}
    for factor in scales:
        emit_status(status, f"Scaling study: factor {factor:g}")
        t_num, bound = run(factor)
        square = factor**2
        ratios[float(factor)] = (t_num / (square * base_t_num), bound / (square * base_bound))
    return ScalingReport(base_t_num=base_t_num, base_t_bound=base_bound, ratios=ratios)


@dataclass(frozen=True)
class OrderStudy:
    name: str
    steps: tuple[float, ...]
    errors: tuple[float, ...]
    min_order: float = 1.0
    floor: float = 0.0

    @property
    def orders(self) -> tuple[float, ...]:
        return tuple(
            math.log2(coarse / fine) if coarse > 0.0 and fine > 0.0 else math.inf
            for coarse, fine in zip(self.errors, self.errors[1:])
        )

    @property
    def passed(self) -> bool:
        for (coarse, fine), order in zip(zip(self.errors, self.errors[1:]), self.orders):
            if coarse <= self.floor:
                continue
            if fine > self.floor and order < self.min_order:
                return False
        return True


def curve_distance(a: ArcLengthCurve, b: ArcLengthCurve, *, upsample: int = 32) -> float:
    """Symmetric largest distance from the nodes of one curve to the dense polyline of the other."""

    def one_sided(nodes: np.ndarray, other: ArcLengthCurve) -> float:
        dense = oversample(other.points, upsample)
        edge = np.roll(dense, -1) - dense
        norm = np.abs(edge) ** 2
        worst = 0.0
        for chunk in np.array_split(nodes, max(1, nodes.shape[0] // 64)):
            offset = chunk[:, None] - dense[None, :]
            along = np.clip(np.real(np.conj(edge)[None, :] * offset) / norm[None, :], 0.0, 1.0)
            distance = np.min(np.abs(offset - along * edge[None, :]), axis=1)
            worst = max(worst, float(np.max(distance)))
        return worst

    return max(one_sided(a.points, b), one_sided(b.points, a))


def stepper_convergence_study(
    curve: ArcLengthCurve,
    flow: FlowKind,
    horizon: float,
    steps: Sequence[float],
    *,
    oracle_curve: ArcLengthCurve | None = None,
    oracle_dt: float | None = None,
    status: StatusCallback | None = None,
) -> OrderStudy:
    """Distance between the spectral stepper at each dt and the explicit reference at ``horizon``."""
    oracle_curve = oracle_curve or curve
    limit = explicit_limit(oracle_curve.points)
    reference_dt = min(oracle_dt or limit, limit)
    emit_status(status, f"Explicit reference: dt={reference_dt:.3e} to t={horizon:g}")
    reference = oracle_evolve(FlowState(curve=oracle_curve), flow, reference_dt, horizon).curve
    errors = []
    for dt in steps:
        traj = evolve(
            FlowState(curve=curve),
            flow,
            StoppingPolicy(t_max=horizon),
            sample_every=1_000_000,
            dt_policy=DtPolicy(fixed_dt=dt),
            status_every=0,
        )
        errors.append(curve_distance(traj.final_state.curve, reference))
        emit_status(status, f"dt={dt:.3e}: distance {errors[-1]:.3e}")
    return OrderStudy(name="stepper", steps=tuple(steps), errors=tuple(errors))


def identity_refinement_study(
    curve: ArcLengthCurve,
    flow: FlowKind,
    t_max: float,
    steps: Sequence[float],
    *,
    names: Sequence[str] = ("area", "length", "deficit", "energy"),
    status: StatusCallback | None = None,
) -> list[OrderStudy]:
    """Audit residuals of fixed-step runs with every step sampled, one study per identity."""
    residuals: dict[str, list[float]] = {name: [] for name in names}
    for dt in steps:
        traj = evolve(
            FlowState(curve=curve),
            flow,
            StoppingPolicy(t_max=t_max),
            sample_every=1,
            dt_policy=DtPolicy(fixed_dt=dt),
            status_every=0,
        )
        report = audit_monotonicity(traj, flow, tolerance=math.inf)
        for name in names:
            residuals[name].append(report.residual(name))
        emit_status(status, f"dt={dt:.3e}: " + ", ".join(f"{name}={residuals[name][-1]:.2e}" for name in names))
    return [
        OrderStudy(name=name, steps=tuple(steps), errors=tuple(values), floor=RESIDUAL_FLOOR)
        for name, values in residuals.items()
    ]
