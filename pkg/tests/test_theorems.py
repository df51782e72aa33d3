from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import brentq

from curveflow.flow import evolve
from curveflow.functionals import functionals
from curveflow.geometry import make_test_curve, scale_curve
from curveflow.models import (
    CircleFit,
    CurveSpec,
    Diagnostics,
    DtPolicy,
    FlowKind,
    FlowState,
    StoppingPolicy,
    Termination,
    TerminationKind,
    Trajectory,
    TrajectorySample,
)
from curveflow.theorems import (
    SIGN_CHECKS,
    CheckResult,
    InsufficientResolutionError,
    NotApplicableError,
    NotDecayingError,
    OrderStudy,
    ScalingReport,
    audit_monotonicity,
    blow_up_bound,
    build_verdict,
    check_blow_up_bound,
    curve_distance,
    fit_blow_up_rates,
    fit_convergence,
    fit_decay,
    is_n_fold_circle,
    predicted_fate,
    rate_checks,
    stationary_classifier,
)

_DEFAULTS = {
    "length": 2.0 * math.pi,
    "area": math.pi,
    "rotation_number": 1,
    "total_curvature": 2.0 * math.pi,
    "curvature_energy": 2.0 * math.pi,
    "i_m1": 0.0,
    "i0": 0.0,
    "i1": 0.0,
    "tilde_i_m1": 0.0,
    "j3": 0.0,
    "j4": 0.0,
    "g": 0.0,
    "kappa_max": 1.0,
    "kappa_min": 1.0,
}


def _trajectory(
    times,
    *,
    flow=FlowKind.AP,
    kind=TerminationKind.REACHED_T_MAX,
    fits=None,
    **columns,
) -> Trajectory:
    times = np.asarray(times, dtype=float)
    samples = []
    for index, t in enumerate(times):
        values = dict(_DEFAULTS)
        for name, column in columns.items():
            value = np.asarray(column)[index]
            values[name] = int(value) if name == "rotation_number" else float(value)
        samples.append(
            TrajectorySample(
                t=float(t),
                dt=0.0 if index == 0 else float(t - times[index - 1]),
                diagnostics=Diagnostics(t=float(t), **values),
                circle_fit=None if fits is None else fits[index],
            )
        )
    t_end = float(times[-1])
    termination = Termination(
        kind=kind,
        t_end=t_end,
        steps=len(times) - 1,
        t_num=t_end if kind == TerminationKind.BLOW_UP_DECLARED else None,
        cause="under_resolved" if kind == TerminationKind.BLOW_UP_DECLARED else None,
    )
    final = FlowState(curve=make_test_curve(CurveSpec.circle(node_count=64)), t=t_end)
    return Trajectory(flow=flow, samples=tuple(samples), termination=termination, final_state=final)


def _zero_deficit_spec(amplitude: float) -> CurveSpec:
    return CurveSpec.fourier([(2, 1.0), (1, 0.1), (5, amplitude)], node_count=256)


def test_verdict_counts_and_serializes_checks():
    checks = [
        CheckResult(name="a", paper_ref="first", value=1.0, bound=2.0, passed=True),
        CheckResult(name="b", paper_ref="second", value=math.nan, bound=math.inf, passed=False),
    ]

    verdict = build_verdict(checks, title="demo")

    assert verdict["summary"] == {"title": "demo", "total": 2, "passed": 1, "failed": ["b"], "all_passed": False}
    assert verdict["checks"][0] == {"name": "a", "paper_ref": "first", "value": 1.0, "bound": 2.0, "pass": True}
    assert verdict["checks"][1]["value"] is None
    assert verdict["checks"][1]["bound"] is None


@pytest.mark.parametrize(
    ("flow", "needs_ratio", "divide_by_n"),
    [(FlowKind.AP, True, True), (FlowKind.LP, True, False), (FlowKind.JP, False, True)],
)
def test_blow_up_bound_formulas(blow_up_curve, flow, needs_ratio, divide_by_n):
    d0 = functionals(blow_up_curve, flow)
    numerator = d0.length**2 - 4.0 * math.pi * d0.area if needs_ratio else d0.length**2
    expected = numerator / (-8.0 * math.pi**2 * d0.i_m1 * (d0.rotation_number if divide_by_n else 1))

    report = blow_up_bound(d0, flow)

    assert d0.i_m1 < 0.0
    assert report.t_bound == pytest.approx(expected, rel=1e-12)
    assert report.rotation_number == 2
    assert report.passed is None


def test_blow_up_bound_needs_negative_deficit(ellipse_curve):
    with pytest.raises(NotApplicableError):
        blow_up_bound(functionals(ellipse_curve), FlowKind.AP)


def test_blow_up_bound_against_observed_time():
    i_m1 = -0.01
    length = 4.0 * math.pi
    area = (1.0 - i_m1) * length**2 / (8.0 * math.pi)
    times = np.linspace(0.0, 10.0, 11)
    common = {
        "rotation_number": np.full(11, 2),
        "length": np.full(11, length),
        "area": np.full(11, area),
        "i_m1": np.full(11, i_m1),
    }

    early = check_blow_up_bound(_trajectory(times, kind=TerminationKind.BLOW_UP_DECLARED, **common))
    never = check_blow_up_bound(_trajectory(times, **common))

    assert early.t_num == 10.0
    assert early.passed
    assert early.checks()[0].name == "blow_up_time_bound"
    assert never.t_num == math.inf
    assert not never.passed
    assert not never.checks()[0].passed


def test_predicted_fate(unit_circle, ellipse_curve, blow_up_curve):
    assert predicted_fate(functionals(unit_circle)) == "stationary"
    assert predicted_fate(functionals(ellipse_curve)) == "undetermined"
    assert predicted_fate(functionals(blow_up_curve)) == "blow_up"


def test_zero_deficit_curve_that_is_not_a_circle_blows_up():
    amplitude = brentq(
        lambda value: functionals(make_test_curve(_zero_deficit_spec(value))).i_m1,
        0.0,
        0.3,
        xtol=1e-14,
    )
    d0 = functionals(make_test_curve(_zero_deficit_spec(amplitude)))

    assert abs(d0.i_m1) < 1e-10
    assert d0.tilde_i_m1 > 1e-6
    assert d0.rotation_number == 2
    assert predicted_fate(d0) == "blow_up"


@pytest.mark.parametrize("flow", list(FlowKind))
def test_audit_passes_on_a_resolved_run(ellipse_curve, flow):
    traj = evolve(
        FlowState(curve=ellipse_curve),
        flow,
        StoppingPolicy(t_max=0.04),
        sample_every=1,
        dt_policy=DtPolicy(fixed_dt=1e-3),
    )

    report = audit_monotonicity(traj)

    assert report.passed, [(check.name, check.value) for check in report.checks if not check.passed]
    assert report.residual("deficit") < 1e-3
    assert report.residual("area") < 1e-3
    signs = report.to_checks(names=SIGN_CHECKS)
    assert [check.name for check in signs] == [
        "audit_deficit_monotone",
        "audit_deficit_range",
        "audit_ratio_range",
        "audit_flow_monotone",
    ]


def test_audit_needs_enough_increasing_samples():
    with pytest.raises(InsufficientResolutionError):
        audit_monotonicity(_trajectory(np.linspace(0.0, 1.0, 5)))
    times = np.linspace(0.0, 1.0, 12)
    times[6] = times[5]
    with pytest.raises(InsufficientResolutionError, match="strictly increasing"):
        audit_monotonicity(_trajectory(times))


def test_audit_flags_a_growing_deficit():
    times = np.linspace(0.0, 1.0, 12)
    deficit = 0.1 + 0.01 * times
    traj = _trajectory(times, i_m1=deficit, area=np.full(12, math.pi * (1.0 - 0.1)))

    report = audit_monotonicity(traj)

    assert not report.get("deficit_monotone").passed
    assert not report.get("deficit_range").passed


def _blow_up_trajectory(blow_up_time=10.0, last_gap=1e-4):
    gaps = np.logspace(0.0, math.log10(last_gap), 400)
    times = blow_up_time - gaps
    energy = 0.5 + 2.0 * gaps ** (-0.5)
    kappa_max = 1.1 / np.sqrt(2.0 * gaps)
    kappa_min = -0.3 / np.sqrt(gaps)
    return _trajectory(
        times,
        kind=TerminationKind.BLOW_UP_DECLARED,
        rotation_number=np.full(times.size, 2),
        length=np.full(times.size, 4.0 * math.pi),
        area=np.full(times.size, 2.0 * math.pi),
        curvature_energy=energy,
        kappa_max=kappa_max,
        kappa_min=kappa_min,
    )


def test_blow_up_rates_of_exact_power_laws():
    fits = {fit.quantity: fit for fit in fit_blow_up_rates(_blow_up_trajectory())}

    assert set(fits) == {"W", "kappa_max", "minus_kappa_min"}
    kappa = fits["kappa_max"]
    assert kappa.sample_count >= 30
    assert kappa.exponent == pytest.approx(-0.5, abs=1e-3)
    assert kappa.blow_up_time == pytest.approx(10.0, abs=2e-5)
    assert kappa.bound_fraction == 1.0
    assert kappa.exponent_ok and kappa.bound_ok
    assert fits["W"].exponent_ok
    assert not fits["minus_kappa_min"].blows_up
    assert fits["minus_kappa_min"].t_star is None

    checks = rate_checks(fits.values())
    assert [check.name for check in checks] == [
        "rate_W_exponent",
        "rate_W_anchored_exponent",
        "rate_kappa_max_exponent",
        "rate_kappa_max_anchored_exponent",
        "rate_kappa_max_bound_fraction",
    ]
    assert all(check.passed for check in checks)


def test_blow_up_rates_report_the_fit_pinned_at_t_num():
    fits = {fit.quantity: fit for fit in fit_blow_up_rates(_blow_up_trajectory())}

    kappa = fits["kappa_max"]
    # the true blow-up lies 1e-4 past t_num, which flattens the pinned power law slightly
    assert -0.5 < kappa.anchored_exponent < -0.45
    assert kappa.anchored_residual < 1e-2
    assert kappa.anchored_prefactor == pytest.approx(1.1 / math.sqrt(2.0), rel=0.1)
    assert fits["W"].anchored_exponent is not None


def test_blow_up_rate_window_ignores_a_kink_in_the_final_sample():
    traj = _blow_up_trajectory()
    last = traj.samples[-1]
    spiked = replace(last, diagnostics=replace(last.diagnostics, kappa_max=1e6, kappa_min=-1e6))
    traj = replace(traj, samples=traj.samples[:-1] + (spiked,))

    fits = {fit.quantity: fit for fit in fit_blow_up_rates(traj)}

    assert fits["kappa_max"].sample_count >= 30
    assert fits["kappa_max"].exponent == pytest.approx(-0.5, abs=1e-3)
    assert fits["kappa_max"].blows_up
    assert not fits["minus_kappa_min"].blows_up


def test_blow_up_rates_need_a_blow_up_and_samples():
    with pytest.raises(InsufficientResolutionError, match="declared blow-up"):
        fit_blow_up_rates(_trajectory(np.linspace(0.0, 1.0, 50)))
    sparse = _blow_up_trajectory()
    thinned = replace(sparse, samples=sparse.samples[::20])
    with pytest.raises(InsufficientResolutionError, match="fit window"):
        fit_blow_up_rates(thinned)


def _decay_trajectory(rate=3.0, t_max=5.0, count=5001, scaled0=0.5):
    times = np.linspace(0.0, t_max, count)
    length = 2.0 * math.pi
    scaled = scaled0 * np.exp(-rate * times)
    return _trajectory(
        times,
        flow=FlowKind.LP,
        length=np.full(count, length),
        area=(length**2 - scaled) / (4.0 * math.pi),
        i_m1=scaled / length**2,
        tilde_i_m1=2.0 * scaled / length**2,
        i0=0.5 * rate * scaled,
    )


def test_decay_fit_of_exact_exponential():
    report = fit_decay(_decay_trajectory())

    assert report.rate_bound == pytest.approx(2.0)
    assert report.lambda_m1 == pytest.approx(3.0, rel=1e-9)
    assert report.lambda_0 == pytest.approx(3.0, rel=1e-9)
    assert report.lambda_tilde == pytest.approx(3.0, rel=1e-9)
    assert report.min_deficit > 0.0
    assert report.envelope_passed
    assert report.tail_residual < 1e-5
    assert report.limit_residual < 1e-6
    assert report.passed
    assert [check.name for check in report.checks()] == [
        "decay_rate_deficit",
        "decay_rate_i0",
        "decay_rate_tilde_i_m1",
        "terminal_circle",
        "deficit_non_negative",
        "deficit_envelope",
        "i0_tail_integral",
        "limit_length_area",
    ]
    assert all(check.passed for check in report.checks())


def test_deficit_dipping_below_zero_fails_the_global_check():
    traj = _decay_trajectory()
    times = traj.column("t")
    drifted = traj.column("i_m1") - 1e-6 * times / times[-1]
    traj = replace(
        traj,
        samples=tuple(
            replace(sample, diagnostics=replace(sample.diagnostics, i_m1=float(value)))
            for sample, value in zip(traj.samples, drifted)
        ),
    )

    report = fit_decay(traj)

    assert report.min_deficit == pytest.approx(drifted[-1])
    assert not report.deficit_non_negative
    assert not report.passed
    (check,) = [check for check in report.checks() if check.name == "deficit_non_negative"]
    assert not check.passed
    assert check.bound == -1e-8


def test_circle_distance_that_stops_decaying_fails():
    traj = _decay_trajectory()
    traj = replace(
        traj,
        samples=tuple(
            replace(sample, diagnostics=replace(sample.diagnostics, tilde_i_m1=0.1 * (1.0 + sample.t)))
            for sample in traj.samples
        ),
    )

    report = fit_decay(traj)

    assert report.lambda_tilde < 0.0
    assert not report.passed


def test_decay_slower_than_the_bound_fails():
    report = fit_decay(_decay_trajectory(rate=1.0))

    assert not report.rate_passed
    assert not report.envelope_passed
    assert not report.passed


def test_decay_fit_rejects_growing_deficit():
    traj = _decay_trajectory(count=101)
    samples = list(traj.samples)
    bumped = samples[50].diagnostics
    samples[50] = TrajectorySample(
        t=samples[50].t,
        dt=samples[50].dt,
        diagnostics=replace(bumped, i_m1=bumped.i_m1 * 10.0),
        circle_fit=None,
    )

    with pytest.raises(NotDecayingError):
        fit_decay(replace(traj, samples=tuple(samples)))


def test_decay_fit_applicability():
    with pytest.raises(NotApplicableError):
        fit_decay(_trajectory(np.linspace(0.0, 1.0, 20), i_m1=np.full(20, -0.01)))
    with pytest.raises(NotApplicableError):
        fit_decay(_trajectory(np.linspace(0.0, 1.0, 20), kind=TerminationKind.BLOW_UP_DECLARED))
    with pytest.raises(NotApplicableError, match="not an n-fold circle"):
        fit_decay(_trajectory(np.linspace(0.0, 1.0, 20), tilde_i_m1=np.full(20, 0.1)))


def test_decay_of_a_circle_is_trivial():
    report = fit_decay(_trajectory(np.linspace(0.0, 1.0, 20)))

    assert report.trivial
    assert report.passed
    assert all(check.passed for check in report.checks())


def _circle_fits(times, rate=2.0):
    return [
        CircleFit(
            centre=(0.5, -0.25),
            radius=1.0,
            sigma_over_length=0.125,
            rho_l2=0.1 * math.exp(-rate * t),
            rho_c0=0.05 * math.exp(-rate * t),
            rho_c1=0.2 * math.exp(-rate * t),
            rho_c2=0.8 * math.exp(-rate * t),
        )
        for t in times
    ]


def test_convergence_fit_recovers_rates():
    times = np.linspace(0.0, 4.0, 41)

    report = fit_convergence(_trajectory(times, fits=_circle_fits(times)))

    for norm in ("rho_l2", "rho_c0", "rho_c1", "rho_c2"):
        assert report.rates[norm] == pytest.approx(2.0, rel=1e-9)
    assert report.centre_variation == 0.0
    assert report.passed
    assert all(check.passed for check in report.checks())


def test_convergence_fit_flags_a_drifting_centre():
    times = np.linspace(0.0, 4.0, 41)
    fits = [
        replace(fit, centre=(0.5 + 0.01 * t, -0.25))
        for fit, t in zip(_circle_fits(times), times)
    ]

    report = fit_convergence(_trajectory(times, fits=fits))

    assert report.centre_variation == pytest.approx(0.02)
    assert not report.cauchy_passed


def test_convergence_fit_needs_circle_fits():
    with pytest.raises(InsufficientResolutionError):
        fit_convergence(_trajectory(np.linspace(0.0, 1.0, 10)))


@pytest.mark.parametrize("flow", list(FlowKind))
def test_stationary_classifier_matches_circle_test(double_circle, ellipse_curve, flow):
    assert is_n_fold_circle(double_circle)
    assert stationary_classifier(double_circle, flow)
    assert not is_n_fold_circle(ellipse_curve)
    assert not stationary_classifier(ellipse_curve, flow)


def test_curve_distance_between_concentric_circles(unit_circle):
    bigger = scale_curve(unit_circle, 1.01)

    assert curve_distance(unit_circle, unit_circle) < 1e-12
    assert curve_distance(unit_circle, bigger) == pytest.approx(0.01, rel=1e-4)


def test_order_study_orders_and_floor():
    second = OrderStudy(name="s", steps=(0.1, 0.05, 0.025), errors=(1e-2, 2.5e-3, 6.25e-4))
    stalled = OrderStudy(name="s", steps=(0.1, 0.05), errors=(1e-2, 9e-3))
    floored = OrderStudy(name="s", steps=(0.1, 0.05, 0.025), errors=(1e-9, 1e-12, 2e-12), floor=1e-9)

    assert second.orders == pytest.approx((2.0, 2.0))
    assert second.passed
    assert not stalled.passed
    assert floored.passed


def test_scaling_report_checks():
    report = ScalingReport(base_t_num=2.0, base_t_bound=3.0, ratios={0.5: (1.01, 1.0), 2.0: (0.9, 1.0)})

    checks = report.checks()

    assert [check.name for check in checks] == [
        "scaling_t_num_0.5",
        "scaling_t_bound_0.5",
        "scaling_t_num_2",
        "scaling_t_bound_2",
    ]
    assert [check.passed for check in checks] == [True, True, False, True]
    assert not report.passed
