from __future__ import annotations

import math

import numpy as np
import pytest

from curveflow.functionals import functionals
from curveflow.geometry import make_test_curve, sample_curve_spec
from curveflow.models import ArcLengthCurve, CurveSpec, FlowKind, FlowState
from curveflow.oracle import (
    StabilityViolationError,
    TooCoarseError,
    explicit_limit,
    oracle_evolve,
    oracle_functionals,
    oracle_step_explicit,
    refine,
)

ELLIPSE = CurveSpec.ellipse(2.0, 1.0, node_count=512)


def _oracle_state(spec: CurveSpec, count: int = 1024) -> FlowState:
    points = sample_curve_spec(spec, count)
    return FlowState(
        curve=ArcLengthCurve(
            points=points,
            total_length=float(np.sum(np.abs(np.roll(points, -1) - points))),
            rotation_number=spec.rotation_number,
        )
    )


def test_circle_polygon_is_extrapolated_to_the_circle():
    points = sample_curve_spec(CurveSpec.circle(1.0, 2), 4096)

    d = oracle_functionals(points)

    assert d.rotation_number == 2
    assert d.length == pytest.approx(4.0 * math.pi, rel=1e-10)
    assert d.area == pytest.approx(2.0 * math.pi, rel=1e-10)
    assert abs(d.i_m1) < 1e-10
    assert d.i0 < 1e-12


@pytest.mark.parametrize("flow", list(FlowKind))
def test_oracle_agrees_with_spectral_functionals(flow):
    spectral = functionals(make_test_curve(ELLIPSE), flow)

    oracle = oracle_functionals(sample_curve_spec(ELLIPSE, 4096), flow)

    assert oracle.length == pytest.approx(spectral.length, rel=1e-9)
    assert oracle.area == pytest.approx(spectral.area, rel=1e-9)
    assert oracle.i_m1 == pytest.approx(spectral.i_m1, rel=1e-8)
    assert oracle.curvature_energy == pytest.approx(spectral.curvature_energy, rel=1e-7)
    assert oracle.i0 == pytest.approx(spectral.i0, rel=1e-6)
    assert oracle.tilde_i_m1 == pytest.approx(spectral.tilde_i_m1, rel=1e-6)
    assert oracle.j4 == pytest.approx(spectral.j4, rel=1e-6)
    assert oracle.i1 == pytest.approx(spectral.i1, rel=1e-6)
    assert oracle.kappa_max == pytest.approx(spectral.kappa_max, rel=1e-6)
    assert oracle.kappa_min == pytest.approx(spectral.kappa_min, rel=1e-6)
    assert oracle.g == pytest.approx(spectral.g, rel=1e-6, abs=1e-12)


@pytest.mark.parametrize(
    "spec",
    [
        CurveSpec.limacon(1.5, 1.0, node_count=1024),
        CurveSpec.perturbed_n_circle(1.0, 2, 5, 0.05, node_count=1024),
        CurveSpec.perturbed_n_circle(1.0, 2, 1, 0.2, node_count=1024),
    ],
    ids=["limacon", "double-circle-mode-5", "double-circle-mode-1"],
)
def test_oracle_agrees_on_every_field_across_the_test_family(spec):
    spectral = functionals(make_test_curve(spec), FlowKind.LP)

    oracle = oracle_functionals(sample_curve_spec(spec, 4096), FlowKind.LP)

    assert oracle.rotation_number == spectral.rotation_number
    for name in (
        "length",
        "area",
        "total_curvature",
        "curvature_energy",
        "i_m1",
        "i0",
        "i1",
        "tilde_i_m1",
        "j3",
        "j4",
        "g",
        "kappa_max",
        "kappa_min",
    ):
        assert getattr(oracle, name) == pytest.approx(getattr(spectral, name), rel=1e-6, abs=1e-10), name


def test_repeated_closing_point_and_xy_pairs_are_accepted():
    open_points = sample_curve_spec(ELLIPSE, 2048)
    closed_points = sample_curve_spec(ELLIPSE, 2048, closed=True)
    xy = np.column_stack([open_points.real, open_points.imag])

    reference = oracle_functionals(open_points)

    for other in (oracle_functionals(closed_points), oracle_functionals(xy)):
        assert other.length == pytest.approx(reference.length, rel=1e-13)
        assert other.area == pytest.approx(reference.area, rel=1e-13)
        assert other.i0 == pytest.approx(reference.i0, rel=1e-9)


def test_refinement_reaches_the_minimum_point_count():
    coarse = sample_curve_spec(ELLIPSE, 512)
    spectral = functionals(make_test_curve(ELLIPSE))

    with pytest.raises(TooCoarseError):
        oracle_functionals(coarse)
    refined = oracle_functionals(coarse, refinement=4)

    assert refine(coarse, 4).shape == (2048,)
    assert refined.length == pytest.approx(spectral.length, rel=1e-6)
    assert refined.area == pytest.approx(spectral.area, rel=1e-6)


def test_refine_validates_factor():
    with pytest.raises(ValueError):
        refine(sample_curve_spec(ELLIPSE, 64), 0)


def test_odd_point_count_is_rejected():
    with pytest.raises(ValueError):
        oracle_functionals(sample_curve_spec(ELLIPSE, 1025))


def test_explicit_limit_scales_with_curvature():
    circle = sample_curve_spec(CurveSpec.circle(1.0, 1), 1024)
    ellipse = sample_curve_spec(ELLIPSE, 1024)

    assert explicit_limit(circle) == pytest.approx(1e-5, rel=1e-4)
    assert explicit_limit(ellipse) == pytest.approx(1e-5 / 4.0, rel=1e-3)


def test_explicit_step_rejects_unstable_dt():
    state = _oracle_state(ELLIPSE)

    with pytest.raises(StabilityViolationError):
        oracle_step_explicit(state, FlowKind.AP, 1e-3)
    with pytest.raises(ValueError):
        oracle_step_explicit(state, FlowKind.AP, -1e-6)


def test_explicit_step_leaves_circles_in_place():
    state = _oracle_state(CurveSpec.circle(1.0, 2))

    stepped = oracle_step_explicit(state, FlowKind.LP, 5e-6)

    assert stepped.t == pytest.approx(5e-6)
    assert stepped.step_index == 1
    assert np.max(np.abs(stepped.curve.points - state.curve.points)) < 1e-12


def test_explicit_area_preserving_steps_keep_area():
    state = _oracle_state(ELLIPSE)
    area0 = oracle_functionals(state.curve.points).area

    final = oracle_evolve(state, FlowKind.AP, 2e-6, 2e-5)

    assert final.step_index == 10
    assert oracle_functionals(final.curve.points).area == pytest.approx(area0, rel=1e-8)
    assert oracle_functionals(final.curve.points).length < oracle_functionals(state.curve.points).length


def test_oracle_evolve_lands_on_end_time():
    state = _oracle_state(ELLIPSE)

    final = oracle_evolve(state, FlowKind.JP, 2e-6, 5e-6)

    assert final.t == pytest.approx(5e-6, rel=1e-12)
    assert final.step_index == 3
    assert final.dt_last == pytest.approx(1e-6)
    with pytest.raises(ValueError):
        oracle_evolve(final, FlowKind.JP, 2e-6, 0.0)
