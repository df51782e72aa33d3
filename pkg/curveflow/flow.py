from __future__ import annotations

import math
from typing import Any, Mapping, Sequence

import numpy as np

from .forcing import FlowError, NonPositiveAreaError, forcing_value, nonlocal_forcing
from .functionals import PhaseUndefinedError, circle_fit, functionals
from .geometry import (
    CurveGeometryError,
    frenet_data,
    geometry_on_grid,
    length_area_rotation,
    remesh_periodic,
    scale_curve,
    tangent_winding,
    wavenumbers,
)
from .models import (
    ArcLengthCurve,
    DtPolicy,
    FlowKind,
    FlowState,
    StatusCallback,
    StoppingPolicy,
    Termination,
    TerminationKind,
    Trajectory,
    TrajectorySample,
    emit_status,
)

__all__ = [
    "FlowError",
    "NonPositiveAreaError",
    "RemeshFailedError",
    "adaptive_dt",
    "evolve",
    "nonlocal_forcing",
    "scale_invariance_check",
    "step",
]

IMEX_GAMMA = 1.0 - 1.0 / math.sqrt(2.0)
IMEX_DELTA = 1.0 - 1.0 / (2.0 * IMEX_GAMMA)
DEFAULT_SAMPLE_EVERY = 10
DEFAULT_STATUS_EVERY = 1000


class RemeshFailedError(FlowError):
    """Raised when a stepped curve cannot be put back on arc-length nodes."""


def scale_invariance_check(
    curve: ArcLengthCurve,
    flow: FlowKind,
    scales: Sequence[float] = (0.5, 2.0),
) -> float:
    base = functionals(curve, flow).g
    worst = 0.0
    for factor in scales:
        scaled = functionals(scale_curve(curve, factor), flow).g
        worst = max(worst, abs(scaled - base) / (1.0 + abs(base)))
    return worst


def _explicit_term(z: np.ndarray, period: float, flow: FlowKind, n: int) -> np.ndarray:
    """kappa*nu - z_uu - ((2 pi n + g) / L) nu on a uniform grid of the given period.

    The first two terms cancel on arc-length parametrizations and only correct
    for the drift of the stage curves away from unit speed.
    """
    frame = geometry_on_grid(z, period)
    length = frame.length
    i0 = 0.0
    if flow == FlowKind.LP:
        weights = frame.speed * (period / z.shape[0])
        total = float(np.sum(frame.curvature * weights))
        i0 = length * float(np.sum((frame.curvature - total / length) ** 2 * weights))
    g = forcing_value(flow, length=length, area=frame.area, rotation_number=n, i0=i0)
    speed_factor = (2.0 * math.pi * n + g) / length
    return frame.curvature * frame.normal - frame.second - speed_factor * frame.normal


def _project_conserved(
    points: np.ndarray,
    length: float,
    previous: np.ndarray,
    period: float,
    flow: FlowKind,
) -> tuple[np.ndarray, float]:
    if flow == FlowKind.AP:
        target = geometry_on_grid(previous, period).area
        area = geometry_on_grid(points, length).area
        if target <= 0.0 or area <= 0.0:
            return points, length
        factor = math.sqrt(target / area)
    elif flow == FlowKind.LP:
        factor = period / length
    else:
        return points, length
    centre = complex(np.mean(points))
    return centre + factor * (points - centre), factor * length


def step(state: FlowState, dt: float, flow: FlowKind) -> FlowState:
    """Advance one IMEX step and remesh to arc length.

    The diffusion f_ss is implicit with L frozen at the start of the step; the
    normal forcing is explicit. The two-stage scheme is stiffly accurate with
    local error O(dt^3). Freezing L still leaves an O(dt^2) drift per step in
    the conserved quantity, so AP and LP curves are rescaled about their
    centroid afterwards to restore the area or length they started with.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    flow = FlowKind(flow)
    curve = state.curve
    period = curve.total_length
    n = curve.rotation_number
    count = curve.node_count
    symbol = -((2.0 * math.pi * wavenumbers(count) / period) ** 2)
    inverse = 1.0 / (1.0 - IMEX_GAMMA * dt * symbol)

    def implicit_solve(rhs: np.ndarray) -> np.ndarray:
        return np.fft.ifft(np.fft.fft(rhs) * inverse)

    f0 = curve.points
    e0 = _explicit_term(f0, period, flow, n)
    stage = implicit_solve(f0 + IMEX_GAMMA * dt * e0)
    e_stage = _explicit_term(stage, period, flow, n)
    diffusion = np.fft.ifft(np.fft.fft(stage) * symbol)
    stepped = implicit_solve(
        f0 + dt * (IMEX_DELTA * e0 + (1.0 - IMEX_DELTA) * e_stage + (1.0 - IMEX_GAMMA) * diffusion)
    )

    try:
        points, length = remesh_periodic(stepped, count)
    except CurveGeometryError as exc:
        raise RemeshFailedError(f"remesh failed at t={state.t:.6g}, dt={dt:.3e}: {exc}") from exc
    if not (np.all(np.isfinite(points)) and math.isfinite(length) and length > 0):
        raise RemeshFailedError(f"non-finite curve at t={state.t:.6g}, dt={dt:.3e}")
    winding = tangent_winding(geometry_on_grid(points, length).tangent)
    if round(winding) != n:
        raise RemeshFailedError(
            f"rotation number changed from {n} to {winding:.3f} at t={state.t:.6g}, dt={dt:.3e}"
        )
    points, length = _project_conserved(points, length, f0, period, flow)
    return FlowState(
        curve=ArcLengthCurve(points=points, total_length=length, rotation_number=n),
        t=state.t + dt,
        step_index=state.step_index + 1,
        dt_last=dt,
    )


def _dt_for_curvature(kappa_abs_max: float, dt_last: float, policy: DtPolicy) -> float:
    if policy.fixed_dt is not None:
        return policy.fixed_dt
    dt = policy.c_cfl / (1.0 + kappa_abs_max**2)
    if dt_last > 0:
        dt = min(dt, policy.growth * dt_last)
    if policy.dt_max is not None:
        dt = min(dt, policy.dt_max)
    return dt


def adaptive_dt(state: FlowState, policy: DtPolicy | None = None) -> float:
    """c_cfl / (1 + max|kappa|^2), capped by growth over dt_last and by dt_max."""
    kappa = float(np.max(np.abs(frenet_data(state.curve).curvature)))
    return _dt_for_curvature(kappa, state.dt_last, policy or DtPolicy())


def _sample(state: FlowState, flow: FlowKind, dt: float) -> TrajectorySample:
    diagnostics = functionals(state.curve, flow, t=state.t)
    try:
        fit = circle_fit(state.curve)
    except PhaseUndefinedError:
        fit = None
    return TrajectorySample(t=state.t, dt=dt, diagnostics=diagnostics, circle_fit=fit)


def _blow_up(state: FlowState, steps: int, rejected: int, cause: str) -> Termination:
    return Termination(
        kind=TerminationKind.BLOW_UP_DECLARED,
        t_end=state.t,
        steps=steps,
        rejected_steps=rejected,
        t_num=state.t,
        cause=cause,
    )


def evolve(
    state0: FlowState,
    flow: FlowKind,
    policy: StoppingPolicy | None = None,
    *,
    sample_every: int = DEFAULT_SAMPLE_EVERY,
    dt_policy: DtPolicy | None = None,
    status: StatusCallback | None = None,
    status_every: int = DEFAULT_STATUS_EVERY,
    config: Mapping[str, Any] | None = None,
) -> Trajectory:
    flow = FlowKind(flow)
    policy = policy or StoppingPolicy()
    dt_policy = dt_policy or DtPolicy()
    if sample_every < 1:
        raise ValueError("sample_every must be at least 1")

    length, area, _ = length_area_rotation(state0.curve)
    if area <= 0.0:
        raise NonPositiveAreaError(f"initial area must be positive, got A={area:.6g}")
    emit_status(
        status,
        f"Evolving {flow.value} flow: n={state0.curve.rotation_number} "
        f"N={state0.curve.node_count} t_max={policy.t_max:g}",
    )

    state = state0
    samples = [_sample(state, flow, 0.0)]
    ratio = length**2 / area
    max_ratio_increase = 0.0
    rejected = 0
    termination: Termination | None = None
    tolerance = 1e-12 * max(1.0, policy.t_max)

    while termination is None:
        steps = state.step_index - state0.step_index
        remaining = policy.t_max - state.t
        if remaining <= tolerance:
            termination = Termination(
                kind=TerminationKind.REACHED_T_MAX, t_end=state.t, steps=steps, rejected_steps=rejected
            )
            break
        if steps >= policy.max_steps:
            termination = Termination(
                kind=TerminationKind.STEP_LIMIT, t_end=state.t, steps=steps, rejected_steps=rejected
            )
            break

        curve = state.curve
        kappa = frenet_data(curve).curvature
        kappa_abs_max = float(np.max(np.abs(kappa)))
        energy = curve.total_length * float(np.mean(kappa**2))
        if energy > policy.w_max:
            termination = _blow_up(state, steps, rejected, "curvature_energy_cap")
            break
        if kappa_abs_max * curve.total_length / curve.node_count > policy.max_turning_per_node:
            termination = _blow_up(state, steps, rejected, "under_resolved")
            break
        dt = _dt_for_curvature(kappa_abs_max, state.dt_last, dt_policy)
        if dt < policy.dt_min:
            termination = _blow_up(state, steps, rejected, "dt_underflow")
            break
        dt = min(dt, remaining)

        new_state: FlowState | None = None
        while new_state is None:
            try:
                new_state = step(state, dt, flow)
            except RemeshFailedError as exc:
                rejected += 1
                dt *= 0.5
                emit_status(status, f"Rejected step: {exc}; retrying with dt={dt:.3e}")
                if dt < policy.dt_min:
                    break
        if new_state is None:
            termination = _blow_up(state, steps, rejected, "dt_underflow")
            break

        new_area = geometry_on_grid(new_state.curve.points, new_state.curve.total_length).area
        if new_area <= 0.0:
            if flow == FlowKind.JP:
                raise NonPositiveAreaError(
                    f"area became {new_area:.6g} at t={new_state.t:.6g}; JP forcing is undefined"
                )
        else:
            new_ratio = new_state.curve.total_length**2 / new_area
            max_ratio_increase = max(max_ratio_increase, (new_ratio - ratio) / ratio)
            ratio = new_ratio
        state = new_state

        steps = state.step_index - state0.step_index
        if steps % sample_every == 0:
            samples.append(_sample(state, flow, state.dt_last))
        if status_every > 0 and steps % status_every == 0:
            emit_status(
                status,
                f"step {steps}: t={state.t:.6g} dt={state.dt_last:.3e} W={energy:.4g}",
            )

    if samples[-1].t != state.t:
        samples.append(_sample(state, flow, state.dt_last))
    if len(samples) < 2:
        raise FlowError(
            f"trajectory stopped before the first accepted step ({termination.kind.value}"
            f"{', ' + termination.cause if termination.cause else ''})"
        )
    emit_status(
        status,
        f"Finished: {termination.kind.value} at t={termination.t_end:.6g} after "
        f"{termination.steps} steps ({termination.rejected_steps} rejected)",
    )
    return Trajectory(
        flow=flow,
        samples=tuple(samples),
        termination=termination,
        final_state=state,
        max_ratio_increase=max_ratio_increase,
        config=dict(config or {}),
    )
