"""Brute-force reference computations.

Everything here works on plain point arrays with finite differences,
chord lengths and the trapezoid rule. Nothing is shared with the spectral
path in ``geometry``/``functionals``/``flow``; formulas such as the
non-local forcing are written out again on purpose.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
from scipy.interpolate import CubicSpline

from .models import ArcLengthCurve, Diagnostics, FlowKind, FlowState

MIN_ORACLE_POINTS = 1024
EXPLICIT_LIMIT_FACTOR = 1e-5
CLOSURE_GAP = 1e-12
PEAK_HALF_WIDTH = 4


class OracleError(RuntimeError):
    """Raised when a reference computation cannot be carried out."""


class TooCoarseError(OracleError):
    """Raised when fewer points than the oracle needs are supplied."""


class StabilityViolationError(OracleError):
    """Raised when an explicit step exceeds the forward Euler limit."""


def _open_polyline(points: np.ndarray) -> np.ndarray:
    z = np.asarray(points)
    if z.ndim == 2 and z.shape[1] == 2:
        z = z[:, 0] + 1j * z[:, 1]
    z = np.asarray(z, dtype=complex).reshape(-1)
    if z.shape[0] >= 2:
        extent = float(np.max(np.abs(z - z[0])))
        if abs(z[-1] - z[0]) <= CLOSURE_GAP * max(extent, 1.0):
            z = z[:-1]
    return z


def _chord_parameter(z: np.ndarray) -> tuple[np.ndarray, float]:
    chords = np.abs(np.roll(z, -1) - z)
    knots = np.concatenate([[0.0], np.cumsum(chords)])
    return knots, float(knots[-1])


def _periodic_spline(z: np.ndarray) -> tuple[CubicSpline, float]:
    knots, total = _chord_parameter(z)
    closed = np.concatenate([z, z[:1]])
    xy = np.column_stack([closed.real, closed.imag])
    return CubicSpline(knots, xy, bc_type="periodic"), total


def refine(points: np.ndarray, factor: int) -> np.ndarray:
    """Resample a closed polyline at ``factor`` times as many points, uniform in chord length."""
    z = _open_polyline(points)
    if factor < 1:
        raise ValueError("refinement factor must be at least 1")
    if factor == 1:
        return z
    spline, total = _periodic_spline(z)
    params = total * np.arange(factor * z.shape[0]) / (factor * z.shape[0])
    xy = spline(params)
    return xy[:, 0] + 1j * xy[:, 1]


def _forcing(flow: FlowKind, length: float, area: float, n: int, i0: float) -> float:
    if flow == FlowKind.AP:
        return 0.0
    if flow == FlowKind.LP:
        return i0 / (2.0 * math.pi * n)
    if area <= 0.0:
        raise OracleError(f"JP forcing needs A > 0, got A={area:.6g}")
    return length**2 / (2.0 * area) - 2.0 * math.pi * n


def _differences(z: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Speed, unit tangent, curvature and d(kappa)/ds from centred differences."""
    forward = np.roll(z, -1)
    backward = np.roll(z, 1)
    z_u = (forward - backward) / (2.0 * h)
    z_uu = (forward - 2.0 * z + backward) / h**2
    speed = np.abs(z_u)
    if float(np.min(speed)) <= 0.0:
        raise OracleError("polyline has repeated points")
    tangent = z_u / speed
    kappa = np.imag(np.conj(z_u) * z_uu) / speed**3
    kappa_s = (np.roll(kappa, -1) - np.roll(kappa, 1)) / (2.0 * h) / speed
    return speed, tangent, kappa, kappa_s


def _refined_max(kappa: np.ndarray) -> float:
    """Vertex of the cubic spline through the nine samples around the largest one."""
    count = kappa.shape[0]
    centre = int(np.argmax(kappa))
    x = np.arange(-PEAK_HALF_WIDTH, PEAK_HALF_WIDTH + 1)
    y = kappa[(centre + x) % count]
    spline = CubicSpline(x.astype(float), y)
    roots = spline.derivative().roots(extrapolate=False)
    roots = roots[np.abs(roots) <= 1.0]
    best = float(y[PEAK_HALF_WIDTH])
    for root in roots:
        best = max(best, float(spline(root)))
    return best


def _raw_functionals(z: np.ndarray, flow: FlowKind) -> dict[str, float]:
    count = z.shape[0]
    h = 2.0 * math.pi / count
    speed, tangent, kappa, kappa_s = _differences(z, h)
    weights = speed * h
    normal = 1j * tangent

    length = float(np.sum(np.abs(np.roll(z, -1) - z)))
    # -1/2 f.nu integrated against ds; f.nu = Re(conj(f) * nu)
    area = float(-0.5 * np.sum(np.real(np.conj(z) * normal) * weights))
    total = float(np.sum(kappa * weights))
    n = max(1, int(round(total / (2.0 * math.pi))))
    energy = float(np.sum(kappa**2 * weights))
    deviation = kappa - total / float(np.sum(weights))
    i0 = length * float(np.sum(deviation**2 * weights))
    i1 = length**3 * float(np.sum(kappa_s**2 * weights))
    j3 = length**2 * float(np.sum(deviation**3 * weights))
    j4 = length**3 * float(np.sum(deviation**4 * weights))
    centre = np.sum(z * weights) / np.sum(weights)
    tilde = (2.0 * math.pi * n / length) * (z - centre) + normal
    tilde_i_m1 = float(np.sum(np.abs(tilde) ** 2 * weights)) / length
    i_m1 = 1.0 - 4.0 * math.pi * n * area / length**2
    g = _forcing(flow, length, area, n, i0) if area > 0.0 or flow != FlowKind.JP else math.nan
    return {
        "length": length,
        "area": area,
        "rotation_number": n,
        "total_curvature": total,
        "curvature_energy": energy,
        "i_m1": i_m1,
        "i0": i0,
        "i1": i1,
        "tilde_i_m1": tilde_i_m1,
        "j3": j3,
        "j4": j4,
        "g": g,
        "kappa_max": _refined_max(kappa),
        "kappa_min": -_refined_max(-kappa),
    }


_EXTRAPOLATED = (
    "length",
    "area",
    "total_curvature",
    "curvature_energy",
    "i0",
    "i1",
    "tilde_i_m1",
    "j3",
    "j4",
    "kappa_max",
    "kappa_min",
)


def oracle_functionals(
    points: np.ndarray,
    flow: FlowKind = FlowKind.AP,
    refinement: int = 1,
    *,
    t: float = 0.0,
) -> Diagnostics:
    """Diagnostics of a dense closed polyline by finite differences.

    Points must be spread evenly in some smooth parameter; a repeated closing
    point is dropped. Scalars are Richardson-extrapolated between the full
    point set and every second point; the curvature extremes are first
    located between samples so that both grids see the same peak.
    """
    flow = FlowKind(flow)
    z = refine(points, refinement)
    count = z.shape[0]
    if count < MIN_ORACLE_POINTS:
        raise TooCoarseError(f"oracle needs at least {MIN_ORACLE_POINTS} points, got {count}")
    if count % 2:
        raise ValueError("oracle needs an even number of points")

    fine = _raw_functionals(z, flow)
    coarse = _raw_functionals(z[::2], flow)
    values = dict(fine)
    for name in _EXTRAPOLATED:
        values[name] = (4.0 * fine[name] - coarse[name]) / 3.0
    length = values["length"]
    area = values["area"]
    n = fine["rotation_number"]
    values["i_m1"] = 1.0 - 4.0 * math.pi * n * area / length**2
    if flow == FlowKind.JP and area <= 0.0:
        values["g"] = math.nan
    else:
        values["g"] = _forcing(flow, length, area, n, values["i0"])
    return Diagnostics(t=t, **values)


def explicit_limit(points: np.ndarray) -> float:
    """Largest admissible forward Euler step for the given nodes."""
    z = _open_polyline(points)
    h = 2.0 * math.pi / z.shape[0]
    _, _, kappa, _ = _differences(z, h)
    kappa_max = float(np.max(np.abs(kappa)))
    _, total = _chord_parameter(z)
    spacing = total / z.shape[0]
    limit = 0.5 * spacing**2
    if kappa_max > 0.0:
        limit = min(limit, EXPLICIT_LIMIT_FACTOR / kappa_max**2)
    return limit


def _velocity(z: np.ndarray, flow: FlowKind) -> np.ndarray:
    h = 2.0 * math.pi / z.shape[0]
    speed, tangent, kappa, _ = _differences(z, h)
    weights = speed * h
    length = float(np.sum(weights))
    area = float(-0.5 * np.sum(np.real(np.conj(z) * 1j * tangent) * weights))
    total = float(np.sum(kappa * weights))
    n = max(1, int(round(total / (2.0 * math.pi))))
    deviation = kappa - total / length
    i0 = length * float(np.sum(deviation**2 * weights))
    g = _forcing(flow, length, area, n, i0)
    return (deviation - g / length) * 1j * tangent


def oracle_step_explicit(state: FlowState, flow: FlowKind, dt: float) -> FlowState:
    """Forward Euler step of the normal velocity, then chord-length redistribution."""
    flow = FlowKind(flow)
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = np.asarray(state.curve.points, dtype=complex)
    limit = explicit_limit(z)
    if dt > limit:
        raise StabilityViolationError(f"dt={dt:.3e} exceeds the explicit limit {limit:.3e}")

    moved = z + dt * _velocity(z, flow)
    spline, total = _periodic_spline(moved)
    params = total * np.arange(z.shape[0]) / z.shape[0]
    xy = spline(params)
    points = xy[:, 0] + 1j * xy[:, 1]
    curve = ArcLengthCurve(
        points=points,
        total_length=float(np.sum(np.abs(np.roll(points, -1) - points))),
        rotation_number=state.curve.rotation_number,
    )
    return replace(state, curve=curve, t=state.t + dt, step_index=state.step_index + 1, dt_last=dt)


def oracle_evolve(state: FlowState, flow: FlowKind, dt: float, t_end: float) -> FlowState:
    """Repeat explicit steps of size ``dt`` until ``t_end``; the last step is shortened to land on it."""
    if t_end < state.t:
        raise ValueError("t_end must not precede the start time")
    while t_end - state.t > 1e-12 * max(1.0, t_end):
        state = oracle_step_explicit(state, flow, min(dt, t_end - state.t))
    return state
