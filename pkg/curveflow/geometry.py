from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import re

import numpy as np
from scipy.interpolate import PchipInterpolator

from .models import ArcLengthCurve, CurveKind, CurveSpec

CLOSURE_TOLERANCE = 1e-6
SPEED_FLOOR = 1e-10
UNIT_SPEED_TOLERANCE = 1e-6
ROTATION_RESIDUAL_LIMIT = 0.1
MIN_NODE_COUNT = 64
RAW_OVERSAMPLING = 4
NEWTON_STEPS = 2
TAYLOR_OVERSAMPLING = 4
TAYLOR_TERMS = 16
CURVE_HEADER_RE = re.compile(r"^#\s*L=(?P<length>\S+)\s+n=(?P<n>\S+)\s*$")


class CurveGeometryError(RuntimeError):
    """Raised when samples cannot be turned into a valid arc-length curve."""


class NonImmersedError(CurveGeometryError):
    """Raised when the parametrization speed vanishes somewhere."""


class NotClosedError(CurveGeometryError):
    """Raised when a polyline does not return to its starting point."""


class RotationResidualError(CurveGeometryError):
    """Raised when the total curvature is not close to 2*pi times an integer."""


@dataclass(frozen=True)
class FrenetFrame:
    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray


@dataclass(frozen=True)
class GridGeometry:
    """Differential data of a periodic curve sampled uniformly in any parameter."""

    first: np.ndarray
    second: np.ndarray
    speed: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray
    length: float
    area: float


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def is_power_of_two(value: int) -> bool:
    return value > 0 and value & (value - 1) == 0


def wavenumbers(count: int) -> np.ndarray:
    return np.fft.fftfreq(count, d=1.0 / count)


def derivative_symbol(count: int, period: float, order: int = 1) -> np.ndarray:
    symbol = (2j * np.pi * wavenumbers(count) / period) ** order
    if count % 2 == 0:
        symbol[count // 2] = 0.0
    return symbol


def spectral_derivative(values: np.ndarray, period: float, order: int = 1) -> np.ndarray:
    values = np.asarray(values)
    result = np.fft.ifft(np.fft.fft(values) * derivative_symbol(values.shape[0], period, order))
    if np.isrealobj(values):
        return result.real
    return result


def as_complex_points(raw_points: np.ndarray) -> np.ndarray:
    points = np.asarray(raw_points)
    if np.iscomplexobj(points):
        return points.ravel().astype(complex)
    if points.ndim == 2 and points.shape[1] == 2:
        return points[:, 0].astype(float) + 1j * points[:, 1].astype(float)
    raise ValueError("points must be complex numbers or an (M, 2) array of x, y pairs")


def geometry_on_grid(z: np.ndarray, period: float) -> GridGeometry:
    first = spectral_derivative(z, period, 1)
    second = spectral_derivative(z, period, 2)
    speed = np.abs(first)
    tangent = first / speed
    curvature = np.imag(np.conj(first) * second) / speed**3
    return GridGeometry(
        first=first,
        second=second,
        speed=speed,
        tangent=tangent,
        normal=1j * tangent,
        curvature=curvature,
        length=float(period * np.mean(speed)),
        area=float(0.5 * period * np.mean(np.imag(np.conj(z) * first))),
    )


def tangent_winding(tangent: np.ndarray) -> float:
    angles = np.unwrap(np.angle(np.append(tangent, tangent[0])))
    return float((angles[-1] - angles[0]) / (2.0 * np.pi))


def _derivative_grids(coefficients: np.ndarray, k: np.ndarray, order: int) -> np.ndarray:
    """Derivatives 0..order of sum c_k e^{iku} on a grid TAYLOR_OVERSAMPLING times finer."""
    fine = TAYLOR_OVERSAMPLING * coefficients.shape[0]
    index = k.astype(int) % fine
    grids = np.empty((order + 1, fine), dtype=complex)
    weighted = np.asarray(coefficients, dtype=complex)
    for m in range(order + 1):
        padded = np.zeros(fine, dtype=complex)
        padded[index] = weighted
        grids[m] = np.fft.ifft(padded) * fine
        weighted = weighted * (1j * k)
    return grids


def _taylor_evaluate(grids: np.ndarray, params: np.ndarray, shift: int = 0) -> np.ndarray:
    """Series value (or its ``shift``-th derivative) at arbitrary parameters.

    Expands about the nearest fine grid point; |k delta| stays below pi / 8.
    """
    fine = grids.shape[1]
    h = 2.0 * np.pi / fine
    nearest = np.round(params / h)
    delta = params - nearest * h
    index = nearest.astype(int) % fine
    total = np.zeros(params.shape, dtype=complex)
    term = np.ones(params.shape)
    for m in range(TAYLOR_TERMS):
        total += term * grids[m + shift, index]
        term = term * delta / (m + 1)
    return total


def remesh_periodic(samples: np.ndarray, node_count: int) -> tuple[np.ndarray, float]:
    """Resample a periodic curve (no repeated endpoint) at uniform arc length.

    Returns the new node positions and the total length. Node 0 stays at the
    first sample.
    """
    count = samples.shape[0]
    if not np.all(np.isfinite(samples)):
        raise CurveGeometryError("curve samples contain non-finite values")
    k = wavenumbers(count)
    coefficients = np.fft.fft(samples) / count
    if count % 2 == 0:
        coefficients[count // 2] = 0.0
    grid_speed = np.abs(np.fft.ifft(1j * k * coefficients) * count)
    min_speed = float(grid_speed.min())
    if min_speed < SPEED_FLOOR:
        raise NonImmersedError(f"speed {min_speed:.3e} is below {SPEED_FLOOR:g}")

    speed_coefficients = np.fft.fft(grid_speed) / count
    if count % 2 == 0:
        speed_coefficients[count // 2] = 0.0
    mean_speed = float(speed_coefficients[0].real)
    length = 2.0 * np.pi * mean_speed
    integral_coefficients = np.zeros_like(speed_coefficients)
    nonzero = k != 0
    integral_coefficients[nonzero] = speed_coefficients[nonzero] / (1j * k[nonzero])
    offset = float(integral_coefficients.sum().real)

    grid = 2.0 * np.pi * np.arange(count) / count
    cumulative = mean_speed * grid + (np.fft.ifft(integral_coefficients) * count).real - offset
    if np.any(np.diff(cumulative) <= 0.0):
        raise NonImmersedError("cumulative arc length is not monotone")

    targets = length * np.arange(node_count) / node_count
    inverse = PchipInterpolator(np.append(cumulative, length), np.append(grid, 2.0 * np.pi))
    params = inverse(targets)
    arc_grids = _derivative_grids(integral_coefficients, k, TAYLOR_TERMS)
    for _ in range(NEWTON_STEPS):
        arc = mean_speed * params + _taylor_evaluate(arc_grids, params).real - offset
        speed = mean_speed + _taylor_evaluate(arc_grids, params, shift=1).real
        params = params - (arc - targets) / speed
    points = _taylor_evaluate(_derivative_grids(coefficients, k, TAYLOR_TERMS - 1), params)
    return points, float(length)


def curve_from_points(points: np.ndarray, total_length: float) -> ArcLengthCurve:
    frame = geometry_on_grid(points, total_length)
    winding = tangent_winding(frame.tangent)
    rotation_number = int(round(winding))
    if rotation_number < 1:
        raise CurveGeometryError(
            f"curve must be positively oriented with rotation number >= 1, got {winding:.3f}"
        )
    return ArcLengthCurve(
        points=np.asarray(points, dtype=complex),
        total_length=float(total_length),
        rotation_number=rotation_number,
    )


def resample_to_arclength(
    raw_points: np.ndarray,
    node_count: int,
    *,
    closure_tolerance: float = CLOSURE_TOLERANCE,
) -> ArcLengthCurve:
    """Reparametrize a closed polyline (last point repeating the first) by arc length."""
    if node_count < MIN_NODE_COUNT or not is_power_of_two(node_count):
        raise ValueError(f"node_count must be a power of two >= {MIN_NODE_COUNT}")
    samples = as_complex_points(raw_points)
    if samples.shape[0] < 5:
        raise ValueError("at least four distinct points are required")
    diameter = float(np.hypot(np.ptp(samples.real), np.ptp(samples.imag)))
    if diameter == 0.0:
        raise NonImmersedError("curve collapses to a single point")
    gap = float(abs(samples[-1] - samples[0]))
    if gap > closure_tolerance * diameter:
        raise NotClosedError(
            f"endpoint gap {gap:.3e} exceeds {closure_tolerance:g} of diameter {diameter:.3e}"
        )
    points, length = remesh_periodic(samples[:-1], node_count)
    return curve_from_points(points, length)


def frenet_data(curve: ArcLengthCurve) -> FrenetFrame:
    """Unit tangent and normal as complex numbers, and signed curvature, at each node."""
    frame = geometry_on_grid(curve.points, curve.total_length)
    return FrenetFrame(tangent=frame.tangent, normal=frame.normal, curvature=frame.curvature)


def length_area_rotation(curve: ArcLengthCurve) -> tuple[float, float, int]:
    frame = geometry_on_grid(curve.points, curve.total_length)
    total_curvature = curve.total_length * float(np.mean(frame.curvature * frame.speed))
    residual = abs(total_curvature / (2.0 * np.pi) - curve.rotation_number)
    if residual >= ROTATION_RESIDUAL_LIMIT:
        raise RotationResidualError(
            f"total curvature / 2pi is {total_curvature / (2.0 * np.pi):.4f}, "
            f"not within {ROTATION_RESIDUAL_LIMIT} of n={curve.rotation_number}"
        )
    return curve.total_length, frame.area, curve.rotation_number


def unit_speed_error(curve: ArcLengthCurve) -> float:
    speed = np.abs(spectral_derivative(curve.points, curve.total_length, 1))
    return float(np.max(np.abs(speed - 1.0)))


def _validate_spec(spec: CurveSpec) -> None:
    if spec.node_count < MIN_NODE_COUNT or not is_power_of_two(spec.node_count):
        raise ValueError(f"node_count must be a power of two >= {MIN_NODE_COUNT}")
    if spec.kind in (CurveKind.CIRCLE, CurveKind.PERTURBED_N_CIRCLE):
        if spec.radius <= 0:
            raise ValueError("radius must be positive")
        if spec.rotation_number < 1:
            raise ValueError("rotation_number must be at least 1")
    if spec.kind == CurveKind.PERTURBED_N_CIRCLE:
        if spec.mode < 0:
            raise ValueError("perturbation mode must be non-negative")
        if spec.amplitude < 0:
            raise ValueError("perturbation amplitude must be non-negative")
    if spec.kind in (CurveKind.ELLIPSE, CurveKind.LIMACON) and (spec.a <= 0 or spec.b <= 0):
        raise ValueError("a and b must be positive")
    if spec.kind == CurveKind.FOURIER and not spec.modes:
        raise ValueError("fourier curve needs at least one mode")


def sample_curve_spec(spec: CurveSpec, count: int, *, closed: bool = False) -> np.ndarray:
    """Raw samples of the parametric curve at uniform u, not reparametrized."""
    _validate_spec(spec)
    u = 2.0 * np.pi * np.arange(count) / count
    if closed:
        u = np.append(u, 2.0 * np.pi)
    centre = complex(*spec.centre)
    if spec.kind == CurveKind.CIRCLE:
        values = spec.radius * np.exp(1j * spec.rotation_number * u)
    elif spec.kind == CurveKind.ELLIPSE:
        values = spec.a * np.cos(u) + 1j * spec.b * np.sin(u)
    elif spec.kind == CurveKind.PERTURBED_N_CIRCLE:
        # k-fold symmetric: the added term beats against e^{inu} at frequency k
        n = spec.rotation_number
        offset = np.exp(1j * ((n - spec.mode) * u + spec.phase))
        values = spec.radius * (np.exp(1j * n * u) + spec.amplitude * offset)
    elif spec.kind == CurveKind.LIMACON:
        values = (spec.b + spec.a * np.cos(u)) * np.exp(1j * u)
    elif spec.kind == CurveKind.FOURIER:
        ks = np.array([k for k, _ in spec.modes], dtype=float)
        cs = np.array([c for _, c in spec.modes], dtype=complex)
        values = np.exp(1j * np.outer(u, ks)) @ cs
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unsupported curve kind: {spec.kind}")
    return centre + values


def make_test_curve(spec: CurveSpec) -> ArcLengthCurve:
    _validate_spec(spec)
    if spec.kind == CurveKind.PERTURBED_N_CIRCLE:
        n = spec.rotation_number
        if spec.amplitude * abs(n - spec.mode) >= n:
            raise NonImmersedError(
                f"speed n - eps |n - k| vanishes for n={n}, k={spec.mode}, eps={spec.amplitude:g}"
            )
    raw = sample_curve_spec(spec, RAW_OVERSAMPLING * spec.node_count, closed=True)
    return resample_to_arclength(raw, spec.node_count)


def random_band_limited_spec(
    rotation_number: int,
    rng: np.random.Generator,
    *,
    node_count: int = 512,
    max_mode: int = 8,
    scale: float = 0.15,
    max_attempts: int = 100,
) -> CurveSpec:
    """Draw a dominant exp(i n u) curve plus decaying random modes |k| <= max_mode.

    A draw is kept only when the perturbation of the derivative stays below n/2
    everywhere, which keeps the curve immersed with rotation number n.
    """
    if rotation_number < 1:
        raise ValueError("rotation_number must be at least 1")
    ks = np.array(
        [k for k in range(-max_mode, max_mode + 1) if k not in (0, rotation_number)],
        dtype=float,
    )
    u = 2.0 * np.pi * np.arange(4096) / 4096
    phases = np.exp(1j * np.outer(u, ks))
    for _ in range(max_attempts):
        draws = rng.standard_normal(ks.size) + 1j * rng.standard_normal(ks.size)
        amplitudes = scale * 2.0 ** (-np.abs(ks)) * draws / np.sqrt(2.0)
        perturbation = phases @ (1j * ks * amplitudes)
        if np.max(np.abs(perturbation)) <= 0.5 * rotation_number:
            modes = [(rotation_number, 1.0 + 0j)]
            modes.extend((int(k), complex(c)) for k, c in zip(ks, amplitudes))
            return CurveSpec.fourier(modes, node_count=node_count)
    raise CurveGeometryError(
        f"no immersed random curve with n={rotation_number} after {max_attempts} draws"
    )


def scale_curve(curve: ArcLengthCurve, factor: float) -> ArcLengthCurve:
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    return ArcLengthCurve(
        points=curve.points * factor,
        total_length=curve.total_length * factor,
        rotation_number=curve.rotation_number,
    )


def translate_curve(curve: ArcLengthCurve, offset: complex) -> ArcLengthCurve:
    return ArcLengthCurve(
        points=curve.points + offset,
        total_length=curve.total_length,
        rotation_number=curve.rotation_number,
    )


def write_curve_csv(path: Path | str, curve: ArcLengthCurve) -> Path:
    output_path = Path(path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# L={format_float(curve.total_length)} n={curve.rotation_number}"]
    lines.extend(
        f"{format_float(point.real)},{format_float(point.imag)}" for point in curve.points
    )
    output_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return output_path


def read_curve_csv(path: Path | str) -> ArcLengthCurve:
    source = Path(path)
    lines = source.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CurveGeometryError(f"{source}: empty curve file")
    match = CURVE_HEADER_RE.match(lines[0].strip())
    if match is None:
        raise CurveGeometryError(f"{source}: line 1: expected '# L=<value> n=<value>' header")
    try:
        total_length = float(match.group("length"))
        rotation_number = int(match.group("n"))
    except ValueError as exc:
        raise CurveGeometryError(f"{source}: line 1: {exc}") from exc

    values: list[complex] = []
    for line_no, raw_line in enumerate(lines[1:], start=2):
        line = raw_line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise CurveGeometryError(f"{source}: line {line_no}: expected 'x,y'")
        try:
            values.append(complex(float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise CurveGeometryError(f"{source}: line {line_no}: {exc}") from exc

    curve = curve_from_points(np.array(values, dtype=complex), total_length)
    if curve.rotation_number != rotation_number:
        raise RotationResidualError(
            f"{source}: header n={rotation_number} but tangent winding gives "
            f"{curve.rotation_number}"
        )
    return curve
