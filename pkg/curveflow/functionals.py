from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Any, Iterator, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline

from .forcing import NonPositiveAreaError, forcing_value
from .geometry import (
    geometry_on_grid,
    make_test_curve,
    random_band_limited_spec,
    spectral_derivative,
    wavenumbers,
)
from .models import (
    ArcLengthCurve,
    CircleFit,
    CoefficientTable,
    Diagnostics,
    FlowKind,
    StatusCallback,
    emit_status,
)

OVERSAMPLING = 4
TAIL_ENERGY_LIMIT = 1e-8
MAX_WEIGHT_DEGREE = 6
IDENTITY_TOLERANCE = 1e-7
SLACK_TOLERANCE = 1e-10
CIRCLE_TOLERANCE = 1e-12
PHASE_FLOOR = 1e-12
INTERPOLATION_PAIRS: tuple[tuple[int, int], ...] = ((0, 1), (0, 2), (1, 2))
PEAK_STENCIL = 4


class SpectralError(RuntimeError):
    """Raised when Fourier data of a curve cannot be formed."""


class BandwidthTooLowError(SpectralError):
    """Raised when truncating to the requested bandwidth drops visible energy."""


class PhaseUndefinedError(SpectralError):
    """Raised when the n-th Fourier coefficient is too small to carry a phase."""


@dataclass(frozen=True)
class IdentityRecord:
    name: str
    lhs: float
    rhs: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class IdentityReport:
    records: tuple[IdentityRecord, ...]

    def residual(self, name: str) -> float:
        return self._get(name).residual

    def _get(self, name: str) -> IdentityRecord:
        for record in self.records:
            if record.name == name:
                return record
        raise KeyError(name)

    @property
    def residuals(self) -> dict[str, float]:
        return {record.name: record.residual for record in self.records}

    @property
    def max_residual(self) -> float:
        return max(record.residual for record in self.records)

    @property
    def passed(self) -> bool:
        return all(record.passed for record in self.records)


@dataclass(frozen=True)
class InequalityRecord:
    """Two sides of an inequality lhs >= rhs.

    For interpolation records ``slack`` holds the ratio I_j / (...) instead.
    """

    name: str
    lhs: float
    rhs: float
    slack: float
    passed: bool
    degenerate: bool = False
    informational: bool = False
    note: Optional[str] = None


@dataclass(frozen=True)
class InequalityReport:
    records: tuple[InequalityRecord, ...]

    def get(self, name: str) -> InequalityRecord:
        for record in self.records:
            if record.name == name:
                return record
        raise KeyError(name)

    def ratio(self, j: int, ell: int) -> Optional[float]:
        record = self.get(interpolation_name(j, ell))
        return None if record.degenerate else record.slack

    @property
    def passed(self) -> bool:
        return all(record.passed for record in self.records if not record.informational)


@dataclass(frozen=True)
class EnsembleSummary:
    count: int
    seed: int
    worst: dict[str, float]
    failures: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass(frozen=True)
class _PhysicalSide:
    length: float
    area: float
    rotation_number: int
    total_curvature: float
    curvature_energy: float
    kappa_cubed: float
    quartic_energy: float
    i_m1: float
    i0: float
    i1: float
    i2: float
    tilde_i_m1: float
    j3: float
    j4: float
    kappa_max: float
    kappa_min: float


def interpolation_name(j: int, ell: int) -> str:
    return f"interpolation({j},{ell})"


def oversample(values: np.ndarray, factor: int = OVERSAMPLING) -> np.ndarray:
    """Trigonometric interpolation of periodic samples onto a grid factor times finer."""
    count = values.shape[0]
    fine = count * factor
    spectrum = np.fft.fft(values)
    padded = np.zeros(fine, dtype=complex)
    half = count // 2
    padded[:half] = spectrum[:half]
    padded[fine - half :] = spectrum[count - half :]
    if count % 2 == 0:
        padded[fine - half] = 0.0
    return np.fft.ifft(padded) * factor


def _peak(values: np.ndarray) -> float:
    """Largest value of a smooth periodic function, refined between its samples by a local cubic spline."""
    count = values.shape[0]
    index = int(np.argmax(values))
    offsets = np.arange(-PEAK_STENCIL, PEAK_STENCIL + 1)
    window = values[(index + offsets) % count]
    spline = CubicSpline(offsets.astype(float), window)
    critical = spline.derivative().roots(extrapolate=False)
    critical = critical[np.abs(critical) <= 1.0]
    if critical.size == 0:
        return float(window[PEAK_STENCIL])
    return float(max(window[PEAK_STENCIL], np.max(spline(critical))))


def _physical_side(curve: ArcLengthCurve) -> _PhysicalSide:
    length = curve.total_length
    n = curve.rotation_number
    fine = oversample(curve.points)
    frame = geometry_on_grid(fine, length)
    kappa = frame.curvature
    dkappa = spectral_derivative(kappa, length, 1)
    ddkappa = spectral_derivative(kappa, length, 2)

    def integral(values: np.ndarray) -> float:
        return float(length * np.mean(values))

    total_curvature = integral(kappa)
    deviation = kappa - total_curvature / length
    gap = (2.0 * math.pi * n / length) * (fine - np.mean(fine)) + frame.normal
    area = frame.area
    return _PhysicalSide(
        length=length,
        area=area,
        rotation_number=n,
        total_curvature=total_curvature,
        curvature_energy=integral(kappa**2),
        kappa_cubed=integral(kappa**3),
        quartic_energy=integral(kappa**4 + dkappa**2),
        i_m1=1.0 - 4.0 * math.pi * n * area / length**2,
        i0=length * integral(deviation**2),
        i1=length**3 * integral(dkappa**2),
        i2=length**5 * integral(ddkappa**2),
        tilde_i_m1=integral(np.abs(gap) ** 2) / length,
        j3=length**2 * integral(deviation**3),
        j4=length**3 * integral(deviation**4),
        kappa_max=_peak(kappa),
        kappa_min=-_peak(-kappa),
    )


def fourier_coefficients(curve: ArcLengthCurve, bandwidth: int | None = None) -> CoefficientTable:
    count = curve.node_count
    limit = count // 2 if bandwidth is None else int(bandwidth)
    if limit < 0 or limit > count // 2:
        raise ValueError(f"bandwidth must lie in [0, {count // 2}]")
    k = wavenumbers(count)
    raw = math.sqrt(curve.total_length) / count * np.fft.fft(curve.points)
    keep = np.abs(k) <= limit
    weighted = k**2 * np.abs(raw) ** 2
    total = float(weighted.sum())
    tail = float(weighted[~keep].sum())
    if total > 0.0 and tail > TAIL_ENERGY_LIMIT * total:
        raise BandwidthTooLowError(
            f"bandwidth {limit} discards {tail / total:.3e} of the k^2-weighted energy"
        )
    order = np.argsort(k[keep])
    return CoefficientTable(
        wavenumbers=k[keep][order].astype(int),
        coefficients=raw[keep][order],
        bandwidth=limit,
        total_length=curve.total_length,
        rotation_number=curve.rotation_number,
    )


def power_sum(table: CoefficientTable, weight: Polynomial | Sequence[float]) -> float:
    """Sum of weight(k) |f_hat(k)|^2; ``weight`` coefficients run from k^0 upward."""
    polynomial = weight if isinstance(weight, Polynomial) else Polynomial(np.asarray(weight, dtype=float))
    if polynomial.trim().degree() > MAX_WEIGHT_DEGREE:
        raise ValueError(f"weight degree must be at most {MAX_WEIGHT_DEGREE}")
    return float(np.sum(polynomial(table.wavenumbers.astype(float)) * table.energies))


def functionals(
    curve: ArcLengthCurve,
    flow: FlowKind = FlowKind.AP,
    *,
    t: float = 0.0,
) -> Diagnostics:
    side = _physical_side(curve)
    try:
        g = forcing_value(
            FlowKind(flow),
            length=side.length,
            area=side.area,
            rotation_number=side.rotation_number,
            i0=side.i0,
        )
    except NonPositiveAreaError:
        g = float("nan")
    return Diagnostics(
        t=t,
        length=side.length,
        area=side.area,
        rotation_number=side.rotation_number,
        total_curvature=side.total_curvature,
        curvature_energy=side.curvature_energy,
        i_m1=side.i_m1,
        i0=side.i0,
        i1=side.i1,
        tilde_i_m1=side.tilde_i_m1,
        j3=side.j3,
        j4=side.j4,
        g=g,
        kappa_max=side.kappa_max,
        kappa_min=side.kappa_min,
    )


def second_order_energy(curve: ArcLengthCurve) -> float:
    """I_2 = L^5 * integral of (kappa'')^2 ds."""
    return _physical_side(curve).i2


def _identity(name: str, lhs: float, rhs: float, tolerance: float, scale: float | None = None) -> IdentityRecord:
    denominator = 1.0 + abs(rhs if scale is None else scale)
    residual = abs(lhs - rhs) / denominator
    return IdentityRecord(name=name, lhs=lhs, rhs=rhs, residual=residual, passed=residual <= tolerance)


def verify_identities(curve: ArcLengthCurve, *, tolerance: float = IDENTITY_TOLERANCE) -> IdentityReport:
    table = fourier_coefficients(curve)
    side = _physical_side(curve)
    length = side.length
    n = side.rotation_number
    k = table.wavenumbers.astype(float)
    energy = table.energies
    nonzero = k != 0

    def moment(weights: np.ndarray, mask: np.ndarray | None = None) -> float:
        if mask is None:
            return float(np.sum(weights * energy))
        return float(np.sum(weights[mask] * energy[mask]))

    period_ratio = length / (2.0 * math.pi)
    i0_factor = 16.0 * math.pi**4 / length**3
    deficit_factor = 4.0 * math.pi**2 / length**3
    cubic = moment(k**3)
    records = [
        _identity("ser1", moment(k), length * side.area / math.pi, tolerance),
        _identity("ser2", moment(k**2), length**3 / (4.0 * math.pi**2), tolerance),
        _identity("ser3", cubic, period_ratio**3 * side.total_curvature, tolerance),
        _identity("ser4", moment(k**4), period_ratio**4 * side.curvature_energy, tolerance),
        _identity("ser5", moment(k**5), period_ratio**5 * side.kappa_cubed, tolerance),
        _identity("ser6", moment(k**6), period_ratio**6 * side.quartic_energy, tolerance),
        _identity("useful", moment(k**2 * (k - n)), 0.0, tolerance, scale=cubic),
        _identity("I0_first", i0_factor * moment(k**3 * (k - n)), side.i0, tolerance),
        _identity("I0_second", i0_factor * moment(k**2 * (k - n) ** 2), side.i0, tolerance),
        _identity("Im1_first", deficit_factor * moment(k * (k - n)), side.i_m1, tolerance),
        _identity(
            "Im1_second",
            -deficit_factor / n * moment(k * (k - n) ** 2, nonzero),
            side.i_m1,
            tolerance,
        ),
        _identity("tildeIm1", deficit_factor * moment((k - n) ** 2, nonzero), side.tilde_i_m1, tolerance),
        _identity("LW", i0_factor * moment(k**4), side.i0 + side.total_curvature**2, tolerance),
    ]
    return IdentityReport(records=tuple(records))


def _slack(
    name: str,
    lhs: float,
    rhs: float,
    tolerance: float,
    *,
    informational: bool = False,
    note: str | None = None,
) -> InequalityRecord:
    slack = lhs - rhs
    return InequalityRecord(
        name=name,
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        passed=bool(slack >= -tolerance),
        informational=informational,
        note=note,
    )


def check_inequalities(
    curve: ArcLengthCurve,
    pairs: Sequence[tuple[int, int]] = INTERPOLATION_PAIRS,
    *,
    tolerance: float = SLACK_TOLERANCE,
) -> InequalityReport:
    for j, ell in pairs:
        if ell not in (1, 2) or not 0 <= j < ell:
            raise ValueError(f"interpolation pair ({j}, {ell}) needs ell in {{1, 2}} and 0 <= j < ell")
    side = _physical_side(curve)
    length = side.length
    n = side.rotation_number
    tilde = max(side.tilde_i_m1, 0.0)
    bracket = length**3 * side.quartic_energy
    records = [
        _slack("isoperimetric", length**2, 4.0 * math.pi * side.area, tolerance),
        _slack("wirtinger", side.i0, 4.0 * math.pi**2 * n * abs(side.i_m1), tolerance),
        _slack("wirtinger_tilde", side.i0, 4.0 * math.pi**2 * side.tilde_i_m1, tolerance),
        _slack("schwarz", math.sqrt(tilde) * math.sqrt(bracket), side.i0, tolerance),
        _slack(
            "schwarz_display",
            math.sqrt(tilde) * bracket,
            side.i0,
            tolerance,
            informational=True,
            note="bracket taken without the square root, as literally displayed",
        ),
    ]
    energies = (side.i0, side.i1, side.i2)
    for j, ell in pairs:
        name = interpolation_name(j, ell)
        upper = energies[ell]
        denominator = tilde ** ((ell - j) / 2.0) * upper + tilde ** ((ell - j) / (ell + 1.0)) * upper ** (
            (j + 1.0) / (ell + 1.0)
        )
        if side.tilde_i_m1 <= CIRCLE_TOLERANCE or denominator <= 1e-300:
            records.append(
                InequalityRecord(
                    name=name,
                    lhs=energies[j],
                    rhs=denominator,
                    slack=float("nan"),
                    passed=True,
                    degenerate=True,
                    note="n-fold circle: ratio undefined",
                )
            )
            continue
        ratio = energies[j] / denominator
        records.append(
            InequalityRecord(
                name=name,
                lhs=energies[j],
                rhs=denominator,
                slack=ratio,
                passed=bool(np.isfinite(ratio) and ratio >= 0.0),
                note="ratio",
            )
        )
    return InequalityReport(records=tuple(records))


def circle_fit(curve: ArcLengthCurve, table: CoefficientTable | None = None) -> CircleFit:
    if table is None:
        table = fourier_coefficients(curve)
    length = curve.total_length
    n = curve.rotation_number
    radius = length / (2.0 * math.pi * n)
    scale = math.sqrt(length) * radius
    leading = table.coefficient(n)
    if abs(leading) <= PHASE_FLOOR * scale:
        raise PhaseUndefinedError(f"|f_hat({n})| = {abs(leading):.3e} is too small for a phase")

    period = 1.0 / n
    sigma_over_length = (float(np.angle(leading / scale)) / (2.0 * math.pi * n)) % period
    if sigma_over_length >= period:
        sigma_over_length -= period
    centre = complex(np.mean(curve.points))
    phase = 2.0 * math.pi * n * (curve.arc_lengths / length + sigma_over_length)
    rho = curve.points - centre - radius * np.exp(1j * phase)
    c0 = float(np.max(np.abs(rho)))
    c1 = c0 + float(np.max(np.abs(spectral_derivative(rho, length, 1))))
    c2 = c1 + float(np.max(np.abs(spectral_derivative(rho, length, 2))))
    return CircleFit(
        centre=(centre.real, centre.imag),
        radius=radius,
        sigma_over_length=sigma_over_length,
        rho_l2=float(math.sqrt(length * np.mean(np.abs(rho) ** 2))),
        rho_c0=c0,
        rho_c1=c1,
        rho_c2=c2,
    )


def random_curves(
    count: int,
    seed: int,
    *,
    rotation_numbers: Sequence[int] = (1, 2, 3),
    node_count: int = 512,
) -> Iterator[ArcLengthCurve]:
    rng = np.random.default_rng(seed)
    for index in range(count):
        n = rotation_numbers[index % len(rotation_numbers)]
        yield make_test_curve(random_band_limited_spec(n, rng, node_count=node_count))


def verify_identity_ensemble(
    count: int = 20,
    seed: int = 0,
    *,
    rotation_numbers: Sequence[int] = (1, 2, 3),
    node_count: int = 512,
    bandwidth: int | None = None,
    tolerance: float = IDENTITY_TOLERANCE,
    status: StatusCallback | None = None,
) -> EnsembleSummary:
    worst: dict[str, float] = {}
    failures: list[str] = []
    curves = random_curves(count, seed, rotation_numbers=rotation_numbers, node_count=node_count)
    for index, curve in enumerate(curves):
        if bandwidth is not None:
            fourier_coefficients(curve, bandwidth)
        report = verify_identities(curve, tolerance=tolerance)
        for record in report.records:
            worst[record.name] = max(worst.get(record.name, 0.0), record.residual)
            if not record.passed:
                failures.append(f"curve {index}: {record.name} residual {record.residual:.3e}")
        emit_status(status, f"Identity curve {index + 1}/{count}: max residual {report.max_residual:.2e}")
    return EnsembleSummary(count=count, seed=seed, worst=worst, failures=tuple(failures))


def check_inequality_ensemble(
    count: int = 100,
    seed: int = 0,
    *,
    rotation_numbers: Sequence[int] = (1, 2, 3),
    node_count: int = 512,
    bandwidth: int | None = None,
    tolerance: float = SLACK_TOLERANCE,
    status: StatusCallback | None = None,
) -> EnsembleSummary:
    """Smallest slack per inequality and largest ratio per interpolation pair."""
    worst: dict[str, float] = {}
    failures: list[str] = []
    curves = random_curves(count, seed, rotation_numbers=rotation_numbers, node_count=node_count)
    for index, curve in enumerate(curves):
        if bandwidth is not None:
            fourier_coefficients(curve, bandwidth)
        report = check_inequalities(curve, tolerance=tolerance)
        for record in report.records:
            if record.degenerate or record.informational:
                continue
            if record.note == "ratio":
                worst[record.name] = max(worst.get(record.name, 0.0), record.slack)
            else:
                worst[record.name] = min(worst.get(record.name, math.inf), record.slack)
            if not record.passed:
                failures.append(f"curve {index}: {record.name} slack {record.slack:.3e}")
        emit_status(status, f"Inequality curve {index + 1}/{count}")
    return EnsembleSummary(count=count, seed=seed, worst=worst, failures=tuple(failures))


def serialize_identity_report(report: IdentityReport) -> list[dict[str, Any]]:
    return [
        {
            "name": record.name,
            "lhs": record.lhs,
            "rhs": record.rhs,
            "residual_or_slack": record.residual,
            "pass": record.passed,
        }
        for record in report.records
    ]


def serialize_inequality_report(report: InequalityReport) -> list[dict[str, Any]]:
    payload = []
    for record in report.records:
        item: dict[str, Any] = {
            "name": record.name,
            "lhs": record.lhs,
            "rhs": record.rhs,
            "residual_or_slack": None if record.degenerate else record.slack,
            "pass": record.passed,
        }
        if record.degenerate:
            item["degenerate"] = True
        if record.note:
            item["note"] = record.note
        payload.append(item)
    return payload
