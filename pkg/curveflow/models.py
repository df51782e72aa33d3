from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

StatusCallback = Callable[[str], None]


def emit_status(status: StatusCallback | None, message: str) -> None:
    if status is not None:
        status(message)


class FlowKind(str, Enum):
    AP = "AP"
    LP = "LP"
    JP = "JP"


class CurveKind(str, Enum):
    CIRCLE = "circle"
    ELLIPSE = "ellipse"
    PERTURBED_N_CIRCLE = "perturbed_n_circle"
    LIMACON = "limacon"
    FOURIER = "fourier"


class TerminationKind(str, Enum):
    REACHED_T_MAX = "ReachedTmax"
    BLOW_UP_DECLARED = "BlowUpDeclared"
    STEP_LIMIT = "StepLimit"


@dataclass(frozen=True)
class ArcLengthCurve:
    """Closed curve sampled at s_j = j L / N, stored as complex positions x + iy."""

    points: np.ndarray
    total_length: float
    rotation_number: int

    @property
    def node_count(self) -> int:
        return int(self.points.shape[0])

    @property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.points.real, self.points.imag])

    @property
    def arc_lengths(self) -> np.ndarray:
        return self.total_length * np.arange(self.node_count) / self.node_count


@dataclass(frozen=True)
class CurveSpec:
    """Parametric test curve over u in [0, 2*pi).

    ``modes`` is only used by ``CurveKind.FOURIER`` and holds (k, coefficient)
    pairs of f(u) = centre + sum c_k exp(i k u).
    """

    kind: CurveKind
    node_count: int = 512
    radius: float = 1.0
    rotation_number: int = 1
    a: float = 2.0
    b: float = 1.0
    mode: int = 1
    amplitude: float = 0.0
    phase: float = 0.0
    centre: tuple[float, float] = (0.0, 0.0)
    modes: tuple[tuple[int, complex], ...] = ()

    @classmethod
    def circle(
        cls,
        radius: float = 1.0,
        rotation_number: int = 1,
        *,
        node_count: int = 512,
        centre: tuple[float, float] = (0.0, 0.0),
    ) -> "CurveSpec":
        return cls(
            kind=CurveKind.CIRCLE,
            node_count=node_count,
            radius=radius,
            rotation_number=rotation_number,
            centre=centre,
        )

    @classmethod
    def ellipse(cls, a: float = 2.0, b: float = 1.0, *, node_count: int = 512) -> "CurveSpec":
        return cls(kind=CurveKind.ELLIPSE, node_count=node_count, a=a, b=b)

    @classmethod
    def perturbed_n_circle(
        cls,
        radius: float,
        rotation_number: int,
        mode: int,
        amplitude: float,
        phase: float = 0.0,
        *,
        node_count: int = 512,
    ) -> "CurveSpec":
        return cls(
            kind=CurveKind.PERTURBED_N_CIRCLE,
            node_count=node_count,
            radius=radius,
            rotation_number=rotation_number,
            mode=mode,
            amplitude=amplitude,
            phase=phase,
        )

    @classmethod
    def limacon(cls, a: float = 1.5, b: float = 1.0, *, node_count: int = 512) -> "CurveSpec":
        return cls(kind=CurveKind.LIMACON, node_count=node_count, a=a, b=b)

    @classmethod
    def fourier(
        cls,
        modes: Sequence[tuple[int, complex]],
        *,
        node_count: int = 512,
        centre: tuple[float, float] = (0.0, 0.0),
    ) -> "CurveSpec":
        normalized = tuple((int(k), complex(c)) for k, c in modes)
        return cls(kind=CurveKind.FOURIER, node_count=node_count, modes=normalized, centre=centre)


@dataclass(frozen=True)
class CoefficientTable:
    """f_hat(k) = L^(-1/2) * integral_0^L f(s) exp(-2 pi i k s / L) ds for |k| <= bandwidth."""

    wavenumbers: np.ndarray
    coefficients: np.ndarray
    bandwidth: int
    total_length: float
    rotation_number: int

    def coefficient(self, k: int) -> complex:
        hits = np.nonzero(self.wavenumbers == k)[0]
        if hits.size == 0:
            return 0j
        return complex(self.coefficients[hits[0]])

    @property
    def energies(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2


@dataclass(frozen=True)
class Diagnostics:
    t: float
    length: float
    area: float
    rotation_number: int
    total_curvature: float
    curvature_energy: float
    i_m1: float
    i0: float
    i1: float
    tilde_i_m1: float
    j3: float
    j4: float
    g: float
    kappa_max: float
    kappa_min: float


@dataclass(frozen=True)
class CircleFit:
    centre: tuple[float, float]
    radius: float
    sigma_over_length: float
    rho_l2: float
    rho_c0: float
    rho_c1: float
    rho_c2: float


@dataclass(frozen=True)
class FlowState:
    curve: ArcLengthCurve
    t: float = 0.0
    step_index: int = 0
    dt_last: float = 0.0


@dataclass(frozen=True)
class StoppingPolicy:
    t_max: float = 1.0
    dt_min: float = 1e-10
    w_max: float = 1e6
    max_steps: int = 1_000_000
    max_turning_per_node: float = 0.4

    def __post_init__(self) -> None:
        for name in ("t_max", "dt_min", "w_max", "max_steps", "max_turning_per_node"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class DtPolicy:
    c_cfl: float = 0.2
    growth: float = 1.5
    dt_max: Optional[float] = None
    fixed_dt: Optional[float] = None

    def __post_init__(self) -> None:
        if self.c_cfl <= 0:
            raise ValueError("c_cfl must be positive")
        if self.growth < 1:
            raise ValueError("growth must be at least 1")
        if self.dt_max is not None and self.dt_max <= 0:
            raise ValueError("dt_max must be positive")
        if self.fixed_dt is not None and self.fixed_dt <= 0:
            raise ValueError("fixed_dt must be positive")


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    dt: float
    diagnostics: Diagnostics
    circle_fit: Optional[CircleFit]


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    t_end: float
    steps: int
    rejected_steps: int = 0
    t_num: Optional[float] = None
    cause: Optional[str] = None


@dataclass(frozen=True)
class Trajectory:
    flow: FlowKind
    samples: tuple[TrajectorySample, ...]
    termination: Termination
    final_state: FlowState
    # Largest single-step relative increase of L^2/A seen during the run.
    max_ratio_increase: float = 0.0
    config: Mapping[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name in ("t", "dt"):
            return np.array([getattr(sample, name) for sample in self.samples], dtype=float)
        return np.array(
            [getattr(sample.diagnostics, name) for sample in self.samples], dtype=float
        )

    @property
    def blew_up(self) -> bool:
        return self.termination.kind == TerminationKind.BLOW_UP_DECLARED
