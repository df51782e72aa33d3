from __future__ import annotations

import math

from .models import Diagnostics, FlowKind


class FlowError(RuntimeError):
    """Raised when a flow cannot be advanced."""


class NonPositiveAreaError(FlowError):
    """Raised when the JP forcing is requested for a curve with A <= 0."""


def forcing_value(
    flow: FlowKind,
    *,
    length: float,
    area: float,
    rotation_number: int,
    i0: float,
) -> float:
    """Scale-invariant non-local forcing g of the given flow."""
    if flow == FlowKind.AP:
        return 0.0
    if flow == FlowKind.LP:
        return i0 / (2.0 * math.pi * rotation_number)
    if flow == FlowKind.JP:
        if area <= 0.0:
            raise NonPositiveAreaError(f"JP forcing needs A > 0, got A={area:.6g}")
        deficit = 1.0 - 4.0 * math.pi * rotation_number * area / length**2
        return length**2 * deficit / (2.0 * area)
    raise ValueError(f"unsupported flow kind: {flow}")


def nonlocal_forcing(d: Diagnostics, flow: FlowKind) -> float:
    return forcing_value(
        FlowKind(flow),
        length=d.length,
        area=d.area,
        rotation_number=d.rotation_number,
        i0=d.i0,
    )
