from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import json
import os
from pathlib import Path
from typing import Any, Mapping, Optional

from .models import CurveKind, CurveSpec, DtPolicy, FlowKind, StoppingPolicy

OUTPUT_ENV_VAR = "CURVEFLOW_OUT"
DEFAULT_OUTPUT_ROOT = Path("curveflow_out")


class ConfigError(RuntimeError):
    """Raised when an experiment configuration cannot be parsed or validated."""


class UnknownPresetError(ConfigError):
    """Raised when a preset name is not in the catalogue."""


class CheckKind(str, Enum):
    IDENTITIES = "identities"
    INEQUALITIES = "inequalities"
    BLOW_UP = "blow_up"
    RATES = "rates"
    DECAY = "decay"
    CONVERGENCE = "convergence"
    CONSERVATION = "conservation"
    STATIONARY = "stationary"
    AUDIT = "audit"


TRAJECTORY_CHECKS = frozenset(
    {
        CheckKind.BLOW_UP,
        CheckKind.RATES,
        CheckKind.DECAY,
        CheckKind.CONVERGENCE,
        CheckKind.CONSERVATION,
        CheckKind.STATIONARY,
        CheckKind.AUDIT,
    }
)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: every curve is evolved under every flow, then checked.

    ``bandwidth``, when set, is the Fourier cut-off every generated curve must
    fit: trajectory initial curves and ensemble curves whose k^2-weighted
    energy beyond it is not negligible raise BandwidthTooLowError.
    """

    name: str
    flows: tuple[FlowKind, ...] = (FlowKind.AP,)
    curves: tuple[CurveSpec, ...] = ()
    node_count: int = 512
    bandwidth: Optional[int] = None
    policy: StoppingPolicy = field(default_factory=StoppingPolicy)
    dt_policy: DtPolicy = field(default_factory=DtPolicy)
    sample_every: int = 10
    status_every: int = 1000
    output_dir: Optional[Path] = None
    seed: int = 0
    checks: tuple[CheckKind, ...] = ()
    ensemble_size: int = 20
    rotation_numbers: tuple[int, ...] = (1, 2, 3)

    @property
    def needs_trajectories(self) -> bool:
        return any(check in TRAJECTORY_CHECKS for check in self.checks)


def default_output_root() -> Path:
    value = os.getenv(OUTPUT_ENV_VAR)
    return Path(value) if value else DEFAULT_OUTPUT_ROOT


def _curve_to_dict(spec: CurveSpec) -> dict[str, Any]:
    payload = asdict(spec)
    payload["kind"] = spec.kind.value
    payload["centre"] = list(spec.centre)
    payload["modes"] = [[k, c.real, c.imag] for k, c in spec.modes]
    return payload


def config_to_dict(config: ExperimentConfig) -> dict[str, Any]:
    return {
        "name": config.name,
        "flows": [flow.value for flow in config.flows],
        "curves": [_curve_to_dict(spec) for spec in config.curves],
        "node_count": config.node_count,
        "bandwidth": config.bandwidth,
        "policy": asdict(config.policy),
        "dt": asdict(config.dt_policy),
        "sample_every": config.sample_every,
        "status_every": config.status_every,
        "output_dir": str(config.output_dir) if config.output_dir is not None else None,
        "seed": config.seed,
        "checks": [check.value for check in config.checks],
        "ensemble_size": config.ensemble_size,
        "rotation_numbers": list(config.rotation_numbers),
    }


class _Reader:
    """Typed access to a JSON mapping with dotted field paths in error messages."""

    def __init__(self, data: Any, path: str, source: str) -> None:
        if not isinstance(data, Mapping):
            raise ConfigError(f"{source}: field '{path or '<root>'}' must be an object")
        self.data = data
        self.path = path
        self.source = source
        self.seen: set[str] = set()

    def where(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def fail(self, key: str, message: str) -> ConfigError:
        return ConfigError(f"{self.source}: field '{self.where(key)}': {message}")

    def get(self, key: str, default: Any = None) -> Any:
        self.seen.add(key)
        return self.data.get(key, default)

    def number(self, key: str, default: Any, *, integer: bool = False, optional: bool = False) -> Any:
        value = self.get(key, default)
        if value is None:
            if optional:
                return None
            raise self.fail(key, "is required")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(key, f"expected a number, got {value!r}")
        if integer:
            if isinstance(value, float) and not value.is_integer():
                raise self.fail(key, f"expected an integer, got {value!r}")
            return int(value)
        return float(value)

    def child(self, key: str) -> "_Reader":
        self.seen.add(key)
        return _Reader(self.data.get(key, {}), self.where(key), self.source)

    def finish(self) -> None:
        unknown = sorted(set(self.data) - self.seen)
        if unknown:
            raise self.fail(unknown[0], "unknown field")


def _enum(reader: _Reader, key: str, value: Any, kind: type[Enum]) -> Any:
    try:
        return kind(value)
    except ValueError:
        choices = ", ".join(item.value for item in kind)
        raise reader.fail(key, f"expected one of {choices}, got {value!r}") from None


def _parse_curve(reader: _Reader) -> CurveSpec:
    kind = _enum(reader, "kind", reader.get("kind"), CurveKind)
    centre = reader.get("centre", [0.0, 0.0])
    if not isinstance(centre, (list, tuple)) or len(centre) != 2:
        raise reader.fail("centre", "expected [x, y]")
    modes = []
    for index, item in enumerate(reader.get("modes", [])):
        try:
            k, real, imag = item
            modes.append((int(k), complex(float(real), float(imag))))
        except (TypeError, ValueError):
            raise reader.fail(f"modes[{index}]", "expected [k, real, imag]") from None
    spec = CurveSpec(
        kind=kind,
        node_count=reader.number("node_count", 512, integer=True),
        radius=reader.number("radius", 1.0),
        rotation_number=reader.number("rotation_number", 1, integer=True),
        a=reader.number("a", 2.0),
        b=reader.number("b", 1.0),
        mode=reader.number("mode", 1, integer=True),
        amplitude=reader.number("amplitude", 0.0),
        phase=reader.number("phase", 0.0),
        centre=(float(centre[0]), float(centre[1])),
        modes=tuple(modes),
    )
    reader.finish()
    return spec


def _build(factory: Any, reader: _Reader, values: dict[str, Any]) -> Any:
    try:
        return factory(**values)
    except ValueError as exc:
        raise ConfigError(f"{reader.source}: field '{reader.path}': {exc}") from exc


def config_from_mapping(data: Any, *, source: str = "<config>") -> ExperimentConfig:
    root = _Reader(data, "", source)
    name = root.get("name")
    if not isinstance(name, str) or not name:
        raise root.fail("name", "expected a non-empty string")

    raw_flows = root.get("flows")
    if raw_flows is None:
        raw_flows = [root.get("flow", FlowKind.AP.value)]
    elif "flow" in root.data:
        raise root.fail("flow", "give either 'flow' or 'flows'")
    root.seen.add("flow")
    if not isinstance(raw_flows, list) or not raw_flows:
        raise root.fail("flows", "expected a non-empty list")
    flows = tuple(_enum(root, "flows", value, FlowKind) for value in raw_flows)

    raw_curves = root.get("curves")
    if raw_curves is None:
        single = root.get("curve")
        raw_curves = [] if single is None else [single]
    elif "curve" in root.data:
        raise root.fail("curve", "give either 'curve' or 'curves'")
    root.seen.add("curve")
    if not isinstance(raw_curves, list):
        raise root.fail("curves", "expected a list")
    curves = tuple(
        _parse_curve(_Reader(item, f"curves[{index}]", source)) for index, item in enumerate(raw_curves)
    )

    policy_reader = root.child("policy")
    defaults = StoppingPolicy()
    policy = _build(
        StoppingPolicy,
        policy_reader,
        {
            "t_max": policy_reader.number("t_max", defaults.t_max),
            "dt_min": policy_reader.number("dt_min", defaults.dt_min),
            "w_max": policy_reader.number("w_max", defaults.w_max),
            "max_steps": policy_reader.number("max_steps", defaults.max_steps, integer=True),
            "max_turning_per_node": policy_reader.number(
                "max_turning_per_node", defaults.max_turning_per_node
            ),
        },
    )
    policy_reader.finish()

    dt_reader = root.child("dt")
    dt_defaults = DtPolicy()
    dt_policy = _build(
        DtPolicy,
        dt_reader,
        {
            "c_cfl": dt_reader.number("c_cfl", dt_defaults.c_cfl),
            "growth": dt_reader.number("growth", dt_defaults.growth),
            "dt_max": dt_reader.number("dt_max", None, optional=True),
            "fixed_dt": dt_reader.number("fixed_dt", None, optional=True),
        },
    )
    dt_reader.finish()

    raw_checks = root.get("checks", [])
    if not isinstance(raw_checks, list):
        raise root.fail("checks", "expected a list")
    checks = tuple(_enum(root, "checks", value, CheckKind) for value in raw_checks)

    raw_rotations = root.get("rotation_numbers", [1, 2, 3])
    if not isinstance(raw_rotations, list) or not raw_rotations:
        raise root.fail("rotation_numbers", "expected a non-empty list")
    if any(isinstance(value, bool) or not isinstance(value, int) or value < 1 for value in raw_rotations):
        raise root.fail("rotation_numbers", "expected positive integers")

    output_dir = root.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise root.fail("output_dir", "expected a path string")

    config = ExperimentConfig(
        name=name,
        flows=flows,
        curves=curves,
        node_count=root.number("node_count", 512, integer=True),
        bandwidth=root.number("bandwidth", None, integer=True, optional=True),
        policy=policy,
        dt_policy=dt_policy,
        sample_every=root.number("sample_every", 10, integer=True),
        status_every=root.number("status_every", 1000, integer=True),
        output_dir=Path(output_dir) if output_dir else None,
        seed=root.number("seed", 0, integer=True),
        checks=checks,
        ensemble_size=root.number("ensemble_size", 20, integer=True),
        rotation_numbers=tuple(raw_rotations),
    )
    root.finish()
    validate_config(config, source=source)
    return config


def validate_config(config: ExperimentConfig, *, source: str = "<config>") -> None:
    if config.sample_every < 1:
        raise ConfigError(f"{source}: field 'sample_every': must be at least 1")
    if config.ensemble_size < 1:
        raise ConfigError(f"{source}: field 'ensemble_size': must be at least 1")
    if config.node_count < 64 or config.node_count & (config.node_count - 1):
        raise ConfigError(f"{source}: field 'node_count': must be a power of two >= 64")
    if config.bandwidth is not None and not 0 <= config.bandwidth <= config.node_count // 2:
        raise ConfigError(f"{source}: field 'bandwidth': must lie in [0, node_count / 2]")
    if not config.checks:
        raise ConfigError(f"{source}: field 'checks': select at least one check")
    if config.needs_trajectories and not config.curves:
        raise ConfigError(f"{source}: field 'curves': trajectory checks need at least one curve")


def load_config(path: Path | str) -> ExperimentConfig:
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{config_path}: cannot read config: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_mapping(data, source=str(config_path))


# --- presets ----------------------------------------------------------------------

BLOW_UP_CURVE = CurveSpec.perturbed_n_circle(1.0, 2, 1, 0.2)
DECAY_CURVE_N2 = CurveSpec.perturbed_n_circle(1.0, 2, 5, 0.05)
DECAY_CURVE_N1 = CurveSpec.ellipse(1.5, 1.0)

_BLOW_UP_POLICY = StoppingPolicy(t_max=100.0)
_DECAY_POLICY = StoppingPolicy(t_max=5.0)
_DECAY_DT = DtPolicy(dt_max=0.01)
_DECAY_CHECKS = (CheckKind.DECAY, CheckKind.CONVERGENCE, CheckKind.CONSERVATION, CheckKind.AUDIT)


def _blow_up(name: str, flow: FlowKind) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        flows=(flow,),
        curves=(BLOW_UP_CURVE,),
        policy=_BLOW_UP_POLICY,
        sample_every=10,
        checks=(CheckKind.BLOW_UP,),
    )


def _decay(name: str, flow: FlowKind, curve: CurveSpec) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        flows=(flow,),
        curves=(curve,),
        policy=_DECAY_POLICY,
        dt_policy=_DECAY_DT,
        sample_every=1,
        checks=_DECAY_CHECKS,
    )


PRESETS = {
    "identities": lambda: ExperimentConfig(
        name="identities", checks=(CheckKind.IDENTITIES,), ensemble_size=20
    ),
    "inequalities": lambda: ExperimentConfig(
        name="inequalities", checks=(CheckKind.INEQUALITIES,), ensemble_size=100
    ),
    "ap-blowup-n2": lambda: _blow_up("ap-blowup-n2", FlowKind.AP),
    "lp-blowup-n2": lambda: _blow_up("lp-blowup-n2", FlowKind.LP),
    "jp-blowup-n2": lambda: _blow_up("jp-blowup-n2", FlowKind.JP),
    "ap-decay-n1": lambda: _decay("ap-decay-n1", FlowKind.AP, DECAY_CURVE_N1),
    "ap-decay-n2": lambda: _decay("ap-decay-n2", FlowKind.AP, DECAY_CURVE_N2),
    "lp-decay-n2": lambda: _decay("lp-decay-n2", FlowKind.LP, DECAY_CURVE_N2),
    "jp-decay-n2": lambda: _decay("jp-decay-n2", FlowKind.JP, DECAY_CURVE_N2),
    "stationary": lambda: ExperimentConfig(
        name="stationary",
        flows=(FlowKind.AP, FlowKind.LP, FlowKind.JP),
        curves=tuple(CurveSpec.circle(1.0, n, centre=(0.5, -0.25)) for n in (1, 2, 3)),
        node_count=256,
        policy=StoppingPolicy(t_max=1.0, max_steps=1000),
        dt_policy=DtPolicy(fixed_dt=1e-3),
        sample_every=100,
        checks=(CheckKind.STATIONARY,),
    ),
    "rates-blowup": lambda: ExperimentConfig(
        name="rates-blowup",
        flows=(FlowKind.AP,),
        curves=(BLOW_UP_CURVE,),
        node_count=2048,
        policy=_BLOW_UP_POLICY,
        dt_policy=DtPolicy(c_cfl=0.01),
        sample_every=1,
        status_every=5000,
        checks=(CheckKind.BLOW_UP, CheckKind.RATES),
    ),
}


def preset_names() -> list[str]:
    return list(PRESETS)


def preset(name: str) -> ExperimentConfig:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r}; choose one of {', '.join(PRESETS)}"
        ) from None
    return factory()


def with_overrides(
    config: ExperimentConfig,
    *,
    seed: Optional[int] = None,
    output_dir: Optional[Path] = None,
) -> ExperimentConfig:
    changes: dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if output_dir is not None:
        changes["output_dir"] = output_dir
    return replace(config, **changes) if changes else config
