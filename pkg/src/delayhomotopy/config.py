"""Line-based run configuration.

    # rendezvous at tau = 4
    problem = rendezvous
    problem.v0 = 100
    problem.target = 1500, 1000, 0.15707963267948966, 0
    tau_target = 4
    shooting.max_iterations = 50

Keys under ``problem.`` are keyword arguments of the preset factory;
``shooting.`` and ``continuation.`` keys map onto the option dataclasses.
Vectors are comma separated. Angles are in radians.
"""

from __future__ import annotations

import dataclasses
import inspect
import math
from dataclasses import dataclass, field
from typing import Any, Optional

from .continuation import ContinuationOptions
from .errors import ConfigError, InvalidParameterError
from .problem import PRESETS, DelayedOCP
from .shooting import ShootingOptions

# continuation options settable from a config (dtau/base_h are top level)
_CONTINUATION_KEYS = ("dtau_min", "refine_passes", "refine_tol", "final_refine_passes", "growth")


@dataclass(frozen=True)
class RunConfig:
    problem: str = "rendezvous"
    problem_params: dict = field(default_factory=dict)
    tau_target: float = 0.0
    dtau: Optional[float] = None
    base_h: Optional[float] = None
    shooting: dict = field(default_factory=dict)
    continuation: dict = field(default_factory=dict)
    output_dir: str = "."
    sweep: Optional[tuple] = None

    def build_problem(self) -> DelayedOCP:
        try:
            return PRESETS[self.problem](**self.problem_params)
        except InvalidParameterError as exc:
            raise ConfigError(f"problem: {exc}") from exc

    def shooting_options(self) -> ShootingOptions:
        return ShootingOptions(**self.shooting)

    def continuation_options(self) -> ContinuationOptions:
        extra = dict(self.continuation)
        if self.dtau is not None:
            extra["dtau_init"] = self.dtau
        return ContinuationOptions(shooting=self.shooting_options(), base_h=self.base_h, **extra)

    @property
    def targets(self) -> tuple:
        return self.sweep if self.sweep is not None else (self.tau_target,)


def _parse_float(text: str, key: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", line) from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite", line)
    return value


def _parse_int(text: str, key: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}", line) from None


def _parse_vector(text: str, key: str, line: int) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if not parts or any(p == "" for p in parts):
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}", line)
    return tuple(_parse_float(p, key, line) for p in parts)


def _parse_like(default: Any, text: str, key: str, line: int):
    """Coerce ``text`` to the type of ``default``."""
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{key}: expected true or false, got {text!r}", line)
        return low == "true"
    if isinstance(default, int):
        return _parse_int(text, key, line)
    if isinstance(default, float):
        return _parse_float(text, key, line)
    if isinstance(default, (tuple, list)):
        vec = _parse_vector(text, key, line)
        if len(vec) != len(default):
            raise ConfigError(f"{key}: expected {len(default)} components, got {len(vec)}", line)
        return vec
    return text


def _option_defaults(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)
            if f.default is not dataclasses.MISSING}


def _positive(value, key, line):
    if value is not None and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}", line)


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines into a RunConfig; raises ConfigError with line numbers."""
    raw: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", lineno)
        if not value:
            raise ConfigError(f"{key}: missing value", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r} (first set on line {raw[key][1]})", lineno)
        raw[key] = (value, lineno)

    preset, preset_line = raw.pop("problem", ("rendezvous", None))
    if preset not in PRESETS:
        raise ConfigError(f"problem: unknown preset {preset!r} (known: {', '.join(sorted(PRESETS))})",
                          preset_line)
    params = inspect.signature(PRESETS[preset]).parameters
    shoot_defaults = _option_defaults(ShootingOptions)
    cont_defaults = {k: v for k, v in _option_defaults(ContinuationOptions).items()
                     if k in _CONTINUATION_KEYS}

    values: dict[str, Any] = {"problem": preset}
    problem_params, shooting, continuation = {}, {}, {}
    lines: dict[str, int] = {}
    for key, (text, lineno) in raw.items():
        lines[key] = lineno
        if key.startswith("problem."):
            name = key[len("problem."):]
            if name not in params:
                raise ConfigError(f"unknown key {key!r} for preset {preset!r}", lineno)
            problem_params[name] = _parse_like(params[name].default, text, key, lineno)
        elif key.startswith("shooting."):
            name = key[len("shooting."):]
            if name not in shoot_defaults:
                raise ConfigError(f"unknown key {key!r}", lineno)
            shooting[name] = _parse_like(shoot_defaults[name], text, key, lineno)
        elif key.startswith("continuation."):
            name = key[len("continuation."):]
            if name not in cont_defaults:
                raise ConfigError(f"unknown key {key!r}", lineno)
            default = cont_defaults[name]
            continuation[name] = _parse_like(1.0 if default is None else default, text, key, lineno)
        elif key in ("tau_target", "dtau", "base_h"):
            values[key] = _parse_float(text, key, lineno)
        elif key == "output_dir":
            values[key] = text
        elif key == "sweep":
            values[key] = _parse_vector(text, key, lineno)
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)

    tau = values.get("tau_target", 0.0)
    if tau < 0:
        raise ConfigError(f"tau_target must be non-negative, got {tau}", lines.get("tau_target"))
    _positive(values.get("dtau"), "dtau", lines.get("dtau"))
    _positive(values.get("base_h"), "base_h", lines.get("base_h"))
    sweep = values.get("sweep")
    if sweep is not None:
        if any(s < 0 for s in sweep):
            raise ConfigError("sweep values must be non-negative", lines["sweep"])
        if any(b <= a for a, b in zip(sweep, sweep[1:])):
            raise ConfigError("sweep must be strictly ascending", lines["sweep"])

    try:
        ShootingOptions(**shooting)
    except InvalidParameterError as exc:
        raise ConfigError(f"shooting: {exc}") from exc

    config = RunConfig(problem_params=problem_params, shooting=shooting,
                       continuation=continuation, **values)
    problem = config.build_problem()
    for tau in config.targets:
        if tau > problem.M:
            key = "sweep" if sweep is not None else "tau_target"
            raise ConfigError(f"{key}: tau = {tau} exceeds the delay bound M = {problem.M}", lines.get(key))
    try:
        opts = config.continuation_options()
    except InvalidParameterError as exc:
        raise ConfigError(f"continuation: {exc}") from exc
    # compare against the effective default step, resolved per run
    dtau_init = opts.dtau_init or max(config.targets) / 10
    if opts.dtau_min is not None and dtau_init > 0 and opts.dtau_min > dtau_init:
        raise ConfigError(f"continuation.dtau_min = {opts.dtau_min} exceeds the initial step "
                          f"{dtau_init:g}", lines.get("continuation.dtau_min"))
    return config
