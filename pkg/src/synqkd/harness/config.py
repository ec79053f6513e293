"""Simulation configuration and its flat ``key = value`` file form."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from ..detector import JitterModel
from ..photonics import DAY_BACKGROUND_HZ, NIGHT_BACKGROUND_HZ, ClockBase, LinkBudget, ProtocolKind
from ..protocol import CapacityModel

__all__ = ["ConfigError", "SimConfig", "load_config", "dump_config", "parse_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    budget: LinkBudget = field(default_factory=LinkBudget)
    clock: ClockBase = field(default_factory=ClockBase)
    jitter: JitterModel = field(default_factory=JitterModel)
    capacity: CapacityModel = field(default_factory=CapacityModel)
    protocol: ProtocolKind = ProtocolKind.B92
    duration_s: float = 1.0
    seed: int = 20040518
    daylight: bool = False
    transport: str = "in_process"
    cadence: int = 64
    initial_frame_number: int = 0
    single_photon: bool = False
    entropy_file: str | None = None

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 bits")
        if not 1 <= self.cadence <= 16383:
            raise ConfigError("cadence must be between 1 and 16383")
        if not 0 <= self.initial_frame_number < 2**32:
            raise ConfigError("initial_frame_number must be a u32")
        if self.transport != "in_process" and ":" not in self.transport:
            raise ConfigError("transport is 'in_process' or a host:port address")
        object.__setattr__(self, "protocol", ProtocolKind(self.protocol))

    @classmethod
    def create(cls, mu: float = 0.15, daylight: bool = False, background_rate_hz: float | None = None, **kwargs):
        """Build a config, choosing the background rate from ``daylight``
        unless one is given."""
        if background_rate_hz is None:
            background_rate_hz = DAY_BACKGROUND_HZ if daylight else NIGHT_BACKGROUND_HZ
        budget = kwargs.pop("budget", LinkBudget())
        budget = replace(budget, mu=mu, background_rate_hz=background_rate_hz)
        return cls(budget=budget, daylight=daylight, **kwargs)

    def with_mu(self, mu: float) -> SimConfig:
        return replace(self, budget=self.budget.with_mu(mu))

    def replace(self, **changes) -> SimConfig:
        return replace(self, **changes)


_NESTED = {"budget": LinkBudget, "clock": ClockBase, "jitter": JitterModel, "capacity": CapacityModel}
_NESTED_KEYS = {f.name: owner for owner, cls in _NESTED.items() for f in fields(cls)}
_CAPACITY_ALIASES = {"capacity_enabled": "enabled"}
_TOP_KEYS = {f.name for f in fields(SimConfig)} - set(_NESTED)


def _coerce(text: str, like):
    text = text.strip()
    if text.lower() == "none":
        return None
    if isinstance(like, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if isinstance(like, int):
        return int(text, 0)
    if isinstance(like, float):
        return float(text)
    return text


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    base = base or SimConfig()
    nested = {name: {} for name in _NESTED}
    top = {}
    seen_background = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        attr = _CAPACITY_ALIASES.get(key, key)
        if key in _CAPACITY_ALIASES:
            nested["capacity"][attr] = _coerce(value, True)
        elif key in _NESTED_KEYS:
            owner = _NESTED_KEYS[key]
            current = getattr(getattr(base, owner), key)
            if current is None:
                current = 0.0
            nested[owner][key] = _coerce(value, current)
            seen_background |= key == "background_rate_hz"
        elif key in _TOP_KEYS:
            current = getattr(base, key)
            top[key] = _coerce(value, current if current is not None else "")
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if top.get("daylight") and not seen_background:
        nested["budget"]["background_rate_hz"] = DAY_BACKGROUND_HZ
    try:
        parts = {name: replace(getattr(base, name), **vals) for name, vals in nested.items()}
        return replace(base, **parts, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path, base: SimConfig | None = None) -> SimConfig:
    return parse_config(Path(path).read_text(), base)


def dump_config(config: SimConfig) -> str:
    lines = []
    for owner in _NESTED:
        obj = getattr(config, owner)
        for f in fields(obj):
            key = "capacity_enabled" if (owner, f.name) == ("capacity", "enabled") else f.name
            lines.append(f"{key} = {_fmt(getattr(obj, f.name))}")
    for f in fields(SimConfig):
        if f.name in _NESTED:
            continue
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {_fmt(v)}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, ProtocolKind):
        return v.value
    if v is None:
        return "none"
    return repr(v) if isinstance(v, float) else str(v)
