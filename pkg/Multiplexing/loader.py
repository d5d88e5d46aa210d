import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from Multiplexing.analytic import Protocol
from Multiplexing.errors import ConfigError
from Multiplexing.experiments import McSettings
from Multiplexing.netparams import NetworkParams
from Multiplexing.protocols import ProtocolConfig

logger = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
CONFIG_ENV_VAR = "MULTIPLEXING_CONFIG"

DEFAULT_DISTANCE_KM = 50.0

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_UNLIMITED = {"unlimited", "none", "inf", "infinite"}


@dataclass(frozen=True)
class EffectiveConfig:
    """Everything a command needs: link parameters, distance, protocol and Monte Carlo settings."""

    params: NetworkParams = field(default_factory=NetworkParams)
    distance_km: float = DEFAULT_DISTANCE_KM
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    mc: McSettings = field(default_factory=McSettings)


## Create value parsers
def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in _TRUE:
        return True
    if value in _FALSE:
        return False
    raise ValueError(f"expected a boolean (true/false), got {text!r}")


def parse_cutoff(text: str) -> Optional[int]:
    """'unlimited' (or none/inf) means no cutoff; otherwise a positive integer."""
    value = text.strip().lower()
    if value in _UNLIMITED:
        return None
    return int(value)


def parse_optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() == "none" else int(text)


def parse_optional_float(text: str) -> Optional[float]:
    return None if text.strip().lower() == "none" else float(text)


## key -> (section, field, parser)
_KEYS: Dict[str, Tuple[str, str, Callable[[str], Any]]] = {
    "p_out": ("params", "p_out", float),
    "p_fc": ("params", "p_fc", float),
    "alpha_db_per_km": ("params", "alpha_db_per_km", float),
    "t_eg": ("params", "t_eg", float),
    "t_sg": ("params", "t_sg", float),
    "c_fiber": ("params", "c_fiber", float),
    "distance_km": ("link", "distance_km", float),
    "protocol": ("protocol", "protocol", Protocol.parse),
    "n_qubits": ("protocol", "n_qubits", int),
    "p_em": ("protocol", "p_em", float),
    "cutoff": ("protocol", "cutoff", parse_cutoff),
    "distill_delay": ("protocol", "distill_delay", parse_bool),
    "elide_failures": ("protocol", "elide_failures", parse_bool),
    "seed": ("mc", "seed", parse_optional_int),
    "replications": ("mc", "replications", int),
    "successes": ("mc", "successes", int),
    "duration": ("mc", "duration", parse_optional_float),
    "threads": ("mc", "workers", parse_optional_int),
}


def parse_config(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse `key = value` lines into {key: parsed value}.
        - '#' starts a comment, blank lines are skipped
        - keys are case-insensitive
        - unknown or repeated keys and unparseable values raise ConfigError
          naming the line
    """
    values: Dict[str, Any] = {}

    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue

        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw_line.strip()!r}")

        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()

        if key not in _KEYS:
            raise ConfigError(f"{source}:{number}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{source}:{number}: missing value for {key!r}")

        try:
            values[key] = _KEYS[key][2](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{number}: bad value for {key!r}: {e}") from e

    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e

    values = parse_config(text, source=str(path))
    logger.info("loaded %d settings from %s", len(values), path)
    return values


def resolve_config_path(explicit: Optional[str] = None) -> Optional[Path]:
    """--config wins; otherwise the MULTIPLEXING_CONFIG environment variable, if set."""
    if explicit:
        return Path(explicit)
    from_env = os.environ.get(CONFIG_ENV_VAR)
    return Path(from_env) if from_env else None


def build_config(values: Dict[str, Any], base: Optional[EffectiveConfig] = None) -> EffectiveConfig:
    """Apply parsed values on top of `base` (defaults when omitted)."""
    base = base or EffectiveConfig()
    sections: Dict[str, Dict[str, Any]] = {"params": {}, "link": {}, "protocol": {}, "mc": {}}

    for key, value in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown key {key!r}")
        section, name, _ = _KEYS[key]
        sections[section][name] = value

    return EffectiveConfig(
        params=replace(base.params, **sections["params"]),
        distance_km=sections["link"].get("distance_km", base.distance_km),
        protocol=replace(base.protocol, **sections["protocol"]),
        mc=replace(base.mc, **sections["mc"]),
    )


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> EffectiveConfig:
    """
    Effective configuration with the documented precedence:
        command-line overrides > config file > built-in defaults
    `overrides` holds already-parsed values keyed like the config file; only
    the keys present are applied (a None value means none/unlimited).
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(load_config_file(path))
    if overrides:
        values.update(overrides)
    return build_config(values)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Protocol):
        return value.value
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: EffectiveConfig) -> str:
    """Effective configuration in config-file syntax; parse_config() of the output rebuilds it exactly."""
    p, proto, mc = config.params, config.protocol, config.mc
    entries = [
        ("p_out", p.p_out),
        ("p_fc", p.p_fc),
        ("alpha_db_per_km", p.alpha_db_per_km),
        ("t_eg", p.t_eg),
        ("t_sg", p.t_sg),
        ("c_fiber", p.c_fiber),
        ("distance_km", config.distance_km),
        ("protocol", proto.protocol),
        ("n_qubits", proto.n_qubits),
        ("p_em", proto.p_em),
        ("cutoff", "unlimited" if proto.cutoff is None else proto.cutoff),
        ("distill_delay", proto.distill_delay),
        ("elide_failures", proto.elide_failures),
        ("seed", "none" if mc.seed is None else mc.seed),
        ("replications", mc.replications),
        ("successes", mc.successes),
        ("duration", "none" if mc.duration is None else mc.duration),
        ("threads", "none" if mc.workers is None else mc.workers),
    ]

    lines = [f"# multiplexing config (schema {CONFIG_SCHEMA_VERSION})"]
    lines += [f"{key} = {_format_value(value)}" for key, value in entries]
    return "\n".join(lines) + "\n"
