"""Run configuration: TOML sections, dotted overrides, and a stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .env import DbscanConfig, EpisodeConfig, RewardParams
from .neural import NetworkConfig
from .ppo import PpoConfig
from .scene import SceneConfig


class ConfigError(ValueError):
    """Malformed configuration; the message names the offending line or field."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    # indices of the arms that learn; others hold still
    agents: tuple = (0, 1)
    smoothing_window: int = 50
    scene: SceneConfig = field(default_factory=SceneConfig)
    reward: RewardParams = field(default_factory=RewardParams)
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    dbscan: DbscanConfig = field(default_factory=DbscanConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if not self.agents or any(a not in (0, 1) for a in self.agents):
            raise ValueError(f"agents must be a non-empty subset of [0, 1], got {self.agents}")


def _tupleize(v):
    if isinstance(v, list):
        return tuple(_tupleize(x) for x in v)
    return v


def _build(cls, data: dict, path: str):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config field '{where}'")
        default = getattr(cls(), key) if dataclasses.is_dataclass(cls) else None
        if dataclasses.is_dataclass(default):
            if not isinstance(value, dict):
                raise ConfigError(f"config field '{where}' must be a table")
            kwargs[key] = _build(type(default), value, where)
        else:
            if isinstance(default, bool) and not isinstance(value, bool):
                raise ConfigError(f"config field '{where}' must be true/false, got {value!r}")
            if isinstance(default, (int, float)) and not isinstance(default, bool):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"config field '{where}' must be a number, got {value!r}")
                if isinstance(default, int) and not isinstance(value, int):
                    raise ConfigError(f"config field '{where}' must be an integer, got {value!r}")
                if isinstance(default, float):
                    value = float(value)
            kwargs[key] = _tupleize(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{path or '<top>'}': {exc}") from None


def to_dict(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg)))


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override '{item}' is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{item}' has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return key.split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for item in overrides or ():
        keys, value = parse_override(item)
        node = data
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                raise ConfigError(f"override '{item}': unknown section '{k}'")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"override '{item}': unknown field '{'.'.join(keys)}'")
        node[keys[-1]] = value
    return data


def load_config(path: str | Path | None = None, overrides=(), seed: int | None = None) -> RunConfig:
    """Defaults, then the TOML file, then ``--override`` items, then ``seed``."""
    data = to_dict(RunConfig())
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            file_data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        _build(RunConfig, file_data, "")  # validates field names early
        data = _merge(data, file_data)
    data = apply_overrides(data, overrides)
    if seed is not None:
        data["seed"] = int(seed)
    return _build(RunConfig, data, "")


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def dump_toml(cfg: RunConfig) -> str:
    """Render the config as TOML text that ``load_config`` reads back."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, float):
            return repr(v)
        if isinstance(v, (list, tuple)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        return str(v)

    lines: list[str] = []

    def emit(d: dict, prefix: str):
        scalars = {k: v for k, v in d.items() if not isinstance(v, dict)}
        tables = {k: v for k, v in d.items() if isinstance(v, dict)}
        if prefix and scalars:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {fmt(v)}")
        if scalars:
            lines.append("")
        for k, v in tables.items():
            emit(v, f"{prefix}.{k}" if prefix else k)

    emit(to_dict(cfg), "")
    return "\n".join(lines)
