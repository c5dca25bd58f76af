"""Scenario configuration: one INI-style file with a section per stage."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


FORECASTER_KINDS = ("graph_linear", "historical_average", "true_demand", "none")


@dataclass
class ScenarioConfig:
    # [paths]
    zones: str = "zones.csv"
    demographics: str = "demographics.csv"
    trips: str = "trips.csv"
    output_dir: str = "out"
    # [grid]
    delta: int = 300
    lags: int = 12
    # [loss]
    lam: float = 0.0
    gamma: float = 0.0
    # [forecaster]
    forecaster: str = "graph_linear"
    max_iter: int = 5000
    # [mivr]
    alpha: float = 1.0
    beta: float = 100.0
    horizon: int = 6
    use_weights: bool = True
    max_match_distance: float = -1.0  # miles; negative = speed * max_wait
    # [sim]
    fleet_size: int = 2000
    match_epoch: float = 30.0
    rebalance_epoch: float = 300.0
    speed: float = 6.0
    max_wait: float = 600.0
    zone_radius: float = 300.0
    sim_day: int = -1  # day index within the trip data; negative counts from the end
    sim_start: float = 0.0  # seconds after midnight
    sim_duration: float = 86_400.0
    # [run]
    seed: int = 0
    base_dir: str = dataclasses.field(default=".", metadata={"internal": True})

    SECTIONS = {
        "paths": ("zones", "demographics", "trips", "output_dir"),
        "grid": ("delta", "lags"),
        "loss": ("lam", "gamma"),
        "forecaster": ("forecaster", "max_iter"),
        "mivr": ("alpha", "beta", "horizon", "use_weights", "max_match_distance"),
        "sim": ("fleet_size", "match_epoch", "rebalance_epoch", "speed", "max_wait", "zone_radius", "sim_day",
                "sim_start", "sim_duration"),
        "run": ("seed",),
    }

    def validate(self) -> "ScenarioConfig":
        if self.forecaster not in FORECASTER_KINDS:
            raise ConfigError(f"forecaster must be one of {FORECASTER_KINDS}, got {self.forecaster!r}")
        if self.delta <= 0 or self.lags < 1 or self.horizon < 1 or self.max_iter < 1:
            raise ConfigError("delta, lags, horizon and max_iter must be positive")
        if self.lam < 0 or self.gamma < 0 or self.alpha < 0 or self.beta < 0:
            raise ConfigError("lam, gamma, alpha and beta must be nonnegative")
        if self.fleet_size < 1 or self.speed <= 0 or self.max_wait <= 0 or self.sim_duration <= 0:
            raise ConfigError("fleet_size, speed, max_wait and sim_duration must be positive")
        if self.rebalance_epoch % self.match_epoch:
            raise ConfigError("rebalance_epoch must be a multiple of match_epoch")
        if not 0 <= self.sim_start < 86_400:
            raise ConfigError("sim_start must fall within one day")
        return self

    def path(self, key: str) -> Path:
        p = Path(getattr(self, key))
        return p if p.is_absolute() else Path(self.base_dir) / p

    def check_files(self) -> None:
        for key in ("zones", "demographics", "trips"):
            if not self.path(key).is_file():
                raise ConfigError(f"{key} file not found: {self.path(key)}")

    def match_distance_miles(self) -> float:
        if self.max_match_distance >= 0:
            return self.max_match_distance
        return self.speed * self.max_wait / 1609.344

    def public_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.metadata.get("internal")}

    def digest(self) -> str:
        blob = json.dumps(self.public_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def dumps(self) -> str:
        lines = []
        for section, keys in self.SECTIONS.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_fmt(getattr(self, k))}" for k in keys]
            lines.append("")
        return "\n".join(lines)

    def with_overrides(self, **kw) -> "ScenarioConfig":
        cfg = dataclasses.replace(self)
        for key, value in kw.items():
            if value is None:
                continue
            set_field(cfg, key, value)
        return cfg.validate()


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def set_field(cfg: ScenarioConfig, key: str, raw) -> None:
    if key not in _FIELDS or _FIELDS[key].metadata.get("internal"):
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    try:
        if isinstance(default, bool):
            value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(default, int):
            value = int(raw)
        elif isinstance(default, float):
            value = float(raw)
            if math.isnan(value):
                raise ValueError("NaN")
        else:
            value = str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    setattr(cfg, key, value)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = ScenarioConfig(base_dir=str(path.parent))
    for section in parser.sections():
        if section not in ScenarioConfig.SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in ScenarioConfig.SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            set_field(cfg, key, raw)
    return cfg.validate()
