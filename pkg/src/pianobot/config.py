"""Run configuration: an INI file with sections, every field overridable
from CLI flags, hashed for the reproducibility chain in result rows."""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace

from . import metrics
from .domain_rand import DRSpreads
from .errors import ConfigError
from .policy.sac import TrainerConfig, desk_config
from .reward import RewardConfig, ToleranceShape


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    song: str = "c_major_scale"
    mode: str = "hybrid"
    c_dr: float = 0.0
    averaging: str = metrics.MICRO
    workers: int = 0              # 0 = use all available cores
    gap: float = 1.0              # plant-proxy perturbation scale
    forward_positions: bool = False
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=desk_config)
    spreads: DRSpreads = field(default_factory=DRSpreads)

    def effective_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)


_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


def _coerce(raw: str, like):
    if isinstance(like, bool):
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        if isinstance(like, tuple):
            return tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(
            f"expected a {type(like).__name__}, got {raw!r}") from None
    return raw


def _apply_section(obj, section):
    """Return obj with fields replaced from a configparser section."""
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} "
                              f"(valid: {sorted(known)})")
        current = known[key]
        if current is None:
            # optional float fields (e.g. early_stop_f1)
            try:
                updates[key] = float(raw)
            except ValueError:
                raise ConfigError(
                    f"expected a float for {key!r}, got {raw!r}") from None
        else:
            updates[key] = _coerce(raw, current)
    return replace(obj, **updates)


def load_config(path=None) -> RunConfig:
    """Load an INI run config; missing file with explicit path is an error,
    path=None returns pure defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    known_sections = {"run", "reward", "tolerance", "trainer", "dr"}
    extra = set(parser.sections()) - known_sections
    if extra:
        raise ConfigError(f"{path}: unknown sections {sorted(extra)}")
    if parser.has_section("run"):
        cfg = _apply_section(cfg, parser["run"])
    reward_cfg = cfg.reward
    if parser.has_section("reward"):
        reward_cfg = _apply_section(reward_cfg, parser["reward"])
    if parser.has_section("tolerance"):
        shape = _apply_section(reward_cfg.shape, parser["tolerance"])
        try:
            shape.validate()
        except ValueError as exc:
            raise ConfigError(f"{path}: [tolerance] {exc}") from None
        reward_cfg = replace(reward_cfg, shape=shape)
    trainer_cfg = cfg.trainer
    if parser.has_section("trainer"):
        trainer_cfg = _apply_section(trainer_cfg, parser["trainer"])
        trainer_cfg.validate()
    spreads = cfg.spreads
    if parser.has_section("dr"):
        spreads = _apply_section(spreads, parser["dr"])
        spreads.validate()
    return replace(cfg, reward=reward_cfg, trainer=trainer_cfg,
                   spreads=spreads)


def _canonical_lines(prefix, obj):
    out = []
    for f in sorted(fields(obj), key=lambda f: f.name):
        v = getattr(obj, f.name)
        if hasattr(v, "__dataclass_fields__"):
            out.extend(_canonical_lines(f"{prefix}{f.name}.", v))
        else:
            out.append(f"{prefix}{f.name}={v!r}")
    return out


def config_hash(cfg: RunConfig) -> str:
    text = "\n".join(_canonical_lines("", cfg))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
