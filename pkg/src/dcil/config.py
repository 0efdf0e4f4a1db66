"""Hierarchical run configuration: defaults, JSON files and ``section.key=value`` overrides."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from dcil.env import EnvConfig
from dcil.rrt import RrtLimits
from dcil.sac import SacConfig
from dcil.trainer import TrainConfig

CONFIG_FORMAT = "dcil-config"
CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EnvSection:
    maze: str = "canonical"
    speed: float = 0.5
    dt: float = 0.1
    u_max: float = 1.0
    epsilon_success: float = 0.2

    def env_config(self) -> EnvConfig:
        return EnvConfig(self.speed, self.dt, self.u_max, self.epsilon_success)


@dataclass(frozen=True)
class RrtSection:
    max_nodes: int = 50_000
    goal_bias: float = 0.1
    expand_steps: int = 10
    seed: int | None = None         # None: use the master seed

    def limits(self) -> RrtLimits:
        return RrtLimits(self.max_nodes, self.goal_bias, self.expand_steps)


@dataclass(frozen=True)
class SkillsSection:
    epsilon_dist: float | None = None   # None: arc length / n_skills
    n_skills: int = 20
    beta: float = 1.25

    def __post_init__(self):
        if self.epsilon_dist is not None and not (math.isfinite(self.epsilon_dist)
                                                  and self.epsilon_dist > 0):
            raise ValueError("skills.epsilon_dist must be positive")
        if self.n_skills < 1:
            raise ValueError("skills.n_skills must be >= 1")
        if not self.beta > 1.0:
            raise ValueError("skills.beta must exceed 1")


@dataclass(frozen=True)
class ReplaySection:
    capacity: int = 1_000_000
    warmup: int = 1_000

    def __post_init__(self):
        if self.capacity < 1 or self.warmup < 0:
            raise ValueError("replay.capacity must be positive and replay.warmup >= 0")


@dataclass(frozen=True)
class TrainerSection:
    budget: int = 150_000
    eval_period: int = 2_000
    disable_bonus: bool = False
    disable_overshoot: bool = False
    stop_on_solve: bool = False
    checkpoints: bool = True

    def __post_init__(self):
        if self.budget < 0 or self.eval_period < 1:
            raise ValueError("trainer.budget must be >= 0 and trainer.eval_period >= 1")


@dataclass(frozen=True)
class SacSection:
    hidden: tuple[int, ...] = SacConfig.hidden
    gamma: float = SacConfig.gamma
    lr: float = SacConfig.lr
    tau: float = SacConfig.tau
    batch_size: int = SacConfig.batch_size
    alpha: float = SacConfig.alpha
    adaptive_alpha: bool = SacConfig.adaptive_alpha
    target_entropy: float = SacConfig.target_entropy
    divergence_threshold: float = SacConfig.divergence_threshold

    def sac_config(self) -> SacConfig:
        return SacConfig(**{f.name: getattr(self, f.name) for f in fields(self)})


SECTIONS = {
    "env": EnvSection,
    "rrt": RrtSection,
    "skills": SkillsSection,
    "sac": SacSection,
    "replay": ReplaySection,
    "trainer": TrainerSection,
}

ABLATIONS = {
    "full": (False, False),
    "no-bonus": (True, False),
    "no-overshoot": (False, True),
    "no-both": (True, True),
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    env: EnvSection = field(default_factory=EnvSection)
    rrt: RrtSection = field(default_factory=RrtSection)
    skills: SkillsSection = field(default_factory=SkillsSection)
    sac: SacSection = field(default_factory=SacSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    trainer: TrainerSection = field(default_factory=TrainerSection)

    @property
    def demo_seed(self) -> int:
        return self.seed if self.rrt.seed is None else self.rrt.seed

    def validate(self) -> RunConfig:
        """Build every module config once so that bad values fail early."""
        try:
            self.env.env_config()
            self.rrt.limits()
            self.sac.sac_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def train_config(self) -> TrainConfig:
        t = self.trainer
        return TrainConfig(budget=t.budget, eval_period=t.eval_period, seed=self.seed,
                           warmup=self.replay.warmup, buffer_capacity=self.replay.capacity,
                           disable_bonus=t.disable_bonus, disable_overshoot=t.disable_overshoot,
                           env=self.env.env_config(), sac=self.sac.sac_config(),
                           stop_on_solve=t.stop_on_solve)

    def with_ablation(self, name: str) -> RunConfig:
        try:
            bonus_off, overshoot_off = ABLATIONS[name]
        except KeyError:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}") from None
        return replace(self, trainer=replace(self.trainer, disable_bonus=bonus_off,
                                             disable_overshoot=overshoot_off))

    def to_dict(self) -> dict:
        d = {"format": CONFIG_FORMAT, "version": CONFIG_VERSION}
        d.update(asdict(self))
        d["sac"]["hidden"] = list(self.sac.hidden)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _coerce(cls, name: str, value: Any, where: str):
    """Convert a JSON or command-line value to the type of field ``name`` of ``cls``."""
    default = next(f for f in fields(cls) if f.name == name).default
    if name == "hidden":
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}") from None
    if value is None or (isinstance(value, str) and value.lower() in ("none", "null")):
        if default is None:
            return None
        raise ConfigError(f"{where}: value required")
    kind = type(default) if default is not None else (
        float if name == "epsilon_dist" else int)
    try:
        if kind is bool:
            if isinstance(value, str):
                low = value.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError
            if isinstance(value, (bool, int)):
                return bool(value)
            raise ValueError
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {value!r} as {kind.__name__}") from None


def apply_mapping(cfg: RunConfig, data: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key in ("format", "version"):
            continue
        if key == "seed":
            updates["seed"] = _coerce(RunConfig, "seed", value, f"{source}: seed")
            continue
        cls = SECTIONS.get(key)
        if cls is None:
            raise ConfigError(f"{source}: unknown section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{source}: section {key!r} must be an object")
        known = {f.name for f in fields(cls)}
        section = getattr(cfg, key)
        changes = {}
        for k, v in value.items():
            if k not in known:
                raise ConfigError(f"{source}: unknown key {key}.{k}")
            changes[k] = _coerce(cls, k, v, f"{source}: {key}.{k}")
        try:
            updates[key] = replace(section, **changes)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    return replace(cfg, **updates)


def load_config_file(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(data, dict) or data.get("format", CONFIG_FORMAT) != CONFIG_FORMAT:
        raise ConfigError(f"{path}: not a run configuration")
    return apply_mapping(base or RunConfig(), data, str(path))


def apply_overrides(cfg: RunConfig, items: list[str]) -> RunConfig:
    """Apply ``section.key=value`` strings in order."""
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        if key.strip() == "seed":
            cfg = apply_mapping(cfg, {"seed": value}, "--set")
            continue
        section, dot, name = key.strip().partition(".")
        if not dot:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        cfg = apply_mapping(cfg, {section: {name: value}}, "--set")
    return cfg
