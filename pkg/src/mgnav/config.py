"""INI run configuration with a single defaults table.

Every tunable lives in one of the sections below; a config file may set any
subset of them. Unknown sections or keys are rejected with the offending name
in the message.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .episode import LoopParams, SuiteConfig
from .policy import PolicyParams
from .simworld import SceneParams
from .smg import GraphParams


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


@dataclass(frozen=True)
class SuiteParams:
    n_scenes: int = 20
    episodes_per_scene: int = 5
    goal_kind: str = "instance"
    min_geodesic: float = 4.0
    max_steps: int = 500
    success_radius: float = 1.0
    coverage: float = 0.95

    def validate(self) -> None:
        if self.n_scenes < 1 or self.episodes_per_scene < 1:
            raise ValueError("n_scenes and episodes_per_scene must be >= 1")
        if self.goal_kind not in ("image", "instance"):
            raise ValueError(f"goal_kind must be image or instance, got {self.goal_kind!r}")
        if self.max_steps < 1 or self.success_radius <= 0 or self.min_geodesic < 0:
            raise ValueError("max_steps >= 1, success_radius > 0 and min_geodesic >= 0 required")
        if not 0.0 < self.coverage <= 1.0:
            raise ValueError("coverage must lie in (0, 1]")


@dataclass(frozen=True)
class RunParams:
    seed: int = 0
    output_dir: str = "mgnav-out"
    preset: str = "component"

    def validate(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    scene: SceneParams = field(default_factory=SceneParams)
    graph: GraphParams = field(default_factory=GraphParams)
    policy: PolicyParams = field(default_factory=PolicyParams)
    loop: LoopParams = field(default_factory=LoopParams)
    suite: SuiteParams = field(default_factory=SuiteParams)
    run: RunParams = field(default_factory=RunParams)

    def validate(self) -> None:
        for f in fields(self):
            try:
                getattr(self, f.name).validate()
            except ValueError as e:
                raise ConfigError(f"[{f.name}] {e}") from None
        if self.graph.feature_dim != self.scene.feature_dim:
            raise ConfigError("[graph] feature_dim must equal [scene] feature_dim")

    def suite_config(self) -> SuiteConfig:
        s = self.suite
        seed = self.run.seed
        return SuiteConfig(
            scene_seeds=tuple(range(seed, seed + s.n_scenes)),
            episodes_per_scene=s.episodes_per_scene,
            goal_kind=s.goal_kind,
            min_geodesic=s.min_geodesic,
            max_steps=s.max_steps,
            success_radius=s.success_radius,
            coverage=s.coverage,
            tour_seed=seed,
            adapter_seed=seed,
            scene=replace(self.scene, seed=seed),
            graph=self.graph,
            loop=self.loop,
            policy=self.policy,
        )


SECTIONS = tuple(f.name for f in fields(RunConfig))


def _parse(section: str, key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value)


def defaults_table() -> list[tuple[str, str, str]]:
    """(section, key, default) for every configurable value."""
    cfg = RunConfig()
    rows = []
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        for f in fields(obj):
            rows.append((sec, f.name, _format(getattr(obj, f.name))))
    return rows


def from_mapping(doc: dict[str, dict[str, str]], base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    updates = {}
    for sec, items in doc.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown config section [{sec}]")
        obj = getattr(cfg, sec)
        known = {f.name for f in fields(obj)}
        vals = {}
        for key, raw in items.items():
            if key not in known:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
            vals[key] = _parse(sec, key, raw, getattr(obj, key))
        updates[sec] = replace(obj, **vals)
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None = None) -> RunConfig:
    """Defaults overlaid with ``path`` (when given), validated."""
    if path is None:
        cfg = RunConfig()
        cfg.validate()
        return cfg
    parser = configparser.ConfigParser(interpolation=None, default_section="\0")
    parser.optionxform = str  # keys are case-sensitive
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    return from_mapping({s: dict(parser.items(s)) for s in parser.sections()})


def to_ini(cfg: RunConfig) -> str:
    lines = []
    for sec in SECTIONS:
        lines.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for f in fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def override(cfg: RunConfig, section: str, **values) -> RunConfig:
    """Apply already-typed values (command-line flags) on top of ``cfg``."""
    vals = {k: v for k, v in values.items() if v is not None}
    if not vals:
        return cfg
    obj = getattr(cfg, section)
    bad = set(vals) - {f.name for f in dataclasses.fields(obj)}
    if bad:
        raise ConfigError(f"[{section}] unknown key {sorted(bad)[0]!r}")
    cfg = replace(cfg, **{section: replace(obj, **vals)})
    cfg.validate()
    return cfg
