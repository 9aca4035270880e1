"""Experiment configuration: a line-oriented INI schema with strict validation.

Every command reads one file. Unknown sections or keys are rejected with the
line number they appear on, and parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field
from typing import Optional

SCHEMA_VERSION = 1

__all__ = [
    "ConfigError", "ExperimentConfig", "TrainConfig", "ProbeConfig",
    "load_config", "parse_config", "serialize_config", "SCHEMA_VERSION",
]


class ConfigError(Exception):
    """Invalid configuration. Carries file path and 1-based line number."""

    def __init__(self, message: str, path: str = "<config>", line: int = 0):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def __str__(self) -> str:
        if self.line:
            return f"{self.path}:{self.line}: {self.message}"
        return f"{self.path}: {self.message}"


# ---------------------------------------------------------------------------
# Typed blocks. Defaults here are the single source of truth.

@dataclass
class SimBlock:
    grid_height: int = 11
    grid_width: int = 11
    object_count: int = 8
    category_count: int = 12
    wall_count: int = 2
    surface_count: int = 2
    max_steps: int = 100


@dataclass
class TaskBlock:
    kind: str = "objectnav"
    shuffle_count: int = 1
    open_toggle_count: int = 0
    goal_categories: Optional[tuple[int, ...]] = None
    min_start_distance: float = 0.5
    start_in_view: bool = False
    train_seeds: tuple[int, ...] = tuple(range(0, 64))
    val_seeds: tuple[int, ...] = tuple(range(10_000, 10_032))
    test_seeds: tuple[int, ...] = tuple(range(20_000, 20_100))


@dataclass
class AgentBlock:
    architecture: str = "objectnav"     # objectnav | pointnav | rearrange | zeroshot
    backbone: str = "stub-informative"
    channels: int = 64
    spatial: int = 7
    pooling: str = "none"               # none | avg1 | avg3 | attn
    weights_file: Optional[str] = None  # file-weights backbones
    feature_dir: Optional[str] = None   # external-pretrained feature stores


@dataclass
class TrainConfig:
    learner: str = "ppo"                # ppo | imitation
    total_steps: int = 100_000
    workers: int = 8
    rollout_length: int = 128
    lr: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.1
    epochs: int = 4
    minibatches: int = 2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    seed: int = 1
    eval_every: int = 50                # updates between validation passes
    eval_episodes: int = 20

    def validate(self) -> None:
        if self.learner not in ("ppo", "imitation"):
            raise ConfigError(f"train.learner must be ppo or imitation, got {self.learner!r}")
        positive = ["total_steps", "workers", "rollout_length", "lr", "gamma",
                    "gae_lambda", "clip_eps", "epochs", "minibatches",
                    "eval_every", "eval_episodes"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.entropy_coef < 0 or self.value_coef < 0:
            raise ConfigError("train coefficients must be >= 0")


@dataclass
class ProbeConfig:
    train_scenes: int = 60
    val_scenes: int = 15
    test_scenes: int = 15
    train_frames: int = 100
    eval_frames: int = 50
    batch_size: int = 128
    lr: float = 0.001
    epochs: int = 500
    patience: int = 20
    seed: int = 1
    tasks: tuple[str, ...] = ("presence", "localization", "free_space", "reachability")
    poolings: tuple[str, ...] = ("avg1", "avg3")


@dataclass
class SweepBlock:
    backbones: tuple[str, ...] = ("stub-informative", "stub-noise")


@dataclass
class ZeroshotBlock:
    seen: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7)
    unseen: tuple[int, ...] = (8, 9, 10, 11)
    episodes: int = 500


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    out_dir: Optional[str] = None   # default: runs/<name>
    sim: SimBlock = field(default_factory=SimBlock)
    task: TaskBlock = field(default_factory=TaskBlock)
    agent: AgentBlock = field(default_factory=AgentBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    zeroshot: ZeroshotBlock = field(default_factory=ZeroshotBlock)

    def validate(self) -> None:
        if self.sim.grid_height < 5 or self.sim.grid_width < 5:
            raise ConfigError("sim grid must be at least 5x5")
        if self.task.kind not in ("objectnav", "pointnav", "rearrange"):
            raise ConfigError(f"task.kind {self.task.kind!r} unknown")
        if self.agent.architecture not in ("objectnav", "pointnav", "rearrange", "zeroshot"):
            raise ConfigError(f"agent.architecture {self.agent.architecture!r} unknown")
        if self.agent.pooling not in ("none", "avg1", "avg3", "attn"):
            raise ConfigError(f"agent.pooling {self.agent.pooling!r} unknown")
        self.train.validate()
        for t in self.probe.tasks:
            if t not in ("presence", "localization", "free_space", "reachability"):
                raise ConfigError(f"probe task {t!r} unknown")
        for p in self.probe.poolings:
            if p not in ("avg1", "avg3", "attn"):
                raise ConfigError(f"probe pooling {p!r} unknown")
        overlap = set(self.zeroshot.seen) & set(self.zeroshot.unseen)
        if overlap:
            raise ConfigError(f"zeroshot seen/unseen overlap: {sorted(overlap)}")

    def validate_zeroshot(self) -> None:
        """Extra checks for the zero-shot command, which uses both blocks."""
        cats = set(range(self.sim.category_count))
        if not set(self.zeroshot.seen) | set(self.zeroshot.unseen) <= cats:
            raise ConfigError("zeroshot categories exceed sim.category_count")
        if not self.zeroshot.seen or not self.zeroshot.unseen:
            raise ConfigError("zeroshot needs nonempty seen and unseen sets")
        overlap = set(self.zeroshot.seen) & set(self.zeroshot.unseen)
        if overlap:
            raise ConfigError(f"zeroshot seen/unseen overlap: {sorted(overlap)}")


# ---------------------------------------------------------------------------
# Field codecs. kind -> (parse(str) -> value, serialize(value) -> str)

def _parse_seeds(text: str) -> tuple[int, ...]:
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)\s*:\s*(-?\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi <= lo:
            raise ValueError(f"empty seed range {text!r}")
        return tuple(range(lo, hi))
    return tuple(int(p) for p in text.split(","))


def _fmt_seeds(seeds: tuple[int, ...]) -> str:
    if len(seeds) > 1 and seeds == tuple(range(seeds[0], seeds[-1] + 1)):
        return f"{seeds[0]}:{seeds[-1] + 1}"
    return ",".join(str(s) for s in seeds)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CODECS = {
    "int": (int, str),
    "float": (float, repr),
    "str": (lambda s: s.strip(), str),
    "bool": (_parse_bool, lambda b: "true" if b else "false"),
    "int_list": (lambda s: tuple(int(p) for p in s.split(",")),
                 lambda v: ",".join(str(x) for x in v)),
    "str_list": (lambda s: tuple(p.strip() for p in s.split(",") if p.strip()),
                 lambda v: ",".join(v)),
    "seeds": (_parse_seeds, _fmt_seeds),
}

# (section, key) -> (attr path, codec kind, optional?). Order fixes the
# canonical serialization.
_SCHEMA: dict[str, dict[str, tuple[str, str, bool]]] = {
    "experiment": {
        "schema_version": ("", "int", False),
        "name": ("name", "str", False),
        "out_dir": ("out_dir", "str", True),
    },
    "sim": {
        "grid_height": ("sim.grid_height", "int", False),
        "grid_width": ("sim.grid_width", "int", False),
        "object_count": ("sim.object_count", "int", False),
        "category_count": ("sim.category_count", "int", False),
        "wall_count": ("sim.wall_count", "int", False),
        "surface_count": ("sim.surface_count", "int", False),
        "max_steps": ("sim.max_steps", "int", False),
    },
    "task": {
        "kind": ("task.kind", "str", False),
        "shuffle_count": ("task.shuffle_count", "int", False),
        "open_toggle_count": ("task.open_toggle_count", "int", False),
        "goal_categories": ("task.goal_categories", "int_list", True),
        "min_start_distance": ("task.min_start_distance", "float", False),
        "start_in_view": ("task.start_in_view", "bool", False),
        "train_seeds": ("task.train_seeds", "seeds", False),
        "val_seeds": ("task.val_seeds", "seeds", False),
        "test_seeds": ("task.test_seeds", "seeds", False),
    },
    "agent": {
        "architecture": ("agent.architecture", "str", False),
        "backbone": ("agent.backbone", "str", False),
        "channels": ("agent.channels", "int", False),
        "spatial": ("agent.spatial", "int", False),
        "pooling": ("agent.pooling", "str", False),
        "weights_file": ("agent.weights_file", "str", True),
        "feature_dir": ("agent.feature_dir", "str", True),
    },
    "train": {
        "learner": ("train.learner", "str", False),
        "total_steps": ("train.total_steps", "int", False),
        "workers": ("train.workers", "int", False),
        "rollout_length": ("train.rollout_length", "int", False),
        "lr": ("train.lr", "float", False),
        "gamma": ("train.gamma", "float", False),
        "gae_lambda": ("train.gae_lambda", "float", False),
        "clip_eps": ("train.clip_eps", "float", False),
        "epochs": ("train.epochs", "int", False),
        "minibatches": ("train.minibatches", "int", False),
        "entropy_coef": ("train.entropy_coef", "float", False),
        "value_coef": ("train.value_coef", "float", False),
        "seed": ("train.seed", "int", False),
        "eval_every": ("train.eval_every", "int", False),
        "eval_episodes": ("train.eval_episodes", "int", False),
    },
    "probe": {
        "train_scenes": ("probe.train_scenes", "int", False),
        "val_scenes": ("probe.val_scenes", "int", False),
        "test_scenes": ("probe.test_scenes", "int", False),
        "train_frames": ("probe.train_frames", "int", False),
        "eval_frames": ("probe.eval_frames", "int", False),
        "batch_size": ("probe.batch_size", "int", False),
        "lr": ("probe.lr", "float", False),
        "epochs": ("probe.epochs", "int", False),
        "patience": ("probe.patience", "int", False),
        "seed": ("probe.seed", "int", False),
        "tasks": ("probe.tasks", "str_list", False),
        "poolings": ("probe.poolings", "str_list", False),
    },
    "sweep": {
        "backbones": ("sweep.backbones", "str_list", False),
    },
    "zeroshot": {
        "seen": ("zeroshot.seen", "int_list", False),
        "unseen": ("zeroshot.unseen", "int_list", False),
        "episodes": ("zeroshot.episodes", "int", False),
    },
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Map (section, key) to the 1-based line it is defined on."""
    out: dict[tuple[str, str], int] = {}
    section = ""
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            out[(section, "")] = i
        else:
            m = re.match(r"\s*([^=:#;\s][^=:]*?)\s*[=:]", line)
            if m and section:
                out[(section, m.group(1).strip())] = i
    return out


def _set_attr(cfg: ExperimentConfig, path: str, value) -> None:
    parts = path.split(".")
    obj = cfg
    for p in parts[:-1]:
        obj = getattr(obj, p)
    setattr(obj, parts[-1], value)


def _get_attr(cfg: ExperimentConfig, path: str):
    obj = cfg
    for p in path.split("."):
        obj = getattr(obj, p)
    return obj


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    lines = _key_lines(text)
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", 0) or 0
        raise ConfigError(str(exc.message if hasattr(exc, "message") else exc),
                          path, line) from exc

    cfg = ExperimentConfig()
    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section", path, 1)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]", path,
                              lines.get((section, ""), 0))
        schema = _SCHEMA[section]
        for key, raw in parser.items(section):
            line = lines.get((section, key), 0)
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, line)
            attr, kind, optional = schema[key]
            if optional and raw.strip() == "":
                value = None
            else:
                try:
                    value = _CODECS[kind][0](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {exc}",
                                      path, line) from exc
            if key == "schema_version":
                if value != SCHEMA_VERSION:
                    raise ConfigError(
                        f"schema_version {value} unsupported (expected {SCHEMA_VERSION})",
                        path, line)
                continue
            _set_attr(cfg, attr, value)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(exc.message, path, 0) from None
    return cfg


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(c)) == c."""
    out = io.StringIO()
    for section, schema in _SCHEMA.items():
        out.write(f"[{section}]\n")
        for key, (attr, kind, optional) in schema.items():
            if key == "schema_version":
                out.write(f"schema_version = {SCHEMA_VERSION}\n")
                continue
            value = _get_attr(cfg, attr)
            if value is None:
                if not optional:
                    raise ConfigError(f"{section}.{key} unset")
                continue
            out.write(f"{key} = {_CODECS[kind][1](value)}\n")
        out.write("\n")
    return out.getvalue()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from exc
    return parse_config(text, path)
