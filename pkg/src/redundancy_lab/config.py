"""Simulator configuration files (TOML).

Example::

    seed = 0

    [world]
    channels = 16
    noise = 0.05

    [[world.tasks]]
    name = "gqa-sim"
    category = "General"
    channels = "0-5"          # inclusive range, or a list of ints
    classes = 4

    [encoder_defaults]
    tokens = 4
    dim = 8
    frozen = true

    [[encoders]]
    name = "CLIP"
    channels = "0-7"

    [[encoders]]
    name = "CLIP-copy"
    clone_of = "CLIP"         # same channels and identical weights

    [fusion]
    strategy = "channel_concat"   # sequence_append | channel_concat | shared_mlp | cross_attention

    [head]
    hidden = [32]

    [train]
    lr = 0.1
    steps = 3000
    encoder_dropout = 0.3

    [eval]
    samples = 4000
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import PreconditionError, RedundancyLabError
from .simkit import (
    EncoderSpec,
    FusionSpec,
    HeadSpec,
    MultiEncoderModel,
    SimWorld,
    make_encoder,
    make_task,
)
from .train import TrainConfig

WORLD_STREAM = 1
ENCODER_STREAM = 2
INIT_STREAM = 3

BUNDLED_CONFIGS = ("clone", "specialist", "fusion-conflict")


class ConfigError(RedundancyLabError):
    pass


@dataclass(frozen=True)
class SimConfig:
    name: str
    seed: int
    world: dict[str, Any]
    encoders: list[dict[str, Any]]
    fusion: FusionSpec
    head: HeadSpec
    train: TrainConfig
    eval_samples: int = 4000
    raw: dict[str, Any] = field(default_factory=dict, compare=False)

    def with_seed(self, seed: int) -> SimConfig:
        train = TrainConfig(**{f.name: getattr(self.train, f.name) for f in fields(TrainConfig)} | {"seed": seed})
        return SimConfig(self.name, seed, self.world, self.encoders, self.fusion, self.head, train,
                         self.eval_samples, self.raw)


def parse_channels(value: Any) -> list[int]:
    """``[0, 1, 4]``, ``"0-7"`` or ``"0-3,8,10-11"`` -> list of ints."""
    if isinstance(value, list):
        if not all(isinstance(v, int) for v in value):
            raise ConfigError(f"channel list must hold integers: {value!r}")
        return list(value)
    if isinstance(value, int):
        return [value]
    if not isinstance(value, str):
        raise ConfigError(f"cannot read channels from {value!r}")
    out: list[int] = []
    for part in value.split(","):
        part = part.strip()
        lo, sep, hi = part.partition("-")
        try:
            out.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
        except ValueError:
            raise ConfigError(f"bad channel spec {part!r}") from None
    return out


def _section(doc: dict, key: str) -> dict:
    value = doc.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _build(cls, values: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"[{where}] has unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, PreconditionError) as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def parse_config(doc: dict[str, Any], name: str = "config") -> SimConfig:
    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    world = _section(doc, "world")
    if not world.get("tasks"):
        raise ConfigError("[world] needs at least one [[world.tasks]] entry")
    encoders = doc.get("encoders")
    if not isinstance(encoders, list) or not encoders:
        raise ConfigError("config needs at least one [[encoders]] entry")
    head = _section(doc, "head")
    if "hidden" in head:
        head = dict(head, hidden=tuple(head["hidden"]))
    train = dict(_section(doc, "train"), seed=seed)
    samples = _section(doc, "eval").get("samples", 4000)
    if not isinstance(samples, int) or samples < 1:
        raise ConfigError("[eval] samples must be a positive integer")
    defaults = _section(doc, "encoder_defaults")
    merged = [dict(defaults, **e) for e in encoders]
    return SimConfig(
        name=str(doc.get("name", name)),
        seed=seed,
        world=world,
        encoders=merged,
        fusion=_build(FusionSpec, _section(doc, "fusion"), "fusion"),
        head=_build(HeadSpec, head, "head"),
        train=_build(TrainConfig, train, "train"),
        eval_samples=samples,
        raw=doc,
    )


def load_config(path_or_name: str | Path) -> SimConfig:
    """Read a config file, or a bundled config by name (see ``BUNDLED_CONFIGS``)."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in BUNDLED_CONFIGS:
        path = Path(str(resources.files("redundancy_lab") / "configs" / f"{path_or_name}.toml"))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path_or_name}: {exc}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, name=path.stem)


def build_world(cfg: SimConfig) -> SimWorld:
    rng = np.random.default_rng([cfg.seed, WORLD_STREAM])
    w = cfg.world
    try:
        channels = int(w.get("channels", 16))
        tasks = tuple(
            make_task(t["name"], t["category"], parse_channels(t["channels"]), int(t.get("classes", 4)), rng)
            for t in w["tasks"]
        )
        return SimWorld(channels, tasks, float(w.get("noise", 0.05)))
    except KeyError as exc:
        raise ConfigError(f"[[world.tasks]] entry is missing {exc}") from None
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from None


def build_encoders(cfg: SimConfig, channels: int) -> list[EncoderSpec]:
    built: dict[str, EncoderSpec] = {}
    out = []
    for k, e in enumerate(cfg.encoders):
        name = e.get("name")
        if not name:
            raise ConfigError(f"encoder #{k} has no name")
        if "clone_of" in e:
            src = built.get(e["clone_of"])
            if src is None:
                raise ConfigError(f"encoder {name!r} clones unknown or later encoder {e['clone_of']!r}")
            spec = EncoderSpec(name, src.visible_channels, src.tokens, src.dim, src.weights.copy(),
                               bool(e.get("frozen", src.frozen)))
        else:
            if "channels" not in e:
                raise ConfigError(f"encoder {name!r} needs channels or clone_of")
            rng = np.random.default_rng([cfg.seed, ENCODER_STREAM, k])
            try:
                spec = make_encoder(
                    name, parse_channels(e["channels"]), channels, rng,
                    tokens=int(e.get("tokens", 4)), dim=int(e.get("dim", 8)),
                    frozen=bool(e.get("frozen", True)), jitter=float(e.get("jitter", 0.5)),
                )
            except PreconditionError as exc:
                raise ConfigError(str(exc)) from None
        built[name] = spec
        out.append(spec)
    return out


def build_model(cfg: SimConfig) -> tuple[SimWorld, MultiEncoderModel]:
    world = build_world(cfg)
    encoders = build_encoders(cfg, world.channels)
    try:
        model = MultiEncoderModel.build(world, encoders, cfg.fusion, cfg.head,
                                        np.random.default_rng([cfg.seed, INIT_STREAM]))
    except PreconditionError as exc:
        raise ConfigError(str(exc)) from None
    return world, model
