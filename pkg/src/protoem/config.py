"""INI-style run configuration for the CLI.

Sections are ``[encoder]``, ``[stage1]``, ``[stage2]``, ... and ``[train]``.
Unknown sections or keys raise :class:`~protoem.encoder.ConfigError`.

Example::

    [encoder]
    fusion = concat
    [stage2]
    K = 100
    [train]
    lr = 0.005
"""
import configparser
from dataclasses import dataclass, field, fields, replace

from .encoder import ConfigError, EncoderConfig, StageConfig


@dataclass
class TrainConfig:
    epochs: int = 1000
    max_steps: int = 500
    lr: float = 5e-3
    batch_size: int = 8
    weight_decay: float = 1e-4
    count: int = 80
    seed: int = 0


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _coerce(cls, section, items):
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for key, raw in items:
        # configparser lower-cases keys; stage fields K and N are upper case
        name = next((n for n in types if n.lower() == key), None)
        if name is None or name == "stages":
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kind = types[name]
        kind = kind if isinstance(kind, type) else {"int": int, "float": float, "str": str}[kind]
        try:
            out[name] = kind(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from exc
    return out


def parse_config(text, task="flow"):
    """Parse config text into a :class:`RunConfig` for ``task``."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    enc = EncoderConfig(head=task)
    stages = [replace(s) for s in enc.stages]
    train = TrainConfig()
    for section in cp.sections():
        items = cp.items(section)
        if section == "encoder":
            enc = replace(enc, **_coerce(EncoderConfig, section, items))
        elif section == "train":
            train = replace(train, **_coerce(TrainConfig, section, items))
        elif section.startswith("stage") and section[5:].isdigit():
            i = int(section[5:]) - 1
            if not 0 <= i < len(stages):
                raise ConfigError(f"no such stage [{section}]")
            stages[i] = replace(stages[i], **_coerce(StageConfig, section, items))
        else:
            raise ConfigError(f"unknown section [{section}]")
    enc = replace(enc, stages=stages)
    if enc.head != task:
        raise ConfigError(f"config head {enc.head!r} conflicts with task {task!r}")
    enc.validate()
    return RunConfig(encoder=enc, train=train)


def load_config(path, task="flow"):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), task)
