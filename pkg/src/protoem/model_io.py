"""Encoder checkpoints: parameters plus the configuration as scalar tensors."""
from dataclasses import fields

import numpy as np

from .encoder import FUSIONS, ConfigError, Encoder, EncoderConfig, StageConfig
from .numerics import checkpoint

HEADS = ("flow", "depth")
SIMILARITIES = ("dot", "cosine")
_ENUMS = {"head": HEADS, "fusion": FUSIONS, "similarity": SIMILARITIES}
# integers above this do not survive the fp32 payload
_FP32_EXACT = 2 ** 24


def config_tensors(cfg):
    out = {}
    for f in fields(EncoderConfig):
        if f.name == "stages":
            continue
        value = getattr(cfg, f.name)
        if f.name in _ENUMS:
            value = _ENUMS[f.name].index(value)
        if not 0 <= value < _FP32_EXACT:
            raise ConfigError(f"{f.name}={value} cannot be stored exactly")
        out[f"config.{f.name}"] = np.array(float(value))
    out["config.n_stages"] = np.array(float(len(cfg.stages)))
    for i, s in enumerate(cfg.stages):
        for f in fields(StageConfig):
            out[f"config.stage{i + 1}.{f.name}"] = np.array(float(getattr(s, f.name)))
    return out


def config_from_tensors(tensors):
    def get(name):
        try:
            return int(tensors[name])
        except KeyError:
            raise checkpoint.CheckpointError(f"missing {name}") from None

    kw = {}
    for f in fields(EncoderConfig):
        if f.name == "stages":
            continue
        v = get(f"config.{f.name}")
        kw[f.name] = _ENUMS[f.name][v] if f.name in _ENUMS else v
    stages = [StageConfig(**{f.name: get(f"config.stage{i + 1}.{f.name}") for f in fields(StageConfig)})
              for i in range(get("config.n_stages"))]
    return EncoderConfig(stages=stages, **kw)


def save_model(path, model):
    tensors = config_tensors(model.cfg)
    tensors.update({k: v.data for k, v in model.named_parameters().items()})
    checkpoint.save(path, tensors)


def load_model(path):
    tensors = checkpoint.load(path)
    cfg = config_from_tensors(tensors)
    model = Encoder(cfg)
    model.load_state({k: v for k, v in tensors.items() if not k.startswith("config.")}, strict=True)
    return model
