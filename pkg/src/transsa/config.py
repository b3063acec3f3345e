"""Run configuration and the flat ``key = value`` config-file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


@dataclass
class SynthConfig:
    n_labels: int = 5  # including NA at index 0
    n_train_bags: int = 2000
    n_test_bags: int = 500
    bag_size_min: int = 3
    bag_size_max: int = 3
    noise_rate: float = 0.5
    n_filler: int = 60
    markers_per_relation: int = 3
    n_entities: int = 40  # surface-name pool; ids are unique per bag
    noise_placement: str = "outside"  # outside | between
    len_min: int = 6
    len_max: int = 14


@dataclass
class TrainConfig:
    # training hyperparameters
    d_w: int = 50
    d_p: int = 5
    h: int = 8
    batch_size: int = 100
    lr0: float = 0.05
    dropout_p: float = 0.5
    # model shape
    d_model: int = 64
    d_ff_mult: int = 3
    n_blocks: int = 1
    input_projection: str = "auto"  # auto | on | off
    ln_eps: float = 1e-6
    max_len: int = 100
    clip_radius: int = 0  # 0 -> max_len
    bag_score: str = "vector"  # vector | direct
    # schedule
    epochs: int = 30
    lr_decay_every: int = 20
    lr_decay_rate: float = 0.1
    loss_reduction: str = "mean"  # mean | sum
    grad_clip: float = 0.0
    checkpoint_every: int = 0
    seed: int = 1
    # data
    vocab_min_count: int = 101
    bag_key: str = "pair_relation"  # pair_relation | pair
    train_path: str = ""
    test_path: str = ""
    embeddings_path: str = ""
    labels_path: str = ""
    synth: SynthConfig = field(default_factory=SynthConfig)

    @property
    def radius(self) -> int:
        return self.clip_radius or self.max_len

    @property
    def d_in(self) -> int:
        return self.d_w + 2 * self.d_p

    @property
    def use_projection(self) -> bool:
        if self.input_projection == "on":
            return True
        if self.input_projection == "off":
            return False
        return self.d_in != self.d_model

    @property
    def d_ff(self) -> int:
        return self.d_ff_mult * self.d_model

    def validate(self) -> "TrainConfig":
        if not self.use_projection and self.d_model != self.d_in:
            raise ValueError(
                f"input projection disabled but d_model={self.d_model} != d_w + 2*d_p = {self.d_in}"
            )
        if self.d_model % self.h:
            raise ValueError(f"h={self.h} does not divide d_model={self.d_model}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for name in ("d_w", "d_p", "h", "batch_size", "d_model", "d_ff_mult", "n_blocks",
                     "max_len", "lr_decay_every", "vocab_min_count"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr0 < 0 or self.epochs < 0:
            raise ValueError("lr0 and epochs must be non-negative")
        if self.bag_score not in ("vector", "direct"):
            raise ValueError(f"bag_score must be 'vector' or 'direct', got {self.bag_score!r}")
        if self.bag_key not in ("pair_relation", "pair"):
            raise ValueError(f"bag_key must be 'pair_relation' or 'pair', got {self.bag_key!r}")
        if not 0.0 <= self.synth.noise_rate < 1.0:
            raise ValueError(f"synth.noise_rate must be in [0, 1), got {self.synth.noise_rate}")
        return self


def flat_items(cfg: Any, prefix: str = "") -> list[tuple[str, Any]]:
    """Flatten nested dataclasses into dotted ``(key, value)`` pairs."""
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out.extend(flat_items(v, prefix + f.name + "."))
        else:
            out.append((prefix + f.name, v))
    return out


def _coerce(raw: str, current: Any, key: str) -> Any:
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError:
        raise ValueError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw.strip()


def apply_overrides(cfg: TrainConfig, overrides: dict[str, str]) -> TrainConfig:
    """Return a copy of ``cfg`` with dotted-key string overrides applied."""
    cfg = dataclasses.replace(cfg, synth=dataclasses.replace(cfg.synth))
    for key, raw in overrides.items():
        target: Any = cfg
        *parents, leaf = key.split(".")
        for p in parents:
            if not hasattr(target, p):
                raise KeyError(f"unknown config key {key!r}")
            target = getattr(target, p)
        if not hasattr(target, leaf) or dataclasses.is_dataclass(getattr(target, leaf)):
            raise KeyError(f"unknown config key {key!r}")
        setattr(target, leaf, _coerce(raw, getattr(target, leaf), key))
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flat_items(cfg))


def config_from_text(text: str) -> TrainConfig:
    return apply_overrides(TrainConfig(), parse_config_text(text))
