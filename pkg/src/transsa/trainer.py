"""Mini-batch SGD training, learning-rate schedule and checkpoints."""

from __future__ import annotations

import io
import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .bag_model import TransSA, bag_loss
from .config import TrainConfig, config_from_text, dump_config
from .corpus import Bag, RelationLabels, Vocab

logger = logging.getLogger(__name__)

MAGIC = b"TRANSSA\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * rate ** floor(epoch / every), with a 0-based epoch index."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * cfg.lr_decay_rate ** (epoch // cfg.lr_decay_every)


def init_params(cfg: TrainConfig, vocab_size: int, n_labels: int, rng: np.random.Generator,
                word_vectors: np.ndarray | None = None) -> TransSA:
    return TransSA.initialize(cfg, vocab_size, n_labels, rng, word_vectors)


@dataclass
class Checkpoint:
    config: TrainConfig
    params: dict[str, np.ndarray]
    epoch: int
    rng_state: dict
    vocab: list[str] = field(default_factory=list)
    labels: list[str] = field(default_factory=list)

    def model(self) -> TransSA:
        return TransSA(self.config, {k: v.copy() for k, v in self.params.items()})

    def generator(self) -> np.random.Generator:
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def make_checkpoint(model: TransSA, epoch: int, rng: np.random.Generator,
                    vocab: Vocab | None = None, labels: RelationLabels | None = None) -> Checkpoint:
    return Checkpoint(
        model.cfg, model.state(), epoch, rng.bit_generator.state,
        list(vocab.itos) if vocab else [], list(labels.names) if labels else [],
    )


# ---------------------------------------------------------------- binary format
#
# magic(8) | version u32 | 3 x (u32 length + utf-8 text): config, meta, vocab
# | u32 n_params | per param: u32 name_len, name, u32 rank, rank x u64 dims,
#   prod(dims) little-endian float64


def _put_text(buf: io.BytesIO, text: str):
    raw = text.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    _put_text(buf, dump_config(ckpt.config))
    meta = {"epoch": ckpt.epoch, "rng_state": ckpt.rng_state, "labels": ckpt.labels}
    _put_text(buf, json.dumps(meta, sort_keys=True))
    _put_text(buf, "\n".join(ckpt.vocab))
    buf.write(struct.pack("<I", len(ckpt.params)))
    for name, arr in ckpt.params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    data = checkpoint_bytes(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def parse_checkpoint(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg = config_from_text(r.text())
        meta = json.loads(r.text())
    except (KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"bad checkpoint header: {exc}") from exc
    vocab_text = r.text()
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing byte(s) after checkpoint")
    return Checkpoint(cfg, params, int(meta["epoch"]), meta["rng_state"],
                      vocab_text.split("\n") if vocab_text else [], list(meta.get("labels", [])))


def load_checkpoint(path: str | Path, like: TransSA | None = None) -> Checkpoint:
    """Read a checkpoint; with ``like`` every parameter shape must match."""
    ckpt = parse_checkpoint(Path(path).read_bytes())
    if like is not None:
        check_shapes(ckpt, like)
    return ckpt


def check_shapes(ckpt: Checkpoint, model: TransSA) -> None:
    want = {k: v.shape for k, v in model.params.items()}
    got = {k: v.shape for k, v in ckpt.params.items()}
    if want.keys() != got.keys():
        raise CheckpointError(f"parameter names differ: {sorted(want.keys() ^ got.keys())}")
    for k in want:
        if want[k] != got[k]:
            raise CheckpointError(f"shape mismatch for {k}: checkpoint {got[k]} vs model {want[k]}")


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: TransSA
    checkpoint: Checkpoint
    losses: list[tuple[int, float, float]]  # (epoch, mean loss, lr), epoch 1-based

    def loss_log(self) -> str:
        return format_loss_log(self.losses)


def format_loss_log(losses) -> str:
    return "".join(f"{e}\t{l:.12g}\t{lr:.12g}\n" for e, l, lr in losses)


def train(
    cfg: TrainConfig,
    bags: Sequence[Bag],
    vocab_size: int,
    n_labels: int,
    rng: np.random.Generator,
    word_vectors: np.ndarray | None = None,
    model: TransSA | None = None,
    vocab: Vocab | None = None,
    labels: RelationLabels | None = None,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Shuffle bags each epoch, step SGD once per batch of ``batch_size`` bags."""
    if not bags:
        raise ValueError("train() needs at least one bag")
    if model is None:
        model = init_params(cfg, vocab_size, n_labels, rng, word_vectors)
    params = model.param_groups()
    losses = []
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(len(bags))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(bags), cfg.batch_size)):
            batch = [bags[i] for i in order[start:start + cfg.batch_size]]
            loss = bag_loss(model, batch, training=True, rng=rng)
            value = loss.item()
            if not np.isfinite(value):
                raise FloatingPointError(
                    f"non-finite loss {value} at epoch {epoch + 1}, batch {bi}"
                )
            loss.backward()
            T.sgd_step(params, lr, cfg.grad_clip)
            total += value * (len(batch) if cfg.loss_reduction == "mean" else 1)
            count += len(batch)
        mean_loss = total / count
        losses.append((epoch + 1, mean_loss, lr))
        logger.info("epoch %d  loss %.6f  lr %g", epoch + 1, mean_loss, lr)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean_loss, lr)
        if out_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(make_checkpoint(model, epoch + 1, rng, vocab, labels),
                            Path(out_dir) / f"checkpoint_epoch{epoch + 1}.bin")
    ckpt = make_checkpoint(model, cfg.epochs, rng, vocab, labels)
    return TrainResult(model, ckpt, losses)
