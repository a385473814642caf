"""Training driver: epochs of TBPTT chunks under masked cross-entropy
with Adam, per-epoch validation, early stopping, and binary checkpoints.

One trainer owns the parameters and optimizer state; everything is
seed-deterministic in single-threaded mode.
"""

from __future__ import annotations

import dataclasses
import math
import os
import struct
import tempfile

import numpy as np

from . import nn
from .data import batch_iter, make_batch, tbptt_chunks
from .models import ModelConfig, build_model


class NumericError(RuntimeError):
    """Training hit a non-finite loss or gradient."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    lr: float = 0.001
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    clip_norm: float = 5.0
    chunk_len: int = 480

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        for field in ("batch_size", "max_epochs", "patience", "clip_norm", "chunk_len"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")


@dataclasses.dataclass
class EpochStats:
    epoch: int
    train_ce: float
    valid_ce: float
    valid_acc: float


@dataclasses.dataclass
class Checkpoint:
    """Named parameter tensors plus the config text that built them.

    metadata records at least the stopping epoch and best validation CE;
    opt_params optionally carries Adam moment tensors.
    """

    config_text: str
    params: dict
    metadata: dict = dataclasses.field(default_factory=dict)
    opt_params: dict | None = None
    version: int = 1


@dataclasses.dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list
    best_epoch: int

    @property
    def best_valid_ce(self) -> float:
        return float(self.checkpoint.metadata["best_valid_ce"])


def _chunk_loss(model, chunk, state):
    logits, cache, state = model.forward(chunk.inputs, conditions=chunk.conditions, state=state)
    flat = logits.reshape(-1, logits.shape[-1])
    loss, dflat = nn.softmax_ce(flat, chunk.targets.reshape(-1), chunk.mask.reshape(-1))
    return loss, cache, dflat.reshape(logits.shape), state


def train(cfg: TrainConfig, train_pairs, valid_pairs, config_text: str = "", log=None) -> TrainResult:
    """Fit a model on utterance pairs; returns the best-validation checkpoint.

    Per chunk: forward, masked CE, backward, global-norm clip, Adam. Stops
    when validation CE has not improved for `patience` epochs. All
    randomness (init, shuffling) derives from cfg.seed.
    """
    train_pairs = list(train_pairs)
    valid_pairs = list(valid_pairs)
    if not train_pairs or not valid_pairs:
        raise ValueError("need non-empty train and validation sets")
    model = build_model(cfg.model, rng=np.random.default_rng(cfg.seed))
    adam = nn.AdamState.create(model.params, lr=cfg.lr)
    history: list[EpochStats] = []
    best_ce = math.inf
    best_epoch = 0
    best_params = {k: v.copy() for k, v in model.params.items()}
    for epoch in range(1, cfg.max_epochs + 1):
        total, count = 0.0, 0
        batches = batch_iter(train_pairs, cfg.batch_size, seed=cfg.seed + epoch, model_cfg=cfg.model)
        for batch_idx, batch in enumerate(batches):
            state = None
            for chunk_idx, chunk in enumerate(tbptt_chunks(batch, cfg.chunk_len, cfg.model)):
                n_valid = int(chunk.mask.sum())
                if n_valid == 0:
                    break  # masks are prefixes: nothing valid remains
                loss, cache, dlogits, state = _chunk_loss(model, chunk, state)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {batch_idx}, chunk {chunk_idx}"
                    )
                grads = model.backward(cache, dlogits)
                nn.clip_global_norm(grads, cfg.clip_norm)
                nn.adam_update(adam, model.params, grads)
                total += loss * n_valid
                count += n_valid
        train_ce = total / count
        valid_ce, valid_acc = validate(model, valid_pairs, batch_size=cfg.batch_size)
        history.append(EpochStats(epoch, train_ce, valid_ce, valid_acc))
        if log is not None:
            log(
                f"epoch {epoch}: train_ce={train_ce:.4f}"
                f" valid_ce={valid_ce:.4f} valid_acc={valid_acc:.2f}%"
            )
        if valid_ce < best_ce:
            best_ce = valid_ce
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
        elif epoch - best_epoch >= cfg.patience:
            if log is not None:
                log(f"early stop: no improvement since epoch {best_epoch}")
            break
    checkpoint = Checkpoint(
        config_text=config_text,
        params=best_params,
        metadata={"epoch": best_epoch, "best_valid_ce": best_ce},
    )
    return TrainResult(checkpoint, history, best_epoch)


def validate(model, pairs, batch_size: int = 8):
    """Mean masked CE and argmax accuracy (%); mutates nothing."""
    total_ce, total_hits, count = 0.0, 0, 0
    pairs = list(pairs)
    for start in range(0, len(pairs), batch_size):
        batch = make_batch(pairs[start : start + batch_size], model.cfg)
        logits, _, _ = model.forward(batch.inputs, conditions=batch.conditions)
        flat = logits.reshape(-1, logits.shape[-1])
        mask = batch.mask.reshape(-1)
        loss, _ = nn.softmax_ce(flat, batch.targets.reshape(-1), mask)
        predictions = np.argmax(flat, axis=-1)
        n_valid = int(mask.sum())
        total_ce += loss * n_valid
        total_hits += int(np.sum((predictions == batch.targets.reshape(-1)) & mask))
        count += n_valid
    return total_ce / count, 100.0 * total_hits / count


# ---------------------------------------------------------------------------
# Checkpoint files
#
# Little-endian binary: magic "BWEH", version u32 = 1, u32-length-prefixed
# UTF-8 config blob, u32 tensor count, then per tensor: u32 name length,
# name bytes, u8 rank, rank x u32 dims, raw float32 data.
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"BWEH"
_CKPT_VERSION = 1
_OPT_PREFIX = "opt."


def save_checkpoint(path, ckpt: Checkpoint):
    blob = ckpt.config_text
    for key, value in sorted(ckpt.metadata.items()):
        blob += f"\nmeta.{key} = {value}"
    tensors = dict(ckpt.params)
    if ckpt.opt_params:
        tensors.update({_OPT_PREFIX + k: v for k, v in ckpt.opt_params.items()})

    def write(handle):
        handle.write(_CKPT_MAGIC)
        handle.write(struct.pack("<I", _CKPT_VERSION))
        encoded = blob.encode("utf-8")
        handle.write(struct.pack("<I", len(encoded)))
        handle.write(encoded)
        handle.write(struct.pack("<I", len(tensors)))
        for name, tensor in tensors.items():
            tensor = np.ascontiguousarray(tensor, dtype="<f4")
            if tensor.ndim < 1 or tensor.ndim > 3:
                raise CheckpointError(f"tensor {name!r} has unsupported rank {tensor.ndim}")
            encoded_name = name.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded_name)))
            handle.write(encoded_name)
            handle.write(struct.pack("<B", tensor.ndim))
            handle.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            handle.write(tensor.tobytes())

    path_dir = os.path.dirname(str(path)) or "."
    fd, tmp_name = tempfile.mkstemp(dir=path_dir, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            write(handle)
        os.replace(tmp_name, str(path))
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as handle:
        reader = _Reader(handle.read(), path)
    if reader.take(4) != _CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = reader.u32()
    if version != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    blob = reader.take(reader.u32()).decode("utf-8")
    config_lines, metadata = [], {}
    for line in blob.splitlines():
        stripped = line.strip()
        if stripped.startswith("meta."):
            key, _, value = stripped.partition("=")
            metadata[key.strip()[len("meta.") :]] = value.strip()
        else:
            config_lines.append(line)
    params: dict[str, np.ndarray] = {}
    opt_params: dict[str, np.ndarray] = {}
    n_tensors = reader.u32()
    for _ in range(n_tensors):
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u8()
        if rank < 1 or rank > 3:
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported rank {rank}")
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        n_values = int(np.prod(dims))
        data = np.frombuffer(reader.take(4 * n_values), dtype="<f4").reshape(dims).copy()
        if name in params or name in opt_params:
            raise CheckpointError(f"{path}: duplicate tensor name {name!r}")
        if name.startswith(_OPT_PREFIX):
            opt_params[name[len(_OPT_PREFIX) :]] = data
        else:
            params[name] = data
    if reader.pos != len(reader.blob):
        raise CheckpointError(f"{path}: {len(reader.blob) - reader.pos} trailing bytes")
    return Checkpoint(
        config_text="\n".join(config_lines).strip("\n"),
        params=params,
        metadata=metadata,
        opt_params=opt_params or None,
        version=version,
    )
