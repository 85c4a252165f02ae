"""Adam optimization, step learning-rate schedule, training loop and checkpoints.

Checkpoint layout (all little-endian)::

    "AWCK" | u32 version
    u32 len | model config, UTF-8 key=value lines
    u32 count | count x tensor record
    u64 step | f64 lr | f64 beta1 | f64 beta2 | f64 eps
    u32 count | count x tensor record      (first moments)
    u32 count | count x tensor record      (second moments)
    u32 epoch
    u32 len | RNG state, UTF-8 JSON

    tensor record: u16 name len | name | u8 ndim | ndim x u32 | f32 data
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd import Parameter, Tensor
from .config import format_config, parse_config
from .data import AUGMENTATIONS, SamplePair, augment
from .losses import LossConfig, multi_scale_loss
from .network import AWNet, ModelConfig

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AWCK"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class Schedule:
    initial_lr: float = 1e-4
    halve_every: int = 10
    total_epochs: int = 50

    def lr(self, epoch: int) -> float:
        return self.initial_lr * 0.5 ** (epoch // self.halve_every)


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: OptimizerState, lr: Optional[float] = None) -> None:
    """One bias-corrected Adam update, in place. Every parameter needs a gradient."""
    missing = [p.name or "<unnamed>" for p in params if p.grad is None]
    if missing:
        raise ValueError(f"missing gradient for parameter(s): {', '.join(missing)}")
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        state.m[p.name] = m.astype(p.dtype, copy=False)
        state.v[p.name] = v.astype(p.dtype, copy=False)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params if p.grad is not None))
    if math.isfinite(max_norm) and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * np.asarray(scale, dtype=p.grad.dtype)
    return total


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict  # name -> float32 array
    optimizer: OptimizerState
    epoch: int = 0
    rng_state: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    arr = np.asarray(arr)
    buf.write(struct.pack("<H", len(encoded)))
    buf.write(encoded)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _write_records(buf: io.BytesIO, tensors: dict) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointFormatError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def tensor(self) -> tuple[str, np.ndarray]:
        (n,) = self.unpack("H")
        name = self.take(n).decode("utf-8")
        (ndim,) = self.unpack("B")
        shape = self.unpack(f"{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32).reshape(shape)
        return name, data

    def records(self) -> dict:
        (count,) = self.unpack("I")
        return dict(self.tensor() for _ in range(count))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", ckpt.version))
    cfg = format_config(ckpt.model_config.to_dict()).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    _write_records(buf, ckpt.params)
    opt = ckpt.optimizer
    buf.write(struct.pack("<Qdddd", opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps))
    _write_records(buf, opt.m)
    _write_records(buf, opt.v)
    buf.write(struct.pack("<I", ckpt.epoch))
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(rng)))
    buf.write(rng)
    return buf.getvalue()


def decode_checkpoint(blob: bytes, path="<bytes>") -> Checkpoint:
    r = _Reader(blob, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    (version,) = r.unpack("I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("I")
    cfg = ModelConfig.from_dict(parse_config(r.take(n).decode("utf-8")))
    params = r.records()
    t, lr, b1, b2, eps = r.unpack("Qdddd")
    m = r.records()
    v = r.records()
    (epoch,) = r.unpack("I")
    (n,) = r.unpack("I")
    rng_state = json.loads(r.take(n).decode("utf-8"))
    if r.pos != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - r.pos} trailing bytes")
    return Checkpoint(cfg, params, OptimizerState(lr, b1, b2, eps, t, m, v), epoch, rng_state, version)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), path)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> AWNet:
    model = AWNet(ckpt.model_config, dtype)
    model.load_state_dict(ckpt.params)
    return model


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    batch_size: int = 2
    schedule: Schedule = field(default_factory=Schedule)
    seed: int = 0
    max_grad_norm: float = math.inf
    augment: bool = True
    loss: LossConfig = field(default_factory=LossConfig)


def branch_input(pair: SamplePair, branch: str) -> np.ndarray:
    return pair.raw4 if branch == "raw" else pair.demosaiced3


class Trainer:
    """Owns a model, its Adam state and the data-order RNG.

    One epoch is one seeded shuffle of the dataset, split into batches.
    """

    def __init__(self, model_cfg: ModelConfig, dataset: Sequence[SamplePair], cfg: Optional[TrainConfig] = None):
        self.cfg = cfg or TrainConfig()
        if not dataset:
            raise ValueError("training dataset is empty")
        if self.cfg.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.dataset = list(dataset)
        self.model = AWNet(model_cfg)
        self.opt = OptimizerState(lr=self.cfg.schedule.initial_lr)
        self.rng = np.random.default_rng(self.cfg.seed)
        self.epoch = 0
        self.iteration = 0
        self.loss_curve: list[float] = []

    @property
    def branch(self) -> str:
        return self.model.cfg.branch

    def make_batch(self, pairs: Sequence[SamplePair]) -> tuple[Tensor, Tensor]:
        xs, ys = [], []
        for pair in pairs:
            if self.cfg.augment:
                pair = augment(pair, AUGMENTATIONS[int(self.rng.integers(len(AUGMENTATIONS)))])
            xs.append(branch_input(pair, self.branch))
            ys.append(pair.target3)
        return Tensor._wrap(np.stack(xs)), Tensor._wrap(np.stack(ys))

    def step(self, x: Tensor, y: Tensor, lr: float):
        """Forward, multi-scale loss, backward and one Adam update."""
        params = self.model.parameters()
        self.model.zero_grad()
        try:
            report = multi_scale_loss(self.model(x), y, self.cfg.loss, self.model.cfg.num_scales)
            loss = report.total.item()
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss is {loss}")
            report.total.backward()
        except FloatingPointError as exc:
            raise TrainingDiverged(
                f"non-finite values at epoch {self.epoch}, iteration {self.iteration}: {exc}"
            ) from exc
        clip_grad_norm(params, self.cfg.max_grad_norm)
        adam_step(params, self.opt, lr)
        self.iteration += 1
        self.loss_curve.append(loss)
        return report

    def run_epoch(self) -> float:
        lr = self.cfg.schedule.lr(self.epoch)
        order = self.rng.permutation(len(self.dataset))
        losses = []
        for start in range(0, len(order), self.cfg.batch_size):
            batch = [self.dataset[i] for i in order[start : start + self.cfg.batch_size]]
            x, y = self.make_batch(batch)
            losses.append(self.step(x, y, lr).total.item())
        self.epoch += 1
        mean = float(np.mean(losses))
        log.info("epoch %d lr %.3g loss %.6f", self.epoch, lr, mean)
        return mean

    def checkpoint(self) -> Checkpoint:
        def f32(d):
            return {k: np.asarray(v, dtype=np.float32) for k, v in d.items()}

        opt = OptimizerState(self.opt.lr, self.opt.beta1, self.opt.beta2, self.opt.eps, self.opt.t,
                             f32(self.opt.m), f32(self.opt.v))
        return Checkpoint(self.model.cfg, f32(self.model.state_dict()), opt, self.epoch,
                          self.rng.bit_generator.state)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, dataset: Sequence[SamplePair],
                        cfg: Optional[TrainConfig] = None) -> "Trainer":
        trainer = cls(ckpt.model_config, dataset, cfg)
        trainer.model.load_state_dict(ckpt.params)
        src = ckpt.optimizer
        trainer.opt = OptimizerState(src.lr, src.beta1, src.beta2, src.eps, src.t,
                                     {k: v.copy() for k, v in src.m.items()},
                                     {k: v.copy() for k, v in src.v.items()})
        trainer.epoch = ckpt.epoch
        trainer.rng.bit_generator.state = ckpt.rng_state
        return trainer


@dataclass
class TrainResult:
    model: AWNet
    epoch_losses: list
    loss_curve: list
    checkpoints: list  # paths written


def train(
    model_cfg: ModelConfig,
    dataset: Sequence[SamplePair],
    schedule: Optional[Schedule] = None,
    batch_size: int = 2,
    *,
    epochs: Optional[int] = None,
    seed: int = 0,
    out_dir=None,
    checkpoint_every: int = 10,
    loss: Optional[LossConfig] = None,
    max_grad_norm: float = math.inf,
) -> TrainResult:
    """Train one branch for ``epochs`` (default: ``schedule.total_epochs``)."""
    schedule = schedule or Schedule()
    cfg = TrainConfig(batch_size, schedule, seed, max_grad_norm, True, loss or LossConfig())
    trainer = Trainer(model_cfg, dataset, cfg)
    total = schedule.total_epochs if epochs is None else epochs
    epoch_losses, written = [], []
    for _ in range(total):
        epoch_losses.append(trainer.run_epoch())
        if out_dir is not None and (trainer.epoch % checkpoint_every == 0 or trainer.epoch == total):
            path = Path(out_dir) / f"{model_cfg.branch}_epoch{trainer.epoch:03d}.awck"
            save_checkpoint(path, trainer.checkpoint())
            written.append(path)
    return TrainResult(trainer.model, epoch_losses, trainer.loss_curve, written)
