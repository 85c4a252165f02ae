"""The two AWNet branches.

Both are U-shaped: a stem conv, four encoder stages of (GC-RDB, wavelet
down-sampling), a bottleneck GC-RDB followed by pyramid pooling, then decoder
stages of (wavelet up-sampling, GC-RDB). An RGB head sits on the bottleneck and
on every decoder stage, giving one output per scale, smallest first.

The RAW branch takes packed 4-channel Bayer input at half the target
resolution and runs a fifth decoder stage above input resolution. That stage
has no encoder mirror, so its IDWT receives zero detail bands. Pyramid pooling
is placed at the bottleneck; intermediate heads do not feed back into the
decoder.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .autograd import Tensor, no_grad
from .autograd import functional as F
from .blocks import GCRDB, BlockConfig, PyramidPooling, WaveletDown, WaveletUp
from .nn import Conv2d, Module
from .wavelet import SubbandSet

BRANCHES = {"raw": (4, 6), "demosaiced": (3, 5)}  # input channels, scale count
ENCODER_STAGES = 4


@dataclass(frozen=True)
class ModelConfig:
    branch: str = "raw"
    base_channels: int = 16
    num_scales: Optional[int] = None
    growth_rate: int = 8
    pyramid_bins: tuple = (1, 2, 3, 6)
    seed: int = 0
    gcb_ratio: float = 0.25
    negative_slope: float = 0.2
    channel_mults: tuple = (1, 2, 4, 8, 8)

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise ValueError(f"branch must be one of {sorted(BRANCHES)}, got {self.branch!r}")
        k = BRANCHES[self.branch][1]
        if self.num_scales is None:
            object.__setattr__(self, "num_scales", k)
        elif self.num_scales != k:
            raise ValueError(f"{self.branch} branch has {k} scales, got num_scales={self.num_scales}")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")
        if len(self.channel_mults) != ENCODER_STAGES + 1:
            raise ValueError(f"channel_mults needs {ENCODER_STAGES + 1} entries")
        object.__setattr__(self, "pyramid_bins", tuple(int(b) for b in self.pyramid_bins))
        object.__setattr__(self, "channel_mults", tuple(int(m) for m in self.channel_mults))

    @property
    def in_channels(self) -> int:
        return BRANCHES[self.branch][0]

    @property
    def widths(self) -> list[int]:
        return [self.base_channels * m for m in self.channel_mults]

    def block(self, channels: int) -> BlockConfig:
        return BlockConfig(channels, self.growth_rate, self.gcb_ratio, self.negative_slope)

    def to_dict(self) -> dict:
        return {
            "branch": self.branch,
            "base_channels": self.base_channels,
            "num_scales": self.num_scales,
            "growth_rate": self.growth_rate,
            "pyramid_bins": list(self.pyramid_bins),
            "seed": self.seed,
            "gcb_ratio": self.gcb_ratio,
            "negative_slope": self.negative_slope,
            "channel_mults": list(self.channel_mults),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for key in ("pyramid_bins", "channel_mults"):
            if key in d:
                d[key] = tuple(d[key]) if isinstance(d[key], (list, tuple)) else (d[key],)
        return cls(**d)


@dataclass
class MultiScaleOutput:
    outputs: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.outputs)

    def __getitem__(self, i) -> Tensor:
        return self.outputs[i]

    def __iter__(self):
        return iter(self.outputs)

    @property
    def final(self) -> Tensor:
        return self.outputs[-1]

    def extents(self) -> list[int]:
        return [o.shape[2] for o in self.outputs]


class AWNet(Module):
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        w = cfg.widths
        self.stem = Conv2d(rng, cfg.in_channels, w[0], 3, dtype=dtype)
        self.encoder = [GCRDB(rng, cfg.block(w[i]), dtype) for i in range(ENCODER_STAGES)]
        self.down = [WaveletDown(rng, w[i], w[i + 1], dtype) for i in range(ENCODER_STAGES)]
        self.bottleneck = GCRDB(rng, cfg.block(w[-1]), dtype)
        self.pyramid = PyramidPooling(rng, w[-1], cfg.pyramid_bins, clamp_bins=True, dtype=dtype)
        # decoder level sequence, coarse to fine; the raw branch adds one level above input
        levels = list(range(ENCODER_STAGES - 1, -1, -1))
        if cfg.branch == "raw":
            levels.append(-1)
        self.up = []
        self.decoder = []
        for lvl in levels:
            src = w[lvl + 1] if lvl >= 0 else w[0]
            dst = w[max(lvl, 0)]
            self.up.append(WaveletUp(rng, src, dst, dst, dtype))
            self.decoder.append(GCRDB(rng, cfg.block(dst), dtype))
        head_widths = [w[-1]] + [w[max(lvl, 0)] for lvl in levels]
        self.heads = [Conv2d(rng, c, 3, 3, dtype=dtype) for c in head_widths]
        self.assign_names()

    @property
    def dtype(self):
        return self.stem.weight.dtype

    def check_input(self, x: Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"{self.cfg.branch} branch expects N x {self.cfg.in_channels} x H x W, got {x.shape}"
            )
        h, w = x.shape[2:]
        div = 2**ENCODER_STAGES
        if h % div or w % div:
            raise ValueError(f"input extents must be divisible by {div}, got {h}x{w}")

    def forward(self, x: Tensor) -> MultiScaleOutput:
        self.check_input(x)
        h = self.stem(x)
        skips: list[SubbandSet] = []
        for block, down in zip(self.encoder, self.down):
            h, bands = down(block(h))
            skips.append(bands)
        h = self.pyramid(self.bottleneck(h))
        outs = [self.heads[0](h)]
        for i, (up, block) in enumerate(zip(self.up, self.decoder)):
            if skips:
                skip = skips.pop()
            else:
                n, _, hh, ww = h.shape
                zero = Tensor._wrap(np.zeros((n, up.skip_channels, hh, ww), dtype=h.dtype))
                skip = SubbandSet(zero, zero, zero, zero)
            h = block(up(h, skip))
            outs.append(self.heads[i + 1](h))
        return MultiScaleOutput(outs)

    def predict(self, x: Tensor) -> Tensor:
        """Final-scale output clamped to [0, 1], without recording a graph."""
        with no_grad():
            out = self.forward(x).final
        return Tensor._wrap(np.clip(out.data, 0.0, 1.0))


def build_model(cfg: ModelConfig, dtype=np.float32) -> AWNet:
    return AWNet(cfg, dtype)


def forward_raw(model: AWNet, x: Tensor) -> MultiScaleOutput:
    if model.cfg.branch != "raw":
        raise ValueError("forward_raw needs a raw-branch model")
    return model(x)


def forward_demosaiced(model: AWNet, x: Tensor) -> MultiScaleOutput:
    if model.cfg.branch != "demosaiced":
        raise ValueError("forward_demosaiced needs a demosaiced-branch model")
    return model(x)


def average_predictions(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"cannot average predictions of shape {a.shape} and {b.shape}")
    return F.mul(F.add(a, b), 0.5)
