"""Network building blocks: residual dense block, global context block, their
composite, residual wavelet down/up-sampling, and pyramid pooling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Parameter, Tensor
from .autograd import functional as F
from .nn import Conv2d, Module
from .wavelet import SubbandSet, dwt2, idwt2

RDB_LAYERS = 6


@dataclass(frozen=True)
class BlockConfig:
    in_channels: int
    growth_rate: int = 8
    gcb_bottleneck_ratio: float = 0.25
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.in_channels < 1 or self.growth_rate < 1:
            raise ValueError("in_channels and growth_rate must be >= 1")
        if not 0 < self.gcb_bottleneck_ratio <= 1:
            raise ValueError("gcb_bottleneck_ratio must lie in (0, 1]")

    @property
    def gcb_channels(self) -> int:
        # layer norm over fewer than two channels is degenerate
        return max(2, round(self.in_channels * self.gcb_bottleneck_ratio))


class ResidualDenseBlock(Module):
    """Six densely connected 3x3 convs, a 1x1 fusion back to C, identity residual."""

    def __init__(self, rng: np.random.Generator, channels: int, growth_rate: int,
                 negative_slope: float = 0.2, dtype=np.float32):
        self.negative_slope = negative_slope
        self.layers = [
            Conv2d(rng, channels + i * growth_rate, growth_rate, 3, dtype=dtype)
            for i in range(RDB_LAYERS)
        ]
        self.fuse = Conv2d(rng, channels + RDB_LAYERS * growth_rate, channels, 1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        features = [x]
        for conv in self.layers:
            inp = features[0] if len(features) == 1 else F.concat(features)
            features.append(F.leaky_relu(conv(inp), self.negative_slope))
        return F.add(self.fuse(F.concat(features)), x)


class GlobalContextBlock(Module):
    """Softmax-attention context vector -> bottleneck transform -> broadcast add."""

    def __init__(self, rng: np.random.Generator, channels: int, hidden: int, dtype=np.float32):
        # the attention logits feed a softmax, which is shift invariant: no bias
        self.context = Conv2d(rng, channels, 1, 1, bias=False, dtype=dtype)
        self.squeeze = Conv2d(rng, channels, hidden, 1, dtype=dtype)
        self.norm_gain = Parameter(np.ones(hidden, dtype=dtype))
        self.norm_bias = Parameter(np.zeros(hidden, dtype=dtype))
        self.expand = Conv2d(rng, hidden, channels, 1, dtype=dtype)

    def context_vector(self, x: Tensor) -> Tensor:
        weights = F.softmax_spatial(self.context(x))
        return F.attention_pool(x, weights)

    def forward(self, x: Tensor) -> Tensor:
        t = self.squeeze(self.context_vector(x))
        t = F.relu(F.layer_norm_channels(t, self.norm_gain, self.norm_bias))
        return F.add(x, self.expand(t))


class GCRDB(Module):
    """Global context res-dense module: RDB followed by GCB."""

    def __init__(self, rng: np.random.Generator, cfg: BlockConfig, dtype=np.float32):
        self.rdb = ResidualDenseBlock(rng, cfg.in_channels, cfg.growth_rate, cfg.negative_slope, dtype)
        self.gcb = GlobalContextBlock(rng, cfg.in_channels, cfg.gcb_channels, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.gcb(self.rdb(x))


class WaveletDown(Module):
    """Halve resolution: Haar low-pass and a stride-2 conv, fused by 1x1 conv.

    The learned branch sees the block input ``x`` (not the subbands). The
    returned :class:`SubbandSet` is the DWT of ``x``; its detail bands feed the
    paired :class:`WaveletUp`.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int, out_channels: int, dtype=np.float32):
        self.conv = Conv2d(rng, in_channels, out_channels, 3, stride=2, padding=1, dtype=dtype)
        self.fuse = Conv2d(rng, in_channels + out_channels, out_channels, 1, dtype=dtype)

    def forward(self, x: Tensor) -> tuple[Tensor, SubbandSet]:
        bands = dwt2(x)
        y = self.fuse(F.concat([bands.ll, self.conv(x)]))
        return y, bands


class WaveletUp(Module):
    """Double resolution: IDWT with encoder details, plus conv + pixel shuffle.

    ``x`` is first projected by a 1x1 conv to the skip width and used as the
    low-pass band; only the detail bands of ``skip`` are consumed.
    """

    def __init__(self, rng: np.random.Generator, in_channels: int, skip_channels: int,
                 out_channels: int, dtype=np.float32):
        self.skip_channels = skip_channels
        self.reduce = Conv2d(rng, in_channels, skip_channels, 1, dtype=dtype)
        self.conv = Conv2d(rng, in_channels, 4 * out_channels, 3, dtype=dtype)
        self.fuse = Conv2d(rng, skip_channels + out_channels, out_channels, 1, dtype=dtype)

    def forward(self, x: Tensor, skip: SubbandSet) -> Tensor:
        n, _, h, w = x.shape
        if skip.shape != (n, self.skip_channels, h, w):
            raise ValueError(
                f"skip subbands {skip.shape} do not match features {(n, self.skip_channels, h, w)}"
            )
        spectral = idwt2(SubbandSet(self.reduce(x), skip.lh, skip.hl, skip.hh))
        spatial = F.pixel_shuffle(self.conv(x), 2)
        return self.fuse(F.concat([spectral, spatial]))


class PyramidPooling(Module):
    """Pool at several grid sizes, project, upsample, concatenate, fuse with 3x3 conv.

    With ``clamp_bins`` a bin larger than the feature map is reduced to the
    map's extent instead of raising, so a fully convolutional network can run
    on inputs whose bottleneck is smaller than the largest bin.
    """

    def __init__(self, rng: np.random.Generator, channels: int, bins: Sequence[int] = (1, 2, 3, 6),
                 clamp_bins: bool = False, dtype=np.float32):
        if not bins or min(bins) < 1:
            raise ValueError("pyramid bins must be positive")
        branch = channels // len(bins)
        if branch < 1:
            raise ValueError(f"{channels} channels cannot be split over {len(bins)} bins")
        self.bins = tuple(bins)
        self.clamp_bins = clamp_bins
        self.branches = [Conv2d(rng, channels, branch, 1, dtype=dtype) for _ in self.bins]
        self.fuse = Conv2d(rng, channels + branch * len(self.bins), channels, 3, dtype=dtype)

    def effective_bins(self, h: int, w: int) -> list[tuple[int, int]]:
        out = []
        for b in self.bins:
            if b > min(h, w) and not self.clamp_bins:
                raise ValueError(f"pyramid bin {b} larger than input {h}x{w}")
            out.append((min(b, h), min(b, w)))
        return out

    def pooled(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[2:]
        return [F.adaptive_avg_pool(x, bh, bw) for bh, bw in self.effective_bins(h, w)]

    def forward(self, x: Tensor) -> Tensor:
        h, w = x.shape[2:]
        parts = [x]
        for conv, p in zip(self.branches, self.pooled(x)):
            parts.append(F.upsample_nearest(conv(p), h, w))
        return self.fuse(F.concat(parts))
