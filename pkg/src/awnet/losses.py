"""Training losses and evaluation metrics.

The multi-scale objective supervises every network output against an
area-averaged copy of the target:

    scales 1-2   charbonnier
    scales 3-4   charbonnier + 0.25 * perceptual
    scales 5-6   charbonnier + 0.25 * perceptual + 0.05 * (1 - ssim)

and sums the per-scale terms without further weighting. All reductions are
means over elements.

The perceptual term needs a fixed feature extractor. Pretrained VGG-19
weights are not shipped; the default is a frozen, seed-0 random conv stack
(3 -> 16 -> 32 -> 64 channels, stride 2, ReLU). Real weights can be loaded
from a checkpoint file with :meth:`FeatureExtractor.from_checkpoint`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .autograd import functional as F
from .nn import uniform_fan_in

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_same(pred: Tensor, target: Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise ValueError(f"{what}: prediction {pred.shape} vs target {target.shape}")


def charbonnier(pred: Tensor, target: Tensor, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt((pred - target)^2 + eps^2)."""
    if eps <= 0:
        raise ValueError("charbonnier eps must be positive")
    _check_same(pred, target, "charbonnier")
    d = F.sub(pred, target)
    return F.mean(F.sqrt(F.add(F.square(d), eps * eps)))


def mse(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mse")
    return F.mean(F.square(F.sub(a, b)))


# ---------------------------------------------------------------------------
# perceptual


class FeatureExtractor:
    """Frozen conv stack used by the perceptual loss.

    Weights are plain tensors (not parameters), so the extractor never
    receives gradient, but gradient still flows through it to its input.
    """

    def __init__(self, layers: Sequence[tuple[np.ndarray, np.ndarray]], stride: int = 2,
                 provenance: str = "external"):
        if not layers:
            raise ValueError("feature extractor needs at least one layer")
        self.stride = stride
        self.provenance = provenance
        self.layers = [(np.asarray(w), np.asarray(b)) for w, b in layers]
        self._cache: dict = {}

    @classmethod
    def builtin(cls, seed: int = 0, channels: Sequence[int] = (3, 16, 32, 64)) -> "FeatureExtractor":
        rng = np.random.default_rng(seed)
        layers = []
        for cin, cout in zip(channels[:-1], channels[1:]):
            fan_in = cin * 9
            # He-style scale keeps activations from shrinking through the ReLUs
            w = uniform_fan_in(rng, (cout, cin, 3, 3), fan_in, np.float64) * math.sqrt(6.0)
            layers.append((w, np.zeros(cout)))
        return cls(layers, stride=2, provenance=f"builtin-random(seed={seed})")

    @classmethod
    def from_named_tensors(cls, tensors: dict[str, np.ndarray], stride: int = 2,
                           provenance: str = "external-weights") -> "FeatureExtractor":
        """Layers are ``<prefix>.<i>.weight`` / ``<prefix>.<i>.bias`` ordered by ``i``."""
        indexed = {}
        for name, arr in tensors.items():
            parts = name.split(".")
            if len(parts) < 2 or parts[-1] not in ("weight", "bias") or not parts[-2].isdigit():
                continue
            indexed.setdefault(int(parts[-2]), {})[parts[-1]] = arr
        layers = []
        for i in sorted(indexed):
            entry = indexed[i]
            w = entry["weight"]
            layers.append((w, entry.get("bias", np.zeros(w.shape[0]))))
        return cls(layers, stride=stride, provenance=provenance)

    @classmethod
    def from_checkpoint(cls, path, stride: int = 2) -> "FeatureExtractor":
        from .trainer import load_checkpoint

        ckpt = load_checkpoint(path)
        return cls.from_named_tensors(ckpt.params, stride, provenance=f"external-weights({path})")

    @property
    def in_channels(self) -> int:
        return self.layers[0][0].shape[1]

    def _weights(self, dtype) -> list[tuple[Tensor, Tensor]]:
        key = np.dtype(dtype).str
        if key not in self._cache:
            self._cache[key] = [
                (Tensor._wrap(w.astype(dtype)), Tensor._wrap(b.astype(dtype))) for w, b in self.layers
            ]
        return self._cache[key]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"feature extractor expects {self.in_channels} channels, got {x.shape}")
        for w, b in self._weights(x.dtype):
            x = F.relu(F.conv2d(x, w, b, stride=self.stride, padding=w.shape[2] // 2))
        return x


def perceptual(pred: Tensor, target: Tensor, extractor: FeatureExtractor) -> Tensor:
    """MSE between extractor features of prediction and target."""
    _check_same(pred, target, "perceptual")
    with no_grad():
        target_features = extractor(target)
    return mse(extractor(pred), target_features)


# ---------------------------------------------------------------------------
# SSIM / PSNR


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def _blur(x: Tensor, taps: np.ndarray) -> Tensor:
    k = len(taps)
    wv = Tensor._wrap(taps.reshape(1, 1, k, 1).astype(x.dtype))
    wh = Tensor._wrap(taps.reshape(1, 1, 1, k).astype(x.dtype))
    return F.conv2d(F.conv2d(x, wv), wh)


def ssim_map(a: Tensor, b: Tensor, data_range: float = 1.0) -> Tensor:
    """Per-window SSIM over valid positions, shape (N*C) x 1 x (H-10) x (W-10)."""
    _check_same(a, b, "ssim")
    if a.ndim != 4:
        raise ValueError(f"ssim expects N x C x H x W, got {a.shape}")
    n, c, h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")
    taps = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    a = F.reshape(a, (n * c, 1, h, w))
    b = F.reshape(b, (n * c, 1, h, w))
    mu_a, mu_b = _blur(a, taps), _blur(b, taps)
    mu_aa, mu_bb, mu_ab = F.square(mu_a), F.square(mu_b), F.mul(mu_a, mu_b)
    var_a = F.sub(_blur(F.square(a), taps), mu_aa)
    var_b = F.sub(_blur(F.square(b), taps), mu_bb)
    cov = F.sub(_blur(F.mul(a, b), taps), mu_ab)
    num = F.mul(F.add(F.mul(mu_ab, 2.0), c1), F.add(F.mul(cov, 2.0), c2))
    den = F.mul(F.add(F.add(mu_aa, mu_bb), c1), F.add(F.add(var_a, var_b), c2))
    return F.div(num, den)


def ssim(a: Tensor, b: Tensor, data_range: float = 1.0) -> Tensor:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels and positions."""
    return F.mean(ssim_map(a, b, data_range))


def ssim_loss(a: Tensor, b: Tensor) -> Tensor:
    return F.sub(1.0, ssim(a, b))


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB; identical inputs give ``math.inf``."""
    a = a.data if isinstance(a, Tensor) else np.asarray(a)
    b = b.data if isinstance(b, Tensor) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes {a.shape} and {b.shape} differ")
    err = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if err == 0.0:
        return math.inf
    return -10.0 * math.log10(err / peak**2)


# ---------------------------------------------------------------------------
# multi-scale schedule


@dataclass
class LossConfig:
    eps: float = 1e-3
    perceptual_weight: float = 0.25
    ssim_weight: float = 0.05
    extractor: FeatureExtractor = field(default_factory=FeatureExtractor.builtin)

    def terms(self, scale: int) -> tuple[str, ...]:
        """Loss terms active at 1-based ``scale``."""
        if scale <= 2:
            return ("char",)
        if scale <= 4:
            return ("char", "perceptual")
        return ("char", "perceptual", "ssim")


@dataclass
class LossReport:
    per_scale: list
    total: Tensor
    components: list  # one dict per scale: term name -> unweighted Tensor

    @property
    def final(self) -> dict:
        return self.components[-1]

    def as_floats(self) -> dict:
        return {
            "total": self.total.item(),
            "per_scale": [t.item() for t in self.per_scale],
            "final": {k: v.item() for k, v in self.final.items()},
        }


def area_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean an N x C x H x W array by an integer factor."""
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if h % factor or w % factor:
        raise ValueError(f"extent {h}x{w} not divisible by {factor}")
    return x.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def multi_scale_loss(outs, target: Tensor, cfg: Optional[LossConfig] = None,
                     num_scales: Optional[int] = None) -> LossReport:
    cfg = cfg or LossConfig()
    outs = list(outs)
    k = len(outs)
    if num_scales is not None and k != num_scales:
        raise ValueError(f"expected {num_scales} scales, got {k}")
    if k not in (5, 6):
        raise ValueError(f"multi-scale loss is defined for 5 or 6 scales, got {k}")
    if outs[-1].shape != target.shape:
        raise ValueError(f"top-scale output {outs[-1].shape} does not match target {target.shape}")
    top = target.shape[2]
    per_scale, components = [], []
    for scale, out in enumerate(outs, start=1):
        factor = top // out.shape[2]
        if factor * out.shape[2] != top or out.shape[3] * factor != target.shape[3]:
            raise ValueError(f"scale {scale} extent {out.shape[2:]} does not divide target {target.shape[2:]}")
        t = Tensor._wrap(area_downsample(target.data, factor))
        terms = {"char": charbonnier(out, t, cfg.eps)}
        loss = terms["char"]
        active = cfg.terms(scale)
        if "perceptual" in active:
            terms["perceptual"] = perceptual(out, t, cfg.extractor)
            loss = F.add(loss, F.mul(terms["perceptual"], cfg.perceptual_weight))
        if "ssim" in active:
            terms["ssim"] = ssim_loss(out, t)
            loss = F.add(loss, F.mul(terms["ssim"], cfg.ssim_weight))
        per_scale.append(loss)
        components.append(terms)
    total = per_scale[0]
    for loss in per_scale[1:]:
        total = F.add(total, loss)
    return LossReport(per_scale, total, components)
