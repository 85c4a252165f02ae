"""Self-ensemble inference, two-branch fusion and evaluation.

The self-ensemble runs a model on all eight elements of the dihedral group
D4 (four rotations, each with and without a horizontal flip), maps every
output back with the inverse transform and averages. The mean is a fixed
pairwise tree over the variant order, so a model whose eight outputs agree
bit-for-bit reproduces its single-pass output exactly.

Packed RAW input needs one more step. A transform that includes a transpose
(the odd rotations) turns the green sharing rows with R into the green
sharing columns with R, so the G1 and G2 planes are exchanged to keep each
plane's colour meaning; see :data:`RAW_PLANE_ORDER`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .autograd import Tensor, no_grad
from .data import SamplePair
from .losses import psnr, ssim
from .network import AWNet

# (quarter turns counter-clockwise, then horizontal flip)
VARIANTS: tuple[tuple[int, bool], ...] = tuple((k, f) for f in (False, True) for k in range(4))
_SWAP_GREENS = (0, 3, 2, 1)
_IDENTITY4 = (0, 1, 2, 3)


@dataclass(frozen=True)
class EnsembleSpec:
    variants: tuple = VARIANTS

    def __len__(self) -> int:
        return len(self.variants)


def RAW_PLANE_ORDER(k: int) -> tuple[int, ...]:  # noqa: N802
    """Plane permutation applied to packed R,G1,B,G2 input for ``k`` quarter turns."""
    return _SWAP_GREENS if k % 2 else _IDENTITY4


def transform(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """Apply one D4 element to the trailing two axes."""
    y = np.rot90(x, k, axes=(-2, -1))
    if flip:
        y = y[..., ::-1]
    return np.ascontiguousarray(y)


def inverse_transform(y: np.ndarray, k: int, flip: bool) -> np.ndarray:
    if flip:
        y = y[..., ::-1]
    return np.ascontiguousarray(np.rot90(y, -k, axes=(-2, -1)))


def transform_raw(x: np.ndarray, k: int, flip: bool) -> np.ndarray:
    """D4 element on packed N x 4 x H x W Bayer planes, colour-consistent."""
    return transform(x[:, list(RAW_PLANE_ORDER(k))], k, flip)


def inverse_transform_raw(y: np.ndarray, k: int, flip: bool) -> np.ndarray:
    # the G1/G2 swap is its own inverse
    return inverse_transform(y, k, flip)[:, list(RAW_PLANE_ORDER(k))]


def tree_mean(arrays: Sequence[np.ndarray]) -> np.ndarray:
    """Mean with a fixed pairwise summation order."""
    level = list(arrays)
    n = len(level)
    while len(level) > 1:
        nxt = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0] / np.asarray(n, dtype=level[0].dtype)


ModelFn = Callable[[np.ndarray], np.ndarray]


def as_model_fn(model) -> ModelFn:
    """Wrap an :class:`AWNet` as array -> final-scale array (unclamped)."""
    if isinstance(model, AWNet):
        def run(x: np.ndarray) -> np.ndarray:
            with no_grad():
                return model(Tensor._wrap(x.astype(model.dtype, copy=False))).final.data
        return run
    return model


def self_ensemble(model, x, bayer: Optional[bool] = None, spec: EnsembleSpec = EnsembleSpec()) -> np.ndarray:
    """Average of inverse-transformed outputs over the D4 variants of ``x``."""
    data = np.asarray(getattr(x, "data", x))
    if bayer is None:
        bayer = isinstance(model, AWNet) and model.cfg.branch == "raw"
    fn = as_model_fn(model)
    fwd, inv = (transform_raw, inverse_transform) if bayer else (transform, inverse_transform)
    outs = [inv(fn(fwd(data, k, f)), k, f) for k, f in spec.variants]
    return tree_mean(outs)


def single_pass(model, x) -> np.ndarray:
    return as_model_fn(model)(np.asarray(getattr(x, "data", x)))


def fuse_models(raw_model, demosaiced_model, pair: SamplePair, ensemble: bool = False) -> np.ndarray:
    """Average the two branches' final outputs for one pair -> 3 x H x W in [0, 1]."""
    raw_in = pair.raw4[None]
    dem_in = pair.demosaiced3[None]
    if ensemble:
        a = self_ensemble(raw_model, raw_in, bayer=True)
        b = self_ensemble(demosaiced_model, dem_in, bayer=False)
    else:
        a = single_pass(raw_model, raw_in)
        b = single_pass(demosaiced_model, dem_in)
    if a.shape != b.shape:
        raise ValueError(f"branch outputs disagree in shape: raw {a.shape} vs demosaiced {b.shape}")
    return np.clip((a[0] + b[0]) * 0.5, 0.0, 1.0)


def predict_pair(models, pair: SamplePair, ensemble: bool = False) -> np.ndarray:
    """Prediction for one pair from a single model or a (raw, demosaiced) tuple."""
    if isinstance(models, (tuple, list)):
        if len(models) != 2:
            raise ValueError("fusion needs exactly (raw_model, demosaiced_model)")
        return fuse_models(models[0], models[1], pair, ensemble)
    bayer = isinstance(models, AWNet) and models.cfg.branch == "raw"
    x = (pair.raw4 if bayer else pair.demosaiced3)[None]
    out = self_ensemble(models, x, bayer) if ensemble else single_pass(models, x)
    return np.clip(out[0], 0.0, 1.0)


# ---------------------------------------------------------------------------
# evaluation


def image_metrics(pred: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(PSNR dB, SSIM) of two 3 x H x W images, computed in float64."""
    a = Tensor._wrap(np.asarray(pred, dtype=np.float64)[None])
    b = Tensor._wrap(np.asarray(target, dtype=np.float64)[None])
    with no_grad():
        s = ssim(a, b).item()
    return psnr(a, b), s


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)  # (id, psnr_db, ssim)
    provenance: str = ""

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["id,psnr_db,ssim"]
        for rid, p, s in self.rows:
            lines.append(f"{rid},{_fmt(p)},{_fmt(s)}")
        lines.append(f"mean,{_fmt(self.mean_psnr)},{_fmt(self.mean_ssim)}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @staticmethod
    def read(path) -> "EvalReport":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        body = [(r[0], float(r[1]), float(r[2])) for r in rows[1:] if r and r[0] != "mean"]
        return EvalReport(body)


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(float(v))


def evaluate(models, dataset: Iterable[SamplePair], ensemble: bool = False,
             provenance: str = "") -> EvalReport:
    """Per-image and mean PSNR/SSIM, rows ordered by sample id."""
    rows = []
    for pair in dataset:
        pred = predict_pair(models, pair, ensemble)
        rows.append((pair.id, *image_metrics(pred, pair.target3)))
    if not rows:
        raise ValueError("cannot evaluate an empty dataset")
    rows.sort(key=lambda r: r[0])
    return EvalReport(rows, provenance)
