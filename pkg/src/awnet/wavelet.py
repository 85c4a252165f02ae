"""Single-level 2D Haar DWT / IDWT on NCHW tensors.

Analysis uses the unnormalized 2x2 filters (``f_LL`` is all ones), so each
low-pass coefficient is the plain sum of its 2x2 input block. Synthesis
carries the single 1/4 factor that makes the pair exactly inverse.

Index convention: documentation of the Haar sum is usually written 1-based,
``x_LL(m, n) = x(2m-1, 2n-1) + x(2m-1, 2n) + x(2m, 2n-1) + x(2m, 2n)``.
Internally everything is 0-based, so output ``(m, n)`` reads input rows
``2m, 2m+1`` and columns ``2n, 2n+1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor
from .autograd import functional as F
from .autograd.tensor import make_result

# rows index (row offset, col offset) within a 2x2 block: (0,0) (0,1) (1,0) (1,1)
FILTERS = {
    "ll": np.array([[1, 1], [1, 1]]),
    "lh": np.array([[-1, -1], [1, 1]]),
    "hl": np.array([[-1, 1], [-1, 1]]),
    "hh": np.array([[1, -1], [-1, 1]]),
}
BANDS = ("ll", "lh", "hl", "hh")
_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class WaveletFilterBank:
    f_ll: np.ndarray
    f_lh: np.ndarray
    f_hl: np.ndarray
    f_hh: np.ndarray

    @classmethod
    def haar(cls) -> "WaveletFilterBank":
        return cls(*(FILTERS[b].copy() for b in BANDS))

    def matrix(self) -> np.ndarray:
        """4x4 analysis matrix; row k is filter k flattened row-major."""
        return np.stack([self.f_ll, self.f_lh, self.f_hl, self.f_hh]).reshape(4, 4)


@dataclass
class SubbandSet:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {t.shape for t in self.bands()}
        dtypes = {t.dtype for t in self.bands()}
        if len(shapes) != 1 or len(dtypes) != 1:
            raise ValueError(f"subbands must share shape and dtype, got {sorted(shapes)} / {sorted(map(str, dtypes))}")

    def bands(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return self.ll, self.lh, self.hl, self.hh

    @property
    def shape(self) -> tuple:
        return self.ll.shape

    @classmethod
    def zeros_details(cls, ll: Tensor) -> "SubbandSet":
        zero = Tensor._wrap(np.zeros(ll.shape, dtype=ll.dtype))
        return cls(ll, zero, zero, zero)


def _check_even(x: Tensor) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected N x C x H x W, got shape {x.shape}")
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise ValueError(f"Haar DWT needs even spatial extents, got {h}x{w}")


def _analysis(x: Tensor, band: str) -> Tensor:
    f = FILTERS[band]
    coeffs = [int(f[i, j]) for i, j in _OFFSETS]
    d = x.data
    out = np.zeros((*x.shape[:2], x.shape[2] // 2, x.shape[3] // 2), dtype=x.dtype)
    for (i, j), s in zip(_OFFSETS, coeffs):
        out += s * d[:, :, i::2, j::2]

    def backward(g):
        gx = np.empty(x.shape, dtype=x.dtype)
        for (i, j), s in zip(_OFFSETS, coeffs):
            gx[:, :, i::2, j::2] = s * g
        return (gx,)

    return make_result(out, (x,), backward, f"dwt2.{band}")


def dwt2(x: Tensor) -> SubbandSet:
    """One analysis level. Each subband is N x C x H/2 x W/2."""
    _check_even(x)
    return SubbandSet(*(_analysis(x, b) for b in BANDS))


def idwt2(s: SubbandSet) -> Tensor:
    """Synthesis: exact inverse of :func:`dwt2` (transpose of the analysis, times 1/4)."""
    bands = s.bands()
    n, c, h, w = s.shape
    # coefficient of band k at block offset p equals analysis filter k at p
    mat = [[int(FILTERS[b][i, j]) for b in BANDS] for i, j in _OFFSETS]
    out = np.empty((n, c, 2 * h, 2 * w), dtype=s.ll.dtype)
    for p, (i, j) in enumerate(_OFFSETS):
        acc = sum(mat[p][k] * bands[k].data for k in range(4))
        out[:, :, i::2, j::2] = acc * 0.25

    def backward(g):
        blocks = [g[:, :, i::2, j::2] for i, j in _OFFSETS]
        return tuple(0.25 * sum(mat[p][k] * blocks[p] for p in range(4)) for k in range(4))

    return make_result(out, bands, backward, "idwt2")


def avg_pool_equivalence_check(x: Tensor) -> tuple[Tensor, Tensor]:
    """Return (2x2 average pooling of x, low-pass subband / 4); equal up to rounding."""
    _check_even(x)
    return F.avg_pool2(x), F.mul(dwt2(x).ll, 0.25)
