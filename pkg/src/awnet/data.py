"""Bayer handling, synthetic RAW/RGB pairs, augmentation and file I/O.

Mosaic layout is RGGB: R at (even, even), G1 at (even, odd), G2 at (odd, even),
B at (odd, odd). Packed planes are ordered R, G1, B, G2, so G1 is the green
sharing rows with R and G2 the green sharing rows with B.

Geometric ops on packed planes keep each plane's colour. Relative to packing
the transformed mosaic, this is a fixed relabeling of the planes
(:data:`PACK_RELABEL`): a horizontal flip exchanges R/G1 and B/G2, a vertical
flip exchanges R/G2 and G1/B, and a transpose exchanges only G1/G2. The
sub-pixel offset of each plane shifts by one mosaic pixel under flips; colour
identity is what the network relies on, so that is what is preserved.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import cv2
import numpy as np
from scipy import ndimage

PLANES = ("R", "G1", "B", "G2")
# (row offset, col offset) of each packed plane inside a 2x2 cell
PLANE_OFFSETS = ((0, 0), (0, 1), (1, 1), (1, 0))
# pack(op(mosaic))[i] == op(pack(mosaic))[PACK_RELABEL[op][i]]
PACK_RELABEL = {
    "hflip": (1, 0, 3, 2),
    "vflip": (3, 2, 1, 0),
    "transpose": (0, 3, 2, 1),
}

PRAW_MAGIC = b"PRAW"
PRAW_VERSION = 1
_PRAW_HEADER = struct.Struct("<4sHHII")
KINDS = ("raw", "demosaiced", "target")


# ---------------------------------------------------------------------------
# Bayer


@dataclass
class BayerImage:
    mosaic: np.ndarray  # H x W integer samples
    bit_depth: int = 16
    pattern: str = "RGGB"

    def __post_init__(self):
        if self.bit_depth not in (8, 16):
            raise ValueError(f"bit depth must be 8 or 16, got {self.bit_depth}")
        if self.pattern != "RGGB":
            raise ValueError("only the RGGB pattern is supported")
        m = np.asarray(self.mosaic)
        if m.ndim != 2:
            raise ValueError(f"mosaic must be 2-D, got shape {m.shape}")
        if m.shape[0] % 2 or m.shape[1] % 2:
            raise ValueError(f"mosaic extents must be even, got {m.shape}")
        if m.min(initial=0) < 0 or m.max(initial=0) > self.max_value:
            raise ValueError(f"mosaic values outside [0, {self.max_value}]")
        self.mosaic = m

    @property
    def max_value(self) -> int:
        return (1 << self.bit_depth) - 1

    def normalized(self) -> np.ndarray:
        return (self.mosaic.astype(np.float64) / self.max_value).astype(np.float32)

    @classmethod
    def from_normalized(cls, mosaic: np.ndarray, bit_depth: int = 16) -> "BayerImage":
        """Quantize a [0, 1] mosaic with round-half-up."""
        return cls(quantize(mosaic, bit_depth), bit_depth)


def pack_planes(mosaic: np.ndarray) -> np.ndarray:
    """H x W mosaic -> 4 x H/2 x W/2 planes (R, G1, B, G2); any dtype."""
    if mosaic.shape[-2] % 2 or mosaic.shape[-1] % 2:
        raise ValueError(f"mosaic extents must be even, got {mosaic.shape}")
    return np.stack([mosaic[..., i::2, j::2] for i, j in PLANE_OFFSETS], axis=-3)


def unpack_planes(planes: np.ndarray) -> np.ndarray:
    if planes.shape[-3] != 4:
        raise ValueError(f"expected 4 planes, got shape {planes.shape}")
    h, w = planes.shape[-2:]
    mosaic = np.empty((*planes.shape[:-3], 2 * h, 2 * w), dtype=planes.dtype)
    for k, (i, j) in enumerate(PLANE_OFFSETS):
        mosaic[..., i::2, j::2] = planes[..., k, :, :]
    return mosaic


def pack_bayer(b: BayerImage) -> np.ndarray:
    """Normalized 4 x H/2 x W/2 float32 planes."""
    return pack_planes(b.normalized())


def unpack_bayer(planes: np.ndarray, bit_depth: int = 16) -> BayerImage:
    return BayerImage.from_normalized(unpack_planes(planes), bit_depth)


def mosaic_rgb(rgb: np.ndarray) -> np.ndarray:
    """Sample a 3 x H x W image on the RGGB lattice -> H x W mosaic."""
    _, h, w = rgb.shape
    mosaic = np.empty((h, w), dtype=rgb.dtype)
    channel = {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2}
    for (i, j), c in channel.items():
        mosaic[i::2, j::2] = rgb[c, i::2, j::2]
    return mosaic


_K_GREEN = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4
_K_RED_BLUE = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4


def demosaic_bilinear(mosaic) -> np.ndarray:
    """Bilinear RGGB demosaic -> 3 x H x W float32.

    Accepts a :class:`BayerImage` or an already-normalized float mosaic.
    Mirror boundary handling keeps the lattice parity, so sampled sites pass
    through unchanged everywhere, including the border.
    """
    m = mosaic.normalized() if isinstance(mosaic, BayerImage) else np.asarray(mosaic)
    if m.shape[0] % 2 or m.shape[1] % 2:
        raise ValueError(f"mosaic extents must be even, got {m.shape}")
    m = m.astype(np.float64)
    masks = np.zeros((3, *m.shape))
    masks[0, 0::2, 0::2] = 1
    masks[1, 0::2, 1::2] = 1
    masks[1, 1::2, 0::2] = 1
    masks[2, 1::2, 1::2] = 1
    kernels = (_K_RED_BLUE, _K_GREEN, _K_RED_BLUE)
    out = np.stack([ndimage.convolve(m * masks[c], kernels[c], mode="mirror") for c in range(3)])
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic pairs


@dataclass
class SamplePair:
    raw4: np.ndarray  # 4 x H/2 x W/2
    demosaiced3: np.ndarray  # 3 x H x W
    target3: np.ndarray  # 3 x H x W
    id: str = ""

    def __post_init__(self):
        th, tw = self.target3.shape[1:]
        if self.raw4.shape != (4, th // 2, tw // 2) or th % 2 or tw % 2:
            raise ValueError(f"raw4 {self.raw4.shape} must be half of target {self.target3.shape}")
        if self.demosaiced3.shape != self.target3.shape:
            raise ValueError(f"demosaiced {self.demosaiced3.shape} vs target {self.target3.shape}")
        for name in ("raw4", "demosaiced3", "target3"):
            arr = np.array(getattr(self, name), dtype=np.float32, copy=True)
            arr.flags.writeable = False
            setattr(self, name, arr)


DEFAULT_COLOR_MATRIX = np.array(
    [[0.80, 0.15, 0.05],
     [0.10, 0.80, 0.10],
     [0.05, 0.15, 0.80]]
)


@dataclass
class Degradation:
    gamma: float = 2.2
    color_matrix: np.ndarray = field(default_factory=lambda: DEFAULT_COLOR_MATRIX.copy())
    noise_sigma: float = 0.01

    @classmethod
    def identity(cls) -> "Degradation":
        return cls(1.0, np.eye(3), 0.0)


def simulate_mosaic(rgb: np.ndarray, rng: np.random.Generator, deg: Degradation) -> tuple[np.ndarray, np.ndarray]:
    """Return (noisy mosaic, clean mosaic) in [0, 1], float64."""
    m = np.asarray(deg.color_matrix, dtype=np.float64)
    if m.shape != (3, 3) or abs(np.linalg.det(m)) < 1e-9:
        raise ValueError("color_matrix must be an invertible 3x3 matrix")
    linear = np.power(np.asarray(rgb, dtype=np.float64), deg.gamma)
    sensor = np.clip(np.einsum("ij,jhw->ihw", m, linear), 0.0, 1.0)
    clean = mosaic_rgb(sensor)
    noisy = clean
    if deg.noise_sigma > 0:
        noisy = np.clip(clean + rng.normal(0.0, deg.noise_sigma, clean.shape), 0.0, 1.0)
    return noisy, clean


def synthesize_pair(rgb, seed: int, degradation: Optional[Degradation] = None, id: str = "") -> SamplePair:
    """Simulate a sensor capture of ``rgb`` (3 x H x W in [0, 1]); pure in its arguments."""
    rgb = np.asarray(getattr(rgb, "data", rgb), dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise ValueError(f"rgb must be 3 x H x W, got {rgb.shape}")
    if rgb.min() < 0 or rgb.max() > 1:
        raise ValueError("rgb values must lie in [0, 1]")
    deg = degradation if degradation is not None else Degradation()
    noisy, _ = simulate_mosaic(rgb, np.random.default_rng(seed), deg)
    return SamplePair(pack_planes(noisy), demosaic_bilinear(noisy), rgb, id)


def synthetic_rgb(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """A smooth procedural scene: colour gradients, soft blobs and a mild texture."""
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    img = np.empty((3, height, width))
    for c in range(3):
        a, b, base = rng.uniform(-0.4, 0.4, 3)
        img[c] = 0.5 + base * 0.5 + a * (xx - 0.5) + b * (yy - 0.5)
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        ry, rx = rng.uniform(0.08, 0.3, 2)
        blob = np.exp(-(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2) * 2)
        img += blob * rng.uniform(-0.35, 0.35, 3)[:, None, None]
    freq = rng.uniform(2, 6, 2)
    img += 0.04 * np.sin(2 * np.pi * (freq[0] * xx + freq[1] * yy))[None]
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# augmentation


def flip_array(x: np.ndarray, op: str) -> np.ndarray:
    if op == "none":
        return x
    if op == "hflip":
        return x[..., :, ::-1]
    if op == "vflip":
        return x[..., ::-1, :]
    if op == "hvflip":
        return x[..., ::-1, ::-1]
    raise ValueError(f"unknown augmentation {op!r}")


AUGMENTATIONS = ("none", "hflip", "vflip", "hvflip")


def augment(pair: SamplePair, op: str) -> SamplePair:
    """Apply one flip consistently to all three images of a pair."""
    if op == "none":
        return pair
    return SamplePair(
        flip_array(pair.raw4, op), flip_array(pair.demosaiced3, op), flip_array(pair.target3, op), pair.id
    )


# ---------------------------------------------------------------------------
# file formats


def write_praw(path, image: BayerImage) -> None:
    h, w = image.mosaic.shape
    dtype = "<u2" if image.bit_depth == 16 else "u1"
    header = _PRAW_HEADER.pack(PRAW_MAGIC, PRAW_VERSION, image.bit_depth, h, w)
    Path(path).write_bytes(header + image.mosaic.astype(dtype).tobytes())


def read_praw(path) -> BayerImage:
    blob = Path(path).read_bytes()
    if len(blob) < _PRAW_HEADER.size:
        raise ValueError(f"{path}: truncated .praw header")
    magic, version, bit_depth, h, w = _PRAW_HEADER.unpack_from(blob)
    if magic != PRAW_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != PRAW_VERSION:
        raise ValueError(f"{path}: unsupported .praw version {version}")
    if bit_depth not in (8, 16):
        raise ValueError(f"{path}: bit depth {bit_depth} not in (8, 16)")
    dtype = np.dtype("<u2" if bit_depth == 16 else "u1")
    expected = _PRAW_HEADER.size + h * w * dtype.itemsize
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype=dtype, offset=_PRAW_HEADER.size).reshape(h, w)
    return BayerImage(data.astype(np.uint16 if bit_depth == 16 else np.uint8), bit_depth)


def quantize(img: np.ndarray, bit_depth: int) -> np.ndarray:
    """[0, 1] floats -> integers with round-half-up."""
    top = (1 << bit_depth) - 1
    q = np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * top + 0.5)
    return q.astype(np.uint16 if bit_depth == 16 else np.uint8)


def write_png(path, img: np.ndarray, bit_depth: int = 8) -> None:
    """Write a 3 x H x W image in [0, 1] as RGB PNG."""
    if bit_depth not in (8, 16):
        raise ValueError("PNG bit depth must be 8 or 16")
    hwc = quantize(img, bit_depth).transpose(1, 2, 0)[:, :, ::-1]  # RGB -> BGR for OpenCV
    if not cv2.imwrite(str(path), np.ascontiguousarray(hwc)):
        raise OSError(f"could not write {path}")


def read_png(path) -> tuple[np.ndarray, int]:
    """Return (3 x H x W float32 in [0, 1], bit depth)."""
    arr = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise OSError(f"could not read image {path}")
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    arr = arr[:, :, :3][:, :, ::-1]
    bit_depth = 16 if arr.dtype == np.uint16 else 8
    img = arr.transpose(2, 0, 1).astype(np.float64) / ((1 << bit_depth) - 1)
    return img.astype(np.float32), bit_depth


# ---------------------------------------------------------------------------
# dataset directories


def _index(split_dir: Path) -> dict[str, dict[str, Path]]:
    suffix = {"raw": ".praw", "demosaiced": ".png", "target": ".png"}
    found: dict[str, dict[str, Path]] = {}
    for kind in KINDS:
        d = split_dir / kind
        if not d.is_dir():
            continue
        for p in d.iterdir():
            if p.suffix == suffix[kind]:
                found.setdefault(p.stem, {})[kind] = p
    return found


def load_dataset(root, split: str = "train") -> Iterator[SamplePair]:
    """Pairs from ``<root>/<split>/{raw,demosaiced,target}/<id>.(praw|png)`` in sorted id order.

    Layout problems (orphaned files, mixed bit depths) raise before any pair
    is produced.
    """
    if split not in ("train", "val"):
        raise ValueError(f"split must be 'train' or 'val', got {split!r}")
    found = _index(Path(root) / split)
    orphans = sorted(i for i, kinds in found.items() if len(kinds) != len(KINDS))
    if orphans:
        detail = ", ".join(f"{i} (missing {'/'.join(k for k in KINDS if k not in found[i])})" for i in orphans)
        raise FileNotFoundError(f"orphaned sample ids: {detail}")
    ids = sorted(found)
    depths = {kind: set() for kind in KINDS}
    for i in ids:
        depths["raw"].add(_PRAW_HEADER.unpack_from(found[i]["raw"].read_bytes()[: _PRAW_HEADER.size])[2])
        for kind in ("demosaiced", "target"):
            img = cv2.imread(str(found[i][kind]), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise OSError(f"could not read image {found[i][kind]}")
            depths[kind].add(16 if img.dtype == np.uint16 else 8)
    mixed = {k: sorted(v) for k, v in depths.items() if len(v) > 1}
    if mixed:
        raise ValueError(f"bit-depth mismatch within split {split!r}: {mixed}")

    def pairs() -> Iterator[SamplePair]:
        for i in ids:
            bayer = read_praw(found[i]["raw"])
            demosaiced, _ = read_png(found[i]["demosaiced"])
            target, _ = read_png(found[i]["target"])
            yield SamplePair(pack_bayer(bayer), demosaiced, target, i)

    return pairs()


def write_pair(root, split: str, pair: SamplePair, bit_depth: int = 16) -> None:
    """Store a pair in the dataset layout (mosaic as .praw, images as PNG)."""
    base = Path(root) / split
    for kind in KINDS:
        (base / kind).mkdir(parents=True, exist_ok=True)
    mosaic = BayerImage.from_normalized(unpack_planes(pair.raw4), bit_depth)
    write_praw(base / "raw" / f"{pair.id}.praw", mosaic)
    write_png(base / "demosaiced" / f"{pair.id}.png", pair.demosaiced3, bit_depth)
    write_png(base / "target" / f"{pair.id}.png", pair.target3, bit_depth)
