"""Value types shared across the package and 8x8 block tiling.

Blocks are plain ``(8, 8)`` numpy arrays. Feature maps are stored as
``(channels, height, width)`` float64 arrays wrapped in :class:`FeatureMap`,
which also carries the fixed-point storage format used for size accounting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

BLOCK = 8


def round_half_away(x):
    """Round half away from zero, elementwise. Used for every rounding step."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class FixedPointFormat:
    total_bits: int = 16
    frac_bits: int = 8

    def __post_init__(self):
        if self.total_bits not in (8, 16):
            raise ValueError(f"total_bits must be 8 or 16, got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, {self.total_bits}), got {self.frac_bits}"
            )

    @property
    def min_int(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_int(self) -> int:
        return (1 << (self.total_bits - 1)) - 1


def to_fixed(x, fmt: FixedPointFormat):
    """Quantize ``x`` to the signed integer grid of ``fmt`` with saturation.

    Scalars give a Python ``int``; arrays give an ``int64`` array.
    """
    scaled = round_half_away(np.asarray(x, dtype=np.float64) * (1 << fmt.frac_bits))
    out = np.clip(scaled, fmt.min_int, fmt.max_int).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


def from_fixed(q, fmt: FixedPointFormat):
    return np.asarray(q, dtype=np.float64) / (1 << fmt.frac_bits)


@dataclass(frozen=True)
class FeatureMap:
    """A ``channels x height x width`` tensor plus its storage format."""

    data: np.ndarray
    fmt: FixedPointFormat = field(default_factory=FixedPointFormat)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ValueError(f"feature map must be 3-D (C, H, W), got shape {arr.shape}")
        if arr.dtype.kind not in "iuf":
            raise TypeError(f"unsupported dtype {arr.dtype}")
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def _adopt(cls, arr: np.ndarray, fmt: FixedPointFormat | None = None) -> "FeatureMap":
        """Wrap a freshly computed 3-D array without copying it."""
        fm = object.__new__(cls)
        arr.setflags(write=False)
        object.__setattr__(fm, "data", arr)
        object.__setattr__(fm, "fmt", fmt if fmt is not None else FixedPointFormat())
        return fm

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def origin_bits(self) -> int:
        return self.data.size * self.fmt.total_bits


@dataclass(frozen=True)
class RowFrame:
    """Eight consecutive rows of one channel, zero-padded past the bottom edge."""

    channel: int
    frame_index: int
    rows: np.ndarray


def blocks_per_channel(height: int, width: int) -> tuple[int, int]:
    return -(-height // BLOCK), -(-width // BLOCK)


def _padded_channel(fm: FeatureMap, channel: int) -> np.ndarray:
    if not 0 <= channel < fm.channels:
        raise IndexError(f"channel {channel} out of range for {fm.channels} channels")
    nby, nbx = blocks_per_channel(fm.height, fm.width)
    out = np.zeros((nby * BLOCK, nbx * BLOCK), dtype=np.float64)
    out[: fm.height, : fm.width] = fm.data[channel]
    return out


def row_frames(fm: FeatureMap, channel: int) -> list[RowFrame]:
    padded = _padded_channel(fm, channel)
    return [
        RowFrame(channel, k, padded[k * BLOCK:(k + 1) * BLOCK, : fm.width])
        for k in range(padded.shape[0] // BLOCK)
    ]


def tile_into_blocks(fm: FeatureMap, channel: int) -> np.ndarray:
    """Split one channel into 8x8 blocks in raster order.

    Returns an array of shape ``(n_blocks, 8, 8)``; row frames go top to
    bottom and blocks run left to right inside a frame.
    """
    padded = _padded_channel(fm, channel)
    nby, nbx = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
    return (
        padded.reshape(nby, BLOCK, nbx, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(nby * nbx, BLOCK, BLOCK)
    )


def untile_blocks(blocks: np.ndarray, height: int, width: int) -> np.ndarray:
    """Inverse of :func:`tile_into_blocks`: reassemble and crop a channel."""
    nby, nbx = blocks_per_channel(height, width)
    blocks = np.asarray(blocks)
    if blocks.shape != (nby * nbx, BLOCK, BLOCK):
        raise ValueError(
            f"expected {nby * nbx} blocks for a {height}x{width} channel, "
            f"got array of shape {blocks.shape}"
        )
    full = (
        blocks.reshape(nby, nbx, BLOCK, BLOCK)
        .transpose(0, 2, 1, 3)
        .reshape(nby * BLOCK, nbx * BLOCK)
    )
    return full[:height, :width].copy()


def iter_blocks(fm: FeatureMap) -> Iterator[tuple[int, int, np.ndarray]]:
    """Yield ``(channel, block_index, block)`` over the whole map."""
    for c in range(fm.channels):
        for n, blk in enumerate(tile_into_blocks(fm, c)):
            yield c, n, blk
