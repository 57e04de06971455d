"""Two-stage quantization of DCT coefficient blocks.

Stage one maps real coefficients affinely onto ``[0, 2**m - 1]`` using the
block (or channel) min/max. Stage two divides by an 8x8 Q-table that grows
toward high frequencies, which zeroes most of the bottom-right corner.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core_types import round_half_away
from .errors import MalformedStreamError

# Standard JPEG luminance quantization table (ITU-T T.81, Annex K).
JPEG_LUMINANCE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

# Level 0 is the most aggressive table, level 3 the gentlest.
LEVEL_SCALES = (2.0, 1.0, 0.5, 0.125)
DEFAULT_M = 8


@dataclass(frozen=True)
class GemmScale:
    f_min: float
    f_max: float
    m: int = DEFAULT_M

    def __post_init__(self):
        if not 2 <= self.m <= 15:
            raise ValueError(f"m must be in 2..15, got {self.m}")
        if self.f_max < self.f_min:
            raise ValueError(f"f_max {self.f_max} < f_min {self.f_min}")

    @property
    def i_max(self) -> int:
        return (1 << self.m) - 1

    @property
    def step(self) -> float:
        """Width of one quantization step on the real axis."""
        return (self.f_max - self.f_min) / self.i_max


@dataclass(frozen=True, eq=False)
class QTable:
    entries: np.ndarray
    level: int = 0

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.int64)
        if arr.shape != (8, 8):
            raise ValueError(f"Q-table must be 8x8, got shape {arr.shape}")
        if (arr < 1).any():
            raise ValueError("Q-table entries must be >= 1")
        if arr[0, 0] > arr[7, 7]:
            raise ValueError(
                "Q-table must not shrink toward high frequencies "
                f"(entries[0][0]={arr[0, 0]} > entries[7][7]={arr[7, 7]})"
            )
        if not 0 <= self.level <= 3:
            raise ValueError(f"level must be in 0..3, got {self.level}")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    def __eq__(self, other):
        if not isinstance(other, QTable):
            return NotImplemented
        return self.level == other.level and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash((self.level, self.entries.tobytes()))


def gemm_quantize(f, m: int = DEFAULT_M, scale: GemmScale | None = None):
    """Map real values onto the m-bit grid ``[0, 2**m - 1]``.

    Returns ``(q1, scale)``. Pass ``scale`` to quantize against a range
    computed elsewhere (for example per channel). A degenerate range yields
    an all-zero ``q1`` with the constant kept in ``scale.f_min``.
    """
    f = np.asarray(f, dtype=np.float64)
    if scale is None:
        scale = GemmScale(float(f.min()), float(f.max()), m)
    span = scale.f_max - scale.f_min
    if span == 0:
        return np.zeros(f.shape, dtype=np.int64), scale
    q1 = round_half_away((f - scale.f_min) / span * scale.i_max)
    return np.clip(q1, 0, scale.i_max).astype(np.int64), scale


def gemm_dequantize(q1, scale: GemmScale) -> np.ndarray:
    q1 = np.asarray(q1)
    if q1.size and (q1.min() < 0 or q1.max() > scale.i_max):
        raise MalformedStreamError(
            f"GEMM-quantized value outside [0, {scale.i_max}]"
        )
    return q1 / scale.i_max * (scale.f_max - scale.f_min) + scale.f_min


def qtable_quantize(q1, qt: QTable) -> np.ndarray:
    return round_half_away(np.asarray(q1) / qt.entries).astype(np.int64)


def qtable_dequantize(q2, qt: QTable) -> np.ndarray:
    return np.asarray(q2, dtype=np.int64) * qt.entries


@lru_cache(maxsize=None)
def select_qtable(level: int) -> QTable:
    """Built-in table for a 2-bit quantization level (0 = coarsest)."""
    if level not in range(4):
        raise ValueError(f"quantization level must be 0..3, got {level}")
    scaled = round_half_away(JPEG_LUMINANCE * LEVEL_SCALES[level])
    return QTable(np.maximum(1, scaled).astype(np.int64), level)


def ones_qtable(level: int = 3) -> QTable:
    """All-ones table: stage two becomes the identity."""
    return QTable(np.ones((8, 8), dtype=np.int64), level)


def load_qtable(path: str | os.PathLike, level: int = 0) -> QTable:
    """Read a table stored as 8 lines of 8 whitespace-separated integers."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                row = [int(tok) for tok in line.split()]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if len(row) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 entries, got {len(row)}")
            rows.append(row)
    if len(rows) != 8:
        raise ValueError(f"{path}: expected 8 rows, got {len(rows)}")
    return QTable(np.array(rows), level)


def save_qtable(qt: QTable, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for row in qt.entries:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")
