"""Sparse block encoding and the flip-storage model of the feature-map buffer.

A quantized 8x8 block is stored as a 64-bit index (bit ``8*i + j`` set when
``q2[i, j] != 0``) plus its non-zero values in column-major order. The buffer
is eight single-row SRAM banks; even blocks put row ``i`` in bank ``i`` and
odd blocks put it in bank ``7 - i`` so that the dense top rows of
consecutive blocks land in opposite banks.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BufferFullError, FmcError, MalformedStreamError
from .quant import GemmScale

NBANKS = 8
WORD_BYTES = 2
FULL_INDEX = (1 << 64) - 1


def popcount(bits: int) -> int:
    return bin(bits).count("1")


@dataclass(frozen=True, eq=False)
class EncodedBlock:
    index: int
    payload: np.ndarray
    scale: GemmScale | None = None
    level: int = 0

    def __post_init__(self):
        if not 0 <= self.index <= FULL_INDEX:
            raise MalformedStreamError(f"index {self.index:#x} is not a 64-bit mask")
        payload = np.array(self.payload, dtype=np.int64).reshape(-1)
        payload.setflags(write=False)
        object.__setattr__(self, "payload", payload)

    @property
    def nnz(self) -> int:
        return len(self.payload)

    def __eq__(self, other):
        if not isinstance(other, EncodedBlock):
            return NotImplemented
        return (
            self.index == other.index
            and np.array_equal(self.payload, other.payload)
            and self.scale == other.scale
            and self.level == other.level
        )


def index_to_mask(index: int) -> np.ndarray:
    raw = np.frombuffer(int(index).to_bytes(8, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little").astype(bool).reshape(8, 8)


def mask_to_index(mask: np.ndarray) -> int:
    flat = np.asarray(mask, dtype=bool).reshape(64)
    return int.from_bytes(np.packbits(flat, bitorder="little").tobytes(), "little")


def encode_block(q2, scale: GemmScale | None = None, level: int = 0) -> EncodedBlock:
    q2 = np.asarray(q2)
    if q2.shape != (8, 8):
        raise ValueError(f"expected an 8x8 block, got shape {q2.shape}")
    nz = q2 != 0
    # Column-major scan: column 0 rows 0..7, then column 1, ...
    payload = q2.T[nz.T]
    return EncodedBlock(mask_to_index(nz), payload, scale, level)


def decode_block(e: EncodedBlock) -> np.ndarray:
    mask = index_to_mask(e.index)
    if int(mask.sum()) != e.nnz:
        raise MalformedStreamError(
            f"index has {int(mask.sum())} set bits but payload holds {e.nnz} values"
        )
    out = np.zeros((8, 8), dtype=np.int64)
    out.T[mask.T] = e.payload
    return out


def bank_for_row(row: int, parity: int) -> int:
    return row if parity == 0 else NBANKS - 1 - row


@dataclass
class _BlockMeta:
    index: int
    scale: GemmScale | None
    level: int


@dataclass
class BufferBankState:
    """Eight append-only SRAM banks plus the index stream that addresses them.

    Per-block bank offsets are derived from the index stream alone, as the
    hardware addresses the banks from the index buffer. ``flip=False`` models
    the naive layout for comparison.
    """

    capacity: int = 128 * 1024 // NBANKS // WORD_BYTES
    flip: bool = True
    banks: list[list[int]] = field(default_factory=lambda: [[] for _ in range(NBANKS)])
    reads: list[int] = field(default_factory=lambda: [0] * NBANKS)
    writes: list[int] = field(default_factory=lambda: [0] * NBANKS)
    _meta: list[_BlockMeta] = field(default_factory=list, repr=False)
    _offsets: list[tuple[int, ...]] = field(default_factory=list, repr=False)

    @classmethod
    def from_buffer_bytes(cls, buffer_bytes: int, word_bytes: int = WORD_BYTES, **kw):
        return cls(capacity=buffer_bytes // NBANKS // word_bytes, **kw)

    @property
    def block_count(self) -> int:
        return len(self._meta)

    @property
    def fills(self) -> list[int]:
        return [len(b) for b in self.banks]

    def parity(self, n: int) -> int:
        return n % 2 if self.flip else 0

    def _row_counts(self, index: int) -> list[int]:
        return [popcount((index >> (8 * i)) & 0xFF) for i in range(8)]

    def directory(self, n: int) -> tuple[int, tuple[int, ...]]:
        """``(parity, per-bank start offsets)`` of block ``n``, from indices only."""
        # Extend the cached prefix; every entry is a pure function of the
        # indices written so far.
        while len(self._offsets) <= n:
            k = len(self._offsets)
            if k == 0:
                self._offsets.append((0,) * NBANKS)
                continue
            prev = list(self._offsets[k - 1])
            p = self.parity(k - 1)
            for row, cnt in enumerate(self._row_counts(self._meta[k - 1].index)):
                prev[bank_for_row(row, p)] += cnt
            self._offsets.append(tuple(prev))
        return self.parity(n), self._offsets[n]

    def write_block(self, e: EncodedBlock) -> "BufferBankState":
        """Append a block; atomic, raises :class:`BufferFullError` on overflow."""
        q2 = decode_block(e)
        p = self.parity(self.block_count)
        per_bank = [[] for _ in range(NBANKS)]
        for j in range(8):
            for i in range(8):
                if q2[i, j] != 0:
                    per_bank[bank_for_row(i, p)].append(int(q2[i, j]))
        for b in range(NBANKS):
            fill = len(self.banks[b]) + len(per_bank[b])
            if fill > self.capacity:
                raise BufferFullError(b, fill, self.capacity)
        for b in range(NBANKS):
            self.banks[b].extend(per_bank[b])
            self.writes[b] += len(per_bank[b])
        self._meta.append(_BlockMeta(e.index, e.scale, e.level))
        return self

    def read_block(self, n: int) -> EncodedBlock:
        if not 0 <= n < self.block_count:
            raise IndexError(f"block {n} out of range (have {self.block_count})")
        meta = self._meta[n]
        p, offsets = self.directory(n)
        mask = index_to_mask(meta.index)
        cursor = list(offsets)
        rows: list[list[int]] = [[] for _ in range(8)]
        for i in range(8):
            b = bank_for_row(i, p)
            cnt = int(mask[i].sum())
            rows[i] = self.banks[b][cursor[b]:cursor[b] + cnt]
            cursor[b] += cnt
            self.reads[b] += cnt
        taken = [0] * 8
        payload = []
        for j in range(8):
            for i in range(8):
                if mask[i, j]:
                    payload.append(rows[i][taken[i]])
                    taken[i] += 1
        return EncodedBlock(meta.index, payload, meta.scale, meta.level)

    def utilization(self) -> float:
        """Stored words over ``8 * max bank fill``; 1.0 means perfectly level banks."""
        fills = self.fills
        if max(fills) == 0:
            raise FmcError("utilization is undefined for an empty buffer")
        return sum(fills) / (NBANKS * max(fills))


def write_block(state: BufferBankState, e: EncodedBlock) -> BufferBankState:
    return state.write_block(e)


def read_block(state: BufferBankState, n: int) -> EncodedBlock:
    return state.read_block(n)


def utilization(state: BufferBankState) -> float:
    return state.utilization()
