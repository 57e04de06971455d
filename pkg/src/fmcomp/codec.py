"""Feature-map compression: DCT, two-stage quantization and sparse encoding.

Compressed streams serialize to the ``FMCZ`` format, little-endian::

    b"FMCZ"  u16 version=1
    u32 channels  u32 height  u32 width  u8 m  u8 level  u8 per_block_scale
    [channels x (f32 f_min, f32 f_max)]            if per_block_scale == 0
    per block, channel-major raster order:
        u64 index
        f32 f_min, f32 f_max                       if per_block_scale == 1
        popcount(index) x i16 payload (column-major)

Scales are rounded outward to float32 when the stream is built, so the
in-memory stream and its serialized form decode identically.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core_types import (
    BLOCK, FeatureMap, FixedPointFormat, blocks_per_channel, round_half_away,
    tile_into_blocks, untile_blocks,
)
from .dct import OpCounter, dct2_fast, idct2_fast
from .errors import MalformedStreamError
from .quant import (
    DEFAULT_M, GemmScale, QTable, gemm_dequantize, gemm_quantize,
    qtable_dequantize, qtable_quantize, select_qtable,
)
from .sparse_store import EncodedBlock, decode_block, encode_block, popcount

STREAM_MAGIC = b"FMCZ"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sHIIIBBB")
HEADER_BYTES = _HEADER.size
INDEX_BITS = 64
SCALE_BITS = 64
PAYLOAD_WORD_BITS = 16


def _f32_down(x: float) -> float:
    y = np.float32(x)
    if float(y) > x:
        y = np.nextafter(y, np.float32(-np.inf))
    return float(y)


def _f32_up(x: float) -> float:
    y = np.float32(x)
    if float(y) < x:
        y = np.nextafter(y, np.float32(np.inf))
    return float(y)


def storable_scale(f_min: float, f_max: float, m: int) -> GemmScale:
    """Scale whose bounds are float32-exact and still enclose ``[f_min, f_max]``."""
    if f_min == f_max:
        v = float(np.float32(f_min))
        return GemmScale(v, v, m)
    return GemmScale(_f32_down(f_min), _f32_up(f_max), m)


@dataclass(eq=False)
class EncodedStream:
    channels: int
    height: int
    width: int
    m: int
    level: int
    per_block_scale: bool
    blocks: list[EncodedBlock]
    channel_scales: list[GemmScale] = field(default_factory=list)

    def __post_init__(self):
        nby, nbx = blocks_per_channel(self.height, self.width)
        if len(self.blocks) != self.channels * nby * nbx:
            raise MalformedStreamError(
                f"{len(self.blocks)} blocks for a {self.channels}x{self.height}x"
                f"{self.width} map (expected {self.channels * nby * nbx})"
            )
        if not self.per_block_scale and len(self.channel_scales) != self.channels:
            raise MalformedStreamError("per-channel stream needs one scale per channel")

    @property
    def blocks_per_channel(self) -> int:
        nby, nbx = blocks_per_channel(self.height, self.width)
        return nby * nbx

    @property
    def nnz(self) -> int:
        return sum(b.nnz for b in self.blocks)

    def scale_of(self, n: int) -> GemmScale:
        if self.per_block_scale:
            return self.blocks[n].scale
        return self.channel_scales[n // self.blocks_per_channel]

    @property
    def block_bits(self) -> int:
        """Bits of the per-block records only (index, scale, payload)."""
        per_block = INDEX_BITS + (SCALE_BITS if self.per_block_scale else 0)
        return len(self.blocks) * per_block + self.nnz * PAYLOAD_WORD_BITS

    @property
    def total_bits(self) -> int:
        """Exact size of the serialized stream in bits."""
        side = 0 if self.per_block_scale else self.channels * SCALE_BITS
        return HEADER_BYTES * 8 + side + self.block_bits

    @property
    def logical_bits(self) -> int:
        """Size if payload words were m bits wide instead of 16."""
        return self.total_bits - self.nnz * (PAYLOAD_WORD_BITS - self.m)

    def origin_bits(self, fmt: FixedPointFormat | None = None) -> int:
        fmt = fmt or FixedPointFormat()
        return self.channels * self.height * self.width * fmt.total_bits

    def to_bytes(self) -> bytes:
        out = [_HEADER.pack(STREAM_MAGIC, STREAM_VERSION, self.channels, self.height,
                            self.width, self.m, self.level, int(self.per_block_scale))]
        if not self.per_block_scale:
            for s in self.channel_scales:
                out.append(struct.pack("<ff", s.f_min, s.f_max))
        for b in self.blocks:
            out.append(struct.pack("<Q", b.index))
            if self.per_block_scale:
                out.append(struct.pack("<ff", b.scale.f_min, b.scale.f_max))
            if b.payload.size and (b.payload.min() < -32768 or b.payload.max() > 32767):
                raise ValueError("payload value does not fit a 16-bit word")
            out.append(b.payload.astype("<i2").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "EncodedStream":
        try:
            magic, version, C, H, W, m, level, flag = _HEADER.unpack_from(buf, 0)
        except struct.error:
            raise MalformedStreamError("stream truncated in header") from None
        if magic != STREAM_MAGIC:
            raise MalformedStreamError(f"bad stream magic {magic!r}")
        if version != STREAM_VERSION:
            raise MalformedStreamError(f"unsupported stream version {version}")
        if flag not in (0, 1):
            raise MalformedStreamError(f"bad per-block-scale flag {flag}")
        if not 2 <= m <= 15 or level > 3:
            raise MalformedStreamError(f"bad header values m={m} level={level}")
        pos = HEADER_BYTES
        nby, nbx = blocks_per_channel(H, W)
        try:
            channel_scales = []
            if not flag:
                for _ in range(C):
                    lo, hi = struct.unpack_from("<ff", buf, pos)
                    channel_scales.append(_read_scale(lo, hi, m))
                    pos += 8
            blocks = []
            for _ in range(C * nby * nbx):
                (index,) = struct.unpack_from("<Q", buf, pos)
                pos += 8
                scale = None
                if flag:
                    lo, hi = struct.unpack_from("<ff", buf, pos)
                    scale = _read_scale(lo, hi, m)
                    pos += 8
                n = popcount(index)
                if pos + 2 * n > len(buf):
                    raise MalformedStreamError("stream truncated inside a block payload")
                payload = np.frombuffer(buf, dtype="<i2", count=n, offset=pos).astype(np.int64)
                pos += 2 * n
                blocks.append(EncodedBlock(index, payload, scale, level))
        except struct.error:
            raise MalformedStreamError("stream truncated") from None
        if pos != len(buf):
            raise MalformedStreamError(f"{len(buf) - pos} trailing bytes after last block")
        return cls(C, H, W, m, level, bool(flag), blocks, channel_scales)


def _read_scale(lo: float, hi: float, m: int) -> GemmScale:
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise MalformedStreamError(f"bad scale [{lo}, {hi}]")
    return GemmScale(float(lo), float(hi), m)


def compress_featuremap(
    fm: FeatureMap, level: int = 1, m: int = DEFAULT_M,
    per_block_scale: bool = True, qtable: QTable | None = None,
) -> EncodedStream:
    """DCT -> GEMM quantization -> Q-table quantization -> sparse encoding."""
    if not isinstance(fm, FeatureMap):
        fm = FeatureMap(fm)
    qt = qtable if qtable is not None else select_qtable(level)
    blocks: list[EncodedBlock] = []
    channel_scales: list[GemmScale] = []
    for c in range(fm.channels):
        coeffs = dct2_fast(tile_into_blocks(fm, c))
        if per_block_scale:
            scales = [
                storable_scale(float(z.min()), float(z.max()), m) for z in coeffs
            ]
        else:
            s = storable_scale(float(coeffs.min()), float(coeffs.max()), m)
            channel_scales.append(s)
            scales = [s] * len(coeffs)
        for z, s in zip(coeffs, scales):
            q1, _ = gemm_quantize(z, m, scale=s)
            q2 = qtable_quantize(q1, qt)
            blocks.append(encode_block(q2, s if per_block_scale else None, level))
    return EncodedStream(fm.channels, fm.height, fm.width, m, level,
                         per_block_scale, blocks, channel_scales)


def decompress_featuremap(
    s: EncodedStream, qtable: QTable | None = None,
    counter: OpCounter | None = None, fmt: FixedPointFormat | None = None,
) -> FeatureMap:
    """Decode -> inverse Q-table -> inverse GEMM -> IDCT.

    Coefficients that dequantize to exactly zero are gated off in the IDCT,
    so an all-zero block costs no multiplies (see ``counter``).
    """
    qt = qtable if qtable is not None else select_qtable(s.level)
    q2_max = round_half_away(((1 << s.m) - 1) / qt.entries)
    per = s.blocks_per_channel
    out = np.zeros((s.channels, s.height, s.width))
    for c in range(s.channels):
        coeffs = np.empty((per, BLOCK, BLOCK))
        for k in range(per):
            n = c * per + k
            q2 = decode_block(s.blocks[n])
            if (q2 < 0).any() or (q2 > q2_max).any():
                raise MalformedStreamError(f"block {n}: value outside the quantizer range")
            scale = s.scale_of(n)
            # q2 * qt can overshoot i_max by up to qt/2; the encoder never
            # produced values outside [0, i_max], so clamp back onto the grid.
            q1 = np.clip(qtable_dequantize(q2, qt), 0, scale.i_max)
            coeffs[k] = gemm_dequantize(q1, scale)
        out[c] = untile_blocks(idct2_fast(coeffs, counter=counter), s.height, s.width)
    return FeatureMap(out, fmt or FixedPointFormat())


def reconstruction_error(reference, approx) -> tuple[float, float]:
    """``(max_abs_error, psnr_db)``; the PSNR peak is the reference's range."""
    ref = np.asarray(reference.data if isinstance(reference, FeatureMap) else reference,
                     dtype=np.float64)
    app = np.asarray(approx.data if isinstance(approx, FeatureMap) else approx,
                     dtype=np.float64)
    diff = ref - app
    max_err = float(np.abs(diff).max()) if diff.size else 0.0
    mse = float(np.mean(diff ** 2)) if diff.size else 0.0
    peak = float(ref.max() - ref.min()) if ref.size else 0.0
    if peak == 0.0:
        peak = 1.0
    psnr = float("inf") if mse == 0.0 else 10.0 * np.log10(peak ** 2 / mse)
    return max_err, psnr
