"""Functional model of the PE array and its row-frame dataflow.

The simulator is eager rather than clocked: the PE-unit/data-MUX structure
fixes which input rows feed which partial sums and how partial sums of
neighbouring row frames (RFs) are spliced, while the arithmetic itself is
evaluated with numpy.

Inside one 8-row RF, an output row whose receptive field lies wholly in the
frame is *completed* locally. An output row that also needs the first rows
of the next frame leaves a partial sum (``PSUM''``) in the scratch pad; the
next frame computes the matching top-edge contribution (``PSUM'``) and adds
the carried value. Integer inputs and weights give bit-exact results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core_types import FeatureMap

PE_GROUPS = 4
PE_UNITS_PER_GROUP = 8
MULTS_PER_UNIT = 9
CHANNELS_PER_PASS = 4
RF_ROWS = 8


@dataclass(frozen=True, eq=False)
class ConvLayer:
    """Convolution weights plus geometry.

    ``weights`` is ``(F, C, K, K)``; for depthwise layers it is
    ``(C, 1, K, K)`` and channel ``c`` is filtered by ``weights[c, 0]``.
    """

    weights: np.ndarray
    stride: int = 1
    padding: int = 0
    depthwise: bool = False

    def __post_init__(self):
        w = np.array(self.weights, copy=True)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"weights must be (F, C, K, K), got shape {w.shape}")
        if not 1 <= w.shape[2] <= 7:
            raise ValueError(f"kernel size must be 1..7, got {w.shape[2]}")
        if self.depthwise and w.shape[1] != 1:
            raise ValueError("depthwise weights must have shape (C, 1, K, K)")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if not 0 <= self.padding <= 3:
            raise ValueError(f"padding must be 0..3, got {self.padding}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def kernel(self) -> int:
        return self.weights.shape[2]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[0] if self.depthwise else self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    def output_shape(self, height: int, width: int) -> tuple[int, int]:
        ho = (height + 2 * self.padding - self.kernel) // self.stride + 1
        wo = (width + 2 * self.padding - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ValueError(
                f"{height}x{width} input is smaller than a {self.kernel}x{self.kernel} "
                f"kernel with padding {self.padding}"
            )
        return ho, wo

    def replace(self, **kw) -> "ConvLayer":
        args = dict(weights=self.weights, stride=self.stride,
                    padding=self.padding, depthwise=self.depthwise)
        args.update(kw)
        return ConvLayer(**args)


def _as_array(x) -> tuple[np.ndarray, FeatureMap | None]:
    if isinstance(x, FeatureMap):
        return x.data, x
    arr = np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None]
    return arr, None


def _wrap(data: np.ndarray, like: FeatureMap | None) -> FeatureMap:
    return FeatureMap(data, like.fmt) if like is not None else FeatureMap(data)


def _acc_dtype(x: np.ndarray, w: np.ndarray):
    if x.dtype.kind in "iu" and w.dtype.kind in "iu":
        return np.int64
    return np.float64


def _check_channels(x: np.ndarray, layer: ConvLayer):
    if x.shape[0] != layer.in_channels:
        raise ValueError(
            f"input has {x.shape[0]} channels, layer expects {layer.in_channels}"
        )


def conv_direct(fm, layer: ConvLayer) -> FeatureMap:
    """Reference convolution: each output pixel is the full window sum.

    ``O[f, r, c] = sum_{ch, i, j} I[ch, s*r + i - p, s*c + j - p] * W[f, ch, i, j]``
    with zeros outside the input. No bias.
    """
    x, like = _as_array(fm)
    _check_channels(x, layer)
    C, H, W = x.shape
    K, s, p = layer.kernel, layer.stride, layer.padding
    ho, wo = layer.output_shape(H, W)
    dtype = _acc_dtype(x, layer.weights)
    xp = np.zeros((C, H + 2 * p, W + 2 * p), dtype=dtype)
    xp[:, p:p + H, p:p + W] = x
    w = layer.weights.astype(dtype)
    out = np.zeros((layer.out_channels, ho, wo), dtype=dtype)
    for i in range(K):
        for j in range(K):
            tap = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s]
            if layer.depthwise:
                out += w[:, 0, i, j, None, None] * tap
            else:
                out += np.tensordot(w[:, :, i, j], tap, axes=1)
    return _wrap(out, like)


@dataclass
class PsumBank:
    """Partial-sum bookkeeping for one row frame.

    ``carry_prev`` holds the rows inherited from the previous frame and
    ``carry_next`` the rows this frame leaves for the next one, keyed by
    output row.
    """

    frame: int
    completed: list[int] = field(default_factory=list)
    carry_prev: dict[int, np.ndarray] = field(default_factory=dict)
    carry_next: dict[int, np.ndarray] = field(default_factory=dict)
    merged: list[int] = field(default_factory=list)


@dataclass
class RFTrace:
    """Instrumentation gathered during a :func:`conv_rf` sweep."""

    kernel: int = 3
    frames: int = 0
    carries_produced: int = 0
    carries_consumed: int = 0
    emitted_at_bottom: int = 0
    # (filter group, frame) -> (rows it deposited, rows consumed by next frame)
    handoffs: dict[tuple[int, int], tuple[list[int], list[int]]] = field(default_factory=dict)
    channel_passes: int = 0
    mode_counts: dict[str, int] = field(default_factory=dict)

    @property
    def active_pes(self) -> int:
        return active_pes(self.kernel)


def active_pes(kernel: int) -> int:
    """Multipliers switched on across the array for a kernel mode.

    3x3 (and 2x2) mode uses all nine multipliers of every PE unit; 1x1 mode
    computes eight filters per unit and gates the ninth off.
    """
    per_unit = PE_UNITS_PER_GROUP if kernel == 1 else MULTS_PER_UNIT
    return PE_GROUPS * PE_UNITS_PER_GROUP * per_unit


def filter_group_size(kernel: int) -> int:
    return 8 if kernel == 1 else 4


def _mac_dtype(x: np.ndarray, w: np.ndarray, dtype):
    """Multiply-accumulate type: doubles whenever integer sums stay exact."""
    if dtype is np.float64:
        return np.float64
    C, K = w.shape[1], w.shape[-1]
    xm, wm = int(np.abs(x).max()), int(np.abs(w).max())
    # abs() wraps for the most negative integer, hence the sign checks
    exact = 0 <= xm and 0 <= wm and xm * wm * C * K * K < 2 ** 53
    return np.float64 if exact else np.int64


def _pe_group(cols: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row partials of one channel group across every RF.

    ``cols`` is ``(n_rf, cg*K*K, L)``: for each tap, the frame buffer
    flattened row-major and shifted by that tap. ``w`` is ``(F, cg*K*K)``.
    Returns ``(n_rf, F, L)``.
    """
    return np.matmul(w, cols)


def _conv_rf_stride1(x: np.ndarray, w: np.ndarray, padding: int,
                     trace: RFTrace | None) -> np.ndarray:
    C, H, W = x.shape
    F, _, K, _ = w.shape
    p = padding
    ho, wo = H + 2 * p - K + 1, W + 2 * p - K + 1
    dtype = _acc_dtype(x, w)
    mac = _mac_dtype(x, w, dtype)
    n_rf = math.ceil(H / RF_ROWS)
    fg = filter_group_size(K)
    # One frame buffer per RF with K-1 zero rows above and below: taps that
    # fall outside the frame (padding or a neighbouring RF) read zeros, which
    # is what a PE unit sees for a row that is not streamed in.
    depth, wp = RF_ROWS + 2 * (K - 1), W + 2 * p
    n_rows = depth - K + 1
    ext = np.zeros((n_rf, C, depth * wp + K - 1), dtype=mac)
    grid = ext[:, :, :depth * wp].reshape(n_rf, C, depth, wp)
    for k in range(n_rf):
        lo, hi = k * RF_ROWS, min((k + 1) * RF_ROWS, H)
        grid[k, :, K - 1:K - 1 + hi - lo, p:p + W] = x[:, lo:hi]
    # Tap (i, j) of the window at (t, col) is ext[t*wp + col + i*wp + j], so
    # each tap is the flattened frame shifted by i*wp + j.
    st = ext.strides
    cols = np.ndarray(
        (n_rf, C, K, K, n_rows * wp), mac, ext, 0,
        (st[0], st[1], wp * st[2], st[2], st[2]),
    ).reshape(n_rf, C * K * K, n_rows * wp)
    wm = w.astype(mac).reshape(F, C * K * K)
    step = CHANNELS_PER_PASS * K * K
    partial = _pe_group(cols[:, :step], wm[:, :step])
    for c0 in range(step, C * K * K, step):
        partial += _pe_group(cols[:, c0:c0 + step], wm[:, c0:c0 + step])
    # slot t of RF k holds output row k*8 + t - (K-1) + p
    partial = partial.reshape(n_rf, F, n_rows, wp)[..., :wo]

    # Filter groups sweep the frames independently and identically, so all of
    # them are spliced at once; the trace still counts each group's sweep.
    n_fg = math.ceil(F / fg)
    out = np.zeros((F, ho, wo), dtype=mac)
    carry: dict[int, np.ndarray] = {}
    for k in range(n_rf):
        lo, hi = k * RF_ROWS, min((k + 1) * RF_ROWS, H)
        bank = PsumBank(k, carry_prev=carry)
        r_first = max(0, lo + p - K + 1)
        r_last = min(ho - 1, hi - 1 + p)
        t0 = K - 1 - p - lo
        # Output rows split into three runs: rows owned by the previous RF
        # (PSUM'), rows finished here, rows that still need the next RF
        # (PSUM'').
        prev_end = min(max(lo + p, r_first), r_last + 1) if k > 0 else r_first
        next_start = max(hi + p - K + 1, prev_end) if hi < H else r_last + 1
        next_start = min(next_start, r_last + 1)
        pk = partial[k]
        for r in range(r_first, prev_end):
            out[:, r] = bank.carry_prev.pop(r) + pk[:, r + t0]
            bank.merged.append(r)
        out[:, prev_end:next_start] = pk[:, prev_end + t0:next_start + t0]
        for r in range(next_start, r_last + 1):
            bank.carry_next[r] = pk[:, r + t0]
        if bank.carry_prev:
            raise RuntimeError(
                f"frame {k} left carried rows {sorted(bank.carry_prev)} unmerged"
            )
        if trace is not None:
            bank.completed.extend(range(prev_end, next_start))
            n_cg = math.ceil(C / CHANNELS_PER_PASS)
            trace.channel_passes += n_fg * n_cg * max(0, r_last - r_first + 1)
            for role, n in (("psum_prev", len(bank.merged)),
                            ("completed", len(bank.completed)),
                            ("psum_next", len(bank.carry_next))):
                if n:
                    trace.mode_counts[role] = trace.mode_counts.get(role, 0) + n_fg * n
            trace.carries_produced += n_fg * len(bank.carry_next)
            trace.carries_consumed += n_fg * len(bank.merged)
            for g in range(n_fg):
                if k > 0:
                    deposited = trace.handoffs[(g, k - 1)][0]
                    trace.handoffs[(g, k - 1)] = (deposited, list(bank.merged))
                trace.handoffs[(g, k)] = (sorted(bank.carry_next), [])
        carry = bank.carry_next
    # Only reachable if the last frame deposited rows; they are complete.
    for r, part in carry.items():
        out[:, r] = part
        if trace is not None:
            trace.emitted_at_bottom += n_fg
    if trace is not None:
        trace.frames = n_rf
        trace.kernel = K
    return out.astype(dtype, copy=False)


def apply_stride2(fm):
    """Keep even rows and columns of a stride-1 result."""
    x, like = _as_array(fm)
    return _wrap(x[:, ::2, ::2], like)


def conv_rf(fm, layer: ConvLayer, trace: RFTrace | None = None) -> FeatureMap:
    """Convolution through the row-frame PE-array dataflow (kernels up to 3x3).

    Stride 2 is computed at stride 1 and the skipped rows/columns dropped.
    """
    x, like = _as_array(fm)
    _check_channels(x, layer)
    if layer.kernel > 3:
        raise ValueError(
            f"kernel {layer.kernel} exceeds the 3x3 PE array; use decompose_kernel"
        )
    layer.output_shape(x.shape[1], x.shape[2])
    if layer.depthwise:
        out = np.concatenate([
            _conv_rf_stride1(x[c:c + 1], layer.weights[c:c + 1], layer.padding, trace)
            for c in range(x.shape[0])
        ])
    else:
        out = _conv_rf_stride1(x, layer.weights, layer.padding, trace)
    if layer.stride == 2:
        out = np.ascontiguousarray(out[:, ::2, ::2])
    return FeatureMap._adopt(out, like.fmt if like is not None else None)


def decompose_kernel(layer: ConvLayer) -> list[tuple[np.ndarray, tuple[int, int]]]:
    """Split a 4x4..7x7 kernel into zero-padded 3x3 tiles with their offsets."""
    K = layer.kernel
    if not 4 <= K <= 7:
        raise ValueError(f"decomposition needs a kernel of 4..7, got {K}")
    n = math.ceil(K / 3)
    padded = np.zeros(layer.weights.shape[:2] + (3 * n, 3 * n), dtype=layer.weights.dtype)
    padded[:, :, :K, :K] = layer.weights
    return [
        (padded[:, :, a:a + 3, b:b + 3].copy(), (a, b))
        for a in range(0, 3 * n, 3)
        for b in range(0, 3 * n, 3)
    ]


def conv_decomposed(fm, layer: ConvLayer, trace: RFTrace | None = None) -> FeatureMap:
    """Large-kernel convolution as a sum of shifted 3x3 row-frame convolutions."""
    x, like = _as_array(fm)
    _check_channels(x, layer)
    C, H, W = x.shape
    K, p = layer.kernel, layer.padding
    layer.output_shape(H, W)
    ho, wo = H + 2 * p - K + 1, W + 2 * p - K + 1
    parts = decompose_kernel(layer)
    ext = 3 * math.ceil(K / 3) - K
    dtype = _acc_dtype(x, layer.weights)
    xp = np.zeros((C, H + 2 * p + ext, W + 2 * p + ext), dtype=dtype)
    xp[:, p:p + H, p:p + W] = x
    out = np.zeros((layer.out_channels, ho, wo), dtype=dtype)
    for sub, (a, b) in parts:
        window = xp[:, a:a + ho + 2, b:b + wo + 2]
        sub_layer = ConvLayer(sub, stride=1, padding=0, depthwise=layer.depthwise)
        out += conv_rf(window, sub_layer, trace).data
    if layer.stride == 2:
        out = out[:, ::2, ::2]
    return _wrap(out, like)


def conv_accel(fm, layer: ConvLayer, trace: RFTrace | None = None) -> FeatureMap:
    """Run a layer the way the accelerator would: direct for K<=3, else decomposed."""
    if layer.kernel <= 3:
        return conv_rf(fm, layer, trace)
    return conv_decomposed(fm, layer, trace)


# --------------------------------------------------------------------------
# Non-linear module


@dataclass(frozen=True)
class Relu:
    def __call__(self, x):
        return np.maximum(x, 0)


@dataclass(frozen=True)
class LeakyRelu:
    alpha: float = 0.01

    def __call__(self, x):
        return np.where(x >= 0, x, self.alpha * x)


@dataclass(frozen=True, eq=False)
class PRelu:
    alpha: np.ndarray

    def __call__(self, x):
        a = np.broadcast_to(np.asarray(self.alpha, dtype=np.float64).reshape(-1), (x.shape[0],))
        return np.where(x >= 0, x, a[:, None, None] * x)


@dataclass(frozen=True, eq=False)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __call__(self, x):
        def per_channel(v):
            return np.broadcast_to(np.asarray(v, dtype=np.float64).reshape(-1),
                                   (x.shape[0],))[:, None, None]
        return (per_channel(self.gamma) * (x - per_channel(self.mean))
                / np.sqrt(per_channel(self.var) + self.eps) + per_channel(self.beta))


@dataclass(frozen=True)
class MaxPool:
    size: int = 2
    stride: int = 2

    def __call__(self, x):
        return _pool(x, self.size, self.stride, np.max)


@dataclass(frozen=True)
class AvgPool:
    size: int = 2
    stride: int = 2

    def __call__(self, x):
        return _pool(x, self.size, self.stride, np.mean)


def _pool(x, size, stride, reduce):
    C, H, W = x.shape
    if size > H or size > W:
        raise ValueError(f"pooling window {size} larger than {H}x{W} input")
    win = sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride]
    return reduce(win, axis=(-2, -1))


POOL_OPS = (MaxPool, AvgPool)


@dataclass(frozen=True)
class NonLinearConfig:
    """Ordered non-linear ops applied after a convolution (at most three)."""

    ops: tuple = ()

    def __post_init__(self):
        ops = tuple(self.ops)
        if len(ops) > 3:
            raise ValueError(f"at most 3 non-linear ops, got {len(ops)}")
        if sum(isinstance(op, POOL_OPS) for op in ops) > 1:
            raise ValueError("at most one pooling op per layer")
        object.__setattr__(self, "ops", ops)


def nonlinear(fm, cfg: NonLinearConfig) -> FeatureMap:
    x, like = _as_array(fm)
    y = x
    for op in cfg.ops:
        y = op(y)
    return _wrap(np.asarray(y), like)


# --------------------------------------------------------------------------


def estimate_cycles(layer: ConvLayer, height: int, width: int) -> int:
    """Coarse cycle estimate; a throughput model, not a timing claim.

    3x3 mode spends four cycles per input column (one per filter of a group
    of four); 1x1 mode processes eight filters per cycle. Stride 2 adds one
    bypass cycle for each skipped column of every pass.
    """
    C = layer.in_channels
    F = 1 if layer.depthwise else layer.out_channels
    frames = math.ceil(height / RF_ROWS)
    ch_groups = math.ceil(C / CHANNELS_PER_PASS)
    if layer.kernel == 1:
        passes = ch_groups * math.ceil(F / 8) * frames
        cycles = passes * width
    else:
        n_sub = math.ceil(layer.kernel / 3) ** 2
        passes = ch_groups * math.ceil(F / 4) * frames * n_sub
        cycles = passes * 4 * width
    if layer.stride == 2:
        cycles += passes * (width // 2)
    return cycles
