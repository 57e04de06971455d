"""Fusion-layer orchestration and per-layer statistics.

A fusion layer decompresses its input, convolves, applies the configured
non-linear ops and, if enabled, compresses the result back into the
feature-map buffer. Each layer reports the compression ratio (compressed
size over original size), the loss introduced by compression, the tiling
plan chosen for the buffer bank and a coarse cycle estimate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .codec import (
    EncodedStream, compress_featuremap, decompress_featuremap, reconstruction_error,
)
from .core_types import FeatureMap, FixedPointFormat
from .mem_config import (
    SCRATCH_CHOICES_KB, TilingPlan, configure_kb, layer_demand, plan_layer,
)
from .pe_sim import ConvLayer, NonLinearConfig, conv_accel, estimate_cycles, nonlinear
from .quant import DEFAULT_M, QTable


@dataclass(frozen=True)
class FusionLayerConfig:
    conv: ConvLayer
    nonlinear: NonLinearConfig = field(default_factory=NonLinearConfig)
    level: int = 1
    compress: bool = True
    scratch_kb: int = 64
    m: int = DEFAULT_M
    per_block_scale: bool = True
    name: str = ""
    qtable: QTable | None = None
    fmt: FixedPointFormat | None = None

    def __post_init__(self):
        if self.level not in range(4):
            raise ValueError(f"level must be 0..3, got {self.level}")
        if self.scratch_kb not in SCRATCH_CHOICES_KB:
            raise ValueError(f"scratch_kb must be one of {SCRATCH_CHOICES_KB}")


@dataclass
class LayerReport:
    name: str
    origin_bits: int
    compressed_bits: int
    ratio: float
    max_abs_error: float
    psnr: float
    tiling: TilingPlan
    cycles: int
    compressed: bool = True
    block_bits: int = 0
    block_ratio: float = 1.0
    logical_bits: int = 0
    logical_ratio: float = 1.0
    input_buffer: str = "feature_a"
    output_buffer: str = "feature_b"
    output_shape: tuple[int, int, int] = (0, 0, 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        plan = d.pop("tiling")
        d["fits_on_chip"] = plan["fits_on_chip"]
        d["tiles"] = plan["tiles"]
        d["spill_bytes"] = plan["spill_bytes"]
        d["scratch_kb"] = plan["layout"]["scratch"] // 1024
        d["output_shape"] = list(self.output_shape)
        if math.isinf(d["psnr"]):
            d["psnr"] = None
        return d


def compression_ratio(compressed_bits: int, origin_bits: int) -> float:
    return compressed_bits / origin_bits


def _input_size_bits(inp, fmt: FixedPointFormat) -> int:
    if isinstance(inp, EncodedStream):
        return inp.total_bits
    return inp.data.size * fmt.total_bits


def run_fusion_layer(
    inp, cfg: FusionLayerConfig, layer_index: int = 0, in_qtable: QTable | None = None,
) -> tuple[EncodedStream | FeatureMap, LayerReport]:
    """Run one fusion layer. ``inp`` is a compressed stream or a feature map.

    ``in_qtable`` must match the table ``inp`` was encoded with when that
    was not the built-in table for its level.
    """
    fmt = cfg.fmt or (inp.fmt if isinstance(inp, FeatureMap) else FixedPointFormat())
    if isinstance(inp, EncodedStream):
        x = decompress_featuremap(inp, in_qtable, fmt=fmt)
    elif isinstance(inp, FeatureMap):
        x = inp
    else:
        x = FeatureMap(np.asarray(inp, dtype=np.float64), fmt)
    if x.channels != cfg.conv.in_channels:
        raise ValueError(
            f"layer {cfg.name or layer_index}: input has {x.channels} channels, "
            f"conv expects {cfg.conv.in_channels}"
        )
    conv_out = conv_accel(x, cfg.conv)
    y = nonlinear(conv_out, cfg.nonlinear)
    y = FeatureMap(y.data.astype(np.float64), fmt)
    origin = y.origin_bits

    if cfg.compress:
        out = compress_featuremap(y, cfg.level, cfg.m, cfg.per_block_scale, cfg.qtable)
        recon = decompress_featuremap(out, cfg.qtable, fmt=fmt)
        max_err, psnr = reconstruction_error(y, recon)
        compressed_bits = out.total_bits
        block_bits = out.block_bits
        logical_bits = out.logical_bits
    else:
        out = y
        max_err, psnr = 0.0, float("inf")
        compressed_bits = block_bits = logical_bits = origin

    layout = configure_kb(cfg.scratch_kb)
    demand = layer_demand(
        in_bytes=math.ceil(_input_size_bits(inp, fmt) / 8),
        out_bytes=math.ceil(compressed_bits / 8),
        out_height=conv_out.height, out_width=conv_out.width,
        kernel=cfg.conv.kernel, in_height=x.height,
    )
    plan = plan_layer(demand, layout)
    report = LayerReport(
        name=cfg.name or f"layer{layer_index}",
        origin_bits=origin,
        compressed_bits=compressed_bits,
        ratio=compression_ratio(compressed_bits, origin),
        max_abs_error=max_err,
        psnr=psnr,
        tiling=plan,
        cycles=estimate_cycles(cfg.conv, x.height, x.width),
        compressed=cfg.compress,
        block_bits=block_bits,
        block_ratio=compression_ratio(block_bits, origin),
        logical_bits=logical_bits,
        logical_ratio=compression_ratio(logical_bits, origin),
        input_buffer=layout.input_buffer(layer_index),
        output_buffer=layout.output_buffer(layer_index),
        output_shape=y.shape,
    )
    return out, report


@dataclass
class NetworkResult:
    reports: list[LayerReport]
    output: FeatureMap
    summary: dict

    def to_dict(self) -> dict:
        return {"layers": [r.to_dict() for r in self.reports], "summary": self.summary}


def summarize(reports: list[LayerReport]) -> dict:
    comp = [r for r in reports if r.compressed]
    total_origin = sum(r.origin_bits for r in comp)
    total_comp = sum(r.compressed_bits for r in comp)
    return {
        "layers": len(reports),
        "compressed_layers": len(comp),
        "total_origin_bits": total_origin,
        "total_compressed_bits": total_comp,
        "overall_ratio": total_comp / total_origin if total_origin else 1.0,
        "max_abs_error": max((r.max_abs_error for r in reports), default=0.0),
        "total_cycles": sum(r.cycles for r in reports),
        "total_spill_bytes": sum(r.tiling.spill_bytes for r in reports),
    }


def run_layers(inp, layers: list[FusionLayerConfig]) -> NetworkResult:
    """Chain fusion layers; buffer roles alternate A/B from layer to layer."""
    reports = []
    cur, qt = inp, None
    for k, cfg in enumerate(layers):
        cur, rep = run_fusion_layer(cur, cfg, layer_index=k, in_qtable=qt)
        qt = cfg.qtable
        reports.append(rep)
    if isinstance(cur, EncodedStream):
        fmt = layers[-1].fmt if layers and layers[-1].fmt else FixedPointFormat()
        cur = decompress_featuremap(cur, layers[-1].qtable, fmt=fmt)
    elif not isinstance(cur, FeatureMap):
        cur = FeatureMap(cur)
    return NetworkResult(reports, cur, summarize(reports))


def run_network(config_path, input_path) -> NetworkResult:
    """Parse a network config and an ``FMAP`` input, then run every layer."""
    from .formats import read_tensor
    from .netconfig import parse_network

    layers = parse_network(config_path)
    data, frac = read_tensor(input_path)
    fmt = FixedPointFormat(16, frac) if frac is not None else FixedPointFormat()
    fm = FeatureMap(data, fmt)
    if layers and fm.channels != layers[0].conv.in_channels:
        raise ValueError(
            f"input tensor has {fm.channels} channels, layer "
            f"{layers[0].name!r} expects {layers[0].conv.in_channels}"
        )
    return run_layers(fm, layers)
