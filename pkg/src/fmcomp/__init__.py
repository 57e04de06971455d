"""Feature-map compression and a simulated fusion-layer accelerator.

The codec (8x8 DCT, two-stage quantization, sparse bitmap encoding) lives in
:mod:`fmcomp.codec`. The buffer bank, memory planner and PE-array model live
in :mod:`fmcomp.sparse_store`, :mod:`fmcomp.mem_config` and
:mod:`fmcomp.pe_sim`. :mod:`fmcomp.pipeline` ties them into layers.
"""
from .codec import EncodedStream, compress_featuremap, decompress_featuremap, reconstruction_error
from .core_types import FeatureMap, FixedPointFormat, from_fixed, tile_into_blocks, to_fixed, untile_blocks
from .dct import dct2_direct, dct2_fast, idct2_direct, idct2_fast
from .errors import BufferFullError, ConfigError, FmcError, InfeasiblePlanError, MalformedStreamError
from .mem_config import MemoryLayout, configure, plan_best, plan_layer
from .pe_sim import ConvLayer, NonLinearConfig, conv_accel, conv_direct, estimate_cycles, nonlinear
from .pipeline import FusionLayerConfig, LayerReport, run_fusion_layer, run_layers, run_network
from .quant import GemmScale, QTable, gemm_dequantize, gemm_quantize, select_qtable
from .sparse_store import BufferBankState, EncodedBlock, decode_block, encode_block

__version__ = "0.1.0"

_ESTIMATORS = ("FeatureMapCompressor", "RowFrameConv2d")


def __getattr__(name):
    # scikit-learn is imported only when the estimator wrappers are used
    if name in _ESTIMATORS:
        from . import estimators

        return getattr(estimators, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "BufferBankState", "BufferFullError", "ConfigError", "ConvLayer", "EncodedBlock",
    "EncodedStream", "FeatureMap", "FeatureMapCompressor", "FixedPointFormat", "FmcError", "FusionLayerConfig",
    "GemmScale", "InfeasiblePlanError", "LayerReport", "MalformedStreamError",
    "MemoryLayout", "NonLinearConfig", "QTable", "RowFrameConv2d", "compress_featuremap", "configure",
    "conv_accel", "conv_direct", "dct2_direct", "dct2_fast", "decode_block",
    "decompress_featuremap", "encode_block", "estimate_cycles", "from_fixed",
    "gemm_dequantize", "gemm_quantize", "idct2_direct", "idct2_fast", "nonlinear",
    "plan_best", "plan_layer", "reconstruction_error", "run_fusion_layer", "run_layers",
    "run_network", "select_qtable", "tile_into_blocks", "to_fixed", "untile_blocks",
]
