"""scikit-learn compatible wrappers.

:class:`FeatureMapCompressor` is a transformer whose ``transform`` returns
the lossy reconstruction of a ``(C, H, W)`` feature map, so it can sit in a
``Pipeline`` to simulate compressed storage between stages. The encoded
stream of the last call is kept in ``stream_``. :class:`RowFrameConv2d`
wraps the PE-array convolution plus its non-linear ops.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .codec import (
    EncodedStream, compress_featuremap, decompress_featuremap, reconstruction_error,
)
from .core_types import FeatureMap, FixedPointFormat
from .pe_sim import ConvLayer, NonLinearConfig, conv_accel, conv_direct, nonlinear
from .quant import QTable


def check_feature_map(X, n_channels: int | None = None) -> np.ndarray:
    """Validate and return ``X`` as a float64 ``(C, H, W)`` array."""
    if isinstance(X, FeatureMap):
        X = X.data
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"expected a (C, H, W) feature map, got shape {X.shape}")
    if n_channels is not None and X.shape[0] != n_channels:
        raise ValueError(f"X has {X.shape[0]} channels, estimator was fit on {n_channels}")
    return X


class FeatureMapCompressor(TransformerMixin, BaseEstimator):
    """DCT + quantization + sparse encoding, scikit-learn style.

    Parameters
    ----------
    level : int, default=1
        Built-in Q-table level, 0 (coarsest) to 3 (finest).
    m : int, default=8
        Bits of the GEMM quantization grid.
    per_block_scale : bool, default=True
        Keep a min/max scale per 8x8 block rather than per channel.
    qtable : QTable or None
        Overrides the built-in table for ``level``.
    total_bits, frac_bits : int
        Fixed-point storage format used for the ratio's denominator.
    """

    def __init__(self, level=1, m=8, per_block_scale=True, qtable=None,
                 total_bits=16, frac_bits=8):
        self.level = level
        self.m = m
        self.per_block_scale = per_block_scale
        self.qtable = qtable
        self.total_bits = total_bits
        self.frac_bits = frac_bits

    def _fmt(self):
        return FixedPointFormat(self.total_bits, self.frac_bits)

    def fit(self, X, y=None):
        X = check_feature_map(X)
        if self.level not in range(4):
            raise ValueError(f"level must be 0..3, got {self.level}")
        if self.qtable is not None and not isinstance(self.qtable, QTable):
            raise TypeError("qtable must be a QTable")
        self._fmt()
        self.n_channels_ = X.shape[0]
        self.input_shape_ = X.shape
        return self

    def encode(self, X) -> EncodedStream:
        check_is_fitted(self, "n_channels_")
        X = check_feature_map(X, self.n_channels_)
        return compress_featuremap(FeatureMap(X, self._fmt()), self.level, self.m,
                                   self.per_block_scale, self.qtable)

    def decode(self, stream: EncodedStream) -> np.ndarray:
        return decompress_featuremap(stream, self.qtable, fmt=self._fmt()).data

    def transform(self, X):
        self.stream_ = self.encode(X)
        return self.decode(self.stream_)

    def inverse_transform(self, X):
        """Identity on reconstructions; decodes an :class:`EncodedStream`."""
        if isinstance(X, EncodedStream):
            return self.decode(X)
        return check_feature_map(X)

    def compression_ratio(self, X) -> float:
        s = self.encode(X)
        return s.total_bits / s.origin_bits(self._fmt())

    def score(self, X, y=None) -> float:
        """PSNR of the reconstruction in dB (higher is better)."""
        X = check_feature_map(X)
        return reconstruction_error(X, self.transform(X))[1]


class RowFrameConv2d(TransformerMixin, BaseEstimator):
    """Convolution on the simulated PE array, followed by non-linear ops.

    ``weights`` is ``(F, C, K, K)`` (``(C, 1, K, K)`` when ``depthwise``).
    Set ``reference=True`` to use the direct convolution instead.
    """

    def __init__(self, weights=None, stride=1, padding=0, depthwise=False,
                 nonlinear_ops=(), reference=False):
        self.weights = weights
        self.stride = stride
        self.padding = padding
        self.depthwise = depthwise
        self.nonlinear_ops = nonlinear_ops
        self.reference = reference

    def fit(self, X=None, y=None):
        if self.weights is None:
            raise ValueError("weights are required")
        self.layer_ = ConvLayer(np.asarray(self.weights), self.stride,
                                self.padding, self.depthwise)
        self.nonlinear_ = NonLinearConfig(tuple(self.nonlinear_ops))
        if X is not None:
            check_feature_map(X, self.layer_.in_channels)
        self.n_channels_ = self.layer_.in_channels
        return self

    def transform(self, X):
        check_is_fitted(self, "layer_")
        X = np.asarray(X.data if isinstance(X, FeatureMap) else X)
        if X.ndim == 2:
            X = X[None]
        if X.ndim != 3 or X.shape[0] != self.n_channels_:
            raise ValueError(
                f"expected ({self.n_channels_}, H, W) input, got shape {X.shape}"
            )
        conv = conv_direct if self.reference else conv_accel
        return nonlinear(conv(X, self.layer_), self.nonlinear_).data
