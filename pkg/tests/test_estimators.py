import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from fmcomp import FeatureMapCompressor, RowFrameConv2d
from fmcomp.codec import EncodedStream, compress_featuremap, decompress_featuremap
from fmcomp.core_types import FeatureMap
from fmcomp.pe_sim import ConvLayer, Relu, conv_direct


def test_params_and_clone():
    est = FeatureMapCompressor(level=2, m=6)
    assert est.get_params()["level"] == 2
    twin = clone(est.set_params(per_block_scale=False))
    assert twin.get_params() == est.get_params() and twin is not est


def test_transform_matches_codec(rng):
    x = rng.normal(size=(3, 12, 20))
    est = FeatureMapCompressor(level=1).fit(x)
    rec = est.transform(x)
    ref = decompress_featuremap(compress_featuremap(FeatureMap(x), level=1))
    np.testing.assert_array_equal(rec, ref.data)
    assert isinstance(est.stream_, EncodedStream)
    np.testing.assert_array_equal(est.inverse_transform(est.stream_), rec)
    assert est.compression_ratio(x) == est.stream_.total_bits / (x.size * 16)
    assert est.score(x) > 20


def test_two_dimensional_input(rng):
    est = FeatureMapCompressor().fit(rng.normal(size=(9, 9)))
    assert est.n_channels_ == 1 and est.transform(np.ones((9, 9))).shape == (1, 9, 9)


def test_validation(rng):
    with pytest.raises(NotFittedError):
        FeatureMapCompressor().transform(np.ones((1, 8, 8)))
    with pytest.raises(ValueError):
        FeatureMapCompressor(level=7).fit(np.ones((1, 8, 8)))
    with pytest.raises(ValueError):
        FeatureMapCompressor().fit(np.ones((1, 8, 8))).transform(np.ones((2, 8, 8)))
    with pytest.raises(ValueError):
        FeatureMapCompressor().fit(np.ones((1, 2, 8, 8)))
    with pytest.raises(ValueError):
        FeatureMapCompressor().fit(np.full((1, 8, 8), np.nan))


def test_conv_estimator_in_pipeline(rng):
    w = rng.integers(-3, 4, (4, 2, 3, 3))
    x = rng.integers(-9, 10, (2, 14, 11)).astype(float)
    conv = RowFrameConv2d(weights=w, padding=1, nonlinear_ops=(Relu(),))
    out = conv.fit(x).transform(x)
    ref = np.maximum(conv_direct(x, ConvLayer(w, padding=1)).data, 0)
    np.testing.assert_array_equal(out, ref)
    np.testing.assert_array_equal(clone(conv).set_params(reference=True).fit().transform(x), ref)

    pipe = make_pipeline(RowFrameConv2d(weights=w, padding=1), FeatureMapCompressor(level=3))
    assert pipe.fit_transform(x).shape == (4, 14, 11)


def test_conv_estimator_errors():
    with pytest.raises(ValueError):
        RowFrameConv2d().fit()
    conv = RowFrameConv2d(weights=np.ones((1, 2, 3, 3))).fit()
    with pytest.raises(ValueError):
        conv.transform(np.ones((3, 8, 8)))
