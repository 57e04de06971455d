import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fmcomp.core_types import FeatureMap
from fmcomp.pe_sim import (
    AvgPool, BatchNorm, ConvLayer, LeakyRelu, MaxPool, NonLinearConfig, PRelu, RFTrace,
    Relu, active_pes, apply_stride2, conv_accel, conv_decomposed, conv_direct, conv_rf,
    decompose_kernel, estimate_cycles, nonlinear,
)


def scalar_conv(x, w, stride, pad):
    """Independent oracle: one scalar triple sum per output pixel."""
    C, H, W = x.shape
    F, _, K, _ = w.shape
    ho, wo = (H + 2 * pad - K) // stride + 1, (W + 2 * pad - K) // stride + 1
    out = np.zeros((F, ho, wo))
    for f in range(F):
        for r in range(ho):
            for c in range(wo):
                acc = 0.0
                for ch in range(C):
                    for i in range(K):
                        for j in range(K):
                            y, xx = stride * r + i - pad, stride * c + j - pad
                            if 0 <= y < H and 0 <= xx < W:
                                acc += x[ch, y, xx] * w[f, ch, i, j]
                out[f, r, c] = acc
    return out


class TestLayer:
    def test_validation(self):
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((1, 1, 3, 2)))
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((1, 1, 8, 8)))
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((1, 1, 3, 3)), stride=3)
        with pytest.raises(ValueError):
            ConvLayer(np.zeros((2, 2, 3, 3)), depthwise=True)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv_direct(np.zeros((2, 8, 8)), ConvLayer(np.zeros((1, 3, 3, 3))))
        with pytest.raises(ValueError):
            conv_rf(np.zeros((2, 8, 8)), ConvLayer(np.zeros((1, 3, 3, 3))))

    def test_too_small(self):
        with pytest.raises(ValueError):
            conv_direct(np.zeros((1, 2, 2)), ConvLayer(np.zeros((1, 1, 3, 3))))


class TestDirect:
    def test_identity_kernel(self, rng):
        x = rng.normal(size=(3, 9, 11))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, c, 1, 1] = 1
        np.testing.assert_array_equal(conv_direct(x, ConvLayer(w, padding=1)).data, x)

    def test_scale_kernel(self, rng):
        x = rng.integers(-100, 100, (1, 7, 7))
        out = conv_direct(x, ConvLayer(np.full((1, 1, 1, 1), 2)))
        np.testing.assert_array_equal(out.data, 2 * x)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_scalar_oracle(self, rng, stride, pad):
        x = rng.normal(size=(2, 12, 12))
        w = rng.normal(size=(3, 2, 3, 3))
        ref = scalar_conv(x, w, stride, pad)
        assert np.abs(conv_direct(x, ConvLayer(w, stride, pad)).data - ref).max() < 1e-12

    def test_keeps_format(self):
        from fmcomp.core_types import FixedPointFormat
        fm = FeatureMap(np.ones((1, 8, 8)), FixedPointFormat(16, 4))
        assert conv_direct(fm, ConvLayer(np.ones((1, 1, 3, 3)))).fmt.frac_bits == 4


class TestRowFrame:
    def test_single_frame(self, rng):
        x = rng.integers(-50, 50, (3, 8, 8))
        layer = ConvLayer(rng.integers(-9, 9, (4, 3, 3, 3)), padding=1)
        trace = RFTrace()
        out = conv_rf(x, layer, trace)
        np.testing.assert_array_equal(out.data, conv_direct(x, layer).data)
        assert trace.frames == 1 and trace.carries_produced == 0

    def test_three_frames_handoff(self, rng):
        x = rng.integers(-50, 50, (2, 24, 8))
        layer = ConvLayer(rng.integers(-9, 9, (3, 2, 3, 3)), padding=1)
        trace = RFTrace()
        out = conv_rf(x, layer, trace)
        np.testing.assert_array_equal(out.data, conv_direct(x, layer).data)
        deposited, consumed = trace.handoffs[(0, 0)]
        assert deposited == [7, 8] and consumed == deposited
        assert trace.handoffs[(0, 1)][0] == trace.handoffs[(0, 1)][1] == [15, 16]
        assert trace.handoffs[(0, 2)] == ([], [])
        assert trace.carries_produced == trace.carries_consumed + trace.emitted_at_bottom
        assert trace.mode_counts == {"completed": 20, "psum_next": 4, "psum_prev": 4}

    def test_bottom_carry_emitted(self, rng):
        # pad 0, K=3, H=10: last frame has 2 rows; its rows never exceed the output
        x = rng.integers(-9, 9, (1, 10, 6))
        layer = ConvLayer(rng.integers(-9, 9, (1, 1, 3, 3)))
        trace = RFTrace()
        np.testing.assert_array_equal(conv_rf(x, layer, trace).data, conv_direct(x, layer).data)
        assert trace.carries_produced == trace.carries_consumed + trace.emitted_at_bottom

    def test_one_by_one_mode(self, rng):
        x = rng.integers(-50, 50, (5, 13, 9))
        layer = ConvLayer(rng.integers(-9, 9, (8, 5, 1, 1)))
        trace = RFTrace()
        np.testing.assert_array_equal(conv_rf(x, layer, trace).data, conv_direct(x, layer).data)
        assert trace.active_pes * 9 == active_pes(3) * 8
        assert active_pes(1) == 256 and active_pes(3) == 288

    def test_rejects_large_kernel(self):
        with pytest.raises(ValueError):
            conv_rf(np.zeros((1, 9, 9)), ConvLayer(np.zeros((1, 1, 5, 5))))

    def test_real_valued(self, rng):
        x = rng.normal(size=(6, 19, 13))
        layer = ConvLayer(rng.normal(size=(5, 6, 3, 3)), stride=2, padding=1)
        assert np.abs(conv_rf(x, layer).data - conv_direct(x, layer).data).max() < 1e-12

    def test_depthwise(self, rng):
        x = rng.integers(-20, 20, (4, 17, 11))
        layer = ConvLayer(rng.integers(-5, 5, (4, 1, 3, 3)), padding=1, depthwise=True)
        out = conv_rf(x, layer).data
        for c in range(4):
            single = conv_direct(x[c:c + 1], ConvLayer(layer.weights[c:c + 1], padding=1)).data
            np.testing.assert_array_equal(out[c], single[0])
        np.testing.assert_array_equal(out, conv_direct(x, layer).data)

    def test_large_integers_stay_exact(self, rng):
        x = rng.integers(-2**40, 2**40, (2, 9, 9))
        layer = ConvLayer(rng.integers(-2**20, 2**20, (2, 2, 3, 3)), padding=1)
        np.testing.assert_array_equal(conv_rf(x, layer).data, conv_direct(x, layer).data)

    @settings(max_examples=120, deadline=None)
    @given(h=st.integers(5, 40), w=st.integers(5, 40), c=st.integers(1, 8),
           f=st.integers(1, 8), k=st.sampled_from([1, 3]), stride=st.sampled_from([1, 2]),
           pad=st.sampled_from([0, 1]), seed=st.integers(0, 2**32))
    def test_equals_direct(self, h, w, c, f, k, stride, pad, seed):
        rng = np.random.default_rng(seed)
        x = rng.integers(-128, 128, (c, h, w))
        layer = ConvLayer(rng.integers(-64, 64, (f, c, k, k)), stride, pad)
        np.testing.assert_array_equal(conv_rf(x, layer).data, conv_direct(x, layer).data)


class TestStride2:
    def test_even_positions(self):
        x = np.arange(64.0).reshape(1, 8, 8)
        out = apply_stride2(x).data
        assert out.shape == (1, 4, 4)
        np.testing.assert_array_equal(out, x[:, ::2, ::2])

    def test_degenerate(self):
        np.testing.assert_array_equal(apply_stride2(np.full((1, 1, 1), 5.0)).data, [[[5.0]]])

    def test_matches_direct(self, rng):
        for _ in range(20):
            x = rng.integers(-9, 9, (2, int(rng.integers(5, 30)), int(rng.integers(5, 30))))
            layer = ConvLayer(rng.integers(-9, 9, (3, 2, 3, 3)), padding=1)
            s1 = conv_rf(x, layer)
            np.testing.assert_array_equal(
                apply_stride2(s1).data, conv_direct(x, layer.replace(stride=2)).data
            )


class TestDecomposition:
    def test_offsets(self):
        parts = decompose_kernel(ConvLayer(np.ones((2, 3, 5, 5))))
        assert [off for _, off in parts] == [(0, 0), (0, 3), (3, 0), (3, 3)]
        assert all(sub.shape == (2, 3, 3, 3) for sub, _ in parts)
        assert sum(sub.sum() for sub, _ in parts) == 2 * 3 * 25
        assert len(decompose_kernel(ConvLayer(np.ones((1, 1, 7, 7))))) == 9

    @pytest.mark.parametrize("k", [1, 3])
    def test_small_kernels_not_decomposed(self, k):
        with pytest.raises(ValueError):
            decompose_kernel(ConvLayer(np.ones((1, 1, k, k))))

    @pytest.mark.parametrize("k", [4, 5, 6, 7])
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 3), (2, 2)])
    def test_recomposes(self, rng, k, stride, pad):
        x = rng.normal(size=(3, 21, 17))
        layer = ConvLayer(rng.normal(size=(4, 3, k, k)), stride, pad)
        got = conv_decomposed(x, layer).data
        assert np.abs(got - conv_direct(x, layer).data).max() < 1e-9
        assert np.abs(conv_accel(x, layer).data - got).max() == 0

    def test_depthwise_large_kernel(self, rng):
        x = rng.normal(size=(3, 15, 15))
        layer = ConvLayer(rng.normal(size=(3, 1, 5, 5)), padding=2, depthwise=True)
        assert np.abs(conv_accel(x, layer).data - conv_direct(x, layer).data).max() < 1e-9


class TestNonLinear:
    def test_activations(self):
        x = np.array([[[-1.5, 2.0, -2.0]]])
        np.testing.assert_array_equal(nonlinear(x, NonLinearConfig((Relu(),))).data, [[[0, 2, 0]]])
        out = nonlinear(x, NonLinearConfig((LeakyRelu(0.1),))).data
        assert out[0, 0, 2] == pytest.approx(-0.2)
        out = nonlinear(np.full((2, 1, 1), -2.0), NonLinearConfig((PRelu(np.array([0.5, 0.25])),)))
        np.testing.assert_allclose(out.data.ravel(), [-1.0, -0.5])

    def test_pools(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        assert nonlinear(x, NonLinearConfig((MaxPool(2, 2),))).data.tolist() == [[[4.0]]]
        assert nonlinear(x, NonLinearConfig((AvgPool(2, 2),))).data.tolist() == [[[2.5]]]
        y = np.arange(25.0).reshape(1, 5, 5)
        assert nonlinear(y, NonLinearConfig((MaxPool(2, 2),))).shape == (1, 2, 2)

    def test_batch_norm(self, rng):
        x = rng.normal(size=(2, 4, 4))
        bn = BatchNorm(np.array([2.0, 1.0]), np.array([0.5, -1.0]),
                       np.array([0.1, 0.0]), np.array([4.0, 1.0]), eps=0.0)
        out = nonlinear(x, NonLinearConfig((bn,))).data
        np.testing.assert_allclose(out[0], 2 * (x[0] - 0.1) / 2 + 0.5)
        np.testing.assert_allclose(out[1], x[1] - 1.0)

    def test_order_matters(self):
        x = np.array([[[-4.0, -4.0], [-4.0, 8.0]]])
        a = nonlinear(x, NonLinearConfig((Relu(), AvgPool(2, 2)))).data
        b = nonlinear(x, NonLinearConfig((AvgPool(2, 2), Relu()))).data
        assert a[0, 0, 0] == 2.0 and b[0, 0, 0] == 0.0

    def test_config_limits(self):
        with pytest.raises(ValueError):
            NonLinearConfig((Relu(), Relu(), Relu(), Relu()))
        with pytest.raises(ValueError):
            NonLinearConfig((MaxPool(), AvgPool()))


class TestCycles:
    def test_formula(self):
        assert estimate_cycles(ConvLayer(np.zeros((4, 4, 3, 3))), 8, 8) == 32
        assert estimate_cycles(ConvLayer(np.zeros((1, 1, 1, 1))), 8, 8) == 8

    def test_linear_in_filters(self):
        a = estimate_cycles(ConvLayer(np.zeros((8, 4, 3, 3))), 16, 16)
        b = estimate_cycles(ConvLayer(np.zeros((16, 4, 3, 3))), 16, 16)
        assert b == 2 * a

    def test_stride_two_bypass(self):
        s1 = estimate_cycles(ConvLayer(np.zeros((4, 4, 3, 3))), 8, 8)
        s2 = estimate_cycles(ConvLayer(np.zeros((4, 4, 3, 3)), stride=2), 8, 8)
        assert s2 == s1 + 4
