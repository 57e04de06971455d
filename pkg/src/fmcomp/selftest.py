"""Quick oracle checks runnable without pytest (``fmc selftest``)."""
from __future__ import annotations

import numpy as np

from .codec import compress_featuremap, decompress_featuremap
from .core_types import FeatureMap, tile_into_blocks
from .dct import build_dct_matrix, dct2_direct, dct2_fast, dct2_sum, idct2_fast
from .pe_sim import ConvLayer, conv_decomposed, conv_direct, conv_rf
from .quant import ones_qtable
from .sparse_store import BufferBankState, decode_block, encode_block


def _dct(rng) -> bool:
    x = rng.uniform(-128, 128, (2000, 8, 8))
    C = build_dct_matrix().C
    ortho = np.abs(C @ C.T - np.eye(8)).max() < 1e-12
    direct = dct2_direct(x)
    return bool(
        ortho
        and np.abs(dct2_fast(x) - direct).max() < 1e-9
        and np.abs(dct2_sum(x) - direct).max() < 1e-9
        and np.abs(idct2_fast(dct2_fast(x)) - x).max() < 1e-9
    )


def _storage(rng) -> bool:
    state = BufferBankState(capacity=1 << 20)
    blocks = []
    for _ in range(2000):
        q = rng.integers(-300, 300, (8, 8)) * (rng.random((8, 8)) < rng.random())
        blocks.append(q)
        state.write_block(encode_block(q))
    return all(
        np.array_equal(decode_block(state.read_block(n)), q) for n, q in enumerate(blocks)
    )


def _codec_bound(rng) -> bool:
    qt = ones_qtable()
    for _ in range(100):
        fm = FeatureMap(rng.uniform(-50, 50, (2, 16, 16)))
        s = compress_featuremap(fm, qtable=qt)
        rec = decompress_featuremap(s, qtable=qt)
        for c in range(fm.channels):
            err = np.abs(tile_into_blocks(fm, c) - tile_into_blocks(rec, c))
            for k, e in enumerate(err):
                sc = s.scale_of(c * len(err) + k)
                if e.max() > 4 * (sc.f_max - sc.f_min) / sc.i_max + 1e-9:
                    return False
    return True


def _dataflow(rng) -> bool:
    for _ in range(60):
        H, W = rng.integers(5, 41, 2)
        C, F = rng.integers(1, 9, 2)
        K = int(rng.choice([1, 3]))
        layer = ConvLayer(rng.integers(-20, 20, (F, C, K, K)),
                          stride=int(rng.choice([1, 2])), padding=int(rng.choice([0, 1])))
        x = rng.integers(-50, 50, (C, H, W))
        if not np.array_equal(conv_rf(x, layer).data, conv_direct(x, layer).data):
            return False
    for K in range(4, 8):
        layer = ConvLayer(rng.normal(size=(2, 2, K, K)), padding=1)
        x = rng.normal(size=(2, 14, 11))
        if np.abs(conv_decomposed(x, layer).data - conv_direct(x, layer).data).max() > 1e-9:
            return False
    return True


CHECKS = {
    "dct fast == direct == double sum": _dct,
    "sparse store write/read roundtrip": _storage,
    "codec error bound (all-ones table)": _codec_bound,
    "row-frame conv == direct conv": _dataflow,
}


def run(seed: int = 0, out=print) -> bool:
    rng = np.random.default_rng(seed)
    ok = True
    for name, check in CHECKS.items():
        passed = check(rng)
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'}  {name}")
    return ok
