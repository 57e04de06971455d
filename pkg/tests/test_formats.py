import numpy as np
import pytest

from fmcomp.errors import MalformedStreamError
from fmcomp.formats import read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor


def test_f32_roundtrip(rng, tmp_path):
    x = rng.normal(size=(3, 7, 5)).astype(np.float32)
    write_tensor(tmp_path / "x.fmap", x)
    back, frac = read_tensor(tmp_path / "x.fmap")
    assert frac is None and back.dtype == np.float64
    np.testing.assert_array_equal(back, x)


def test_i16_roundtrip():
    x = np.array([[0.5, -1.25], [3.0, 100.0]])
    back, frac = tensor_from_bytes(tensor_to_bytes(x, frac_bits=8))
    assert frac == 8
    np.testing.assert_array_equal(back, x)


def test_i16_saturates():
    back, _ = tensor_from_bytes(tensor_to_bytes(np.array([1e6, -1e6]), frac_bits=8))
    assert back[0] == pytest.approx(32767 / 256) and back[1] == -128


@pytest.mark.parametrize("mutate", [
    lambda b: b"NOPE" + b[4:],
    lambda b: b[:4] + b"\x07\x00" + b[6:],
    lambda b: b[:6] + b"\x09" + b[7:],
    lambda b: b[:-1],
    lambda b: b + b"\x00",
    lambda b: b[:5],
])
def test_malformed(mutate):
    buf = tensor_to_bytes(np.ones((2, 3)))
    with pytest.raises(MalformedStreamError):
        tensor_from_bytes(mutate(buf))
