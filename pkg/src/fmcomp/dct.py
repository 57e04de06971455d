"""8x8 two-dimensional DCT-II / IDCT.

Two routes are provided. The direct route forms ``C @ X @ C.T`` with the
orthonormal transform matrix and serves as the oracle. The fast route splits
the 8x8 product into four 4x4 products using the even/odd symmetry of the
cosine rows: inputs are folded (upper half plus/minus the reversed lower
half), multiplied by the 4x4 even and odd coefficient matrices, and the
result is permuted back to natural frequency order.

The fast route works on 8x1 columns, as a streaming datapath would, and can
report how many constant-coefficient multiplies it performed.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

N = 8


@dataclass(frozen=True)
class DctMatrix:
    C: np.ndarray
    constants: dict[str, float]


@dataclass(frozen=True)
class FastDctConstants:
    Q: np.ndarray
    P: np.ndarray
    Ce: np.ndarray
    Co: np.ndarray


@dataclass
class OpCounter:
    """Tally of multiplier activations in the fast datapath."""

    multiplies: int = 0
    columns: int = 0
    skipped: int = 0

    def reset(self):
        self.multiplies = self.columns = self.skipped = 0


@lru_cache(maxsize=None)
def build_dct_matrix() -> DctMatrix:
    """Orthonormal DCT-II matrix ``C[k, n] = s_k cos(pi (n + 1/2) k / 8)``.

    ``s_0 = 1/(2 sqrt 2)`` and ``s_k = 1/2`` otherwise, so ``C @ C.T == I``
    and the inverse transform is the transpose.
    """
    k = np.arange(N)[:, None]
    n = np.arange(N)[None, :]
    scale = np.where(k == 0, 1.0 / (2.0 * np.sqrt(2.0)), 0.5)
    C = scale * np.cos(np.pi * (n + 0.5) * k / N)
    C.setflags(write=False)
    half_cos = lambda theta: 0.5 * np.cos(theta)  # noqa: E731
    constants = {
        "a": half_cos(np.pi / 4),
        "b": half_cos(np.pi / 16),
        "c": half_cos(3 * np.pi / 16),
        "d": half_cos(5 * np.pi / 16),
        "e": half_cos(7 * np.pi / 16),
        "f": half_cos(np.pi / 8),
        "g": half_cos(3 * np.pi / 8),
    }
    return DctMatrix(C=C, constants=constants)


@lru_cache(maxsize=None)
def fast_constants() -> FastDctConstants:
    k = build_dct_matrix().constants
    a, b, c, d, e, f, g = (k[s] for s in "abcdefg")
    Q = np.zeros((N, N))
    for row, col in enumerate((0, 2, 4, 6, 1, 3, 5, 7)):
        Q[row, col] = 1.0
    P = np.fliplr(np.eye(4))
    Ce = np.array([
        [a, a, a, a],
        [f, g, -g, -f],
        [a, -a, -a, a],
        [g, -f, f, -g],
    ])
    Co = np.array([
        [b, c, d, e],
        [c, -e, -b, -d],
        [d, -b, e, c],
        [e, -d, c, -b],
    ])
    for arr in (Q, P, Ce, Co):
        arr.setflags(write=False)
    return FastDctConstants(Q=Q, P=P, Ce=Ce, Co=Co)


def _check_block(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (N, N):
        raise ValueError(f"expected 8x8 blocks, got shape {x.shape}")
    return x


def _t(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def dct2_direct(x) -> np.ndarray:
    C = build_dct_matrix().C
    return C @ _check_block(x) @ C.T


def idct2_direct(z) -> np.ndarray:
    C = build_dct_matrix().C
    return C.T @ _check_block(z) @ C


@lru_cache(maxsize=None)
def _cosine_basis() -> np.ndarray:
    # basis[k1, k2, n1, n2] = s_k1 s_k2 cos(pi/8 (n1+1/2) k1) cos(pi/8 (n2+1/2) k2)
    s = np.array([1.0 / np.sqrt(8.0)] + [0.5] * (N - 1))
    basis = np.empty((N, N, N, N))
    for k1 in range(N):
        for k2 in range(N):
            for n1 in range(N):
                for n2 in range(N):
                    basis[k1, k2, n1, n2] = (
                        s[k1] * s[k2]
                        * np.cos(np.pi / N * (n1 + 0.5) * k1)
                        * np.cos(np.pi / N * (n2 + 0.5) * k2)
                    )
    basis.setflags(write=False)
    return basis


def dct2_sum(x) -> np.ndarray:
    """Literal double cosine sum over all 64 samples, orthonormally scaled.

    Independent of the transform matrix; used as an oracle for both
    :func:`dct2_direct` and :func:`dct2_fast`.
    """
    return np.einsum("klij,...ij->...kl", _cosine_basis(), _check_block(x))


def _forward_columns(x: np.ndarray, counter: OpCounter | None) -> np.ndarray:
    # Fold each 8x1 column: upper half +/- reversed lower half, then one
    # 4x4 even and one 4x4 odd product. Output rows are in Q order
    # (even frequencies first).
    k = fast_constants()
    upper, lower = x[..., :4, :], k.P @ x[..., 4:, :]
    out = np.concatenate([k.Ce @ (upper + lower), k.Co @ (upper - lower)], axis=-2)
    if counter is not None:
        cols = x.size // N
        counter.columns += cols
        counter.multiplies += 32 * cols
    return out


def dct2_fast(x, counter: OpCounter | None = None) -> np.ndarray:
    """Forward 2-D DCT through four 4x4 products per pass.

    Accepts a single block or a stack of shape ``(..., 8, 8)``.
    """
    x = _check_block(x)
    k = fast_constants()
    # Pass 1 over columns gives [[Y_LU, Y_LD], [Y_RU, Y_RD]] with
    # Y_LU = Ce (X_LU + P X_LD), Y_RU = Co (X_LU - P X_LD), and likewise
    # for the right half of X.
    y = _forward_columns(x, counter)
    # Pass 2 over the rows of Y yields Z' = Q Z Q^T.
    z_perm = _t(_forward_columns(_t(y), counter))
    return k.Q.T @ z_perm @ k.Q


def _inverse_columns(
    z: np.ndarray, mask: np.ndarray, counter: OpCounter | None
) -> np.ndarray:
    # Input rows are in Q order. Masked-out entries never reach a multiplier.
    k = fast_constants()
    z = np.where(mask, z, 0.0)
    even = k.Ce.T @ z[..., :4, :]
    odd = k.Co.T @ z[..., 4:, :]
    if counter is not None:
        active = int(np.count_nonzero(mask))
        counter.columns += z.size // N
        counter.multiplies += 4 * active
        counter.skipped += 4 * (mask.size - active)
    return np.concatenate([even + odd, k.P @ (even - odd)], axis=-2)


def idct2_fast(
    z, skip_mask=None, counter: OpCounter | None = None
) -> np.ndarray:
    """Inverse 2-D DCT on the fast datapath. Accepts ``(..., 8, 8)`` input.

    ``skip_mask`` marks coefficients that may reach a multiplier; entries
    outside the mask contribute nothing. By default only exact non-zeros are
    multiplied, so an all-zero block performs no multiplies at all.
    """
    z = _check_block(z)
    k = fast_constants()
    if skip_mask is None:
        skip_mask = z != 0
    skip_mask = np.broadcast_to(np.asarray(skip_mask, dtype=bool), z.shape)
    z_perm = k.Q @ z @ k.Q.T
    order = np.argmax(k.Q, axis=1)
    m_perm = skip_mask[..., order, :][..., order]
    w = _inverse_columns(z_perm, m_perm, counter)
    return _t(_inverse_columns(_t(w), _t(w) != 0, counter))
