"""Pure-numpy implementations of the hot per-frequency kernels.

These are the fallback used when the compiled extension is unavailable and
the reference the extension is tested against. Shapes:
    stacked: (T, F, K) complex128   per-frame tap windows
    target:  (T, F)    complex128   spectrogram being predicted
    inv_w:   (T, F)    float64      reciprocal of the weighting term
"""

from __future__ import annotations

import numpy as np


def accumulate_normal_equations(stacked: np.ndarray, target: np.ndarray,
                                inv_w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted normal equations per frequency.

    Returns:
        A: (F, K, K) with A[f] = sum_t stacked[t,f] stacked[t,f]^H * inv_w[t,f]
        b: (F, K)    with b[f] = sum_t stacked[t,f] conj(target[t,f]) * inv_w[t,f]
    """
    weighted = stacked * inv_w[:, :, None]
    # (F, K, T) @ (F, T, K) -> (F, K, K), BLAS-batched over frequency
    a_mat = np.matmul(weighted.transpose(1, 2, 0), stacked.conj().transpose(1, 0, 2))
    b_vec = np.einsum("tfk,tf->fk", weighted, target.conj())
    return a_mat, b_vec


def accumulate_stack_cotangent(stacked: np.ndarray, target: np.ndarray,
                               inv_w: np.ndarray, mat: np.ndarray,
                               vec: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`accumulate_normal_equations` with respect to `stacked`.

    Given cotangents routed through A (as ``mat``, already symmetrized) and
    through b (as ``vec``), returns
        g[t,f] = inv_w[t,f] * (mat[f] @ stacked[t,f] + vec[f] * target[t,f]).
    """
    through_a = np.matmul(stacked.transpose(1, 0, 2), mat.transpose(0, 2, 1)).transpose(1, 0, 2)
    through_b = vec[None, :, :] * target[:, :, None]
    return inv_w[:, :, None] * (through_a + through_b)
