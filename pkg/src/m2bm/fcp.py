"""Forward convolutive prediction: per-frequency weighted least squares.

Estimates a short cross-frame complex filter that maps a reference-channel
estimate to a target spectrogram. The filter for frequency f minimizes

    sum_t |target(t,f) - h(f)^H stacked(t,f)|^2 / weight(t,f)

in closed form via the weighted normal equations, with a small diagonal
loading relative to the trace to guard rank-deficient frequencies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class FcpConfig:
    """Filter geometry and solver knobs.

    past_taps / future_taps set the stacking window (past includes the
    current frame); weight_floor is the fraction of the peak power added to
    every weighting term; diag_load scales the identity added to the normal
    matrix, relative to its mean diagonal.
    """

    past_taps: int = 20
    future_taps: int = 1
    weight_floor: float = 1e-2
    diag_load: float = 1e-10

    def __post_init__(self):
        if self.past_taps < 1:
            raise ValueError("past_taps must be >= 1")
        if self.future_taps < 0:
            raise ValueError("future_taps must be >= 0")
        if not self.weight_floor > 0:
            raise ValueError("weight_floor must be > 0")
        if self.diag_load < 0:
            raise ValueError("diag_load must be >= 0")

    @property
    def num_taps(self) -> int:
        return self.past_taps + self.future_taps


def _check_channel(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"{name} must be a single (T, F) channel, got shape {x.shape}")
    x = x.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def stack_frames(estimate, cfg: FcpConfig) -> np.ndarray:
    """Stack a window of past_taps + future_taps frames per T-F unit.

    Entry k of the output vector at frame t is estimate(t - past_taps + 1 + k);
    out-of-range frames are zero.

    Args:
        estimate: (T, F) single channel.

    Returns:
        (T, F, K) complex with K = cfg.num_taps.
    """
    est = _check_channel(estimate, "estimate")
    num_frames = est.shape[0]
    if num_frames < 1:
        raise ValueError("estimate must have at least one frame")
    padded = np.concatenate(
        [
            np.zeros((cfg.past_taps - 1,) + est.shape[1:], dtype=est.dtype),
            est,
            np.zeros((cfg.future_taps,) + est.shape[1:], dtype=est.dtype),
        ],
        axis=0,
    )
    windows = np.lib.stride_tricks.sliding_window_view(padded, cfg.num_taps, axis=0)
    out = np.ascontiguousarray(windows)  # (T, F, K)
    if not out.flags.writeable:
        # single-tap windows can alias the padded buffer as a read-only view
        out = out.copy()
    return out


def fcp_weights(target, floor: float) -> np.ndarray:
    """Per-unit weighting: floor * max power of the target plus local power.

    Strictly positive for any nonzero target; an all-zero target has no
    usable weighting and raises.
    """
    if not floor > 0:
        raise ValueError("floor must be > 0")
    power = np.abs(np.asarray(target)) ** 2
    peak = power.max()
    if peak == 0.0:
        raise ValueError("target spectrogram is identically zero; weighting degenerate")
    return floor * peak + power


def fcp_solve(target, estimate, cfg: FcpConfig, weights=None) -> np.ndarray:
    """Closed-form weighted least-squares filter per frequency.

    Args:
        target: (T, F) spectrogram being predicted.
        estimate: (T, F) channel supplying the stacked regressors.
        weights: optional (T, F) positive weights; defaults to
            ``fcp_weights(target, cfg.weight_floor)``.

    Returns:
        (F, K) complex filters. Frequencies where the estimate carries no
        energy get the zero filter (nothing to predict from).
    """
    tgt = _check_channel(target, "target")
    est = _check_channel(estimate, "estimate")
    if tgt.shape != est.shape:
        raise ValueError(f"shape mismatch: target {tgt.shape} vs estimate {est.shape}")
    if weights is None:
        weights = fcp_weights(tgt, cfg.weight_floor)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != tgt.shape:
            raise ValueError(f"weights shape {weights.shape} does not match target {tgt.shape}")
        if not np.all(weights > 0):
            raise ValueError("weights must be strictly positive")

    stacked = stack_frames(est, cfg)
    a_mat, b_vec = kernels.accumulate_normal_equations(stacked, tgt, 1.0 / weights)
    return solve_loaded_normal_equations(a_mat, b_vec, cfg.diag_load)


def solve_loaded_normal_equations(a_mat: np.ndarray, b_vec: np.ndarray,
                                  diag_load: float) -> np.ndarray:
    """Solve A h = b per frequency with relative diagonal loading.

    A is Hermitian PSD by construction, so a Cholesky solve is used; the
    batch falls back to LU if loading is disabled and some frequency is not
    positive definite. Zero-trace frequencies return the zero filter.
    """
    num_bins, num_taps, _ = a_mat.shape
    trace = np.einsum("fkk->f", a_mat).real
    filters = np.zeros((num_bins, num_taps), dtype=np.complex128)
    active = trace > 0.0
    if not np.any(active):
        return filters

    scale = trace[active] / num_taps
    a_scaled = a_mat[active] / scale[:, None, None]
    a_scaled[:, np.arange(num_taps), np.arange(num_taps)] += diag_load
    rhs = b_vec[active] / scale[:, None]
    try:
        chol = np.linalg.cholesky(a_scaled)
        half = np.linalg.solve(chol, rhs[:, :, None])
        sol = np.linalg.solve(np.conj(chol.transpose(0, 2, 1)), half)[:, :, 0]
    except np.linalg.LinAlgError:
        sol = np.linalg.solve(a_scaled, rhs[:, :, None])[:, :, 0]
    filters[active] = sol
    return filters


def apply_filter(filters, stacked) -> np.ndarray:
    """Inner product h(f)^H stacked(t,f) per T-F unit.

    Args:
        filters: (F, K) complex.
        stacked: (T, F, K) from :func:`stack_frames`.

    Returns:
        (T, F) complex channel.
    """
    filters = np.asarray(filters)
    stacked = np.asarray(stacked)
    if filters.ndim != 2 or stacked.ndim != 3:
        raise ValueError("expected filters (F, K) and stacked (T, F, K)")
    if filters.shape[1] != stacked.shape[2] or filters.shape[0] != stacked.shape[1]:
        raise ValueError(
            f"filter shape {filters.shape} does not match stacked shape {stacked.shape}"
        )
    return np.einsum("fk,tfk->tf", filters.conj(), stacked)


def fcp_objective(target, estimate, filters, cfg: FcpConfig, weights=None) -> float:
    """Value of the prediction objective for given filters.

    With ``weights`` the Eq.-style weighted residual sum; with ``weights=None``
    the plain (unweighted) residual sum. Both are reported by callers that
    want to compare solver quality.
    """
    tgt = _check_channel(target, "target")
    est = _check_channel(estimate, "estimate")
    resid = np.abs(tgt - apply_filter(filters, stack_frames(est, cfg))) ** 2
    if weights is None:
        return float(resid.sum())
    return float((resid / np.asarray(weights)).sum())
