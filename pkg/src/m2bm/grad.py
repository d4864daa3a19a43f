"""Closed-form gradients of the losses with respect to the estimates.

Conventions
-----------
For a real scalar loss L and a complex array Z, the cotangent carried here is
g = dL/d(conj(Z)) elementwise, so a perturbation dZ changes the loss by
2*Re(sum(conj(g) * dZ)). Equivalently dL/d(Re Z) = 2*Re(g) and
dL/d(Im Z) = 2*Im(g); model backends consume the cotangents in that form.

The filtered-reconstruction losses solve per-frequency weighted least squares
for cross-frame filters. By default gradients flow through that solve (the
filters are treated as a function of the estimates) using the adjoint of the
loaded normal equations; ``through_filter=False`` instead treats the solved
filters as constants, which is the cheaper scheme some training recipes use.

The absolute-value terms in the distance are non-smooth at exact ties; the
subgradient used here picks 0 at |z| = 0 and sign(0) = 0, so comparisons
against finite differences must avoid those measure-zero points.
"""

from __future__ import annotations

import numpy as np

from .fcp import (
    FcpConfig,
    apply_filter,
    fcp_weights,
    solve_loaded_normal_equations,
    stack_frames,
)
from .kernels import accumulate_normal_equations, accumulate_stack_cotangent
from .losses import LossBreakdown, normalized_distance


def gdist_cotangent(ref: np.ndarray, est: np.ndarray, denom: float) -> np.ndarray:
    """Cotangent of sum(G(ref, est)) / denom with respect to est.

    G is the real+imaginary+magnitude absolute-difference distance; ref and
    denom are constants.
    """
    mag = np.abs(est)
    safe = np.where(mag > 0.0, mag, 1.0)
    cos = np.where(mag > 0.0, est.real / safe, 0.0)
    sin = np.where(mag > 0.0, est.imag / safe, 0.0)
    mag_sign = np.sign(np.abs(ref) - mag)
    d_re = (-np.sign(ref.real - est.real) - mag_sign * cos) / denom
    d_im = (-np.sign(ref.imag - est.imag) - mag_sign * sin) / denom
    return 0.5 * (d_re + 1j * d_im)


def supervised_grad(target_img: np.ndarray, noise_img: np.ndarray,
                    target_est: np.ndarray, noise_est: np.ndarray,
                    mixture_ref: np.ndarray):
    """Loss and estimate cotangents for the two-term supervised objective."""
    denom = float(np.sum(np.abs(mixture_ref)))
    if denom == 0.0:
        raise ValueError("mixture has zero magnitude; loss normalizer undefined")
    loss_x = normalized_distance(target_img, target_est, denom=denom)
    loss_v = normalized_distance(noise_img, noise_est, denom=denom)
    g_x = gdist_cotangent(target_img, target_est, denom)
    g_v = gdist_cotangent(noise_img, noise_est, denom)
    breakdown = LossBreakdown(mode="supervised", total=loss_x + loss_v,
                              l_sup_x=loss_x, l_sup_v=loss_v)
    return breakdown, g_x, g_v


def mc_ref_grad(mixture_ref: np.ndarray, target_est: np.ndarray, noise_est: np.ndarray):
    """Reference-mic reconstruction term: both estimates share one cotangent."""
    denom = float(np.sum(np.abs(mixture_ref)))
    if denom == 0.0:
        raise ValueError("mixture has zero magnitude; loss normalizer undefined")
    recon = target_est + noise_est
    loss = normalized_distance(mixture_ref, recon, denom=denom)
    g = gdist_cotangent(mixture_ref, recon, denom)
    return loss, g


def _solve_branch(target: np.ndarray, est: np.ndarray, cfg: FcpConfig,
                  inv_weights: np.ndarray):
    stacked = stack_frames(est, cfg)
    a_mat, b_vec = accumulate_normal_equations(stacked, target, inv_weights)
    filt = solve_loaded_normal_equations(a_mat, b_vec, cfg.diag_load)
    return stacked, a_mat, filt


def _unstack_cotangent(g_stacked: np.ndarray, cfg: FcpConfig) -> np.ndarray:
    """Adjoint of :func:`stack_frames`: scatter tap cotangents back to frames."""
    num_frames = g_stacked.shape[0]
    out = np.zeros(g_stacked.shape[:2], dtype=np.complex128)
    for k in range(cfg.num_taps):
        shift = cfg.past_taps - 1 - k  # stacked[t, k] reads frame t - shift
        if shift >= 0:
            if shift < num_frames:
                out[: num_frames - shift] += g_stacked[shift:, :, k]
        else:
            if -shift < num_frames:
                out[-shift:] += g_stacked[: num_frames + shift, :, k]
    return out


def mc_filtered_grad(target: np.ndarray, target_est: np.ndarray, noise_est: np.ndarray,
                     cfg: FcpConfig, through_filter: bool = True,
                     weights: np.ndarray | None = None):
    """Filtered-reconstruction term and its cotangents w.r.t. both estimates.

    Each estimate is passed through its own solved cross-frame filter; the
    sum of the two filtered signals is scored against ``target``.
    """
    if weights is None:
        weights = fcp_weights(target, cfg.weight_floor)
    inv_weights = 1.0 / weights
    denom = float(np.sum(np.abs(target)))
    if denom == 0.0:
        raise ValueError("filter target has zero magnitude; loss normalizer undefined")

    branches = [_solve_branch(target, est, cfg, inv_weights)
                for est in (target_est, noise_est)]
    recon = sum(apply_filter(filt, stacked) for stacked, _, filt in branches)
    loss = normalized_distance(target, recon, denom=denom)
    g_recon = gdist_cotangent(target, recon, denom)

    num_taps = cfg.num_taps
    grads = []
    for stacked, a_mat, filt in branches:
        g_stacked = g_recon[:, :, None] * filt[None, :, :]
        if through_filter:
            g_filt = np.einsum("tf,tfk->fk", g_recon.conj(), stacked)
            # adjoint of filt = loaded(A)^-1 b; the loaded matrix is Hermitian
            s_vec = solve_loaded_normal_equations(a_mat, g_filt, cfg.diag_load)
            g_a = -np.einsum("fk,fl->fkl", s_vec, filt.conj())
            trace_ga = np.einsum("fkk->f", g_a)
            idx = np.arange(num_taps)
            g_a[:, idx, idx] += (cfg.diag_load / num_taps) * trace_ga[:, None]
            sym = g_a + g_a.conj().transpose(0, 2, 1)
            g_stacked = g_stacked + accumulate_stack_cotangent(
                stacked, target, inv_weights, sym, s_vec)
        grads.append(_unstack_cotangent(g_stacked, cfg))
    return loss, grads[0], grads[1]


def total_mc_grad(mixtures: np.ndarray, target_est: np.ndarray, noise_est: np.ndarray,
                  ref_mic: int, cfg: FcpConfig, mixture_bf: np.ndarray | None = None,
                  through_filter: bool = True):
    """Full mixture-consistency objective and its estimate cotangents.

    Mirrors the forward loss: reference term plus the average over non-reference
    mics of filtered terms, plus an optional unweighted beamformed-mixture term.
    """
    mixtures = np.asarray(mixtures)
    num_mics = mixtures.shape[0]
    if not 0 <= ref_mic < num_mics:
        raise ValueError(f"ref_mic {ref_mic} out of range for {num_mics} mics")
    if num_mics < 2 and mixture_bf is None:
        raise ValueError("mixture-consistency training needs >= 2 mics or a beamformed mixture")

    loss_ref, g = mc_ref_grad(mixtures[ref_mic], target_est, noise_est)
    g_x = g.copy()
    g_v = g.copy()

    nonref = [p for p in range(num_mics) if p != ref_mic]
    l_nonref = {}
    coeff = 1.0 / len(nonref) if nonref else 0.0
    for p in nonref:
        loss_p, gx_p, gv_p = mc_filtered_grad(mixtures[p], target_est, noise_est,
                                              cfg, through_filter=through_filter)
        l_nonref[p] = loss_p
        g_x += coeff * gx_p
        g_v += coeff * gv_p

    l_bf = None
    if mixture_bf is not None:
        loss_bf, gx_bf, gv_bf = mc_filtered_grad(np.asarray(mixture_bf), target_est,
                                                 noise_est, cfg,
                                                 through_filter=through_filter)
        l_bf = loss_bf
        g_x += gx_bf
        g_v += gv_bf

    total = loss_ref + coeff * sum(l_nonref.values()) + (l_bf or 0.0)
    breakdown = LossBreakdown(mode="m2bm" if mixture_bf is not None else "m2m",
                              total=total, l_mc_ref=loss_ref,
                              l_mc_nonref=l_nonref, l_mc_bf=l_bf)
    return breakdown, g_x, g_v
