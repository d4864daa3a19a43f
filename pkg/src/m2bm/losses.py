"""Training objectives: supervised, per-mic mixture-constraint, virtual-mic.

All losses are built from one elementwise distance (absolute real,
imaginary and magnitude differences) normalized by the total magnitude of
the reference mixture, so every term is a dimensionless ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fcp import FcpConfig, apply_filter, fcp_solve, fcp_weights, stack_frames


def ri_mag_distance(a, b) -> np.ndarray:
    """|Re a - Re b| + |Im a - Im b| + ||a| - |b|| elementwise."""
    a = np.asarray(a)
    b = np.asarray(b)
    return (
        np.abs(a.real - b.real)
        + np.abs(a.imag - b.imag)
        + np.abs(np.abs(a) - np.abs(b))
    )


def normalized_distance(ref, est, denom: float | None = None) -> float:
    """Distance summed over all T-F units, normalized by sum |ref|.

    ``denom`` overrides the normalizer (some terms normalize by a signal
    other than the comparison reference).
    """
    ref = np.asarray(ref)
    est = np.asarray(est)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: ref {ref.shape} vs est {est.shape}")
    if denom is None:
        denom = np.abs(ref).sum()
    if denom == 0.0:
        raise ValueError("reference spectrogram is identically zero")
    return float(ri_mag_distance(ref, est).sum() / denom)


@dataclass
class LossBreakdown:
    """Per-term loss report; `total` always equals the mode's combination."""

    mode: str
    total: float
    l_sup_x: float | None = None
    l_sup_v: float | None = None
    l_mc_ref: float | None = None
    l_mc_nonref: dict[int, float] = field(default_factory=dict)
    l_mc_bf: float | None = None

    def combined_total(self) -> float:
        """Recompute `total` from the components (consistency check)."""
        if self.mode == "supervised":
            return self.l_sup_x + self.l_sup_v
        total = self.l_mc_ref
        if self.l_mc_nonref:
            total += sum(self.l_mc_nonref.values()) / len(self.l_mc_nonref)
        if self.l_mc_bf is not None:
            total += self.l_mc_bf
        return total

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "total": self.total,
            "l_sup_x": self.l_sup_x,
            "l_sup_v": self.l_sup_v,
            "l_mc_ref": self.l_mc_ref,
            "l_mc_nonref": {str(p): v for p, v in self.l_mc_nonref.items()},
            "l_mc_bf": self.l_mc_bf,
        }


def supervised_loss(target_img, noise_img, xhat, vhat, mixture) -> LossBreakdown:
    """Two-head supervised loss, both terms normalized by the mixture magnitude."""
    shapes = {np.asarray(a).shape for a in (target_img, noise_img, xhat, vhat, mixture)}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch among loss inputs: {sorted(shapes)}")
    denom = np.abs(np.asarray(mixture)).sum()
    if denom == 0.0:
        raise ValueError("mixture is identically zero")
    l_x = float(ri_mag_distance(target_img, xhat).sum() / denom)
    l_v = float(ri_mag_distance(noise_img, vhat).sum() / denom)
    return LossBreakdown(mode="supervised", total=l_x + l_v, l_sup_x=l_x, l_sup_v=l_v)


def mc_loss_ref(mixture, xhat, vhat) -> float:
    """Reference-mic constraint: the two estimates should sum to the mixture."""
    return normalized_distance(mixture, np.asarray(xhat) + np.asarray(vhat))


def mc_loss_filtered(target, xhat, vhat, cfg: FcpConfig) -> float:
    """Constraint against a target the estimates only reach through filters.

    Solves one filter per estimate, each predicting the full target from its
    own stacked frames, and scores the summed filtered reconstruction.
    Weights always derive from the spectrogram being predicted.
    """
    target = np.asarray(target)
    weights = fcp_weights(target, cfg.weight_floor)
    recon = np.zeros_like(target, dtype=np.complex128)
    for est in (xhat, vhat):
        filt = fcp_solve(target, est, cfg, weights)
        recon += apply_filter(filt, stack_frames(est, cfg))
    return normalized_distance(target, recon)


def mc_loss_nonref(mixture_p, xhat, vhat, cfg: FcpConfig) -> float:
    """Non-reference-mic constraint (filtered reconstruction of that mic)."""
    return mc_loss_filtered(mixture_p, xhat, vhat, cfg)


def mc_loss_bf(mixture_bf, xhat, vhat, cfg: FcpConfig) -> float:
    """Virtual-microphone constraint against a beamformed mixture."""
    return mc_loss_filtered(mixture_bf, xhat, vhat, cfg)


def total_mc_loss(mixtures, xhat, vhat, ref_mic: int, cfg: FcpConfig,
                  mixture_bf=None) -> LossBreakdown:
    """Mixture-constraint total over all mics plus optional virtual mic.

    total = ref term + mean of non-reference terms (+ virtual-mic term,
    added unweighted when present).

    Args:
        mixtures: (P, T, F) observed mixtures.
        xhat, vhat: (T, F) reference-channel estimates.
        mixture_bf: optional (T, F) beamformed mixture.
    """
    mixtures = np.asarray(mixtures)
    if mixtures.ndim != 3:
        raise ValueError(f"expected (P, T, F) mixtures, got shape {mixtures.shape}")
    num_mics = mixtures.shape[0]
    if not 0 <= ref_mic < num_mics:
        raise ValueError(f"ref_mic {ref_mic} out of range for {num_mics} mics")
    if num_mics == 1 and mixture_bf is None:
        raise ValueError("single mic without a beamformed target leaves no cross-channel constraint")

    l_ref = mc_loss_ref(mixtures[ref_mic], xhat, vhat)
    l_nonref = {
        p: mc_loss_nonref(mixtures[p], xhat, vhat, cfg)
        for p in range(num_mics)
        if p != ref_mic
    }
    total = l_ref
    if l_nonref:
        total += sum(l_nonref.values()) / (num_mics - 1)

    l_bf = None
    mode = "m2m"
    if mixture_bf is not None:
        l_bf = mc_loss_bf(mixture_bf, xhat, vhat, cfg)
        total += l_bf
        mode = "m2bm"
    return LossBreakdown(mode=mode, total=total, l_mc_ref=l_ref,
                         l_mc_nonref=l_nonref, l_mc_bf=l_bf)
