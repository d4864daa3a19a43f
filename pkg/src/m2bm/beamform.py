"""Time-invariant MVDR beamforming driven by per-mic enhancement estimates.

Pipeline: per-mic target/noise estimates -> per-frequency spatial covariance
matrices -> relative transfer function (principal eigenvector of the target
covariance, normalized at the reference mic) -> minimum-variance
distortionless-response weights -> beamformed mixture. The beamformed output
can then serve as an extra, spatially cleaner reference signal for training.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .spectral import MultichannelSpectrogram

DEFAULT_DIAG_LOAD = 1e-6
RTF_MIN_REL = 1e-8
EIGENGAP_RTOL = 1e-10


class RtfUndefinedError(RuntimeError):
    """Raised when the steering vector vanishes at the reference mic."""

    def __init__(self, freq_indices):
        self.freq_indices = np.asarray(freq_indices)
        preview = ", ".join(str(int(i)) for i in self.freq_indices[:8])
        more = "..." if self.freq_indices.size > 8 else ""
        super().__init__(
            f"reference-mic steering component vanishes at "
            f"{self.freq_indices.size} frequencies (bins {preview}{more})"
        )


def _as_channels(est) -> np.ndarray:
    if isinstance(est, MultichannelSpectrogram):
        return est.data
    est = np.asarray(est)
    if est.ndim != 3:
        raise ValueError(f"expected (mics, frames, bins) array, got shape {est.shape}")
    return est


def spatial_covariance(est) -> np.ndarray:
    """Per-frequency covariance sum_t e(t,f) e(t,f)^H, shape (F, P, P).

    Unnormalized frame sum; only relative scale matters downstream.
    """
    data = _as_channels(est)
    if data.shape[0] < 2:
        raise ValueError("spatial covariance needs at least 2 mics")
    if not np.all(np.isfinite(data)):
        raise ValueError("estimates contain non-finite values")
    return np.einsum("ptf,qtf->fpq", data, data.conj())


def _check_hermitian(phi: np.ndarray, rtol: float = 1e-8):
    asym = np.abs(phi - phi.conj().swapaxes(-1, -2)).max()
    scale = np.abs(phi).max()
    if scale > 0 and asym > rtol * scale:
        raise ValueError(f"covariance is not Hermitian (asymmetry {asym:.3e} vs scale {scale:.3e})")


def principal_eigenvector(phi: np.ndarray, gap_rtol: float = EIGENGAP_RTOL) -> np.ndarray:
    """Unit-norm dominant eigenvector per frequency.

    Accepts (P, P) or (F, P, P); warns when the top eigengap is degenerate
    relative to the trace, since the direction is then arbitrary.
    """
    phi = np.asarray(phi)
    single = phi.ndim == 2
    if single:
        phi = phi[None]
    if phi.ndim != 3 or phi.shape[-1] != phi.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {phi.shape}")
    _check_hermitian(phi)
    eigvals, eigvecs = np.linalg.eigh(phi)
    top = eigvecs[:, :, -1]
    if phi.shape[-1] >= 2:
        gap = eigvals[:, -1] - eigvals[:, -2]
        trace = np.einsum("fpp->f", phi).real
        bad = np.flatnonzero(gap < gap_rtol * np.maximum(trace, 0.0))
        if bad.size:
            warnings.warn(
                f"degenerate top eigengap at {bad.size} frequencies; "
                "principal direction is not unique",
                RuntimeWarning,
                stacklevel=2,
            )
    return top[0] if single else top


def rtf(steering: np.ndarray, ref_mic: int, min_rel: float = RTF_MIN_REL) -> np.ndarray:
    """Normalize steering vectors to unit response at the reference mic."""
    steering = np.asarray(steering)
    single = steering.ndim == 1
    if single:
        steering = steering[None]
    norms = np.linalg.norm(steering, axis=-1)
    ref_component = steering[:, ref_mic]
    undefined = np.abs(ref_component) < min_rel * np.maximum(norms, np.finfo(np.float64).tiny)
    if np.any(undefined):
        raise RtfUndefinedError(np.flatnonzero(undefined))
    out = steering / ref_component[:, None]
    return out[0] if single else out


def rtf_with_fallback(steering: np.ndarray, ref_mic: int,
                      min_rel: float = RTF_MIN_REL) -> tuple[np.ndarray, np.ndarray]:
    """Like :func:`rtf` but degenerate bins get the identity vector e_ref.

    Returns (rtf, fallback_mask); callers should pass the mask on so those
    bins end up as a plain reference-mic passthrough.
    """
    steering = np.asarray(steering)
    norms = np.linalg.norm(steering, axis=-1)
    ref_component = steering[:, ref_mic]
    fallback = np.abs(ref_component) < min_rel * np.maximum(norms, np.finfo(np.float64).tiny)
    out = np.empty_like(steering)
    ok = ~fallback
    out[ok] = steering[ok] / ref_component[ok, None]
    if np.any(fallback):
        unit = np.zeros(steering.shape[-1], dtype=steering.dtype)
        unit[ref_mic] = 1.0
        out[fallback] = unit
    return out, fallback


@dataclass
class BeamformerWeights:
    """Per-frequency weights (F, P) tied to a mic ordering and reference."""

    weights: np.ndarray
    rtf: np.ndarray
    ref_mic: int
    mic_subset: tuple = ()
    fallback_mask: np.ndarray = field(default=None)

    @property
    def num_bins(self) -> int:
        return self.weights.shape[0]

    @property
    def num_mics(self) -> int:
        return self.weights.shape[1]


def mvdr_weights(noise_cov: np.ndarray, steering_rtf: np.ndarray, ref_mic: int,
                 diag_load: float = DEFAULT_DIAG_LOAD) -> BeamformerWeights:
    """Minimum-variance weights with a unit-response constraint on the RTF.

    w(f) = Phi_V(f)^-1 c(f) / (c(f)^H Phi_V(f)^-1 c(f)), with diagonal
    loading diag_load * trace/P added to Phi_V before inversion.
    """
    noise_cov = np.asarray(noise_cov)
    steering_rtf = np.asarray(steering_rtf, dtype=np.complex128)
    if noise_cov.ndim != 3 or noise_cov.shape[-1] != noise_cov.shape[-2]:
        raise ValueError(f"expected (F, P, P) noise covariance, got {noise_cov.shape}")
    num_bins, num_mics = noise_cov.shape[0], noise_cov.shape[1]
    if steering_rtf.shape != (num_bins, num_mics):
        raise ValueError(
            f"rtf shape {steering_rtf.shape} does not match covariance {noise_cov.shape}"
        )
    trace = np.einsum("fpp->f", noise_cov).real
    dead = np.flatnonzero(trace <= 0.0)
    if dead.size:
        raise ValueError(
            f"noise covariance has non-positive trace at {dead.size} frequencies "
            f"(first bins {dead[:8].tolist()}); cannot form MVDR weights"
        )
    loaded = noise_cov + (diag_load * trace / num_mics)[:, None, None] * np.eye(num_mics)
    solved = np.linalg.solve(loaded, steering_rtf[:, :, None])[:, :, 0]
    denom = np.einsum("fp,fp->f", steering_rtf.conj(), solved)
    if np.any(np.abs(denom) == 0.0):
        raise ValueError("distortionless denominator vanished; noise covariance is singular")
    weights = solved / denom[:, None]
    return BeamformerWeights(weights=weights, rtf=steering_rtf, ref_mic=ref_mic)


def apply_beamformer(weights, mixture) -> np.ndarray:
    """Apply w^H y per time-frequency bin: (F, P) x (P, T, F) -> (T, F)."""
    w = weights.weights if isinstance(weights, BeamformerWeights) else np.asarray(weights)
    data = _as_channels(mixture)
    if w.shape != (data.shape[2], data.shape[0]):
        raise ValueError(
            f"weights {w.shape} incompatible with mixture {data.shape} (want (F, P))"
        )
    return np.einsum("fp,ptf->tf", w.conj(), data)


def _validate_subset(mic_subset, num_mics: int, ref_mic: int) -> tuple:
    subset = tuple(int(p) for p in mic_subset)
    if len(subset) < 2:
        raise ValueError("mic_subset must contain at least 2 mics")
    if len(set(subset)) != len(subset):
        raise ValueError(f"mic_subset has duplicates: {subset}")
    if any(p < 0 or p >= num_mics for p in subset):
        raise ValueError(f"mic_subset {subset} out of range for {num_mics} mics")
    if ref_mic not in subset:
        raise ValueError(f"ref_mic {ref_mic} not in mic_subset {subset}")
    return subset


def derive_bf_mixture(mixture: MultichannelSpectrogram, enhancer, mic_subset,
                      ref_mic: int, diag_load: float = DEFAULT_DIAG_LOAD):
    """Run per-mic enhancement over a subset and beamform the mixture with it.

    Args:
        mixture: full multichannel mixture spectrogram.
        enhancer: callable mapping one channel (T, F) to (target_est, noise_est).
        mic_subset: mic indices to beamform over (>= 2, must include ref_mic).
        ref_mic: global index of the reference mic.

    Returns:
        (beamformed (T, F), BeamformerWeights over the subset, stats dict).
    """
    subset = _validate_subset(mic_subset, mixture.num_mics, ref_mic)
    target_est, noise_est = [], []
    for p in subset:
        try:
            xhat, vhat = enhancer(mixture.channel(p))
        except Exception as exc:
            raise RuntimeError(f"enhancer failed on channel {p}: {exc}") from exc
        xhat = np.asarray(xhat)
        vhat = np.asarray(vhat)
        want = (mixture.num_frames, mixture.num_bins)
        if xhat.shape != want or vhat.shape != want:
            raise RuntimeError(
                f"enhancer returned shapes {xhat.shape}/{vhat.shape} on channel {p}, want {want}"
            )
        target_est.append(xhat)
        noise_est.append(vhat)
    return beamform_from_estimates(mixture, np.stack(target_est), np.stack(noise_est),
                                   subset, ref_mic, diag_load=diag_load)


def beamform_from_estimates(mixture: MultichannelSpectrogram, target_est: np.ndarray,
                            noise_est: np.ndarray, mic_subset, ref_mic: int,
                            diag_load: float = DEFAULT_DIAG_LOAD):
    """Beamform from precomputed per-mic estimates over the subset.

    ``target_est``/``noise_est`` are (len(subset), T, F), ordered like
    ``mic_subset``. Same return contract as :func:`derive_bf_mixture`.
    """
    subset = _validate_subset(mic_subset, mixture.num_mics, ref_mic)
    ref_pos = subset.index(ref_mic)
    want = (len(subset), mixture.num_frames, mixture.num_bins)
    target_est = np.asarray(target_est)
    noise_est = np.asarray(noise_est)
    if target_est.shape != want or noise_est.shape != want:
        raise ValueError(
            f"estimate shapes {target_est.shape}/{noise_est.shape} do not match {want}"
        )

    target_cov = spatial_covariance(target_est)
    noise_cov = spatial_covariance(noise_est)

    degenerate_gap = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        steering = principal_eigenvector(target_cov)
        degenerate_gap = sum(1 for w in caught if issubclass(w.category, RuntimeWarning))

    steer_rtf, fallback = rtf_with_fallback(steering, ref_pos)
    bf = mvdr_weights(noise_cov, steer_rtf, ref_pos, diag_load=diag_load)
    if np.any(fallback):
        unit = np.zeros(len(subset), dtype=np.complex128)
        unit[ref_pos] = 1.0
        bf.weights[fallback] = unit
    bf.mic_subset = subset
    bf.fallback_mask = fallback

    sub_mixture = mixture.data[list(subset)]
    beamformed = apply_beamformer(bf, sub_mixture)

    ok = ~fallback
    residual = np.abs(np.einsum("fp,fp->f", bf.weights[ok].conj(), steer_rtf[ok]) - 1.0)
    stats = {
        "mic_subset": list(subset),
        "ref_mic": int(ref_mic),
        "rtf_fallback_count": int(fallback.sum()),
        "degenerate_eigengap_warnings": int(degenerate_gap),
        "max_distortionless_residual": float(residual.max()) if residual.size else 0.0,
    }
    return beamformed, bf, stats
