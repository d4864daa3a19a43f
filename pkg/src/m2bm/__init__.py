"""Weakly-supervised speech enhancement with mixture-consistency training.

A desk-scale reference implementation: STFT front end, per-frequency
cross-frame filter solves, mixture-consistency losses (optionally against a
beamformed virtual mic), an MVDR beamformer driven by per-mic estimates,
and a small trainable enhancer with fully auditable gradients.
"""

from .beamform import (
    BeamformerWeights,
    RtfUndefinedError,
    apply_beamformer,
    beamform_from_estimates,
    derive_bf_mixture,
    mvdr_weights,
    principal_eigenvector,
    rtf,
    rtf_with_fallback,
    spatial_covariance,
)
from .fcp import FcpConfig, apply_filter, fcp_solve, fcp_weights, stack_frames
from .kernels import BACKEND as KERNEL_BACKEND
from .losses import (
    LossBreakdown,
    mc_loss_bf,
    mc_loss_nonref,
    mc_loss_ref,
    normalized_distance,
    ri_mag_distance,
    supervised_loss,
    total_mc_loss,
)
from .model import BandedAffineModel
from .scene import (
    NarrowbandScene,
    SceneBundle,
    SceneSpec,
    SourceSpec,
    simulate,
    synth_narrowband_scene,
)
from .spectral import MultichannelSpectrogram, StftConfig, istft, stft
from .trainer import (
    EvalReport,
    TrainConfig,
    TrainResult,
    TrainSample,
    TrainingDivergedError,
    evaluate,
    mint_bf_targets,
    si_sdr_db,
    snr_db,
    train,
)
from .wavio import read_wav, write_wav

__version__ = "0.1.0"

__all__ = [
    "BandedAffineModel",
    "BeamformerWeights",
    "EvalReport",
    "FcpConfig",
    "KERNEL_BACKEND",
    "LossBreakdown",
    "MultichannelSpectrogram",
    "NarrowbandScene",
    "RtfUndefinedError",
    "SceneBundle",
    "SceneSpec",
    "SourceSpec",
    "StftConfig",
    "TrainConfig",
    "TrainResult",
    "TrainSample",
    "TrainingDivergedError",
    "apply_beamformer",
    "apply_filter",
    "beamform_from_estimates",
    "derive_bf_mixture",
    "evaluate",
    "fcp_solve",
    "fcp_weights",
    "istft",
    "mc_loss_bf",
    "mc_loss_nonref",
    "mc_loss_ref",
    "mint_bf_targets",
    "mvdr_weights",
    "normalized_distance",
    "principal_eigenvector",
    "read_wav",
    "ri_mag_distance",
    "rtf",
    "rtf_with_fallback",
    "si_sdr_db",
    "simulate",
    "snr_db",
    "spatial_covariance",
    "stack_frames",
    "stft",
    "supervised_loss",
    "synth_narrowband_scene",
    "total_mc_loss",
    "train",
    "write_wav",
]
