"""Training loop and evaluation for the toy enhancer.

Modes:

* ``supervised``   -- ground-truth target/noise images at the reference mic.
* ``m2m``          -- mixture-consistency losses across real mics only.
* ``m2bm``         -- mixture consistency plus a beamformed virtual mic.
* ``super_m2m``    -- per-sample dispatch: simulated samples train supervised,
                      real-like samples with the cross-mic losses.
* ``super_m2bm``   -- as above, with the beamformed term on real-like samples.

Optimization is plain full-gradient descent; the point of this code path is
auditability (every gradient has a finite-difference twin), not speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .beamform import derive_bf_mixture
from .fcp import FcpConfig
from .grad import supervised_grad, total_mc_grad
from .losses import LossBreakdown, supervised_loss, total_mc_loss
from .model import BandedAffineModel
from .scene import SceneBundle
from .spectral import MultichannelSpectrogram, istft

MODES = ("supervised", "m2m", "m2bm", "super_m2m", "super_m2bm")
GRAD_METHODS = ("analytic", "finite_diff")
INITS = ("random", "passthrough")
SAMPLE_TAGS = ("simulated", "real_like")
SI_SDR_CAP_DB = 80.0


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        self.value = value
        super().__init__(f"training diverged at step {step}: loss became {value!r}")


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    lr: float = 0.05
    steps: int = 100
    batch: int = 1
    seed: int = 0
    fcp: FcpConfig = field(default_factory=FcpConfig)
    grad_method: str = "analytic"
    fd_step: float = 1e-4
    through_filter: bool = True
    init: str = "random"
    init_scale: float = 0.05
    input_channels: int = 1
    context: int = 1
    num_bands: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.grad_method not in GRAD_METHODS:
            raise ValueError(f"unknown grad_method {self.grad_method!r}")
        if self.init not in INITS:
            raise ValueError(f"unknown init {self.init!r}")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.fd_step <= 0.0:
            raise ValueError("fd_step must be > 0")


@dataclass
class TrainSample:
    """A scene plus its supervision tag and optional beamformed mixture."""

    bundle: SceneBundle
    tag: str = "simulated"
    mixture_bf: np.ndarray | None = None

    def __post_init__(self):
        if self.tag not in SAMPLE_TAGS:
            raise ValueError(f"unknown sample tag {self.tag!r}, expected one of {SAMPLE_TAGS}")


def resolve_mode(mode: str, sample: TrainSample) -> str:
    """Effective loss kind for one sample under a training mode."""
    if mode in ("supervised", "m2m", "m2bm"):
        return mode
    if mode == "super_m2m":
        return "supervised" if sample.tag == "simulated" else "m2m"
    if mode == "super_m2bm":
        return "supervised" if sample.tag == "simulated" else "m2bm"
    raise ValueError(f"unknown mode {mode!r}")


def _model_input(model: BandedAffineModel, bundle: SceneBundle) -> np.ndarray:
    if bundle.num_mics < model.input_channels:
        raise ValueError(
            f"model wants {model.input_channels} input channels, scene has {bundle.num_mics}"
        )
    return bundle.mixture.data[: model.input_channels]


def _require_bf(sample: TrainSample) -> np.ndarray:
    if sample.mixture_bf is None:
        raise ValueError(
            "beamformed-mixture loss requested but the sample has no beamformed "
            "mixture; derive one first (see mint_bf_targets)"
        )
    return sample.mixture_bf


def sample_loss(model: BandedAffineModel, sample: TrainSample, kind: str,
                fcp_cfg: FcpConfig) -> LossBreakdown:
    bundle = sample.bundle
    ref = bundle.ref_mic
    mix_in = _model_input(model, bundle)
    target_est, noise_est = model.forward(mix_in)
    if kind == "supervised":
        return supervised_loss(bundle.target.channel(ref), bundle.noise.channel(ref),
                               target_est, noise_est, bundle.mixture.channel(ref))
    if kind == "m2m":
        return total_mc_loss(bundle.mixture.data, target_est, noise_est, ref, fcp_cfg)
    if kind == "m2bm":
        return total_mc_loss(bundle.mixture.data, target_est, noise_est, ref, fcp_cfg,
                             mixture_bf=_require_bf(sample))
    raise ValueError(f"unknown loss kind {kind!r}")


def sample_grad(model: BandedAffineModel, sample: TrainSample, kind: str,
                fcp_cfg: FcpConfig, through_filter: bool = True):
    """Analytic (breakdown, flat parameter gradient) for one sample."""
    bundle = sample.bundle
    ref = bundle.ref_mic
    mix_in = _model_input(model, bundle)
    feats = model.features(mix_in)
    target_est, noise_est = model.forward(mix_in, features=feats)
    if kind == "supervised":
        breakdown, g_x, g_v = supervised_grad(
            bundle.target.channel(ref), bundle.noise.channel(ref),
            target_est, noise_est, bundle.mixture.channel(ref))
    elif kind == "m2m":
        breakdown, g_x, g_v = total_mc_grad(bundle.mixture.data, target_est, noise_est,
                                            ref, fcp_cfg, through_filter=through_filter)
    elif kind == "m2bm":
        breakdown, g_x, g_v = total_mc_grad(bundle.mixture.data, target_est, noise_est,
                                            ref, fcp_cfg, mixture_bf=_require_bf(sample),
                                            through_filter=through_filter)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return breakdown, model.backward(mix_in, g_x, g_v, features=feats)


def finite_difference_gradient(loss_fn, params: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Central differences with per-coordinate step rel_step * max(|p|, 1)."""
    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    work = params.copy()
    for j in range(params.size):
        step = rel_step * max(abs(params[j]), 1.0)
        work[j] = params[j] + step
        hi = loss_fn(work)
        work[j] = params[j] - step
        lo = loss_fn(work)
        work[j] = params[j]
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(
                f"finite-difference probe returned non-finite loss at parameter {j}"
            )
        grad[j] = (hi - lo) / (2.0 * step)
    return grad


def batch_gradient(model: BandedAffineModel, batch, cfg: TrainConfig):
    """Mean loss and mean parameter gradient over a batch of samples.

    Returns (mean_total, per_sample_kinds, grad).
    """
    kinds = [resolve_mode(cfg.mode, sample) for sample in batch]
    if cfg.grad_method == "analytic":
        totals = []
        grad = np.zeros_like(model.params)
        for sample, kind in zip(batch, kinds):
            breakdown, g = sample_grad(model, sample, kind, cfg.fcp,
                                       through_filter=cfg.through_filter)
            totals.append(breakdown.total)
            grad += g
        return float(np.mean(totals)), kinds, grad / len(batch)

    base = model.params.copy()

    def loss_at(params):
        probe = BandedAffineModel(model.num_bins, model.input_channels, model.context,
                                  model.num_bands, params=params.copy())
        vals = [sample_loss(probe, s, k, cfg.fcp).total for s, k in zip(batch, kinds)]
        return float(np.mean(vals))

    grad = finite_difference_gradient(loss_at, base, rel_step=cfg.fd_step)
    return loss_at(base), kinds, grad


@dataclass
class TrainResult:
    model: BandedAffineModel
    loss_curve: list
    mode_counts: dict
    config: TrainConfig

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]


def init_model(cfg: TrainConfig, num_bins: int) -> BandedAffineModel:
    if cfg.init == "passthrough":
        return BandedAffineModel.passthrough(num_bins, cfg.input_channels,
                                             cfg.context, cfg.num_bands)
    return BandedAffineModel.random(num_bins, cfg.input_channels, cfg.context,
                                    cfg.num_bands, seed=cfg.seed, scale=cfg.init_scale)


def train(cfg: TrainConfig, dataset, model: BandedAffineModel | None = None) -> TrainResult:
    """Run gradient descent over a dataset of :class:`TrainSample`.

    The batch at step i is the next ``cfg.batch`` samples cycling through the
    dataset in order, so runs are deterministic for a fixed config. With
    ``steps=0`` nothing is updated and the curve holds one entry: the initial
    mean loss over the whole dataset.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    if model is None:
        model = init_model(cfg, dataset[0].bundle.mixture.num_bins)
    else:
        model = model.copy()

    mode_counts = {}
    curve = []
    if cfg.steps == 0:
        kinds = [resolve_mode(cfg.mode, s) for s in dataset]
        vals = [sample_loss(model, s, k, cfg.fcp).total for s, k in zip(dataset, kinds)]
        for k in kinds:
            mode_counts[k] = mode_counts.get(k, 0) + 1
        curve.append(float(np.mean(vals)))
        return TrainResult(model=model, loss_curve=curve, mode_counts=mode_counts, config=cfg)

    cursor = 0
    for step in range(cfg.steps):
        batch = [dataset[(cursor + j) % len(dataset)] for j in range(cfg.batch)]
        cursor = (cursor + cfg.batch) % len(dataset)
        mean_total, kinds, grad = batch_gradient(model, batch, cfg)
        if not np.isfinite(mean_total):
            raise TrainingDivergedError(step, mean_total)
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(step, float("nan"))
        for k in kinds:
            mode_counts[k] = mode_counts.get(k, 0) + 1
        curve.append(mean_total)
        model.params = model.params - cfg.lr * grad
    return TrainResult(model=model, loss_curve=curve, mode_counts=mode_counts, config=cfg)


# -- metrics and evaluation -------------------------------------------------


def si_sdr_db(reference: np.ndarray, estimate: np.ndarray,
              cap_db: float = SI_SDR_CAP_DB) -> float:
    """Scale-invariant SDR in dB, clipped to +-cap_db.

    The estimate is projected onto the reference; the ratio of projection
    energy to residual energy is scored. A zero estimate returns -cap_db,
    an exact (scaled) match +cap_db.
    """
    reference = np.asarray(reference, dtype=np.float64).ravel()
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    if reference.shape != estimate.shape:
        raise ValueError("reference and estimate must have equal length")
    ref_energy = float(reference @ reference)
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    alpha = float(reference @ estimate) / ref_energy
    proj = alpha * reference
    resid = estimate - proj
    num = float(proj @ proj)
    den = float(resid @ resid)
    if num == 0.0:
        return -cap_db
    if den == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def snr_db(reference: np.ndarray, estimate: np.ndarray,
           cap_db: float = SI_SDR_CAP_DB) -> float:
    """Plain SNR of estimate against reference in dB, clipped to +-cap_db."""
    reference = np.asarray(reference, dtype=np.float64).ravel()
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    if reference.shape != estimate.shape:
        raise ValueError("reference and estimate must have equal length")
    ref_energy = float(reference @ reference)
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    err = estimate - reference
    err_energy = float(err @ err)
    if err_energy == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(ref_energy / err_energy), -cap_db, cap_db))


@dataclass
class EvalReport:
    si_sdr_mean_db: float
    snr_mean_db: float
    mc_loss_mean: float
    per_scene_si_sdr_db: list
    per_scene_snr_db: list
    per_scene_mc_loss: list

    def to_dict(self) -> dict:
        return {
            "si_sdr_mean_db": self.si_sdr_mean_db,
            "snr_mean_db": self.snr_mean_db,
            "mc_loss_mean": self.mc_loss_mean,
            "per_scene_si_sdr_db": self.per_scene_si_sdr_db,
            "per_scene_snr_db": self.per_scene_snr_db,
            "per_scene_mc_loss": self.per_scene_mc_loss,
        }


def enhance_to_time(model: BandedAffineModel, bundle: SceneBundle) -> np.ndarray:
    """Run the model on a scene and resynthesize the target estimate."""
    mix_in = _model_input(model, bundle)
    target_est, _ = model.forward(mix_in)
    spec = MultichannelSpectrogram(target_est[None], bundle.mixture.config)
    return istft(spec, out_len=bundle.num_samples)[0]


def evaluate(model: BandedAffineModel, scenes, fcp_cfg: FcpConfig = FcpConfig()) -> EvalReport:
    """Held-out metrics: time-domain SI-SDR/SNR of the target estimate plus
    the cross-mic consistency loss (no beamformed term)."""
    scenes = list(scenes)
    if not scenes:
        raise ValueError("no evaluation scenes")
    sis, snrs, mcs = [], [], []
    for bundle in scenes:
        ref = bundle.ref_mic
        mix_in = _model_input(model, bundle)
        target_est, noise_est = model.forward(mix_in)
        est_time = enhance_to_time(model, bundle)
        truth = bundle.target_time[ref]
        sis.append(si_sdr_db(truth, est_time))
        snrs.append(snr_db(truth, est_time))
        mcs.append(total_mc_loss(bundle.mixture.data, target_est, noise_est,
                                 ref, fcp_cfg).total)
    return EvalReport(
        si_sdr_mean_db=float(np.mean(sis)),
        snr_mean_db=float(np.mean(snrs)),
        mc_loss_mean=float(np.mean(mcs)),
        per_scene_si_sdr_db=sis,
        per_scene_snr_db=snrs,
        per_scene_mc_loss=mcs,
    )


def monaural_enhancer(model: BandedAffineModel):
    """Wrap a single-channel model as the per-mic enhancer the beamformer wants."""
    if model.input_channels != 1:
        raise ValueError("per-mic enhancement needs a single-channel model")

    def enhancer(channel):
        return model.forward(np.asarray(channel)[None])

    return enhancer


def mint_bf_targets(samples, model: BandedAffineModel, mic_subset=None,
                    only_real_like: bool = True, diag_load: float = 1e-6):
    """Attach beamformed mixtures to samples using a trained per-mic enhancer.

    Returns new samples; bundles are shared, only the beamformed field is set.
    """
    enhancer = monaural_enhancer(model)
    out = []
    for sample in samples:
        if only_real_like and sample.tag != "real_like":
            out.append(sample)
            continue
        bundle = sample.bundle
        subset = tuple(range(bundle.num_mics)) if mic_subset is None else tuple(mic_subset)
        beamformed, _, _ = derive_bf_mixture(bundle.mixture, enhancer, subset,
                                             bundle.ref_mic, diag_load=diag_load)
        out.append(replace(sample, mixture_bf=beamformed))
    return out
