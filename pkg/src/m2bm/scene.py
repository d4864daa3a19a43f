"""Synthetic multichannel scenes with known target/noise spatial images.

Two generation paths:

* :func:`simulate` renders dry sources, convolves them with short per-mic
  FIRs and scales the noise to a requested SNR at the reference mic. The
  per-frequency filter model downstream losses assume then only holds
  approximately (cross-bin leakage), which is the realistic case.
* :func:`synth_narrowband_scene` builds the images directly in the STFT
  domain by applying known per-frequency complex FIRs across frames, so the
  relative-filter model holds exactly and solver/loss oracles can assert
  near-zero residuals. Target and noise occupy disjoint frame ranges
  (separated by a guard of one filter length) so each cross-frame regression
  is exactly identified.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .fcp import FcpConfig, apply_filter, stack_frames
from .spectral import MultichannelSpectrogram, StftConfig, istft, stft
from .wavio import read_wav

MAX_FIR_TAPS = 64

_SOURCE_KINDS = ("noise", "tones", "wav")


@dataclass(frozen=True)
class SourceSpec:
    """Dry-signal descriptor: seeded noise, a seeded tone complex, or a WAV file."""

    kind: str
    duration_s: float | None = None
    seed: int | None = None
    freqs: tuple[float, ...] | None = None
    amps: tuple[float, ...] | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in _SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}, expected one of {_SOURCE_KINDS}")
        if self.kind == "wav" and not self.path:
            raise ValueError("wav source requires a path")
        if self.kind == "tones" and not self.freqs:
            raise ValueError("tone source requires at least one frequency")

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.duration_s is not None:
            out["duration_s"] = self.duration_s
        if self.seed is not None:
            out["seed"] = self.seed
        if self.freqs is not None:
            out["freqs"] = list(self.freqs)
        if self.amps is not None:
            out["amps"] = list(self.amps)
        if self.path is not None:
            out["path"] = self.path
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SourceSpec":
        return cls(
            kind=d["kind"],
            duration_s=d.get("duration_s"),
            seed=d.get("seed"),
            freqs=tuple(d["freqs"]) if "freqs" in d else None,
            amps=tuple(d["amps"]) if "amps" in d else None,
            path=d.get("path"),
        )


def render_source(source: SourceSpec, sample_rate: int, rng: np.random.Generator,
                  num_samples: int | None = None) -> np.ndarray:
    """Render a dry source to float64 samples.

    ``num_samples`` forces the output length (noise is drawn at that length,
    tones and WAVs are cropped; too-short material raises).
    """
    if source.seed is not None:
        rng = np.random.default_rng(source.seed)
    if source.kind == "wav":
        samples, sr = read_wav(source.path)
        if sr != sample_rate:
            raise ValueError(f"{source.path}: sample rate {sr} != scene rate {sample_rate}")
        dry = samples[0]
    else:
        if num_samples is None:
            if source.duration_s is None:
                raise ValueError(f"{source.kind} source needs duration_s when length is not forced")
            num_samples = int(round(source.duration_s * sample_rate))
        if source.kind == "noise":
            dry = rng.standard_normal(num_samples)
        else:  # tones
            t = np.arange(num_samples) / sample_rate
            amps = source.amps if source.amps is not None else (1.0,) * len(source.freqs)
            if len(amps) != len(source.freqs):
                raise ValueError("amps and freqs must have equal length")
            phases = rng.uniform(0.0, 2.0 * np.pi, size=len(source.freqs))
            dry = np.zeros(num_samples)
            for f, a, ph in zip(source.freqs, amps, phases):
                dry += a * np.sin(2.0 * np.pi * f * t + ph)
    if num_samples is not None:
        if dry.shape[0] < num_samples:
            raise ValueError(f"{source.kind} source too short: {dry.shape[0]} < {num_samples} samples")
        dry = dry[:num_samples]
    return dry


def _validate_firs(firs, num_mics: int, what: str) -> tuple[np.ndarray, ...]:
    if len(firs) != num_mics:
        raise ValueError(f"{what}: expected {num_mics} FIR vectors, got {len(firs)}")
    out = []
    for p, fir in enumerate(firs):
        fir = np.asarray(fir, dtype=np.float64)
        if fir.ndim != 1 or fir.size == 0:
            raise ValueError(f"{what}[{p}]: FIR must be a nonempty 1-D vector")
        if fir.size > MAX_FIR_TAPS:
            raise ValueError(f"{what}[{p}]: FIR has {fir.size} taps, max is {MAX_FIR_TAPS}")
        out.append(fir)
    return tuple(out)


@dataclass(frozen=True)
class SceneSpec:
    """Declarative description of a synthetic multichannel scene."""

    num_mics: int
    target_firs: tuple
    noise_firs: tuple
    target_source: SourceSpec
    noise_sources: tuple
    snr_db: float | None
    ref_mic: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.num_mics < 2:
            raise ValueError("num_mics must be >= 2")
        if not 0 <= self.ref_mic < self.num_mics:
            raise ValueError(f"ref_mic {self.ref_mic} out of range for {self.num_mics} mics")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite (or None to disable scaling)")
        if len(self.noise_sources) != len(self.noise_firs):
            raise ValueError("need one FIR set per noise source")
        object.__setattr__(self, "target_firs",
                           _validate_firs(self.target_firs, self.num_mics, "target_firs"))
        object.__setattr__(self, "noise_firs",
                           tuple(_validate_firs(f, self.num_mics, f"noise_firs[{i}]")
                                 for i, f in enumerate(self.noise_firs)))
        object.__setattr__(self, "noise_sources", tuple(self.noise_sources))

    def to_dict(self) -> dict:
        return {
            "num_mics": self.num_mics,
            "target_firs": [f.tolist() for f in self.target_firs],
            "noise_firs": [[f.tolist() for f in firs] for firs in self.noise_firs],
            "target_source": self.target_source.to_dict(),
            "noise_sources": [s.to_dict() for s in self.noise_sources],
            "snr_db": self.snr_db,
            "ref_mic": self.ref_mic,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(
            num_mics=d["num_mics"],
            target_firs=tuple(np.asarray(f, dtype=np.float64) for f in d["target_firs"]),
            noise_firs=tuple(tuple(np.asarray(f, dtype=np.float64) for f in firs)
                             for firs in d["noise_firs"]),
            target_source=SourceSpec.from_dict(d["target_source"]),
            noise_sources=tuple(SourceSpec.from_dict(s) for s in d.get("noise_sources", [])),
            snr_db=d.get("snr_db"),
            ref_mic=d.get("ref_mic", 0),
            seed=d.get("seed", 0),
        )


@dataclass
class SceneBundle:
    """Mixture plus ground-truth spatial images, in both domains.

    The time-domain additivity mixture = target + noise is exact by
    construction; the STFT tensors inherit it up to transform linearity.
    """

    mixture_time: np.ndarray
    target_time: np.ndarray
    noise_time: np.ndarray
    mixture: MultichannelSpectrogram
    target: MultichannelSpectrogram
    noise: MultichannelSpectrogram
    ref_mic: int

    @property
    def num_mics(self) -> int:
        return self.mixture.num_mics

    @property
    def num_samples(self) -> int:
        return self.mixture_time.shape[1]


def _convolve_images(firs, dry: np.ndarray) -> np.ndarray:
    num_samples = dry.shape[0]
    return np.stack([np.convolve(dry, fir)[:num_samples] for fir in firs])


def simulate(spec: SceneSpec, stft_config: StftConfig = StftConfig()) -> SceneBundle:
    """Render a scene: images by FIR convolution, noise scaled to the SNR."""
    streams = np.random.SeedSequence(spec.seed).spawn(1 + len(spec.noise_sources))
    dry_target = render_source(spec.target_source, stft_config.sample_rate,
                               np.random.default_rng(streams[0]))
    if not np.any(dry_target):
        raise ValueError("dry target has zero energy")
    num_samples = dry_target.shape[0]

    target_img = _convolve_images(spec.target_firs, dry_target)
    noise_img = np.zeros_like(target_img)
    for src, firs, stream in zip(spec.noise_sources, spec.noise_firs, streams[1:]):
        dry = render_source(src, stft_config.sample_rate,
                            np.random.default_rng(stream), num_samples=num_samples)
        noise_img += _convolve_images(firs, dry)

    if spec.snr_db is not None:
        target_energy = np.sum(target_img[spec.ref_mic] ** 2)
        noise_energy = np.sum(noise_img[spec.ref_mic] ** 2)
        if target_energy == 0.0:
            raise ValueError("target image at the reference mic has zero energy")
        if noise_energy == 0.0:
            raise ValueError(f"cannot reach snr_db={spec.snr_db}: noise has zero energy")
        gain = np.sqrt(target_energy / (noise_energy * 10.0 ** (spec.snr_db / 10.0)))
        noise_img *= gain

    mixture = target_img + noise_img
    return SceneBundle(
        mixture_time=mixture,
        target_time=target_img,
        noise_time=noise_img,
        mixture=stft(mixture, stft_config),
        target=stft(target_img, stft_config),
        noise=stft(noise_img, stft_config),
        ref_mic=spec.ref_mic,
    )


@dataclass
class NarrowbandScene(SceneBundle):
    """Exact-subspace bundle plus the per-frequency filters that generated it.

    ``target_filters``/``noise_filters`` have shape (P, F, taps) in past-tap
    convention (the last tap multiplies the current frame); the reference
    channel carries the unit filter. ``target_frames``/``noise_frames`` are
    the disjoint frame ranges the two components occupy.
    """

    target_filters: np.ndarray = None
    noise_filters: np.ndarray = None
    taps: int = 0
    target_frames: slice = None
    noise_frames: slice = None


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def synth_narrowband_scene(spec: SceneSpec, taps_per_freq: int,
                           stft_config: StftConfig = StftConfig(),
                           fcp: FcpConfig = FcpConfig(),
                           num_frames: int = 64,
                           shared_filters: bool = False) -> NarrowbandScene:
    """Build a scene directly in the STFT domain with known relative filters.

    Args:
        taps_per_freq: length of the generating cross-frame filters; must not
            exceed ``fcp.num_taps`` so downstream solves can represent them.
        fcp: the solver geometry the fixture is built for; sets the guard gap
            between the target and noise frame ranges.
        shared_filters: use one filter set for both components (colocated
            sources). Required for the mixture-passthrough identity, since a
            single filter can only explain both components if they share one.
    """
    if taps_per_freq < 1:
        raise ValueError("taps_per_freq must be >= 1")
    if taps_per_freq > fcp.num_taps:
        raise ValueError(
            f"taps_per_freq ({taps_per_freq}) exceeds solver taps ({fcp.num_taps})"
        )
    guard = fcp.num_taps
    usable = num_frames - guard
    half = usable // 2
    if half < taps_per_freq + 2:
        raise ValueError(
            f"num_frames={num_frames} too small for taps={taps_per_freq} with guard={guard}"
        )

    num_mics, num_bins = spec.num_mics, stft_config.num_bins
    ref = spec.ref_mic
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))

    target_frames = slice(0, half)
    noise_frames = slice(half + guard, num_frames)

    target_ref = np.zeros((num_frames, num_bins), dtype=np.complex128)
    target_ref[target_frames] = _crandn(rng, (half, num_bins))
    noise_ref = np.zeros((num_frames, num_bins), dtype=np.complex128)
    noise_ref[noise_frames] = _crandn(rng, (num_frames - half - guard, num_bins))

    unit = np.zeros(taps_per_freq, dtype=np.complex128)
    unit[-1] = 1.0  # last tap is the current frame

    def draw_filters() -> np.ndarray:
        filt = _crandn(rng, (num_mics, num_bins, taps_per_freq)) / np.sqrt(taps_per_freq)
        filt[ref] = unit
        return filt

    target_filters = draw_filters()
    noise_filters = target_filters if shared_filters else draw_filters()

    gen_cfg = FcpConfig(past_taps=taps_per_freq, future_taps=0,
                        weight_floor=fcp.weight_floor, diag_load=fcp.diag_load)
    target_stacked = stack_frames(target_ref, gen_cfg)
    noise_stacked = stack_frames(noise_ref, gen_cfg)
    target_img = np.stack([apply_filter(target_filters[p], target_stacked)
                           for p in range(num_mics)])
    noise_img = np.stack([apply_filter(noise_filters[p], noise_stacked)
                          for p in range(num_mics)])

    if spec.snr_db is not None:
        target_energy = np.sum(np.abs(target_img[ref]) ** 2)
        noise_energy = np.sum(np.abs(noise_img[ref]) ** 2)
        if noise_energy == 0.0:
            raise ValueError(f"cannot reach snr_db={spec.snr_db}: noise has zero energy")
        gain = np.sqrt(target_energy / (noise_energy * 10.0 ** (spec.snr_db / 10.0)))
        # a real gain scales the reference channel and the images alike, so
        # the relative filters are unchanged
        noise_img *= gain
    mixture_img = target_img + noise_img

    target_spec = MultichannelSpectrogram(target_img, stft_config)
    noise_spec = MultichannelSpectrogram(noise_img, stft_config)
    mixture_spec = MultichannelSpectrogram(mixture_img, stft_config)
    target_time = istft(target_spec)
    noise_time = istft(noise_spec)

    return NarrowbandScene(
        mixture_time=target_time + noise_time,
        target_time=target_time,
        noise_time=noise_time,
        mixture=mixture_spec,
        target=target_spec,
        noise=noise_spec,
        ref_mic=ref,
        target_filters=target_filters,
        noise_filters=noise_filters,
        taps=taps_per_freq,
        target_frames=target_frames,
        noise_frames=noise_frames,
    )


def embed_filter_taps(filters: np.ndarray, taps: int, cfg: FcpConfig) -> np.ndarray:
    """Place past-tap-convention generating filters into a solver's tap layout.

    A k-tap generator aligned so its last tap hits the current frame occupies
    positions [past_taps - k, past_taps) of a (past_taps + future_taps)
    filter; everything else is zero.
    """
    filters = np.asarray(filters)
    out_shape = filters.shape[:-1] + (cfg.num_taps,)
    out = np.zeros(out_shape, dtype=np.complex128)
    lo = cfg.past_taps - taps
    if lo < 0:
        raise ValueError(f"solver past_taps ({cfg.past_taps}) cannot hold {taps} past taps")
    out[..., lo:cfg.past_taps] = filters
    return out


def random_delay_firs(rng: np.random.Generator, num_mics: int, max_delay: int = 8,
                      num_taps: int = 12, decay: float = 0.6) -> tuple[np.ndarray, ...]:
    """Short random per-mic FIRs: a dominant delayed spike plus decaying tail."""
    firs = []
    for _ in range(num_mics):
        delay = int(rng.integers(0, max_delay + 1))
        fir = np.zeros(delay + num_taps)
        fir[delay] = 1.0
        tail = rng.standard_normal(num_taps - 1) * decay ** np.arange(1, num_taps)
        fir[delay + 1:] = tail * 0.5
        firs.append(fir)
    return tuple(firs)
