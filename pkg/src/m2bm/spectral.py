"""STFT analysis/synthesis and the complex spectrogram container.

Conventions used throughout the package:
    P: number of microphones, T: number of frames, F: number of bins.
    Multichannel spectrograms are complex128 arrays of shape (P, T, F);
    a single channel is (T, F). Time signals are float64, shape (P, N).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SUPPORTED_WINDOWS = ("sqrt_hann",)


@dataclass(frozen=True)
class StftConfig:
    """Frame/bin geometry of the transform.

    Defaults are 32 ms windows with 8 ms hops at 16 kHz. The analysis and
    synthesis windows are both the square root of the periodic Hann window,
    which satisfies the constant-overlap-add condition whenever the hop
    divides the window length.
    """

    sample_rate: int = 16000
    win_len: int = 512
    hop: int = 128
    window: str = "sqrt_hann"
    fft_size: int | None = None

    def __post_init__(self):
        if self.window not in _SUPPORTED_WINDOWS:
            raise ValueError(f"unsupported window {self.window!r}, expected one of {_SUPPORTED_WINDOWS}")
        if self.win_len <= 0 or self.hop <= 0:
            raise ValueError("win_len and hop must be positive")
        if self.win_len % self.hop != 0:
            raise ValueError(f"hop ({self.hop}) must divide win_len ({self.win_len})")
        if self.hop == self.win_len:
            raise ValueError("hop equal to win_len violates the overlap-add condition for sqrt-Hann")
        if self.fft_size is not None and self.fft_size < self.win_len:
            raise ValueError(f"fft_size ({self.fft_size}) must be >= win_len ({self.win_len})")

    @property
    def n_fft(self) -> int:
        return self.win_len if self.fft_size is None else self.fft_size

    @property
    def num_bins(self) -> int:
        """One-sided bin count F = n_fft // 2 + 1."""
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        """Zero-padding added on both ends so every sample sees full window overlap."""
        return self.win_len - self.hop

    def num_frames(self, num_samples: int) -> int:
        """Number of frames produced for a signal of `num_samples` samples."""
        if num_samples < self.hop:
            raise ValueError(f"signal too short: {num_samples} samples < one hop ({self.hop})")
        padded = num_samples + 2 * self.pad
        return int(np.ceil((padded - self.win_len) / self.hop)) + 1

    def max_out_len(self, num_frames: int) -> int:
        """Longest signal reconstructable from `num_frames` frames."""
        total = (num_frames - 1) * self.hop + self.win_len
        return total - 2 * self.pad

    def analysis_window(self) -> np.ndarray:
        return _sqrt_hann(self.win_len)

    def synthesis_window(self) -> np.ndarray:
        return _sqrt_hann(self.win_len)


def _sqrt_hann(win_len: int) -> np.ndarray:
    # Periodic Hann; the symmetric variant is not COLA at these hops.
    n = np.arange(win_len)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_len)
    return np.sqrt(hann)


@dataclass
class MultichannelSpectrogram:
    """Complex STFT tensor indexed [mic p, frame t, bin f] plus its geometry."""

    data: np.ndarray
    config: StftConfig

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ValueError(f"expected (P, T, F) data, got shape {self.data.shape}")
        if not np.iscomplexobj(self.data):
            self.data = self.data.astype(np.complex128)
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def num_mics(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_bins(self) -> int:
        return self.data.shape[2]

    def channel(self, p: int) -> np.ndarray:
        """Single-channel view, shape (T, F)."""
        return self.data[p]


def _as_channel_major(signal) -> np.ndarray:
    if isinstance(signal, (list, tuple)):
        lengths = {np.asarray(ch).shape for ch in signal}
        if len(lengths) > 1:
            raise ValueError(f"ragged channel lengths: {sorted(lengths)}")
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (P, N) or (N,) samples, got shape {x.shape}")
    return x


def stft(signal, config: StftConfig = StftConfig()) -> MultichannelSpectrogram:
    """Analyze real multichannel samples into a one-sided complex spectrogram.

    Args:
        signal: (P, N) or (N,) real samples; channels must have equal length.
        config: transform geometry.

    Returns:
        MultichannelSpectrogram with shape (P, T, F), F = fft_size // 2 + 1.
    """
    x = _as_channel_major(signal)
    num_mics, num_samples = x.shape
    num_frames = config.num_frames(num_samples)

    pad = config.pad
    total = (num_frames - 1) * config.hop + config.win_len
    padded = np.zeros((num_mics, total), dtype=np.float64)
    padded[:, pad:pad + num_samples] = x

    frames = np.lib.stride_tricks.sliding_window_view(padded, config.win_len, axis=1)
    frames = frames[:, ::config.hop, :]  # (P, T, win_len)
    windowed = frames * config.analysis_window()
    spec = np.fft.rfft(windowed, n=config.n_fft, axis=-1)
    return MultichannelSpectrogram(spec, config)


def istft(spec: MultichannelSpectrogram, config: StftConfig | None = None,
          out_len: int | None = None) -> np.ndarray:
    """Overlap-add synthesis, inverse of :func:`stft`.

    Args:
        spec: spectrogram to synthesize.
        config: transform geometry; defaults to ``spec.config``.
        out_len: number of samples to return per channel. Defaults to the
            longest reconstructable length.

    Returns:
        (P, out_len) float64 samples.
    """
    if config is None:
        config = spec.config
    if spec.num_bins != config.num_bins:
        raise ValueError(f"spectrogram has {spec.num_bins} bins, config expects {config.num_bins}")
    num_mics, num_frames = spec.num_mics, spec.num_frames
    max_len = config.max_out_len(num_frames)
    if out_len is None:
        out_len = max_len
    if out_len > max_len:
        raise ValueError(f"out_len {out_len} exceeds reconstructable length {max_len}")
    if out_len < 0:
        raise ValueError("out_len must be non-negative")

    frames = np.fft.irfft(spec.data, n=config.n_fft, axis=-1)[..., :config.win_len]
    frames = frames * config.synthesis_window()

    total = (num_frames - 1) * config.hop + config.win_len
    out = np.zeros((num_mics, total), dtype=np.float64)
    norm = np.zeros(total, dtype=np.float64)
    wprod = config.analysis_window() * config.synthesis_window()
    for t in range(num_frames):
        lo = t * config.hop
        out[:, lo:lo + config.win_len] += frames[:, t, :]
        norm[lo:lo + config.win_len] += wprod
    active = norm > 1e-10 * norm.max()
    out[:, active] /= norm[active]

    pad = config.pad
    return out[:, pad:pad + out_len]
