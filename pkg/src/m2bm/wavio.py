"""WAV read/write: PCM 16-bit and IEEE float-32, multichannel interleaved."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile

_PCM16_SCALE = 32768.0


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file into channel-major float64 samples.

    Returns:
        (samples, sample_rate) with samples of shape (P, N) in [-1, 1] scale
        for PCM input (float input is passed through unscaled).
    """
    sample_rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    x = data.T  # interleaved (N, P) -> (P, N)
    if x.dtype == np.int16:
        x = x.astype(np.float64) / _PCM16_SCALE
    elif x.dtype in (np.float32, np.float64):
        x = x.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {x.dtype} in {path}")
    return x, int(sample_rate)


def write_wav(path, samples, sample_rate: int, fmt: str = "float32") -> None:
    """Write channel-major samples as an interleaved WAV file.

    Args:
        samples: (P, N) or (N,) float samples.
        fmt: "float32" (IEEE float) or "pcm16" (16-bit, clipped to [-1, 1]).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"expected (P, N) or (N,) samples, got shape {x.shape}")
    interleaved = np.ascontiguousarray(x.T)
    if fmt == "float32":
        wavfile.write(path, sample_rate, interleaved.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(interleaved, -1.0, 32767.0 / _PCM16_SCALE)
        wavfile.write(path, sample_rate, np.round(clipped * _PCM16_SCALE).astype(np.int16))
    else:
        raise ValueError(f"unsupported WAV format {fmt!r}, expected 'float32' or 'pcm16'")
