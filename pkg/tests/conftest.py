"""Shared fixtures and helpers for the test suite."""

import numpy as np
import pytest

from m2bm.fcp import FcpConfig
from m2bm.scene import SceneSpec, SourceSpec, random_delay_firs, simulate
from m2bm.spectral import StftConfig


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circular complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def quick_scene(seed: int = 0, num_mics: int = 3, duration_s: float = 0.12,
                snr_db: float = 3.0, stft_cfg: StftConfig | None = None,
                num_noise_sources: int = 1):
    """Small rendered scene used by loss/gradient/trainer tests."""
    if stft_cfg is None:
        stft_cfg = StftConfig(win_len=64, hop=16)
    rng = np.random.default_rng(seed)
    spec = SceneSpec(
        num_mics=num_mics,
        target_firs=random_delay_firs(rng, num_mics, max_delay=3, num_taps=6),
        noise_firs=tuple(random_delay_firs(rng, num_mics, max_delay=3, num_taps=6)
                         for _ in range(num_noise_sources)),
        target_source=SourceSpec(kind="noise", duration_s=duration_s),
        noise_sources=tuple(SourceSpec(kind="noise", duration_s=duration_s)
                            for _ in range(num_noise_sources)),
        snr_db=snr_db,
        ref_mic=0,
        seed=seed,
    )
    return simulate(spec, stft_cfg)


@pytest.fixture
def tiny_stft() -> StftConfig:
    return StftConfig(win_len=64, hop=16)


@pytest.fixture
def small_fcp() -> FcpConfig:
    return FcpConfig(past_taps=3, future_taps=1)
