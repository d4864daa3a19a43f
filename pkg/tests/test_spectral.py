"""Transform tests: round trips, energy bookkeeping, geometry, validation."""

import numpy as np
import pytest

from m2bm.spectral import MultichannelSpectrogram, StftConfig, istft, stft


def _frame_energy_oracle(x: np.ndarray, cfg: StftConfig) -> float:
    """Windowed-frame energy computed with an explicit python loop.

    Independently re-creates the analysis framing (zero pad of win-hop on
    both ends, hop-spaced windows) and sums |window * frame|^2.
    """
    num_mics, num_samples = x.shape
    win = cfg.analysis_window()
    num_frames = cfg.num_frames(num_samples)
    pad = cfg.pad
    total = (num_frames - 1) * cfg.hop + cfg.win_len
    padded = np.zeros((num_mics, total))
    padded[:, pad:pad + num_samples] = x
    energy = 0.0
    for t in range(num_frames):
        seg = padded[:, t * cfg.hop:t * cfg.hop + cfg.win_len] * win
        energy += float(np.sum(seg ** 2))
    return energy


def _onesided_energy(spec: MultichannelSpectrogram) -> float:
    """Frame energy from one-sided bins via the discrete Parseval identity."""
    cfg = spec.config
    power = np.abs(spec.data) ** 2
    doubled = 2.0 * power.sum(axis=(0, 1))
    doubled[0] /= 2.0
    if cfg.n_fft % 2 == 0:
        doubled[-1] /= 2.0
    return float(doubled.sum() / cfg.n_fft)


class TestRoundTrip:
    def test_random_signals_reconstruct(self):
        cfg = StftConfig(win_len=128, hop=32)
        rng = np.random.default_rng(0)
        for trial in range(5):
            num_samples = int(rng.integers(300, 2000))
            x = rng.standard_normal((2, num_samples))
            y = istft(stft(x, cfg), out_len=num_samples)
            np.testing.assert_allclose(y, x, rtol=0, atol=1e-12 * np.abs(x).max())

    def test_mono_input_round_trips(self):
        cfg = StftConfig(win_len=64, hop=16)
        rng = np.random.default_rng(1)
        x = rng.standard_normal(500)
        y = istft(stft(x, cfg), out_len=500)
        assert y.shape == (1, 500)
        np.testing.assert_allclose(y[0], x, atol=1e-13)

    def test_length_not_multiple_of_hop(self):
        cfg = StftConfig(win_len=64, hop=16)
        rng = np.random.default_rng(2)
        for num_samples in (97, 255, 1001):
            x = rng.standard_normal((1, num_samples))
            y = istft(stft(x, cfg), out_len=num_samples)
            np.testing.assert_allclose(y, x, atol=1e-13)

    def test_default_out_len_covers_signal(self):
        cfg = StftConfig(win_len=64, hop=16)
        x = np.random.default_rng(3).standard_normal((1, 333))
        y = istft(stft(x, cfg))
        assert y.shape[1] >= 333
        np.testing.assert_allclose(y[:, :333], x, atol=1e-13)


class TestEnergyAndLinearity:
    def test_spectral_energy_matches_frame_energy(self):
        """One-sided spectral power equals the windowed-frame energy."""
        cfg = StftConfig(win_len=128, hop=32)
        rng = np.random.default_rng(4)
        for trial in range(4):
            x = rng.standard_normal((2, int(rng.integers(400, 1200))))
            spec = stft(x, cfg)
            expected = _frame_energy_oracle(x, cfg)
            np.testing.assert_allclose(_onesided_energy(spec), expected, rtol=1e-12)

    def test_transform_is_linear(self):
        cfg = StftConfig(win_len=64, hop=16)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 500))
        y = rng.standard_normal((2, 500))
        lhs = stft(2.5 * x - 1.5 * y, cfg).data
        rhs = 2.5 * stft(x, cfg).data - 1.5 * stft(y, cfg).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_overlap_add_window_product_is_constant(self):
        """The analysis*synthesis product tiles to a constant at these hops."""
        for win_len, hop in ((64, 16), (128, 32), (512, 128)):
            cfg = StftConfig(win_len=win_len, hop=hop)
            wprod = cfg.analysis_window() * cfg.synthesis_window()
            num_frames = 8
            total = (num_frames - 1) * hop + win_len
            acc = np.zeros(total)
            for t in range(num_frames):
                acc[t * hop:t * hop + win_len] += wprod
            steady = acc[win_len:-win_len]
            np.testing.assert_allclose(steady, steady[0], rtol=1e-12)


class TestGeometry:
    def test_num_frames_and_max_out_len_consistent(self):
        cfg = StftConfig(win_len=64, hop=16)
        rng = np.random.default_rng(6)
        for _ in range(10):
            n = int(rng.integers(64, 3000))
            frames = cfg.num_frames(n)
            assert cfg.max_out_len(frames) >= n
            spec = stft(np.zeros((1, n)), cfg)
            assert spec.num_frames == frames

    def test_num_bins(self):
        assert StftConfig(win_len=512, hop=128).num_bins == 257
        assert StftConfig(win_len=64, hop=16).num_bins == 33
        assert StftConfig(win_len=64, hop=16, fft_size=128).num_bins == 65

    def test_channel_accessor(self):
        cfg = StftConfig(win_len=64, hop=16)
        spec = stft(np.random.default_rng(7).standard_normal((3, 400)), cfg)
        np.testing.assert_array_equal(spec.channel(1), spec.data[1])


class TestValidation:
    def test_hop_must_divide_window(self):
        with pytest.raises(ValueError, match="divide"):
            StftConfig(win_len=100, hop=33)

    def test_hop_equal_to_window_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            StftConfig(win_len=64, hop=64)

    def test_unknown_window(self):
        with pytest.raises(ValueError, match="window"):
            StftConfig(win_len=64, hop=16, window="rectangular")

    def test_fft_size_below_window(self):
        with pytest.raises(ValueError, match="fft_size"):
            StftConfig(win_len=128, hop=32, fft_size=64)

    def test_signal_shorter_than_hop(self):
        cfg = StftConfig(win_len=64, hop=16)
        with pytest.raises(ValueError, match="short"):
            stft(np.zeros(8), cfg)

    def test_ragged_channels_rejected(self):
        cfg = StftConfig(win_len=64, hop=16)
        with pytest.raises(ValueError, match="ragged"):
            stft([np.zeros(100), np.zeros(120)], cfg)

    def test_spectrogram_requires_3d(self):
        cfg = StftConfig(win_len=64, hop=16)
        with pytest.raises(ValueError, match="P, T, F"):
            MultichannelSpectrogram(np.zeros((4, 33), dtype=np.complex128), cfg)

    def test_spectrogram_rejects_non_finite(self):
        cfg = StftConfig(win_len=64, hop=16)
        data = np.zeros((1, 4, 33), dtype=np.complex128)
        data[0, 1, 2] = np.nan
        with pytest.raises(ValueError, match="finite"):
            MultichannelSpectrogram(data, cfg)

    def test_istft_out_len_beyond_reconstructable(self):
        cfg = StftConfig(win_len=64, hop=16)
        spec = stft(np.zeros((1, 200)), cfg)
        with pytest.raises(ValueError, match="exceeds"):
            istft(spec, out_len=10_000)

    def test_istft_bin_mismatch(self):
        cfg = StftConfig(win_len=64, hop=16)
        other = StftConfig(win_len=128, hop=32)
        spec = stft(np.zeros((1, 200)), cfg)
        with pytest.raises(ValueError, match="bins"):
            istft(spec, config=other)


def test_transform_is_deterministic():
    cfg = StftConfig(win_len=64, hop=16)
    x = np.random.default_rng(8).standard_normal((2, 700))
    a = stft(x, cfg).data
    b = stft(x, cfg).data
    np.testing.assert_array_equal(a, b)
