"""Loss terms: elementwise distance, normalization, mixture-constraint totals."""

import numpy as np
import pytest

from m2bm.beamform import beamform_from_estimates
from m2bm.fcp import FcpConfig
from m2bm.losses import (
    LossBreakdown,
    mc_loss_bf,
    mc_loss_filtered,
    mc_loss_nonref,
    mc_loss_ref,
    normalized_distance,
    ri_mag_distance,
    supervised_loss,
    total_mc_loss,
)
from m2bm.scene import SceneSpec, SourceSpec, synth_narrowband_scene
from m2bm.spectral import StftConfig
from tests.conftest import crandn


def narrowband(seed=0, taps=3, shared=False, num_mics=3,
               fcp_cfg=FcpConfig(past_taps=4, future_taps=1)):
    spec = SceneSpec(
        num_mics=num_mics,
        target_firs=tuple(np.ones(1) for _ in range(num_mics)),
        noise_firs=(tuple(np.ones(1) for _ in range(num_mics)),),
        target_source=SourceSpec(kind="noise", duration_s=0.1),
        noise_sources=(SourceSpec(kind="noise", duration_s=0.1),),
        snr_db=0.0, ref_mic=0, seed=seed,
    )
    return synth_narrowband_scene(spec, taps_per_freq=taps,
                                  stft_config=StftConfig(win_len=64, hop=16),
                                  fcp=fcp_cfg, num_frames=64, shared_filters=shared)


class TestElementwiseDistance:
    def test_known_values(self):
        # |3-0| + |4-0| + |5-0| = 12
        assert ri_mag_distance(3 + 4j, 0.0) == pytest.approx(12.0)
        # real parts differ by 2, magnitudes are equal
        assert ri_mag_distance(1.0, -1.0) == pytest.approx(2.0)
        assert ri_mag_distance(2j, -2j) == pytest.approx(4.0)
        assert ri_mag_distance(1 + 1j, 1 + 1j) == 0.0

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(0)
        a = crandn(rng, (50,))
        b = crandn(rng, (50,))
        np.testing.assert_allclose(ri_mag_distance(a, b), ri_mag_distance(b, a))
        assert np.all(ri_mag_distance(a, b) >= 0)

    def test_triangle_pieces_bound(self):
        """The distance is at most twice and at least once |a - b| elementwise."""
        rng = np.random.default_rng(1)
        a = crandn(rng, (100,))
        b = crandn(rng, (100,))
        diff = np.abs(a - b)
        d = ri_mag_distance(a, b)
        assert np.all(d <= 3.0 * diff + 1e-12)
        assert np.all(d + 1e-12 >= diff)


class TestNormalizedDistance:
    def test_manual_small_case(self):
        ref = np.array([[1.0 + 0j, 2j]])
        est = np.array([[0.0 + 0j, 0j]])
        # distances: (1 + 0 + 1) and (0 + 2 + 2); normalizer |1| + |2j| = 3
        assert normalized_distance(ref, est) == pytest.approx((2.0 + 4.0) / 3.0)

    def test_denominator_override(self):
        ref = np.array([1.0 + 0j])
        est = np.array([0.0 + 0j])
        assert normalized_distance(ref, est, denom=4.0) == pytest.approx(0.5)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            normalized_distance(np.zeros(3, dtype=np.complex128),
                                np.ones(3, dtype=np.complex128))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            normalized_distance(np.ones(3), np.ones(4))


class TestSupervisedLoss:
    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        shape = (6, 5)
        tgt, noi, xh, vh = (crandn(rng, shape) for _ in range(4))
        mix = tgt + noi
        got = supervised_loss(tgt, noi, xh, vh, mix)

        denom = sum(abs(mix[t, f]) for t in range(6) for f in range(5))
        acc_x = acc_v = 0.0
        for t in range(6):
            for f in range(5):
                for ref, est, name in ((tgt, xh, "x"), (noi, vh, "v")):
                    d = (abs(ref[t, f].real - est[t, f].real)
                         + abs(ref[t, f].imag - est[t, f].imag)
                         + abs(abs(ref[t, f]) - abs(est[t, f])))
                    if name == "x":
                        acc_x += d
                    else:
                        acc_v += d
        assert got.l_sup_x == pytest.approx(acc_x / denom, rel=1e-12)
        assert got.l_sup_v == pytest.approx(acc_v / denom, rel=1e-12)
        assert got.total == pytest.approx(got.l_sup_x + got.l_sup_v, rel=1e-12)
        assert got.mode == "supervised"

    def test_perfect_estimates_give_zero(self):
        rng = np.random.default_rng(3)
        tgt = crandn(rng, (4, 4))
        noi = crandn(rng, (4, 4))
        out = supervised_loss(tgt, noi, tgt, noi, tgt + noi)
        assert out.total == 0.0

    def test_input_validation(self):
        z = np.zeros((3, 3), dtype=np.complex128)
        with pytest.raises(ValueError, match="mismatch"):
            supervised_loss(z, z, z, z, np.zeros((2, 3), dtype=np.complex128))
        with pytest.raises(ValueError, match="zero"):
            supervised_loss(z, z, z, z, z)


class TestMixtureConstraintTerms:
    def test_ref_term_zero_for_any_valid_split(self):
        rng = np.random.default_rng(4)
        mix = crandn(rng, (8, 6))
        xh = crandn(rng, (8, 6))
        assert mc_loss_ref(mix, xh, mix - xh) == pytest.approx(0.0, abs=1e-12)

    def test_ref_term_equals_normalized_distance(self):
        rng = np.random.default_rng(5)
        mix = crandn(rng, (8, 6))
        xh = crandn(rng, (8, 6))
        vh = crandn(rng, (8, 6))
        assert mc_loss_ref(mix, xh, vh) == pytest.approx(
            normalized_distance(mix, xh + vh), rel=1e-14)

    def test_filtered_term_near_zero_on_exact_scene(self):
        """Oracle latent estimates explain every mic through short filters."""
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        scene = narrowband(seed=6, fcp_cfg=fcp_cfg)
        xh = scene.target.channel(scene.ref_mic)
        vh = scene.noise.channel(scene.ref_mic)
        for p in range(1, scene.mixture.num_mics):
            loss_p = mc_loss_nonref(scene.mixture.channel(p), xh, vh, fcp_cfg)
            assert loss_p <= 1e-7

    def test_filtered_term_positive_on_wrong_estimates(self):
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        scene = narrowband(seed=7, fcp_cfg=fcp_cfg)
        rng = np.random.default_rng(8)
        xh = crandn(rng, scene.target.channel(0).shape)
        vh = crandn(rng, xh.shape)
        assert mc_loss_nonref(scene.mixture.channel(1), xh, vh, fcp_cfg) > 0.05

    def test_bf_term_is_filtered_term(self):
        fcp_cfg = FcpConfig(past_taps=2, future_taps=1)
        rng = np.random.default_rng(9)
        bf = crandn(rng, (10, 5))
        xh = crandn(rng, (10, 5))
        vh = crandn(rng, (10, 5))
        assert mc_loss_bf(bf, xh, vh, fcp_cfg) == pytest.approx(
            mc_loss_filtered(bf, xh, vh, fcp_cfg), rel=1e-14)


class TestTotalMcLoss:
    def test_combination_identity(self):
        """Total equals ref + mean(nonref) + bf, each term recomputed alone."""
        fcp_cfg = FcpConfig(past_taps=3, future_taps=1)
        rng = np.random.default_rng(10)
        mixtures = crandn(rng, (4, 12, 6))
        xh = crandn(rng, (12, 6))
        vh = crandn(rng, (12, 6))
        bf = crandn(rng, (12, 6))
        out = total_mc_loss(mixtures, xh, vh, 1, fcp_cfg, mixture_bf=bf)

        expected_ref = mc_loss_ref(mixtures[1], xh, vh)
        expected_nonref = {p: mc_loss_nonref(mixtures[p], xh, vh, fcp_cfg)
                           for p in (0, 2, 3)}
        expected_bf = mc_loss_bf(bf, xh, vh, fcp_cfg)
        assert out.l_mc_ref == pytest.approx(expected_ref, rel=1e-12)
        assert set(out.l_mc_nonref) == {0, 2, 3}
        for p, v in expected_nonref.items():
            assert out.l_mc_nonref[p] == pytest.approx(v, rel=1e-12)
        assert out.l_mc_bf == pytest.approx(expected_bf, rel=1e-12)
        assert out.total == pytest.approx(
            expected_ref + np.mean(list(expected_nonref.values())) + expected_bf,
            rel=1e-12)
        assert out.mode == "m2bm"
        assert out.combined_total() == pytest.approx(out.total, rel=1e-12)

    def test_mode_without_bf(self):
        fcp_cfg = FcpConfig(past_taps=2, future_taps=0)
        rng = np.random.default_rng(11)
        mixtures = crandn(rng, (2, 8, 4))
        out = total_mc_loss(mixtures, crandn(rng, (8, 4)), crandn(rng, (8, 4)),
                            0, fcp_cfg)
        assert out.mode == "m2m"
        assert out.l_mc_bf is None
        assert out.combined_total() == pytest.approx(out.total, rel=1e-12)

    def test_oracle_estimates_reach_near_zero(self):
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        scene = narrowband(seed=12, fcp_cfg=fcp_cfg)
        xh = scene.target.channel(scene.ref_mic)
        vh = scene.noise.channel(scene.ref_mic)
        out = total_mc_loss(scene.mixture.data, xh, vh, scene.ref_mic, fcp_cfg)
        assert out.l_mc_ref <= 1e-12
        assert out.total <= 1e-7

    def test_virtual_mic_term_with_oracle_beamformer(self):
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        scene = narrowband(seed=13, fcp_cfg=fcp_cfg)
        beamformed, _, _ = beamform_from_estimates(
            scene.mixture, scene.target.data, scene.noise.data,
            tuple(range(scene.mixture.num_mics)), scene.ref_mic)
        xh = scene.target.channel(scene.ref_mic)
        vh = scene.noise.channel(scene.ref_mic)
        out = total_mc_loss(scene.mixture.data, xh, vh, scene.ref_mic, fcp_cfg,
                            mixture_bf=beamformed)
        assert out.mode == "m2bm"
        assert out.total <= 1e-5

    def test_passthrough_blind_spot(self):
        """Mixture-as-target with zero noise satisfies the cross-mic losses.

        Holds when both components propagate with one shared relative filter;
        this degeneracy is why purely unsupervised cross-mic training cannot
        pin down the split on its own.
        """
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        scene = narrowband(seed=14, shared=True, fcp_cfg=fcp_cfg)
        y_ref = scene.mixture.channel(scene.ref_mic)
        out = total_mc_loss(scene.mixture.data, y_ref, np.zeros_like(y_ref),
                            scene.ref_mic, fcp_cfg)
        assert out.total <= 1e-6

    def test_single_mic_requires_bf(self):
        rng = np.random.default_rng(15)
        mixtures = crandn(rng, (1, 8, 4))
        xh = crandn(rng, (8, 4))
        with pytest.raises(ValueError, match="single mic"):
            total_mc_loss(mixtures, xh, xh, 0, FcpConfig(past_taps=2, future_taps=0))

    def test_bad_ref_mic(self):
        rng = np.random.default_rng(16)
        mixtures = crandn(rng, (2, 8, 4))
        xh = crandn(rng, (8, 4))
        with pytest.raises(ValueError, match="ref_mic"):
            total_mc_loss(mixtures, xh, xh, 5, FcpConfig(past_taps=2, future_taps=0))


class TestBreakdown:
    def test_to_dict_keys(self):
        out = LossBreakdown(mode="m2m", total=1.0, l_mc_ref=0.5,
                            l_mc_nonref={1: 0.5})
        d = out.to_dict()
        assert d["mode"] == "m2m"
        assert d["l_mc_nonref"] == {"1": 0.5}
        assert d["l_sup_x"] is None
