"""Per-frequency weighted least squares: oracles, recovery, invariances."""

import numpy as np
import pytest

from m2bm.fcp import (
    FcpConfig,
    apply_filter,
    fcp_objective,
    fcp_solve,
    fcp_weights,
    solve_loaded_normal_equations,
    stack_frames,
)
from m2bm.scene import SceneSpec, SourceSpec, embed_filter_taps, synth_narrowband_scene
from m2bm.spectral import StftConfig
from tests.conftest import crandn


def _lstsq_filter_oracle(target, estimate, cfg, weights):
    """Per-frequency weighted least squares via numpy's lstsq.

    Solves min_g || W^(1/2) (y - S g) ||^2 with S[t, k] the stacked frames,
    then returns h = conj(g) so that predictions read h^H s. Completely
    independent of the normal-equation accumulation path.
    """
    stacked = stack_frames(estimate, cfg)
    num_frames, num_bins, num_taps = stacked.shape
    filters = np.zeros((num_bins, num_taps), dtype=np.complex128)
    root_w = np.sqrt(1.0 / weights)
    for f in range(num_bins):
        design = stacked[:, f, :] * root_w[:, f, None]
        rhs = target[:, f] * root_w[:, f]
        g, *_ = np.linalg.lstsq(design, rhs, rcond=None)
        filters[f] = g.conj()
    return filters


def _grid_search_scalar(target, estimate, cfg, weights, lo=-2.0, hi=2.0, points=201):
    """Exhaustive search over a complex grid for the single-tap filter."""
    grid = np.linspace(lo, hi, points)
    re, im = np.meshgrid(grid, grid, indexing="ij")
    candidates = (re + 1j * im).ravel()
    stacked = stack_frames(estimate, cfg)[:, :, 0]  # (T, F), K = 1
    best = np.zeros(target.shape[1], dtype=np.complex128)
    for f in range(target.shape[1]):
        resid = np.abs(target[:, f, None]
                       - np.conj(candidates)[None, :] * stacked[:, f, None]) ** 2
        cost = (resid / weights[:, f, None]).sum(axis=0)
        best[f] = candidates[np.argmin(cost)]
    return best, grid[1] - grid[0]


class TestStackFrames:
    def test_layout_matches_index_rule(self):
        """Entry k at frame t reads estimate(t - past_taps + 1 + k)."""
        cfg = FcpConfig(past_taps=3, future_taps=2)
        rng = np.random.default_rng(0)
        est = crandn(rng, (6, 2))
        stacked = stack_frames(est, cfg)
        assert stacked.shape == (6, 2, 5)
        for t in range(6):
            for k in range(5):
                src = t - cfg.past_taps + 1 + k
                expected = est[src] if 0 <= src < 6 else np.zeros(2)
                np.testing.assert_array_equal(stacked[t, :, k], expected)

    def test_no_future_taps(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        est = np.arange(8, dtype=np.complex128).reshape(4, 2)
        stacked = stack_frames(est, cfg)
        np.testing.assert_array_equal(stacked[:, :, 1], est)
        np.testing.assert_array_equal(stacked[1:, :, 0], est[:-1])
        np.testing.assert_array_equal(stacked[0, :, 0], 0)

    def test_rejects_bad_input(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        with pytest.raises(ValueError, match="single"):
            stack_frames(np.zeros((2, 3, 4), dtype=np.complex128), cfg)


class TestWeights:
    def test_formula_and_positivity(self):
        rng = np.random.default_rng(1)
        target = crandn(rng, (10, 4))
        w = fcp_weights(target, 1e-2)
        power = np.abs(target) ** 2
        np.testing.assert_allclose(w, 1e-2 * power.max() + power, rtol=1e-14)
        assert np.all(w > 0)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            fcp_weights(np.zeros((4, 3), dtype=np.complex128), 1e-2)

    def test_bad_floor_rejected(self):
        with pytest.raises(ValueError, match="floor"):
            fcp_weights(np.ones((2, 2)), 0.0)


class TestSolveAgainstOracles:
    def test_matches_lstsq(self):
        """Normal-equation solve equals an independent lstsq solve."""
        cfg = FcpConfig(past_taps=3, future_taps=1, diag_load=0.0)
        rng = np.random.default_rng(2)
        for _ in range(4):
            target = crandn(rng, (20, 5))
            estimate = crandn(rng, (20, 5))
            weights = fcp_weights(target, cfg.weight_floor)
            got = fcp_solve(target, estimate, cfg, weights)
            expected = _lstsq_filter_oracle(target, estimate, cfg, weights)
            np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_matches_scalar_grid_search(self):
        """Single-tap solve lands on the exhaustive-grid minimizer."""
        cfg = FcpConfig(past_taps=1, future_taps=0)
        rng = np.random.default_rng(3)
        target = crandn(rng, (4, 3))
        estimate = crandn(rng, (4, 3))
        weights = fcp_weights(target, cfg.weight_floor)
        solved = fcp_solve(target, estimate, cfg, weights)[:, 0]
        grid_best, step = _grid_search_scalar(target, estimate, cfg, weights)
        assert np.abs(solved).max() < 2.0  # solution inside the searched box
        np.testing.assert_allclose(solved, grid_best, atol=step)

    def test_loaded_solve_matches_direct_inverse(self):
        """Loading adds diag_load * trace/K to the diagonal before solving."""
        rng = np.random.default_rng(4)
        num_bins, num_taps = 6, 4
        base = crandn(rng, (num_bins, num_taps, num_taps))
        a_mat = np.matmul(base, base.conj().transpose(0, 2, 1))
        b_vec = crandn(rng, (num_bins, num_taps))
        load = 1e-3
        got = solve_loaded_normal_equations(a_mat, b_vec, load)
        trace = np.einsum("fkk->f", a_mat).real
        for f in range(num_bins):
            loaded = a_mat[f] + load * (trace[f] / num_taps) * np.eye(num_taps)
            expected = np.linalg.solve(loaded, b_vec[f])
            np.testing.assert_allclose(got[f], expected, atol=1e-10)

    def test_zero_trace_frequency_gets_zero_filter(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        rng = np.random.default_rng(5)
        target = crandn(rng, (10, 3))
        estimate = crandn(rng, (10, 3))
        estimate[:, 1] = 0.0  # no regressor energy at bin 1
        filt = fcp_solve(target, estimate, cfg)
        np.testing.assert_array_equal(filt[1], 0.0)
        assert np.abs(filt[0]).max() > 0 and np.abs(filt[2]).max() > 0


class TestRecovery:
    def test_recovers_generating_filters(self):
        """Exact-subspace scenes: the solver returns the embedded filters."""
        stft_cfg = StftConfig(win_len=64, hop=16)
        fcp_cfg = FcpConfig(past_taps=4, future_taps=1)
        spec = SceneSpec(
            num_mics=3,
            target_firs=tuple(np.ones(1) for _ in range(3)),
            noise_firs=(tuple(np.ones(1) for _ in range(3)),),
            target_source=SourceSpec(kind="noise", duration_s=0.1),
            noise_sources=(SourceSpec(kind="noise", duration_s=0.1),),
            snr_db=0.0, ref_mic=0, seed=11,
        )
        scene = synth_narrowband_scene(spec, taps_per_freq=3, stft_config=stft_cfg,
                                       fcp=fcp_cfg, num_frames=64)
        ref = scene.ref_mic
        latent = scene.target.channel(ref)
        for p in range(1, 3):
            solved = fcp_solve(scene.target.channel(p), latent, fcp_cfg)
            expected = embed_filter_taps(scene.target_filters[p], scene.taps, fcp_cfg)
            np.testing.assert_allclose(solved, expected, atol=1e-6)

    def test_self_prediction_gives_unit_filter(self):
        cfg = FcpConfig(past_taps=1, future_taps=0)
        rng = np.random.default_rng(6)
        x = crandn(rng, (30, 4))
        filt = fcp_solve(x, x, cfg)
        np.testing.assert_allclose(filt, 1.0, atol=1e-8)


class TestObjective:
    def test_solution_beats_alternatives(self):
        cfg = FcpConfig(past_taps=2, future_taps=1)
        rng = np.random.default_rng(7)
        target = crandn(rng, (25, 4))
        estimate = crandn(rng, (25, 4))
        weights = fcp_weights(target, cfg.weight_floor)
        solved = fcp_solve(target, estimate, cfg, weights)
        best = fcp_objective(target, estimate, solved, cfg, weights)
        zero = np.zeros_like(solved)
        assert best <= fcp_objective(target, estimate, zero, cfg, weights)
        for _ in range(10):
            rival = solved + 0.1 * crandn(rng, solved.shape)
            assert best <= fcp_objective(target, estimate, rival, cfg, weights) + 1e-12

    def test_weighted_and_unweighted_reporting(self):
        cfg = FcpConfig(past_taps=1, future_taps=0)
        target = np.ones((3, 2), dtype=np.complex128)
        estimate = np.ones((3, 2), dtype=np.complex128)
        filt = np.zeros((2, 1), dtype=np.complex128)
        # all residuals are 1, so the unweighted sum is T*F
        assert fcp_objective(target, estimate, filt, cfg) == pytest.approx(6.0)
        weights = np.full((3, 2), 2.0)
        assert fcp_objective(target, estimate, filt, cfg, weights) == pytest.approx(3.0)


class TestInvariances:
    def test_target_scaling_maps_to_filter_conjugate_scaling(self):
        """Scaling the target by a scales the filter by conj(a)."""
        cfg = FcpConfig(past_taps=2, future_taps=1)
        rng = np.random.default_rng(8)
        target = crandn(rng, (20, 3))
        estimate = crandn(rng, (20, 3))
        alpha = 0.7 - 1.3j
        base = fcp_solve(target, estimate, cfg)
        scaled = fcp_solve(alpha * target, estimate, cfg)
        np.testing.assert_allclose(scaled, np.conj(alpha) * base, atol=1e-10)

    def test_estimate_scaling_leaves_prediction_invariant(self):
        cfg = FcpConfig(past_taps=2, future_taps=1)
        rng = np.random.default_rng(9)
        target = crandn(rng, (20, 3))
        estimate = crandn(rng, (20, 3))
        beta = 1.4 + 0.6j
        pred_base = apply_filter(fcp_solve(target, estimate, cfg),
                                 stack_frames(estimate, cfg))
        pred_scaled = apply_filter(fcp_solve(target, beta * estimate, cfg),
                                   stack_frames(beta * estimate, cfg))
        np.testing.assert_allclose(pred_scaled, pred_base, atol=1e-10)


class TestValidation:
    def test_config_bounds(self):
        with pytest.raises(ValueError):
            FcpConfig(past_taps=0)
        with pytest.raises(ValueError):
            FcpConfig(future_taps=-1)
        with pytest.raises(ValueError):
            FcpConfig(weight_floor=0.0)
        with pytest.raises(ValueError):
            FcpConfig(diag_load=-1e-3)

    def test_shape_mismatch(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        with pytest.raises(ValueError, match="mismatch"):
            fcp_solve(np.ones((4, 3), dtype=np.complex128),
                      np.ones((5, 3), dtype=np.complex128), cfg)

    def test_bad_weights(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        tgt = np.ones((4, 3), dtype=np.complex128)
        with pytest.raises(ValueError, match="weights"):
            fcp_solve(tgt, tgt, cfg, weights=np.ones((3, 3)))
        with pytest.raises(ValueError, match="positive"):
            fcp_solve(tgt, tgt, cfg, weights=np.zeros((4, 3)))

    def test_non_finite_rejected(self):
        cfg = FcpConfig(past_taps=2, future_taps=0)
        bad = np.ones((4, 3), dtype=np.complex128)
        bad[0, 0] = np.inf
        with pytest.raises(ValueError, match="finite"):
            fcp_solve(bad, np.ones((4, 3), dtype=np.complex128), cfg)

    def test_apply_filter_shape_checks(self):
        with pytest.raises(ValueError, match="match"):
            apply_filter(np.zeros((3, 2), dtype=np.complex128),
                         np.zeros((5, 3, 4), dtype=np.complex128))
