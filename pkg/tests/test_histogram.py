"""Soft-binning layer: formula transcription oracle, gradients, limits, inits."""

import math

import numpy as np
import pytest

from texfeat.histogram import (
    HistParams,
    crossover_width,
    hist_backward,
    hist_forward,
    init_bins,
)


def hist_oracle(x, centers, widths, window, stride):
    """Direct transcription of the windowed-RBF definition with scalar loops."""
    batch, channels, h, w = x.shape
    bins = centers.shape[0]
    s, t = window
    ho = (h - s) // stride + 1
    wo = (w - t) // stride + 1
    out = np.zeros((batch, bins * channels, ho, wo))
    for b in range(batch):
        for bi in range(bins):
            for k in range(channels):
                for r in range(ho):
                    for c in range(wo):
                        acc = 0.0
                        for u in range(s):
                            for v in range(t):
                                val = x[b, k, r * stride + u, c * stride + v]
                                acc += math.exp(-(widths[bi, k] ** 2) * (val - centers[bi, k]) ** 2)
                        out[b, bi * channels + k, r, c] = acc / (s * t)
    return out


def rel_err(analytic, numeric):
    denom = max(np.abs(numeric).max(), 1e-12)
    return np.abs(analytic - numeric).max() / denom


def fd_grads(x, params, grad_out, step=1e-5):
    """Central finite differences of sum(grad_out * forward) per parameter."""

    def objective():
        out, _ = hist_forward(x, params)
        return float((out * grad_out).sum())

    results = []
    for arr in (x, params.centers, params.widths):
        num = np.zeros_like(arr)
        for idx in np.ndindex(*arr.shape):
            arr[idx] += step
            up = objective()
            arr[idx] -= 2 * step
            down = objective()
            arr[idx] += step
            num[idx] = (up - down) / (2 * step)
        results.append(num)
    return results


class TestHistForward:
    def test_input_at_center_gives_one(self):
        params = HistParams(centers=np.array([[0.37]]), widths=np.array([[2.0]]), window=(3, 3), stride=1)
        x = np.full((1, 1, 5, 5), 0.37)
        out, _ = hist_forward(x, params)
        np.testing.assert_allclose(out, 1.0)

    def test_zero_width_collapses_to_one(self):
        rng = np.random.default_rng(3)
        params = HistParams(centers=np.array([[5.0]]), widths=np.array([[0.0]]), window=(2, 2), stride=2)
        out, _ = hist_forward(rng.normal(size=(2, 1, 6, 6)), params)
        np.testing.assert_allclose(out, 1.0)

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-1, 1, size=(1, 1, 6, 6))
        params = HistParams(
            centers=rng.uniform(-1, 1, size=(3, 1)),
            widths=rng.uniform(0.5, 2.0, size=(3, 1)),
            window=(5, 5),
            stride=1,
        )
        out, _ = hist_forward(x, params)
        ref = hist_oracle(x, params.centers, params.widths, (5, 5), 1)
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_matches_formula_oracle_multichannel_strided(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-2, 2, size=(2, 3, 8, 8))
        params = HistParams(
            centers=rng.uniform(-2, 2, size=(4, 3)),
            widths=rng.uniform(0.2, 1.5, size=(4, 3)),
            window=(4, 4),
            stride=None,  # stride = window
        )
        out, _ = hist_forward(x, params)
        ref = hist_oracle(x, params.centers, params.widths, (4, 4), 4)
        np.testing.assert_allclose(out, ref, rtol=1e-12)

    def test_bin_major_channel_order(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 0] = 1.0
        x[0, 1] = 3.0
        centers = np.array([[1.0, 3.0], [9.0, 9.0]])
        widths = np.ones((2, 2))
        out, _ = hist_forward(x, HistParams(centers=centers, widths=widths, window=(2, 2)))
        # channel b*K+k: bin 0 matches both its channels, bin 1 matches neither
        np.testing.assert_allclose(out[0, 0], 1.0)
        np.testing.assert_allclose(out[0, 1], 1.0)
        assert out[0, 2].max() < 1e-10
        assert out[0, 3].max() < 1e-10

    def test_output_in_unit_interval(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 2, 7, 7))
        params = HistParams(
            centers=rng.normal(size=(3, 2)), widths=rng.uniform(0.1, 3, size=(3, 2)),
            window=(3, 3), stride=2,
        )
        out, _ = hist_forward(x, params)
        assert out.min() > 0.0
        assert out.max() <= 1.0 + 1e-15

    def test_translation_covariance(self):
        rng = np.random.default_rng(13)
        x = rng.uniform(size=(1, 1, 6, 6))
        shifted = np.roll(x, shift=2, axis=3)
        params = HistParams(
            centers=rng.uniform(size=(2, 1)), widths=np.ones((2, 1)), window=(1, 1), stride=1
        )
        out, _ = hist_forward(x, params)
        out_shifted, _ = hist_forward(shifted, params)
        np.testing.assert_allclose(np.roll(out, shift=2, axis=3), out_shifted, rtol=1e-12)

    def test_channel_mismatch_rejected(self):
        params = HistParams(centers=np.zeros((2, 3)), widths=np.ones((2, 3)), window=(2, 2))
        with pytest.raises(ValueError, match="channel mismatch"):
            hist_forward(np.ones((1, 2, 4, 4)), params)


class TestHistBackward:
    def test_input_at_center_zeroes_center_gradient(self):
        params = HistParams(centers=np.array([[0.5]]), widths=np.array([[2.0]]), window=(2, 2), stride=1)
        x = np.full((1, 1, 4, 4), 0.5)
        out, cache = hist_forward(x, params)
        _, grad_mu, _ = hist_backward(np.ones_like(out), cache)
        np.testing.assert_array_equal(grad_mu, np.zeros((1, 1)))

    def test_zero_width_kills_width_and_input_gradients(self):
        rng = np.random.default_rng(17)
        params = HistParams(centers=np.array([[0.3]]), widths=np.array([[0.0]]), window=(3, 3), stride=1)
        x = rng.normal(size=(1, 1, 5, 5))
        out, cache = hist_forward(x, params)
        grad_x, _, grad_gamma = hist_backward(np.ones_like(out), cache)
        np.testing.assert_array_equal(grad_gamma, np.zeros((1, 1)))
        np.testing.assert_array_equal(grad_x, np.zeros_like(x))

    @pytest.mark.parametrize("seed", range(8))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        bins = int(rng.integers(1, 4))
        channels = int(rng.integers(1, 3))
        x = rng.uniform(-1.5, 1.5, size=(2, channels, 6, 6))
        params = HistParams(
            centers=rng.uniform(-1, 1, size=(bins, channels)),
            widths=rng.uniform(0.3, 2.5, size=(bins, channels)),
            window=(int(rng.integers(2, 4)),) * 2,
            stride=int(rng.integers(1, 3)),
        )
        out, cache = hist_forward(x, params)
        grad_out = rng.normal(size=out.shape)
        grad_x, grad_mu, grad_gamma = hist_backward(grad_out, cache)
        num_x, num_mu, num_gamma = fd_grads(x, params, grad_out)
        assert rel_err(grad_x, num_x) < 1e-4
        assert rel_err(grad_mu, num_mu) < 1e-4
        assert rel_err(grad_gamma, num_gamma) < 1e-4

    def test_mismatched_grad_shape_rejected(self):
        params = HistParams(centers=np.zeros((2, 1)), widths=np.ones((2, 1)), window=(2, 2))
        out, cache = hist_forward(np.ones((1, 1, 4, 4)), params)
        with pytest.raises(ValueError, match="does not match"):
            hist_backward(np.ones((1, 2, 9, 9)), cache)


class TestHardBinningLimit:
    def test_sharp_widths_recover_exact_counts(self):
        rng = np.random.default_rng(19)
        values = rng.integers(0, 8, size=(1, 1, 12, 12)).astype(np.float64)
        params = HistParams(
            centers=np.arange(8.0)[:, None],
            widths=np.full((8, 1), 100.0),
            window=(12, 12),
            stride=1,
        )
        out, _ = hist_forward(values, params)
        soft = out[0, :, 0, 0]
        exact = np.bincount(values.astype(int).ravel(), minlength=8) / 144.0
        assert np.abs(soft - exact).sum() / exact.sum() < 1e-6


class TestInitBins:
    def test_integer_code_recipe(self):
        params = init_bins("lbp_reconstruct", 256, 1)
        assert params.centers[37, 0] == 37.0
        assert params.widths[37, 0] == 3.75
        assert params.centers.shape == (256, 1)

    def test_peak_response_recipe(self):
        params = init_bins("ehd_reconstruct", 1, 9, max_responses=[4.0] * 8 + [1.0])
        np.testing.assert_array_equal(params.centers[0, :8], np.full(8, 4.0))
        assert params.centers[0, 8] == 1.0
        np.testing.assert_array_equal(params.widths, np.full((1, 9), 3.75))

    def test_linspace_two_bins_unit_range(self):
        params = init_bins("linspace", 2, 1, value_range=(0.0, 1.0))
        np.testing.assert_allclose(params.centers[:, 0], [0.25, 0.75])

    def test_crossover_width_meets_neighbor_at_half(self):
        spacing = 0.5
        gamma = crossover_width(spacing)
        assert abs(math.exp(-(gamma**2) * (spacing / 2) ** 2) - 0.5) < 1e-12

    def test_random_mode_within_range(self):
        rng = np.random.default_rng(23)
        params = init_bins("random", 5, 2, value_range=(-3.0, 3.0), rng=rng)
        assert params.centers.min() >= -3.0 and params.centers.max() <= 3.0
        np.testing.assert_array_equal(params.widths, np.ones((5, 2)))

    def test_mode_and_shape_validation(self):
        with pytest.raises(ValueError, match="unknown init mode"):
            init_bins("bogus", 4, 1)
        with pytest.raises(ValueError, match="requires bins=256"):
            init_bins("lbp_reconstruct", 128, 1)
        with pytest.raises(ValueError, match="max_responses"):
            init_bins("ehd_reconstruct", 1, 9)
        with pytest.raises(ValueError, match="rng"):
            init_bins("random", 4, 1, value_range=(0, 1))
