import itertools
import warnings

import numpy as np
import pytest

from snn_imdd.baselines import (
    ANN_ARCHS,
    LmmseEqualizer,
    ann_logits,
    ann_loss_and_grads,
    ann_predict,
    bit_error_count,
    fit_ann,
    fit_lmmse,
    init_ann,
    lmmse_normal_equations,
    optimize_boundaries,
    slice_classes,
)
from snn_imdd.encoder import tap_windows
from snn_imdd.link import LEVELS
from snn_imdd.train import TrainConfig


def _symbols(n, seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, n)
    return labels, LEVELS[labels]


class TestLmmse:
    def test_identity_channel(self):
        _, a = _symbols(5000, 0)
        eq = fit_lmmse(a, a, n_tap=17)
        expected = np.zeros(17)
        expected[8] = 1.0
        np.testing.assert_allclose(eq.taps, expected, atol=1e-6)
        assert abs(eq.bias) < 1e-6

    def test_awgn_wiener_bound(self):
        _, a = _symbols(200_000, 1)
        sigma2 = 1.0
        y = a + np.random.default_rng(2).normal(0, np.sqrt(sigma2), len(a))
        eq = fit_lmmse(y, a)
        mse = np.mean((eq.equalize(y) - a) ** 2)
        ea2 = 5.0
        bound = sigma2 * ea2 / (ea2 + sigma2)
        assert abs(mse - bound) / bound < 0.05
        assert eq.taps[8] == pytest.approx(ea2 / (ea2 + sigma2), abs=0.02)

    def test_normal_equations_satisfied(self):
        _, a = _symbols(20_000, 3)
        y = np.convolve(a, [0.2, 1.0, -0.3], mode="same") ** 2 + np.random.default_rng(4).normal(0, 0.1, len(a))
        eq = fit_lmmse(y, a)
        R, p = lmmse_normal_equations(y, a, 17)
        w = np.append(eq.taps, eq.bias)
        assert np.max(np.abs(R @ w - p)) < 1e-8

    def test_is_least_squares_minimizer(self):
        _, a = _symbols(5000, 5)
        y = np.convolve(a, [0.3, 1.0], mode="same") + 0.5
        eq = fit_lmmse(y, a, n_tap=5)
        X = np.hstack([tap_windows(y, 5), np.ones((len(y), 1))])
        ref, *_ = np.linalg.lstsq(X, a, rcond=None)
        np.testing.assert_allclose(np.append(eq.taps, eq.bias), ref, atol=1e-8)

    def test_singular_falls_back_to_ridge(self):
        y = np.ones(500)
        _, a = _symbols(500, 6)
        with pytest.warns(RuntimeWarning, match="ridge"):
            eq = fit_lmmse(y, a)
        assert np.all(np.isfinite(eq.taps))

    def test_well_conditioned_does_not_warn(self):
        _, a = _symbols(2000, 7)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_lmmse(a + np.random.default_rng(0).normal(0, 0.1, 2000), a)

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            fit_lmmse(np.zeros(20), np.zeros(20))

    def test_boundaries_must_increase(self):
        with pytest.raises(ValueError):
            LmmseEqualizer(np.zeros(17), 0.0, np.array([0.0, -1.0, 2.0]))

    def test_slicer(self):
        np.testing.assert_array_equal(slice_classes([-5, -2, -1.9, 0, 0.1, 10], [-2, 0, 2]), [0, 0, 1, 1, 2, 3])


def brute_force_boundaries(values, labels):
    """Global minimum of the Gray bit-error count over all boundary triples
    drawn from sample midpoints (plus the two outer sentinels); repeats
    allow a class to be skipped entirely."""
    xs = np.sort(np.unique(values))
    cands = np.concatenate([[xs[0] - 1], 0.5 * (xs[1:] + xs[:-1]), [xs[-1] + 1]])
    best, arg = None, None
    for b in itertools.combinations_with_replacement(cands, 3):
        c = bit_error_count(slice_classes(values, b), labels)
        if best is None or c < best:
            best, arg = c, b
    return best, np.array(arg)


def _clusters(n, spread, seed):
    labels, a = _symbols(n, seed)
    return a + np.random.default_rng(seed + 100).normal(0, spread, n), labels


class TestBoundaries:
    def test_separated_clusters_near_midpoints(self):
        values, labels = _clusters(4000, 0.3, 0)
        b = optimize_boundaries(values, labels)
        np.testing.assert_allclose(b, [-2, 0, 2], atol=0.25)
        assert bit_error_count(slice_classes(values, b), labels) == 0

    @pytest.mark.parametrize("seed", range(1, 9))
    def test_matches_brute_force(self, seed):
        values, labels = _clusters(40, 0.9 + 0.1 * seed, seed)
        b = optimize_boundaries(values, labels)
        best, _ = brute_force_boundaries(values, labels)
        assert bit_error_count(slice_classes(values, b), labels) == best

    @pytest.mark.parametrize("seed", range(5))
    def test_never_worse_than_midpoints(self, seed):
        values, labels = _clusters(3000, 1.0, seed)
        values = 1.3 * values + 0.4  # skewed scale makes nominal midpoints poor
        b = optimize_boundaries(values, labels)
        assert (bit_error_count(slice_classes(values, b), labels)
                <= bit_error_count(slice_classes(values, [-2, 0, 2]), labels))
        assert np.all(np.diff(b) > 0)

    def test_fixed_point(self):
        values, labels = _clusters(3000, 0.8, 9)
        b = optimize_boundaries(values, labels)
        np.testing.assert_array_equal(optimize_boundaries(values, labels, init=b), b)

    def test_swapped_classes(self):
        values, labels = _clusters(60, 0.6, 4)
        swapped = np.choose(labels, [0, 2, 1, 3])
        best, _ = brute_force_boundaries(values, swapped)
        b = optimize_boundaries(values, swapped)
        assert bit_error_count(slice_classes(values, b), swapped) == best
        assert not np.allclose(b, optimize_boundaries(values, labels))

    def test_counts_bits_not_symbols(self):
        # 0 -> 3 costs one bit under Gray labels, 1 -> 3 costs two
        assert bit_error_count([3], [0]) == 1
        assert bit_error_count([3], [1]) == 2

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            optimize_boundaries(np.zeros(10), np.zeros(10, dtype=int))


class TestAnn:
    @pytest.mark.parametrize("arch, widths", [("ann1", (40,)), ("ann2", (34, 10))])
    def test_widths(self, arch, widths):
        assert ANN_ARCHS[arch] == widths
        p = init_ann(17, ANN_ARCHS[arch], np.random.default_rng(0))
        assert p.hidden == widths and p.weights[-1].shape == (4, widths[-1])

    def test_gradient_check(self):
        rng = np.random.default_rng(1)
        p = init_ann(6, (5, 4), rng)
        p.mean, p.std = rng.normal(size=6), rng.uniform(0.5, 2, 6)
        x, labels = rng.normal(size=(8, 6)), rng.integers(0, 4, 8)
        _, gW, gb = ann_loss_and_grads(p, x, labels)
        h = 1e-6
        for arrays, grads in ((p.weights, gW), (p.biases, gb)):
            for arr, g in zip(arrays, grads):
                num = np.zeros_like(arr)
                for idx in np.ndindex(arr.shape):
                    old = arr[idx]
                    arr[idx] = old + h
                    a = ann_loss_and_grads(p, x, labels)[0]
                    arr[idx] = old - h
                    b = ann_loss_and_grads(p, x, labels)[0]
                    arr[idx] = old
                    num[idx] = (a - b) / (2 * h)
                assert np.max(np.abs(num - g)) / max(np.abs(num).max(), 1e-12) < 1e-6

    def test_positive_homogeneity(self):
        p = init_ann(17, (34, 10), np.random.default_rng(2))
        x = np.random.default_rng(3).normal(size=(20, 17))
        logits, _ = ann_logits(p, x, normalize=False)
        doubled, _ = ann_logits(p, 2 * x, normalize=False)
        np.testing.assert_allclose(doubled, 2 * logits, atol=1e-12)

    def test_noiseless_identity_channel(self):
        labels, a = _symbols(20_000, 4)
        x = tap_windows(a, 17)
        p, records = fit_ann(x[:15_000], labels[:15_000], "ann1", TrainConfig(epochs=20, batch_size=128))
        assert np.mean(ann_predict(p, x[15_000:]) == labels[15_000:]) > 0.999
        assert len(records) == 20

    def test_same_seed_is_bit_identical(self):
        labels, a = _symbols(2000, 5)
        x = tap_windows(a + np.random.default_rng(0).normal(0, 0.5, 2000), 17)
        cfg = TrainConfig(epochs=2, rng_seed=7)
        p1, _ = fit_ann(x, labels, "ann2", cfg)
        p2, _ = fit_ann(x, labels, "ann2", cfg)
        for w1, w2 in zip(p1.weights, p2.weights):
            np.testing.assert_array_equal(w1, w2)

    def test_divergence_reported(self):
        labels, a = _symbols(500, 6)
        x = tap_windows(a, 17).copy()
        x[3, 0] = np.nan
        with pytest.raises(FloatingPointError):
            fit_ann(x, labels, "ann1", TrainConfig(epochs=1, batch_size=500))
