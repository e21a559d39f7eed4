import numpy as np
import pytest

from snn_imdd.encoder import EncoderConfig, encode_stream, raster_to_dense
from snn_imdd.snn import init_params, run
from snn_imdd.train import (
    Adam,
    TrainConfig,
    adam_step,
    backward,
    bit_errors,
    cross_entropy,
    fit,
    loss,
    predict,
    surrogate_grad,
)


class TestSurrogate:
    @pytest.mark.parametrize("v, expected", [(1.0, 1.0), (1.1, 0.25), (0.9, 0.25), (2.0, 1 / 121)])
    def test_values(self, v, expected):
        assert surrogate_grad(v, 1.0, 10.0) == pytest.approx(expected)

    def test_rejects_bad_steepness(self):
        with pytest.raises(ValueError):
            surrogate_grad(1.0, 1.0, 0.0)


class TestLoss:
    def test_uniform_peaks(self):
        assert cross_entropy(np.zeros((1, 4)), [2])[0] == pytest.approx(np.log(4))

    def test_dominant_correct_peak(self):
        assert cross_entropy(np.array([[0.0, 0.0, 50.0, 0.0]]), [2])[0] < 1e-15

    def test_shift_invariant_and_stable(self):
        m = np.array([[1.0, 2.0, 3.0, 4.0]])
        assert cross_entropy(m + 1e4, [1])[0] == pytest.approx(cross_entropy(m, [1])[0])

    def test_non_finite_raises(self):
        with pytest.raises(FloatingPointError):
            cross_entropy(np.array([[np.nan, 0, 0, 0]]), [0])


def _problem(seed=0, n_in=30, n_hidden=8, T=20, B=5, rate=0.08, gain=3.0):
    rng = np.random.default_rng(seed)
    p = init_params(n_in, rng, n_hidden=n_hidden, gain=gain, n_steps=T)
    x = (rng.random((T, B, n_in)) < rate).astype(float)
    labels = rng.integers(0, 4, B)
    return p, x, labels


def _surrogate_antiderivative(x, beta):
    return x / (1.0 + beta * np.abs(x))


def anchored_loss(p, x, labels, anchor_spikes, anchor_u, anchor_tstar, beta):
    """Reference loop with the spike pattern frozen at an anchor.

    Downstream spikes are z0 + S(u) - S(u0) with S' equal to the surrogate,
    and the reset uses z0.  At the anchor this reproduces the network exactly,
    and its ordinary derivative is the surrogate gradient.
    """
    hp = p.hidden
    a_m, a_s = np.exp(-p.dt / hp.tau_m), np.exp(-p.dt / hp.tau_syn)
    g = hp.tau_syn / (hp.tau_syn - hp.tau_m) * (a_s - a_m)
    T, B, _ = x.shape
    v = np.zeros((B, p.n_hidden))
    I = np.zeros((B, p.n_hidden))
    vo = np.zeros((B, p.n_out))
    Io = np.zeros((B, p.n_out))
    vo_hist = []
    for t in range(T):
        I = I + x[t] @ p.W_ih.T
        u = v * a_m + g * I
        z0 = anchor_spikes[t]
        z = z0 + _surrogate_antiderivative(u - hp.threshold, beta) - _surrogate_antiderivative(anchor_u[t] - hp.threshold, beta)
        v = u * (1 - z0) + hp.v_reset * z0
        I = I * a_s
        Io = Io + z @ p.W_ho.T
        vo = vo * a_m + g * Io
        Io = Io * a_s
        vo_hist.append(vo)
    vo_hist = np.array(vo_hist)
    peaks = np.take_along_axis(vo_hist, anchor_tstar[None], axis=0)[0]
    return cross_entropy(peaks, labels).mean()


class TestBackward:
    def test_readout_gradient_matches_finite_differences(self):
        p, x, labels = _problem()
        trace = run(x, p)
        assert trace.spikes.sum() > 0
        _, dW_ho = backward(trace, labels, p)
        h = 1e-6
        num = np.zeros_like(p.W_ho)
        for i in range(p.n_out):
            for j in range(p.n_hidden):
                q = p.copy()
                q.W_ho[i, j] += h
                a = loss(run(x, q), labels)
                q.W_ho[i, j] -= 2 * h
                b = loss(run(x, q), labels)
                num[i, j] = (a - b) / (2 * h)
        # the hidden spike pattern does not depend on W_ho
        assert np.max(np.abs(num - dW_ho)) < 1e-6

    def test_input_gradient_matches_anchored_surrogate_oracle(self):
        p, x, labels = _problem(seed=1)
        beta = 10.0
        trace = run(x, p)
        assert trace.spikes.sum() > 0
        dW_ih, dW_ho = backward(trace, labels, p, beta)
        anchor = (trace.spikes, trace.u_h, trace.v_o.argmax(axis=0))
        assert anchored_loss(p, x, labels, *anchor, beta) == pytest.approx(loss(trace, labels), abs=1e-12)

        h = 1e-6
        num = np.zeros_like(p.W_ih)
        for i in range(p.n_hidden):
            for j in range(p.n_inputs):
                q = p.copy()
                q.W_ih[i, j] += h
                a = anchored_loss(q, x, labels, *anchor, beta)
                q.W_ih[i, j] -= 2 * h
                b = anchored_loss(q, x, labels, *anchor, beta)
                num[i, j] = (a - b) / (2 * h)
        scale = max(np.abs(num).max(), 1e-12)
        assert np.abs(num).max() > 0
        assert np.max(np.abs(num - dW_ih)) / scale < 1e-4

    def test_zero_readout_weights_give_zero_input_gradient(self):
        p, x, labels = _problem(seed=2)
        p.W_ho[:] = 0
        dW_ih, dW_ho = backward(run(x, p), labels, p)
        assert not dW_ih.any()
        # peaks are all zero, so the readout gradient is the uniform softmax minus one-hot
        assert np.isfinite(dW_ho).all()

    def test_symmetric_readouts_get_identical_hidden_gradients(self):
        p, x, labels = _problem(seed=3)
        p.W_ho[:] = p.W_ho[0]
        labels[:] = 0
        dW_ih, dW_ho = backward(run(x, p), labels, p)
        # the three wrong classes are indistinguishable
        np.testing.assert_allclose(dW_ho[1], dW_ho[2])
        np.testing.assert_allclose(dW_ho[2], dW_ho[3])

    def test_no_hidden_spikes_means_no_readout_gradient(self):
        p, x, labels = _problem(seed=4)
        p.W_ih[:] = -1.0
        trace = run(x, p)
        assert trace.spikes.sum() == 0
        _, dW_ho = backward(trace, labels, p)
        assert not dW_ho.any()

    def test_deterministic(self):
        p, x, labels = _problem(seed=5)
        a = backward(run(x, p), labels, p)
        b = backward(run(x, p), labels, p)
        for u, w in zip(a, b):
            np.testing.assert_array_equal(u, w)


class TestAdam:
    def test_first_step_is_learning_rate_sized(self):
        cfg = TrainConfig(learning_rate=0.01)
        g = np.array([3.0, -1e-3, 0.0])
        w, _, _ = adam_step(np.zeros(3), g, np.zeros(3), np.zeros(3), 1, cfg)
        np.testing.assert_allclose(w[:2], [-0.01, 0.01], rtol=1e-4)
        assert w[2] == 0.0

    def test_step_counter_validated(self):
        with pytest.raises(ValueError):
            adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0, TrainConfig())

    def test_minimizes_quadratic(self):
        w = np.array([5.0, -3.0])
        opt = Adam(TrainConfig(learning_rate=0.1))
        for _ in range(500):
            opt.step({"w": w}, {"w": 2 * w})
        assert np.abs(w).max() < 0.05

    def test_in_place(self):
        w = np.ones(2)
        ref = w
        Adam(TrainConfig()).step({"w": w}, {"w": np.ones(2)})
        assert ref is w and w[0] < 1


@pytest.mark.parametrize("kw", [dict(learning_rate=0.0), dict(adam_beta1=1.0), dict(batch_size=0),
                                dict(epochs=-1), dict(surrogate_steepness=-1.0)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def _toy_data(n, seed):
    """Four well separated clusters seen through a three-tap window."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, n)
    y = np.array([0.0, 1.0, 2.0, 3.0])[labels] + rng.normal(0, 0.05, n)
    enc = EncoderConfig(refs=tuple(np.linspace(0, 3, 10)), A=3.5, beta=0.35, n_tap=3)
    return encode_stream(y, enc), labels, enc


class TestFit:
    def test_learns_separable_clusters(self):
        steps, labels, enc = _toy_data(3000, 0)
        vsteps, vlabels, _ = _toy_data(1000, 1)
        p0 = init_params(enc.n_inputs, np.random.default_rng(0), n_hidden=20, gain=5.0)
        cfg = TrainConfig(learning_rate=5e-3, epochs=20, batch_size=64)
        params, records = fit((steps, labels), p0, cfg, validation=(vsteps, vlabels))
        acc = np.mean(predict(vsteps, params) == vlabels)
        assert acc > 0.99
        assert len(records) == 20 and all(r["summary"] for r in records)

    def test_loss_decreases_at_default_rate(self):
        steps, labels, enc = _toy_data(2000, 2)
        p0 = init_params(enc.n_inputs, np.random.default_rng(1), n_hidden=20, gain=5.0)
        _, records = fit((steps, labels), p0, TrainConfig(learning_rate=1e-3, epochs=5, batch_size=64))
        losses = [r["loss"] for r in records]
        assert losses[-1] < losses[0]

    def test_zero_epochs_returns_init(self):
        steps, labels, enc = _toy_data(100, 3)
        p0 = init_params(enc.n_inputs, np.random.default_rng(1))
        params, records = fit((steps, labels), p0, TrainConfig(epochs=0))
        np.testing.assert_array_equal(params.W_ih, p0.W_ih)
        assert records == []

    def test_does_not_mutate_init_and_is_deterministic(self):
        steps, labels, enc = _toy_data(500, 4)
        p0 = init_params(enc.n_inputs, np.random.default_rng(1), n_hidden=10, gain=5.0)
        before = p0.W_ih.copy()
        cfg = TrainConfig(epochs=2, batch_size=50, rng_seed=3)
        seen = []
        a, _ = fit((steps, labels), p0, cfg, on_record=seen.append)
        b, _ = fit((steps, labels), p0, cfg)
        np.testing.assert_array_equal(p0.W_ih, before)
        np.testing.assert_array_equal(a.W_ih, b.W_ih)
        assert sum(1 for r in seen if not r.get("summary")) == 20

    def test_predict_batching_is_invisible(self):
        steps, labels, enc = _toy_data(300, 5)
        p = init_params(enc.n_inputs, np.random.default_rng(2), gain=5.0)
        np.testing.assert_array_equal(predict(steps, p, batch_size=7), predict(steps, p, batch_size=1000))


def test_bit_errors_use_gray_labels():
    # classes 0 and 3 differ in one bit (00 vs 10); 1 and 3 differ in two (01 vs 10)
    assert bit_errors([3], [0]) == 1
    assert bit_errors([1], [3]) == 2
    assert bit_errors([2, 2], [2, 2]) == 0


def test_dense_raster_consistent_with_run_shape():
    steps, labels, enc = _toy_data(10, 6)
    dense = raster_to_dense(steps, 30)
    assert dense.shape == (30, 10, enc.n_inputs)
