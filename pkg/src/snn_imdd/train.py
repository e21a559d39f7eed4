"""Surrogate-gradient BPTT and Adam training for the SNN equalizer."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .encoder import raster_to_dense
from .link import class_to_bits
from .snn import SnnParams, SnnTrace, run

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    surrogate_steepness: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.surrogate_steepness <= 0:
            raise ValueError("surrogate_steepness must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


def surrogate_grad(v, threshold: float, steepness: float):
    """SuperSpike pseudo-derivative 1 / (1 + steepness * |v - threshold|)^2."""
    if steepness <= 0:
        raise ValueError("steepness must be positive")
    return 1.0 / (1.0 + steepness * np.abs(np.asarray(v, dtype=float) - threshold)) ** 2


def _log_softmax(m):
    m = m - m.max(axis=-1, keepdims=True)
    return m - np.log(np.exp(m).sum(axis=-1, keepdims=True))


def cross_entropy(peaks, labels) -> np.ndarray:
    """Per-sample softmax cross-entropy of readout peaks ``[batch, n_out]``."""
    peaks = np.atleast_2d(np.asarray(peaks, dtype=float))
    if not np.all(np.isfinite(peaks)):
        raise FloatingPointError("non-finite readout peaks")
    labels = np.atleast_1d(labels)
    return -_log_softmax(peaks)[np.arange(len(labels)), labels]


def loss(trace: SnnTrace, labels) -> float:
    """Mean cross-entropy of the softmax over per-class readout maxima."""
    return float(cross_entropy(trace.v_o.max(axis=0), labels).mean())


def backward(trace: SnnTrace, labels, params: SnnParams, steepness: float = 10.0):
    """Gradients of the mean loss w.r.t. ``W_ih`` and ``W_ho`` by BPTT.

    The max over time passes its gradient to the (first) argmax step.  The
    spike indicator uses the SuperSpike surrogate; the reset is treated as a
    constant, so gradient reaches the pre-reset membrane only for neurons
    that did not spike.
    """
    labels = np.atleast_1d(labels)
    T, B, H = trace.u_h.shape
    K = params.n_out
    hp, op = params.hidden, params.readout
    am_h, as_h, g_h = hp.propagators(params.dt)
    am_o, as_o, g_o = op.propagators(params.dt)

    t_star = trace.v_o.argmax(axis=0)  # [B, K]
    peaks = np.take_along_axis(trace.v_o, t_star[None], axis=0)[0]
    p = np.exp(_log_softmax(peaks))
    p[np.arange(B), labels] -= 1.0
    d_peaks = p / B
    g_vo = np.zeros((T, B, K))
    np.put_along_axis(g_vo, t_star[None], d_peaks[None], axis=0)

    # readout layer, reverse time
    g_in_o = np.empty((T, B, K))
    g_v = np.zeros((B, K))
    g_cur = np.zeros((B, K))
    for t in range(T - 1, -1, -1):
        g_v = g_vo[t] + am_o * g_v
        g_cur = g_o * g_v + as_o * g_cur
        g_in_o[t] = g_cur
    dW_ho = g_in_o.reshape(-1, K).T @ trace.spikes.reshape(-1, H)
    g_z = g_in_o @ params.W_ho  # [T, B, H]

    # hidden layer, reverse time
    if np.isfinite(hp.threshold):
        sg = surrogate_grad(trace.u_h, hp.threshold, steepness)
    else:
        sg = np.zeros_like(trace.u_h)
    g_z *= sg
    keep = 1.0 - trace.spikes
    g_in_h = np.empty((T, B, H))
    g_u = np.zeros((B, H))
    g_cur = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g_u *= keep[t]
        g_u *= am_h
        g_u += g_z[t]
        g_cur *= as_h
        g_cur += g_h * g_u
        g_in_h[t] = g_cur
    dW_ih = g_in_h.reshape(-1, H).T @ trace.inputs.reshape(-1, trace.inputs.shape[2])

    for name, g in (("dW_ih", dW_ih), ("dW_ho", dW_ho)):
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient {name}")
    return dW_ih, dW_ho


def adam_step(w, g, m, v, t: int, cfg: TrainConfig):
    """One bias-corrected Adam update; returns new ``(w, m, v)``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    denom = np.sqrt(v_hat) + cfg.adam_eps
    step = np.divide(m_hat, denom, out=np.zeros_like(m_hat, dtype=float), where=denom > 0)
    return w - cfg.learning_rate * step, m, v


class Adam:
    """Adam over a dict of named arrays, updated in place."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, w in params.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(w)
                self.v[k] = np.zeros_like(w)
            w_new, self.m[k], self.v[k] = adam_step(w, grads[k], self.m[k], self.v[k], self.t, self.cfg)
            w[...] = w_new


def predict(steps: np.ndarray, params: SnnParams, batch_size: int = 2048) -> np.ndarray:
    """Class decisions for encoded windows ``[n, n_inputs]``."""
    out = np.empty(len(steps), dtype=np.int64)
    for s in range(0, len(steps), batch_size):
        trace = run(raster_to_dense(steps[s:s + batch_size], params.n_steps), params)
        out[s:s + batch_size] = trace.v_o.max(axis=0).argmax(axis=1)
    return out


def bit_errors(pred_classes, labels) -> int:
    return int((class_to_bits(pred_classes) != class_to_bits(labels)).sum())


def fit(dataset, init: SnnParams, cfg: TrainConfig, validation=None,
        on_record: Callable[[dict], None] | None = None) -> tuple[SnnParams, list[dict]]:
    """Train with minibatch Adam.

    ``dataset`` and ``validation`` are ``(steps, labels)`` pairs of encoded
    windows.  Returns the parameters with the lowest validation BER seen at
    the end of an epoch, the latest on ties (the training set stands in when
    no validation set is given), together with per-epoch summary records.  ``on_record``
    additionally sees one record per batch.
    """
    steps, labels = dataset
    labels = np.asarray(labels)
    if validation is None:
        validation = (steps, labels)
    params = init.copy()
    records: list[dict] = []
    if cfg.epochs == 0:
        return params, records

    rng = np.random.default_rng(cfg.rng_seed)
    opt = Adam(cfg)
    weights = {"W_ih": params.W_ih, "W_ho": params.W_ho}
    best, best_ber = params.copy(), np.inf
    n = len(labels)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, errors, n_batches = 0.0, 0, 0
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            trace = run(raster_to_dense(steps[idx], params.n_steps), params)
            batch_loss = loss(trace, labels[idx])
            if not np.isfinite(batch_loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch}, batch {n_batches}")
            dW_ih, dW_ho = backward(trace, labels[idx], params, cfg.surrogate_steepness)
            opt.step(weights, {"W_ih": dW_ih, "W_ho": dW_ho})
            batch_errors = int((trace.v_o.max(axis=0).argmax(axis=1) != labels[idx]).sum())
            total += batch_loss * len(idx)
            errors += batch_errors
            n_batches += 1
            if on_record is not None:
                on_record({"epoch": epoch, "batch": n_batches - 1, "loss": batch_loss,
                           "ser": batch_errors / len(idx)})
        val_pred = predict(validation[0], params)
        val_ber = bit_errors(val_pred, validation[1]) / (2 * len(validation[1]))
        rec = {"epoch": epoch, "batch": n_batches, "loss": total / n, "ser": errors / n,
               "val_ber": val_ber, "summary": True}
        records.append(rec)
        log.info(json.dumps(rec))
        if on_record is not None:
            on_record(rec)
        # ties go to the later epoch: once validation is error-free, further
        # training still widens the margins that unseen patterns rely on
        if val_ber <= best_ber:
            best, best_ber = params.copy(), val_ber
    return best, records
