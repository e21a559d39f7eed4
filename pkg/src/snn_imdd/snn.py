"""Time-discretized LIF hidden layer and LI readout layer.

Both layers follow

    tau_m dv/dt = -(v - v_leak) + I,    tau_syn dI/dt = -I  (+ weighted input spikes)

Between grid points the linear dynamics are integrated exactly: input
spikes arriving in step k jump the current, then (v, I) are propagated over
``dt`` with the closed-form solution.  Hidden neurons spike when the
propagated membrane reaches the threshold and are set to ``v_reset`` in the
same step (no refractory period).  The readout neurons never spike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import NO_SPIKE_STEP, raster_to_dense
from .link import class_to_bits


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 10.0
    tau_syn: float = 5.0
    threshold: float = 1.0
    v_leak: float = 0.0
    v_reset: float = 0.0

    def __post_init__(self):
        if self.tau_m <= 0 or self.tau_syn <= 0:
            raise ValueError("time constants must be positive")
        if np.isclose(self.tau_m, self.tau_syn):
            raise ValueError("tau_m == tau_syn is not supported")
        if self.v_reset > self.v_leak or not self.threshold > self.v_leak:
            raise ValueError("need v_reset <= v_leak < threshold")

    def propagators(self, dt: float) -> tuple[float, float, float]:
        """(membrane decay, current decay, current-to-membrane gain) over ``dt``."""
        a_m = np.exp(-dt / self.tau_m)
        a_s = np.exp(-dt / self.tau_syn)
        gain = self.tau_syn / (self.tau_syn - self.tau_m) * (a_s - a_m)
        return float(a_m), float(a_s), float(gain)


READOUT = NeuronParams(threshold=np.inf)


@dataclass
class SnnParams:
    W_ih: np.ndarray  # [n_hidden, n_inputs]
    W_ho: np.ndarray  # [n_out, n_hidden]
    hidden: NeuronParams = NeuronParams()
    readout: NeuronParams = READOUT
    n_steps: int = 30
    dt: float = 1.0

    @property
    def n_inputs(self) -> int:
        return self.W_ih.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W_ih.shape[0]

    @property
    def n_out(self) -> int:
        return self.W_ho.shape[0]

    def copy(self) -> "SnnParams":
        return SnnParams(self.W_ih.copy(), self.W_ho.copy(), self.hidden, self.readout, self.n_steps, self.dt)


def init_params(n_inputs: int, rng: np.random.Generator, n_hidden: int = 40, n_out: int = 4,
                gain: float = 1.0, **kw) -> SnnParams:
    """Gaussian weights with std ``gain / sqrt(fan_in)``."""
    W_ih = rng.normal(0.0, gain / np.sqrt(n_inputs), size=(n_hidden, n_inputs))
    W_ho = rng.normal(0.0, gain / np.sqrt(n_hidden), size=(n_out, n_hidden))
    return SnnParams(W_ih, W_ho, **kw)


@dataclass
class SnnTrace:
    """State after every step; arrays are time-major, ``[n_steps, batch, neurons]``.

    ``u_h`` is the hidden membrane before reset; ``v_h`` after reset.
    """

    inputs: np.ndarray
    I_h: np.ndarray
    u_h: np.ndarray
    v_h: np.ndarray
    spikes: np.ndarray
    I_o: np.ndarray
    v_o: np.ndarray


def _check_finite(name: str, x: np.ndarray, step: int):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite {name} at step {step}")


def lif_step(v, I, input_spikes, W, params: NeuronParams, dt: float = 1.0):
    """Advance LIF neurons by one step; returns ``(v, I, spikes)``."""
    a_m, a_s, gain = params.propagators(dt)
    I_in = I + np.asarray(input_spikes, dtype=float) @ W.T
    u = params.v_leak + (v - params.v_leak) * a_m + gain * I_in
    _check_finite("membrane", u, 0)
    z = (u >= params.threshold).astype(float)
    return np.where(z > 0, params.v_reset, u), I_in * a_s, z


def li_step(v, I, input_spikes, W, params: NeuronParams = READOUT, dt: float = 1.0):
    """Advance non-spiking leaky integrators by one step; returns ``(v, I)``."""
    a_m, a_s, gain = params.propagators(dt)
    I_in = I + np.asarray(input_spikes, dtype=float) @ W.T
    v = params.v_leak + (v - params.v_leak) * a_m + gain * I_in
    _check_finite("readout membrane", v, 0)
    return v, I_in * a_s


def run(inputs: np.ndarray, params: SnnParams) -> SnnTrace:
    """Batched forward pass over dense input spikes ``[n_steps, batch, n_inputs]``."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 3 or inputs.shape[0] != params.n_steps or inputs.shape[2] != params.n_inputs:
        raise ValueError(
            f"expected inputs [{params.n_steps}, batch, {params.n_inputs}], got {inputs.shape}")
    T, B, _ = inputs.shape
    H, K = params.n_hidden, params.n_out
    hp, op = params.hidden, params.readout
    am_h, as_h, g_h = hp.propagators(params.dt)
    am_o, as_o, g_o = op.propagators(params.dt)

    drive = inputs @ params.W_ih.T  # [T, B, H]
    I_h = np.empty((T, B, H))
    u_h = np.empty((T, B, H))
    v_h = np.empty((T, B, H))
    z_h = np.empty((T, B, H))
    I_o = np.empty((T, B, K))
    v_o = np.empty((T, B, K))

    v = np.full((B, H), hp.v_leak)
    I = np.zeros((B, H))
    vo = np.full((B, K), op.v_leak)
    Io = np.zeros((B, K))
    for t in range(T):
        I = I + drive[t]
        u = u_h[t]
        np.multiply(v - hp.v_leak, am_h, out=u)
        u += hp.v_leak + g_h * I
        z = z_h[t]
        np.greater_equal(u, hp.threshold, out=z, casting="unsafe")
        v = v_h[t]
        np.copyto(v, u)
        v[z > 0] = hp.v_reset
        I = np.multiply(I, as_h, out=I_h[t])

        Io = Io + z @ params.W_ho.T
        vo = np.add(op.v_leak + (vo - op.v_leak) * am_o, g_o * Io, out=v_o[t])
        Io = np.multiply(Io, as_o, out=I_o[t])
    for name, x in (("hidden membrane", u_h), ("readout membrane", v_o)):
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise FloatingPointError(f"non-finite {name} at step {bad[0]}, sample {bad[1]}")
    return SnnTrace(inputs, I_h, u_h, v_h, z_h, I_o, v_o)


def forward(raster, params: SnnParams) -> SnnTrace:
    """Forward pass for one window.

    ``raster`` holds spike times ``[n_tap, neurons_per_sample]`` (``inf`` for
    silent inputs) on the grid of ``params.dt``.  Returns a trace with a
    batch axis of size one.
    """
    times = np.asarray(raster, dtype=float).reshape(1, -1)
    if times.shape[1] != params.n_inputs:
        raise ValueError(f"raster has {times.shape[1]} inputs, network expects {params.n_inputs}")
    steps = np.where(np.isfinite(times), np.rint(times / params.dt), NO_SPIKE_STEP).astype(np.int64)
    return run(raster_to_dense(steps, params.n_steps), params)


def readout_peaks(trace: SnnTrace) -> np.ndarray:
    """max over time of each readout membrane, ``[batch, n_out]``."""
    return trace.v_o.max(axis=0)


def decide(trace: SnnTrace) -> tuple[np.ndarray, np.ndarray]:
    """Class with the largest readout peak (ties go to the smallest index)
    and its Gray bit pair."""
    k = np.argmax(readout_peaks(trace), axis=1)
    return k, class_to_bits(k)
