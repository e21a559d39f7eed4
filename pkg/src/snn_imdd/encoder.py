"""Latency spike encoding of received samples.

Each received sample drives ``neurons_per_sample`` input neurons. Neuron i
owns a reference point chi_i and fires once, at

    tau_i = scale * log(d / (d - beta)),   d = |A - |y - chi_i||,

so that samples close to chi_i fire early.  No spike is emitted when
``d <= beta`` or when the time falls beyond ``t_max``.

Note on the outer absolute value: taken literally, d grows again once
``|y - chi_i| > A + beta``, so very distant samples also fire.  That is the
default behaviour; ``clamp_distance=True`` clips ``|y - chi_i|`` at A so
that distant samples stay silent instead.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

NO_SPIKE = np.inf
NO_SPIKE_STEP = -1


@dataclass(frozen=True)
class EncoderConfig:
    refs: tuple[float, ...]
    A: float
    beta: float
    n_tap: int = 17
    t_max: float = 20.0
    dt: float = 1.0
    kappa: float = 0.5
    clamp_distance: bool = False
    neurons_per_sample: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "refs", tuple(float(r) for r in self.refs))
        object.__setattr__(self, "neurons_per_sample", len(self.refs))
        if self.n_tap < 1 or self.n_tap % 2 == 0:
            raise ValueError(f"n_tap must be odd and positive, got {self.n_tap}")
        if not (self.A > 0 and 0 < self.beta < self.A):
            raise ValueError(f"need 0 < beta < A, got A={self.A}, beta={self.beta}")
        if np.any(np.diff(self.refs) <= 0):
            raise ValueError("reference points must be strictly increasing")
        if self.t_max <= 0 or self.dt <= 0 or self.kappa <= 0:
            raise ValueError("t_max, dt and kappa must be positive")

    @property
    def scale(self) -> float:
        # d = A (sample sits on its reference) fires at kappa * t_max
        return self.kappa * self.t_max / np.log(self.A / (self.A - self.beta))

    @property
    def n_inputs(self) -> int:
        return self.n_tap * self.neurons_per_sample

    @property
    def max_step(self) -> int:
        return int(np.floor(self.t_max / self.dt + 1e-9))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("neurons_per_sample")
        d["refs"] = list(self.refs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d.pop("neurons_per_sample", None)
        return cls(**d)

    @classmethod
    def from_samples(cls, y, neurons_per_sample: int = 10, **kw) -> "EncoderConfig":
        """References spread uniformly over the range of ``y``; A is half the
        range and beta = A / 10 unless given."""
        lo, hi = float(np.min(y)), float(np.max(y))
        if hi <= lo:
            raise ValueError("training samples span an empty range")
        A = kw.pop("A", 0.5 * (hi - lo))
        beta = kw.pop("beta", A / 10.0)
        refs = np.linspace(lo, hi, neurons_per_sample)
        return cls(refs=tuple(refs), A=A, beta=beta, **kw)


def encode_steps(y, cfg: EncoderConfig) -> np.ndarray:
    """Spike step index for every sample and neuron, shape ``y.shape + (n,)``.

    ``NO_SPIKE_STEP`` (-1) marks a silent neuron.
    """
    y = np.asarray(y, dtype=float)
    dist = np.abs(y[..., None] - np.asarray(cfg.refs))
    if cfg.clamp_distance:
        dist = np.minimum(dist, cfg.A)
    d = np.abs(cfg.A - dist)
    fires = d > cfg.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        t = cfg.scale * np.log(d / (d - cfg.beta))
    steps = np.rint(np.where(fires, t, np.inf) / cfg.dt)
    steps[~(steps <= cfg.max_step)] = NO_SPIKE_STEP
    return steps.astype(np.int16)


def encode_sample(y_t: float, cfg: EncoderConfig) -> np.ndarray:
    """Spike times (multiples of ``dt``) of the neurons fed by one sample;
    ``NO_SPIKE`` where silent."""
    steps = encode_steps(y_t, cfg)
    return np.where(steps >= 0, steps * cfg.dt, NO_SPIKE)


def encode_window(window, cfg: EncoderConfig) -> np.ndarray:
    """Spike raster ``[n_tap, neurons_per_sample]`` of spike times."""
    window = np.asarray(window, dtype=float)
    if window.shape != (cfg.n_tap,):
        raise ValueError(f"window must have length {cfg.n_tap}, got shape {window.shape}")
    return encode_sample(window, cfg)


def tap_windows(y, n_tap: int) -> np.ndarray:
    """All length-``n_tap`` windows centered on each sample of ``y``; edges are
    padded by repeating the first/last sample."""
    half = n_tap // 2
    padded = np.pad(np.asarray(y, dtype=float), half, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, n_tap)


def encode_stream(y, cfg: EncoderConfig) -> np.ndarray:
    """Spike steps for every symbol window of a received stream, shape
    ``[len(y), n_inputs]`` (int16, -1 for silent inputs).

    Each sample is encoded once; windows gather the shared encodings.
    """
    per_sample = encode_steps(y, cfg)  # [n, neurons]
    half = cfg.n_tap // 2
    idx = np.clip(np.arange(len(per_sample))[:, None] + np.arange(-half, half + 1), 0, len(per_sample) - 1)
    return per_sample[idx].reshape(len(per_sample), cfg.n_inputs)


def raster_to_dense(steps: np.ndarray, n_steps: int, dtype=np.float64) -> np.ndarray:
    """Convert spike steps ``[batch, n_inputs]`` into a time-major binary
    tensor ``[n_steps, batch, n_inputs]``; spikes past the grid are dropped."""
    steps = np.asarray(steps)
    batch, n_in = steps.shape
    dense = np.zeros((n_steps, batch, n_in), dtype=dtype)
    b, i = np.nonzero((steps >= 0) & (steps < n_steps))
    dense[steps[b, i], b, i] = 1.0
    return dense
