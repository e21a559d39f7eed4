"""BER sweeps over additive noise power, histogram export and result files."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import subprocess
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.stats import norm
from threadpoolctl import threadpool_limits

from . import __version__
from .baselines import bit_error_count, fit_ann, fit_lmmse, ann_predict, optimize_boundaries
from .encoder import EncoderConfig, encode_stream, tap_windows
from .io import atomic_write_text
from .link import LinkConfig, bits_to_class, random_bits, reference_signal_power, simulate_link
from .snn import NeuronParams, init_params
from .train import TrainConfig, fit, predict

log = logging.getLogger(__name__)

EQUALIZERS = ("lmmse", "ann1", "ann2", "snn")
WORKERS_ENV = "SNN_IMDD_WORKERS"
RECORD_FIELDS = ("grid_index", "equalizer_id", "noise_sigma2", "noise_db", "bits_counted",
                 "bit_errors", "ber", "ci_low", "ci_high", "seed", "config_hash", "status")


@dataclass(frozen=True)
class SnnSettings:
    """Encoder, network and training settings of the SNN equalizer.

    ``clamp_distance`` defaults to on here: with A at half the sample range
    the unclamped distance code gives the smallest and the largest sample
    the same spike pattern, which merges the two outer classes.
    """

    n_tap: int = 17
    neurons_per_sample: int = 10
    t_max: float = 20.0
    kappa: float = 0.5
    clamp_distance: bool = True
    n_steps: int = 30
    dt: float = 1.0
    n_hidden: int = 40
    init_gain: float = 5.0
    hidden: NeuronParams = NeuronParams()
    train: TrainConfig = TrainConfig(learning_rate=5e-3, epochs=20)

    def encoder(self, y_train) -> EncoderConfig:
        return EncoderConfig.from_samples(
            y_train, self.neurons_per_sample, n_tap=self.n_tap, t_max=self.t_max, dt=self.dt,
            kappa=self.kappa, clamp_distance=self.clamp_distance)


@dataclass(frozen=True)
class AnnSettings:
    n_tap: int = 17
    train: TrainConfig = TrainConfig(learning_rate=1e-3, epochs=20)


@dataclass(frozen=True)
class SweepConfig:
    """Noise grid is given as variances; ``from_db`` builds one from powers
    relative to the noiseless photodiode signal."""

    noise_sigma2: tuple[float, ...]
    link: LinkConfig = LinkConfig()
    n_train: int = 100_000
    n_test: int = 100_000
    n_val: int = 20_000
    equalizers: tuple[str, ...] = EQUALIZERS
    lmmse_taps: int = 17
    snn: SnnSettings = SnnSettings()
    ann: AnnSettings = AnnSettings()
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "noise_sigma2", tuple(float(s) for s in self.noise_sigma2))
        object.__setattr__(self, "equalizers", tuple(self.equalizers))
        if not self.noise_sigma2:
            raise ValueError("noise grid must not be empty")
        if any(s < 0 for s in self.noise_sigma2):
            raise ValueError("noise variances must be >= 0")
        if self.n_test <= 0 or self.n_train <= 0 or self.n_val <= 0:
            raise ValueError("train, validation and test sizes must be positive")
        unknown = set(self.equalizers) - set(EQUALIZERS)
        if unknown:
            raise ValueError(f"unknown equalizers {sorted(unknown)}")

    @classmethod
    def from_db(cls, noise_db, link: LinkConfig = LinkConfig(), **kw) -> "SweepConfig":
        ref = reference_signal_power(link)
        return cls(noise_sigma2=tuple(ref * 10.0 ** (d / 10.0) for d in noise_db), link=link, **kw)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


DEFAULT_NOISE_DB = (-22.0, -20.0, -18.0, -16.0, -14.0, -12.0, -10.0, -8.0)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


@dataclass
class BerRecord:
    grid_index: int
    equalizer_id: str
    noise_sigma2: float
    noise_db: float
    bits_counted: int
    bit_errors: int
    ber: float
    ci_low: float
    ci_high: float
    seed: int
    config_hash: str
    status: str = "ok"
    detail: str = field(default="", compare=False)

    @classmethod
    def measured(cls, bit_errors: int, bits_counted: int, **kw) -> "BerRecord":
        lo, hi = ber_confidence(bit_errors, bits_counted)
        return cls(bits_counted=bits_counted, bit_errors=bit_errors, ber=bit_errors / bits_counted,
                   ci_low=lo, ci_high=hi, **kw)

    @classmethod
    def failed(cls, detail: str, **kw) -> "BerRecord":
        return cls(bits_counted=0, bit_errors=0, ber=float("nan"), ci_low=float("nan"),
                   ci_high=float("nan"), status="failed", detail=detail, **kw)


def ber_confidence(bit_errors: int, bits: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial error rate."""
    if bits <= 0:
        raise ValueError("confidence interval needs bits > 0")
    if not 0 <= bit_errors <= bits:
        raise ValueError("bit_errors must lie in [0, bits]")
    z = norm.ppf(0.5 + level / 2.0)
    p = bit_errors / bits
    denom = 1.0 + z * z / bits
    center = (p + z * z / (2 * bits)) / denom
    half = z * np.sqrt(p * (1 - p) / bits + z * z / (4 * bits * bits)) / denom
    lo = 0.0 if bit_errors == 0 else max(0.0, center - half)
    hi = 1.0 if bit_errors == bits else min(1.0, center + half)
    return float(lo), float(hi)


def export_histogram(values, labels, bins: int = 100, path=None) -> dict:
    """Per-class counts of equalized values on one shared bin grid.

    Returns ``{"edges": [bins + 1], "counts": [bins, n_classes]}`` and, if
    ``path`` is given, writes it as CSV (bin_left, bin_right, count_0..3).
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if values.size == 0:
        raise ValueError("histogram of empty input")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    lo, hi = values.min(), values.max()
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.stack([np.histogram(values[labels == k], bins=edges)[0] for k in range(4)], axis=1)
    if path is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "count_0", "count_1", "count_2", "count_3"])
        for i in range(bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), *map(int, counts[i])])
        atomic_write_text(path, buf.getvalue())
    return {"edges": edges, "counts": counts}


# --- one grid point ------------------------------------------------------------


@dataclass
class PointData:
    labels_train: np.ndarray
    labels_val: np.ndarray
    labels_test: np.ndarray
    amp_train: np.ndarray
    y_train: np.ndarray
    y_val: np.ndarray
    y_test: np.ndarray


def point_seeds(seed: int, grid_index: int) -> dict[str, int]:
    """Independent integer seeds for every random stage of one grid point."""
    names = ("bits", "noise_train", "noise_val", "noise_test", "snn_init", "snn_train", "ann1", "ann2")
    children = np.random.SeedSequence([seed, grid_index]).generate_state(len(names))
    return dict(zip(names, map(int, children)))


def make_point_data(cfg: SweepConfig, sigma2: float, seeds: dict[str, int]) -> PointData:
    rng = np.random.default_rng(seeds["bits"])
    sets = {}
    for name, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        link = replace(cfg.link, noise_sigma2=sigma2, rng_seed=seeds[f"noise_{name}"])
        frame, y = simulate_link(random_bits(n, rng), link)
        sets[name] = (frame, y)
    return PointData(
        labels_train=bits_to_class(sets["train"][0].bits),
        labels_val=bits_to_class(sets["val"][0].bits),
        labels_test=bits_to_class(sets["test"][0].bits),
        amp_train=sets["train"][0].amplitudes,
        y_train=sets["train"][1], y_val=sets["val"][1], y_test=sets["test"][1],
    )


def evaluate_lmmse(cfg: SweepConfig, data: PointData, seeds) -> int:
    eq = fit_lmmse(data.y_train, data.amp_train, cfg.lmmse_taps)
    eq.decision_boundaries = optimize_boundaries(eq.equalize(data.y_train), data.labels_train)
    return bit_error_count(eq.decide(data.y_test), data.labels_test)


def evaluate_ann(cfg: SweepConfig, data: PointData, seeds, arch: str) -> int:
    n_tap = cfg.ann.n_tap
    train = replace(cfg.ann.train, rng_seed=seeds[arch])
    params, _ = fit_ann(tap_windows(data.y_train, n_tap), data.labels_train, arch, train,
                        validation=(tap_windows(data.y_val, n_tap), data.labels_val))
    return bit_error_count(ann_predict(params, tap_windows(data.y_test, n_tap)), data.labels_test)


def evaluate_snn(cfg: SweepConfig, data: PointData, seeds) -> int:
    s = cfg.snn
    enc = s.encoder(data.y_train)
    init = init_params(enc.n_inputs, np.random.default_rng(seeds["snn_init"]), n_hidden=s.n_hidden,
                       gain=s.init_gain, hidden=s.hidden, n_steps=s.n_steps, dt=s.dt)
    train = replace(s.train, rng_seed=seeds["snn_train"])
    params, _ = fit((encode_stream(data.y_train, enc), data.labels_train), init, train,
                    validation=(encode_stream(data.y_val, enc), data.labels_val))
    return bit_error_count(predict(encode_stream(data.y_test, enc), params), data.labels_test)


EVALUATORS = {
    "lmmse": evaluate_lmmse,
    "ann1": lambda c, d, s: evaluate_ann(c, d, s, "ann1"),
    "ann2": lambda c, d, s: evaluate_ann(c, d, s, "ann2"),
    "snn": evaluate_snn,
}


def run_point(cfg: SweepConfig, grid_index: int) -> list[BerRecord]:
    """Train and test every equalizer at one noise level; single-threaded BLAS
    so results do not depend on how points are scheduled."""
    sigma2 = cfg.noise_sigma2[grid_index]
    ref = reference_signal_power(cfg.link)
    common = dict(grid_index=grid_index, noise_sigma2=sigma2,
                  noise_db=10 * np.log10(sigma2 / ref) if sigma2 > 0 else float("-inf"),
                  seed=cfg.seed, config_hash=cfg.config_hash())
    seeds = point_seeds(cfg.seed, grid_index)
    records = []
    with threadpool_limits(limits=1):
        try:
            data = make_point_data(cfg, sigma2, seeds)
        except Exception as exc:  # noqa: BLE001 - one failed point must not stop the sweep
            log.error("grid point %d: data generation failed: %s", grid_index, exc)
            return [BerRecord.failed(repr(exc), equalizer_id=e, **common) for e in cfg.equalizers]
        for eq_id in cfg.equalizers:
            t0 = time.perf_counter()
            try:
                errors = EVALUATORS[eq_id](cfg, data, seeds)
                rec = BerRecord.measured(errors, 2 * cfg.n_test, equalizer_id=eq_id, **common)
            except Exception as exc:  # noqa: BLE001
                log.error("grid point %d, %s failed:\n%s", grid_index, eq_id, traceback.format_exc())
                rec = BerRecord.failed(repr(exc), equalizer_id=eq_id, **common)
            log.info("point %d (%.1f dB) %s: BER %.3g [%.0f s]", grid_index, common["noise_db"], eq_id,
                     rec.ber, time.perf_counter() - t0)
            records.append(rec)
    return records


def _run_point_args(args):
    return run_point(*args)


def worker_count(default: int = 1) -> int:
    value = os.environ.get(WORKERS_ENV)
    return max(1, int(value)) if value else default


def run_sweep(cfg: SweepConfig, out_dir=None, workers: int | None = None) -> list[BerRecord]:
    """Evaluate all equalizers on every grid point.

    Records come back ordered by grid index and equalizer order.  With
    ``out_dir`` the records are written to ``ber.csv`` and the full
    configuration to ``manifest.json``.
    """
    workers = worker_count() if workers is None else workers
    n = len(cfg.noise_sigma2)
    t0 = time.perf_counter()
    jobs = [(cfg, i) for i in range(n)]
    if workers <= 1 or n == 1:
        per_point = [run_point(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            per_point = list(pool.map(_run_point_args, jobs))
    records = [r for recs in per_point for r in recs]
    if out_dir is not None:
        write_results(out_dir, cfg, records, runtime_s=time.perf_counter() - t0)
    return records


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        row = asdict(r)
        w.writerow([repr(row[k]) if isinstance(row[k], float) else row[k] for k in RECORD_FIELDS])
    return buf.getvalue()


def _git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


def write_results(out_dir, cfg: SweepConfig, records, runtime_s: float | None = None) -> Path:
    out_dir = Path(out_dir)
    atomic_write_text(out_dir / "ber.csv", records_csv(records))
    manifest = {
        "version": __version__,
        "git_revision": _git_revision(),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "runtime_s": runtime_s,
        "failures": [{"grid_index": r.grid_index, "equalizer_id": r.equalizer_id, "detail": r.detail}
                     for r in records if r.status != "ok"],
    }
    atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return out_dir
