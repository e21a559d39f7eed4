"""Command line interface.

Subcommands: generate, train, fit-lmmse, evaluate, histogram, sweep.
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .baselines import ann_predict, bit_error_count, fit_ann, fit_lmmse, optimize_boundaries
from .encoder import encode_stream, tap_windows
from .harness import (DEFAULT_NOISE_DB, EQUALIZERS, AnnSettings, SnnSettings, SweepConfig,
                      export_histogram, run_sweep, worker_count)
from .io import (JsonLinesLog, ann_checkpoint, load_checkpoint, load_dataset, lmmse_checkpoint,
                 save_checkpoint, save_dataset, snn_checkpoint)
from .link import LinkConfig, bits_to_class, random_bits, sigma2_from_db, simulate_link
from .snn import NeuronParams, init_params
from .train import TrainConfig, fit, predict

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("snn_imdd")


class ConfigError(Exception):
    pass


def _add_link_args(p):
    g = p.add_argument_group("link")
    d = LinkConfig()
    g.add_argument("--baud-rate", type=float, default=d.baud_rate, help="symbols/s")
    g.add_argument("--wavelength", type=float, default=d.wavelength, help="m")
    g.add_argument("--dispersion", type=float, default=d.dispersion, help="ps/nm/km")
    g.add_argument("--fiber-length", type=float, default=d.fiber_length, help="m")
    g.add_argument("--oversampling", type=int, default=d.oversampling)
    g.add_argument("--rolloff", type=float, default=d.rrc_rolloff)
    g.add_argument("--rrc-span", type=int, default=d.rrc_span, help="symbols per RRC filter")
    g.add_argument("--bias", type=float, default=d.bias)
    g.add_argument("--link-seed", type=int, default=d.rng_seed)


def _link_from_args(a, noise_sigma2: float = 0.0) -> LinkConfig:
    return LinkConfig(baud_rate=a.baud_rate, wavelength=a.wavelength, dispersion=a.dispersion,
                      fiber_length=a.fiber_length, oversampling=a.oversampling, rrc_rolloff=a.rolloff,
                      rrc_span=a.rrc_span, bias=a.bias, noise_sigma2=noise_sigma2, rng_seed=a.link_seed)


def _add_train_args(p, defaults: TrainConfig):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=defaults.epochs)
    g.add_argument("--lr", type=float, default=defaults.learning_rate)
    g.add_argument("--batch-size", type=int, default=defaults.batch_size)
    g.add_argument("--beta1", type=float, default=defaults.adam_beta1)
    g.add_argument("--beta2", type=float, default=defaults.adam_beta2)
    g.add_argument("--adam-eps", type=float, default=defaults.adam_eps)
    g.add_argument("--steepness", type=float, default=defaults.surrogate_steepness,
                   help="SuperSpike surrogate steepness")
    g.add_argument("--train-seed", type=int, default=defaults.rng_seed)


def _train_from_args(a) -> TrainConfig:
    return TrainConfig(learning_rate=a.lr, adam_beta1=a.beta1, adam_beta2=a.beta2, adam_eps=a.adam_eps,
                       batch_size=a.batch_size, epochs=a.epochs, surrogate_steepness=a.steepness,
                       rng_seed=a.train_seed)


def _add_snn_args(p):
    d = SnnSettings()
    h = NeuronParams()
    g = p.add_argument_group("snn")
    g.add_argument("--t-max", type=float, default=d.t_max)
    g.add_argument("--kappa", type=float, default=d.kappa)
    g.add_argument("--dt", type=float, default=d.dt)
    g.add_argument("--n-steps", type=int, default=d.n_steps)
    g.add_argument("--n-hidden", type=int, default=d.n_hidden)
    g.add_argument("--neurons-per-sample", type=int, default=d.neurons_per_sample)
    g.add_argument("--init-gain", type=float, default=d.init_gain)
    g.add_argument("--clamp-distance", action=argparse.BooleanOptionalAction, default=d.clamp_distance,
                   help="silence encoder neurons farther than A from their reference")
    g.add_argument("--tau-m", type=float, default=h.tau_m)
    g.add_argument("--tau-syn", type=float, default=h.tau_syn)
    g.add_argument("--threshold", type=float, default=h.threshold)


def _snn_from_args(a, train: TrainConfig) -> SnnSettings:
    return SnnSettings(t_max=a.t_max, kappa=a.kappa, clamp_distance=a.clamp_distance, n_steps=a.n_steps,
                       dt=a.dt, n_hidden=a.n_hidden, neurons_per_sample=a.neurons_per_sample,
                       init_gain=a.init_gain, hidden=NeuronParams(a.tau_m, a.tau_syn, a.threshold),
                       train=train)


def _noise_sigma2(a, link: LinkConfig) -> float:
    if a.noise_db is not None:
        return sigma2_from_db(a.noise_db, link)
    return a.noise_sigma2


# --- subcommands ---------------------------------------------------------------


def cmd_generate(a):
    link = _link_from_args(a)
    link = replace(link, noise_sigma2=_noise_sigma2(a, link))
    bits = random_bits(a.symbols, np.random.default_rng(a.bits_seed))
    frame, y = simulate_link(bits, link)
    save_dataset(a.out, frame, y, link)
    print(f"wrote {len(frame)} symbols to {a.out}")


def cmd_train(a):
    frame, y, _ = load_dataset(a.data)
    labels = bits_to_class(frame.bits)
    validation = None
    if a.val:
        vframe, vy, _ = load_dataset(a.val)
    sink = JsonLinesLog(a.log) if a.log else None
    if a.model == "snn":
        train = _train_from_args(a)
        s = _snn_from_args(a, train)
        enc = s.encoder(y)
        init = init_params(enc.n_inputs, np.random.default_rng(a.init_seed), n_hidden=s.n_hidden,
                           gain=s.init_gain, hidden=s.hidden, n_steps=s.n_steps, dt=s.dt)
        if a.val:
            validation = (encode_stream(vy, enc), bits_to_class(vframe.bits))
        params, records = fit((encode_stream(y, enc), labels), init, train, validation, on_record=sink)
        save_checkpoint(a.out, snn_checkpoint(params, enc))
    else:
        train = _train_from_args(a)
        if a.val:
            validation = (tap_windows(vy, a.taps), bits_to_class(vframe.bits))
        params, records = fit_ann(tap_windows(y, a.taps), labels, a.model, train, validation)
        if sink:
            for r in records:
                sink(r)
        save_checkpoint(a.out, ann_checkpoint(params, a.model))
    if records:
        print(json.dumps(records[-1]))
    print(f"wrote {a.model} checkpoint to {a.out}")


def cmd_fit_lmmse(a):
    frame, y, _ = load_dataset(a.data)
    eq = fit_lmmse(y, frame.amplitudes, a.taps)
    eq.decision_boundaries = optimize_boundaries(eq.equalize(y), bits_to_class(frame.bits))
    save_checkpoint(a.out, lmmse_checkpoint(eq))
    print(f"boundaries {eq.decision_boundaries.tolist()}; wrote {a.out}")


def _decide(kind, model, y):
    if kind == "snn":
        params, enc = model
        return predict(encode_stream(y, enc), params)
    if kind == "lmmse":
        return model.decide(y)
    n_tap = model.weights[0].shape[1]
    return ann_predict(model, tap_windows(y, n_tap))


def cmd_evaluate(a):
    kind, model = load_checkpoint(a.model)
    frame, y, _ = load_dataset(a.data)
    labels = bits_to_class(frame.bits)
    errors = bit_error_count(_decide(kind, model, y), labels)
    bits = 2 * len(labels)
    print(json.dumps({"equalizer_id": kind, "bit_errors": errors, "bits_counted": bits, "ber": errors / bits}))


def cmd_histogram(a):
    frame, y, _ = load_dataset(a.data)
    if a.model:
        kind, eq = load_checkpoint(a.model)
        if kind != "lmmse":
            raise ConfigError("histogram needs an LMMSE checkpoint")
    else:
        eq = fit_lmmse(y, frame.amplitudes, a.taps)
    export_histogram(eq.equalize(y), bits_to_class(frame.bits), a.bins, a.out)
    print(f"wrote histogram to {a.out}")


def cmd_sweep(a):
    link = _link_from_args(a)
    snn = _snn_from_args(a, _train_from_args(a))
    ann = AnnSettings(train=TrainConfig(learning_rate=a.ann_lr, epochs=a.ann_epochs,
                                        batch_size=a.batch_size))
    common = dict(link=link, n_train=a.n_train, n_test=a.n_test, n_val=a.n_val,
                  equalizers=tuple(a.equalizers), snn=snn, ann=ann, seed=a.seed)
    if a.noise_sigma2_grid:
        cfg = SweepConfig(noise_sigma2=tuple(a.noise_sigma2_grid), **common)
    else:
        cfg = SweepConfig.from_db(a.noise_db_grid, **common)
    records = run_sweep(cfg, a.out_dir, workers=a.workers or worker_count())
    for r in records:
        print(f"{r.noise_db:8.2f} dB  {r.equalizer_id:6s}  BER {r.ber:.3e}  "
              f"[{r.ci_low:.2e}, {r.ci_high:.2e}]  {r.status}")
    if any(r.status != "ok" for r in records):
        return EXIT_NUMERIC
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snn-imdd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate the link and write a dataset")
    _add_link_args(g)
    g.add_argument("--symbols", type=int, default=100_000)
    g.add_argument("--bits-seed", type=int, default=0)
    noise = g.add_mutually_exclusive_group()
    noise.add_argument("--noise-sigma2", type=float, default=0.0)
    noise.add_argument("--noise-db", type=float, default=None,
                       help="noise power in dB relative to the noiseless photodiode signal")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train an SNN or ANN equalizer on a dataset")
    t.add_argument("model", choices=("snn", "ann1", "ann2"))
    t.add_argument("--data", required=True)
    t.add_argument("--val", help="validation dataset for best-epoch selection")
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="JSON-lines training log")
    t.add_argument("--taps", type=int, default=17, help="ANN input window")
    t.add_argument("--init-seed", type=int, default=0)
    _add_train_args(t, SnnSettings().train)
    _add_snn_args(t)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit-lmmse", help="fit the LMMSE equalizer and its decision boundaries")
    f.add_argument("--data", required=True)
    f.add_argument("--taps", type=int, default=17)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fit_lmmse)

    e = sub.add_parser("evaluate", help="BER of a checkpoint on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_evaluate)

    h = sub.add_parser("histogram", help="per-class histogram of the LMMSE equalizer output")
    h.add_argument("--data", required=True)
    h.add_argument("--model", help="LMMSE checkpoint (fitted on --data if omitted)")
    h.add_argument("--taps", type=int, default=17)
    h.add_argument("--bins", type=int, default=100)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_histogram)

    s = sub.add_parser("sweep", help="BER versus noise power for all equalizers")
    _add_link_args(s)
    grid = s.add_mutually_exclusive_group()
    grid.add_argument("--noise-db-grid", type=float, nargs="+", default=list(DEFAULT_NOISE_DB))
    grid.add_argument("--noise-sigma2-grid", type=float, nargs="+")
    s.add_argument("--n-train", type=int, default=100_000)
    s.add_argument("--n-test", type=int, default=100_000)
    s.add_argument("--n-val", type=int, default=20_000)
    s.add_argument("--equalizers", nargs="+", choices=EQUALIZERS, default=list(EQUALIZERS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=0, help="parallel grid points (default: $SNN_IMDD_WORKERS or 1)")
    s.add_argument("--ann-epochs", type=int, default=AnnSettings().train.epochs)
    s.add_argument("--ann-lr", type=float, default=AnnSettings().train.learning_rate)
    s.add_argument("--out-dir", required=True)
    _add_train_args(s, SnnSettings().train)
    _add_snn_args(s)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return a.func(a) or 0
    except (ValueError, ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
