"""File formats: datasets (CSV + JSON sidecar), model checkpoints (JSON) and
JSON-lines logs.

Checkpoints store floats through ``repr`` so a reload reproduces every
weight, and therefore every decision, bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .baselines import AnnParams, LmmseEqualizer
from .encoder import EncoderConfig
from .link import LinkConfig, SymbolFrame
from .snn import NeuronParams, SnnParams

FORMAT_VERSION = 1
DATASET_COLUMNS = ("symbol_index", "b1", "b2", "amplitude", "y")


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _neuron_to_dict(p: NeuronParams) -> dict:
    return {"tau_m": p.tau_m, "tau_syn": p.tau_syn, "threshold": _enc_float(p.threshold),
            "v_leak": p.v_leak, "v_reset": p.v_reset}


def _neuron_from_dict(d: dict) -> NeuronParams:
    d = dict(d)
    d["threshold"] = float(d["threshold"])
    return NeuronParams(**d)


def _enc_float(x: float):
    return x if np.isfinite(x) else str(x)


# --- datasets ----------------------------------------------------------------


def save_dataset(path, frame: SymbolFrame, y, cfg: LinkConfig) -> Path:
    """CSV with one row per symbol plus ``<path>.json`` holding the link
    configuration."""
    path = Path(path)
    rows = ["symbol_index,b1,b2,amplitude,y"]
    for i, ((b1, b2), a, v) in enumerate(zip(frame.bits, frame.amplitudes, np.asarray(y))):
        rows.append(f"{i},{b1},{b2},{int(a)},{float(v)!r}")
    atomic_write_text(path, "\n".join(rows) + "\n")
    meta = {"format_version": FORMAT_VERSION, "link": cfg.to_dict(), "n_symbols": len(frame)}
    atomic_write_text(path.with_suffix(path.suffix + ".json"), json.dumps(meta, indent=2) + "\n")
    return path


def load_dataset(path) -> tuple[SymbolFrame, np.ndarray, LinkConfig]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != DATASET_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = list(reader)
    bits = np.array([[int(r["b1"]), int(r["b2"])] for r in rows], dtype=np.int8).reshape(-1, 2)
    amps = np.array([float(r["amplitude"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return SymbolFrame(bits, amps), y, LinkConfig(**meta["link"])


# --- checkpoints -------------------------------------------------------------


def snn_checkpoint(params: SnnParams, encoder: EncoderConfig) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "snn",
        "encoder": encoder.to_dict(),
        "hidden": _neuron_to_dict(params.hidden),
        "readout": _neuron_to_dict(params.readout),
        "n_steps": params.n_steps,
        "dt": params.dt,
        "W_ih": params.W_ih.tolist(),
        "W_ho": params.W_ho.tolist(),
    }


def ann_checkpoint(params: AnnParams, kind: str = "ann") -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "hidden": list(params.hidden),
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "mean": params.mean.tolist(),
        "std": params.std.tolist(),
    }


def lmmse_checkpoint(eq: LmmseEqualizer) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "kind": "lmmse",
        "taps": eq.taps.tolist(),
        "bias": eq.bias,
        "decision_boundaries": eq.decision_boundaries.tolist(),
    }


def save_checkpoint(path, record: dict) -> Path:
    atomic_write_text(path, json.dumps(record) + "\n")
    return Path(path)


def load_checkpoint(path):
    """Returns ``(kind, model)``; for SNNs ``model`` is ``(SnnParams, EncoderConfig)``."""
    d = json.loads(Path(path).read_text())
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {d.get('format_version')}")
    kind = d["kind"]
    if kind == "snn":
        params = SnnParams(
            np.array(d["W_ih"], dtype=float), np.array(d["W_ho"], dtype=float),
            _neuron_from_dict(d["hidden"]), _neuron_from_dict(d["readout"]), int(d["n_steps"]), float(d["dt"]),
        )
        return kind, (params, EncoderConfig.from_dict(d["encoder"]))
    if kind == "lmmse":
        return kind, LmmseEqualizer(np.array(d["taps"]), float(d["bias"]), np.array(d["decision_boundaries"]))
    if kind.startswith("ann"):
        return kind, AnnParams([np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]],
                               np.array(d["mean"]), np.array(d["std"]))
    raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")


class JsonLinesLog:
    """Append-only JSON-lines record sink."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
