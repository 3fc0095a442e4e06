"""Grid search over model kinds and hyperparameter axes.

A grid manifest is JSON::

    {
      "models": ["avgpool", "lstm", "dcc", "transformer"],
      "axes": {"seq_len": [2, 4, 8]},          # any ModelSpec field
      "model": {"width_mult": 0.015625},       # fixed ModelSpec fields
      "train": {"epochs": 5, "batch_size": 8}, # TrainConfig fields
      "data": {"train": {...SynthSpec...}, "test": {...SynthSpec...}},
      "protocol": "cap",
      "seed": 0
    }

``data.train`` / ``data.test`` may instead be lists of stream file paths.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .benchmark import pair_accuracy
from .data import SynthSpec, generate_synthetic, load_stream
from .errors import ConfigError
from .infer import infer_stream
from .metrics import evaluate
from .models import ModelSpec, TemporalModel
from .train import TrainConfig, train

_SPEC_FIELDS = {f.name for f in fields(ModelSpec)} - {"kind", "feature_dim", "num_classes"}
_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
TIMING_COLUMNS = ("wall_time_s", "latency_p50_ms", "latency_p99_ms")
COLUMNS = ("rank", "cell", "model") + ("settings", "seed", "status", "mean_ap", "mean_cap", "frame_accuracy",
                                       "pair_accuracy") + TIMING_COLUMNS + ("error",)


@dataclass
class GridManifest:
    models: list
    axes: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    protocol: str = "cap"
    seed: int = 0

    @classmethod
    def from_dict(cls, raw: dict) -> "GridManifest":
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown grid manifest keys: {sorted(unknown)}")
        m = cls(**raw)
        if not m.models:
            raise ConfigError("grid manifest lists no models")
        for key in list(m.axes) + list(m.model):
            if key not in _SPEC_FIELDS:
                raise ConfigError(f"{key!r} is not a model hyperparameter")
        bad = set(m.train) - _TRAIN_FIELDS
        if bad:
            raise ConfigError(f"unknown training options: {sorted(bad)}")
        if m.protocol not in ("cap", "map"):
            raise ConfigError("protocol must be 'cap' or 'map'")
        return m

    @classmethod
    def load(cls, path) -> "GridManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def cells(self):
        names = sorted(self.axes)
        combos = list(itertools.product(*(self.axes[n] for n in names))) or [()]
        out = []
        for model in self.models:
            for combo in combos:
                out.append((len(out), model, dict(zip(names, combo))))
        return out


def _load_split(entry):
    if isinstance(entry, dict):
        return generate_synthetic(SynthSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in entry.items()}))
    return [load_stream(p) for p in entry]


def load_data(manifest: GridManifest):
    try:
        return _load_split(manifest.data["train"]), _load_split(manifest.data["test"])
    except KeyError:
        raise ConfigError("grid manifest needs data.train and data.test") from None


def run_cell(cell, manifest: GridManifest, train_set, test_set) -> dict:
    index, model_name, settings = cell
    row = {"cell": index, "model": model_name, "settings": json.dumps(settings, sort_keys=True),
           "seed": manifest.seed, "status": "ok", "error": ""}
    tic = time.perf_counter()
    try:
        ref = train_set[0]
        opts = dict(manifest.model)
        opts.update(settings)
        spec = ModelSpec.named(model_name, feature_dim=ref.d, num_classes=ref.num_classes, **opts)
        config = TrainConfig(**{**manifest.train, "seed": manifest.seed})
        params, _ = train(spec, train_set, config)
        net = TemporalModel(spec)
        timelines = [infer_stream(s, net, params) for s in test_set]
        report = evaluate(timelines, test_set, manifest.protocol)
        lat = [x for tl in timelines for x in tl.latencies]
        p50, p99 = (_percentile(lat, 50), _percentile(lat, 99))
        row.update(mean_ap=report.mean_ap, mean_cap=report.mean_cap, frame_accuracy=report.frame_accuracy,
                   pair_accuracy=pair_accuracy(timelines, test_set) if ref.num_classes >= 2 else math.nan,
                   latency_p50_ms=p50 * 1e3, latency_p99_ms=p99 * 1e3)
    except Exception as exc:  # a failed cell is recorded, the grid goes on
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}".replace("\n", " "))
        row["traceback"] = traceback.format_exc()
    row["wall_time_s"] = time.perf_counter() - tic
    return row


def _percentile(values, q):
    return float(np.percentile(values, q)) if values else math.nan


def _headline(row, protocol):
    value = row.get("mean_ap" if protocol == "map" else "mean_cap", math.nan)
    return -math.inf if value is None or value != value else value


def run_grid(manifest: GridManifest, workers: int = 1, data=None) -> list:
    """Train and evaluate every cell; rows come back ranked by the protocol's headline metric."""
    train_set, test_set = data or load_data(manifest)
    cells = manifest.cells()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells, itertools.repeat(manifest), itertools.repeat(train_set),
                                 itertools.repeat(test_set)))
    else:
        rows = [run_cell(c, manifest, train_set, test_set) for c in cells]
    rows.sort(key=lambda r: (-_headline(r, manifest.protocol), r["cell"]))
    for rank, row in enumerate(rows, 1):
        row["rank"] = rank
    return rows


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def rows_to_csv(rows, include_timing=False) -> str:
    """Ranked table; timing columns vary run to run and are opt-in."""
    cols = [c for c in COLUMNS if include_timing or c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def timing_to_csv(rows) -> str:
    cols = ("cell", "model", "settings", "seed") + TIMING_COLUMNS
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in sorted(rows, key=lambda r: r["cell"]):
        w.writerow([_fmt(r.get(c, "")) for c in cols])
    return buf.getvalue()


def rows_to_text(rows, protocol="cap") -> str:
    metric = "mean_ap" if protocol == "map" else "mean_cap"
    head = f"{'rank':>4}  {'model':<14} {'settings':<28} {metric:>9} {'pair_acc':>9} {'acc':>7} {'seed':>5}  status"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['rank']:>4}  {r['model']:<14} {r['settings']:<28} {_fmt(r.get(metric, '')):>9} "
            f"{_fmt(r.get('pair_accuracy', '')):>9} {_fmt(r.get('frame_accuracy', '')):>7} "
            f"{r['seed']:>5}  {r['status']}"
        )
    return "\n".join(lines) + "\n"
