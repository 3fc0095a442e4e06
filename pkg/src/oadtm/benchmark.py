"""Order-sensitivity benchmark on the synthetic streams.

Temporal-order-aware operators should separate classes 1 and 2 while
permutation-invariant pooling stays at chance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import SynthSpec, generate_synthetic
from .infer import infer_stream
from .models import ModelSpec, TemporalModel
from .train import TrainConfig, train


@dataclass(frozen=True)
class OrderBenchmark:
    d: int = 16
    K: int = 2
    T: int = 256
    noise: float = 0.1
    seq_len: int = 4
    epochs: int = 20
    width_mult: float = 1 / 64
    train_streams: int = 64
    test_streams: int = 32
    batch_size: int = 4
    train_seed: int = 1
    test_seed: int = 2
    model_seed: int = 0

    def datasets(self):
        base = dict(T=self.T, d=self.d, K=self.K, noise=self.noise, mode="order")
        train_set = generate_synthetic(SynthSpec(num_streams=self.train_streams, seed=self.train_seed, **base))
        test_set = generate_synthetic(SynthSpec(num_streams=self.test_streams, seed=self.test_seed, **base))
        return train_set, test_set

    def model_spec(self, kind: str, **overrides) -> ModelSpec:
        opts = dict(feature_dim=self.d, num_classes=self.K, seq_len=self.seq_len, width_mult=self.width_mult)
        opts.update(overrides)
        return ModelSpec.named(kind, **opts)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.model_seed)


def pair_accuracy(timelines, streams, classes=(1, 2)) -> float:
    """Accuracy on units labelled with one of ``classes``, deciding only among them."""
    a, b = classes
    correct = total = 0
    for tl, s in zip(timelines, streams):
        mask = (s.labels == a) | (s.labels == b)
        pred = np.where(tl.probs[mask, a] >= tl.probs[mask, b], a, b)
        correct += int(np.sum(pred == s.labels[mask]))
        total += int(mask.sum())
    return correct / total if total else float("nan")


def run_order_benchmark(kinds=("avgpool", "maxpool", "lstm", "dcc"), bench: OrderBenchmark | None = None,
                        datasets=None):
    """Train and score each kind; returns ``{kind: {"accuracy", "seconds", "log"}}``."""
    bench = bench or OrderBenchmark()
    train_set, test_set = datasets or bench.datasets()
    results = {}
    for kind in kinds:
        tic = time.perf_counter()
        spec = bench.model_spec(kind)
        params, log = train(spec, train_set, bench.train_config())
        model = TemporalModel(spec)
        timelines = [infer_stream(s, model, params) for s in test_set]
        results[kind] = {
            "accuracy": pair_accuracy(timelines, test_set),
            "seconds": time.perf_counter() - tic,
            "log": log,
        }
    return results
