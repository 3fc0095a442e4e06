"""Windowed supervised training with momentum SGD and per-epoch learning-rate decay."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError, ValidationError
from .models import ModelSpec, ParamStore, TemporalModel, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    decay_rate: float = 0.95
    epochs: int = 20
    batch_size: int = 32
    seed: int = 0
    precision: str = "fast"
    clip_norm: float | None = None

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if not 0 < self.decay_rate <= 1:
            raise ConfigError("decay rate must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch size >= 1")
        if self.precision not in ("fast", "test"):
            raise ConfigError("precision must be 'fast' or 'test'")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")

    def to_dict(self):
        return asdict(self)


@dataclass
class WindowBatch:
    windows: np.ndarray  # [B, L, d]
    labels: np.ndarray  # [B], label of each window's last unit

    def __len__(self):
        return len(self.labels)


def make_training_windows(stream, L: int) -> list:
    """Non-overlapping windows starting at 0, L, 2L, ...; a short tail is dropped.

    Returns ``(window [L, d], label of last unit)`` pairs.
    """
    if L < 1:
        raise ConfigError("window length must be positive")
    out = []
    for start in range(0, stream.T - L + 1, L):
        out.append((stream.features[start : start + L], int(stream.labels[start + L - 1])))
    return out


def collect_windows(streams, L: int) -> WindowBatch:
    pairs = [p for s in streams for p in make_training_windows(s, L)]
    if not pairs:
        d = streams[0].d if streams else 0
        return WindowBatch(np.zeros((0, L, d)), np.zeros(0, dtype=np.int64))
    return WindowBatch(np.stack([w for w, _ in pairs]), np.array([y for _, y in pairs], dtype=np.int64))


def sgd_step(params: ParamStore, lr: float, momentum: float, clip_norm: float | None = None) -> None:
    """``v <- momentum * v + grad; p <- p - lr * v``, then zero the gradients."""
    grads = {}
    for name, t in params.items():
        g = t.grad
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g
    if clip_norm is not None:
        total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        if total > clip_norm:
            factor = clip_norm / total
            grads = {n: g * factor for n, g in grads.items()}
    for name, t in params.items():
        v = params.momentum[name]
        v *= momentum
        v += grads[name]
        with np.errstate(over="ignore", invalid="ignore"):
            t.values -= lr * v
        if not np.all(np.isfinite(t.values)):
            raise NumericError(f"parameter {name!r} became non-finite after the update")
    params.zero_grad()


def _check_streams(spec: ModelSpec, streams):
    for s in streams:
        if s.d != spec.feature_dim:
            raise ValidationError(f"stream {s.video_id!r} has feature dim {s.d}, model expects {spec.feature_dim}")
        if s.num_classes != spec.num_classes:
            raise ValidationError(f"stream {s.video_id!r} has K={s.num_classes}, model expects {spec.num_classes}")


def format_log_record(rec: dict) -> str:
    """One training-log line: ``epoch=<n> loss=<f> lr=<f> accuracy=<f>``."""
    return f"epoch={rec['epoch']} loss={rec['loss']:.8f} lr={rec['lr']:.8g} accuracy={rec['accuracy']:.6f}"


def parse_log_line(line: str) -> dict:
    fields = dict(part.split("=", 1) for part in line.split())
    return {"epoch": int(fields["epoch"]), "loss": float(fields["loss"]), "lr": float(fields["lr"]),
            "accuracy": float(fields["accuracy"])}


def window_loss(model: TemporalModel, params: ParamStore, windows: np.ndarray, labels, rng=None):
    logits = model.logits(params, ad.tensor(windows), rng=rng)
    return ad.cross_entropy_loss(logits, labels), logits


def train(spec: ModelSpec, streams, config: TrainConfig, on_epoch=None):
    """Train a fresh model; returns ``(ParamStore, log records)``.

    Each epoch shuffles the pooled windows with a seeded generator and runs
    minibatch SGD; epoch ``n`` (1-based) uses ``lr * decay_rate ** (n - 1)``.
    """
    _check_streams(spec, streams)
    with ad.precision(config.precision):
        params = init_params(spec, config.seed)
        model = TemporalModel(spec)
        data = collect_windows(streams, spec.seq_len)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
        dropout_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 2]))
        dtype = ad.get_dtype()
        windows = data.windows.astype(dtype)
        log = []
        for epoch in range(1, config.epochs + 1):
            lr = decayed_lr(config, epoch - 1)
            order = rng.permutation(len(data))
            total_loss = 0.0
            correct = 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                loss, logits = window_loss(model, params, windows[idx], data.labels[idx], rng=dropout_rng)
                ad.backward(loss)
                sgd_step(params, lr, config.momentum, config.clip_norm)
                total_loss += float(loss.values) * len(idx)
                correct += int(np.sum(np.argmax(logits.values, axis=1) == data.labels[idx]))
            n = max(1, len(data))
            rec = {"epoch": epoch, "loss": total_loss / n, "lr": lr, "accuracy": correct / n}
            log.append(rec)
            logger.info(format_log_record(rec))
            if on_epoch is not None:
                on_epoch(rec)
        ad.reset_tape()
    return params, log


def decayed_lr(config: TrainConfig, epochs_done: int) -> float:
    return config.learning_rate * config.decay_rate**epochs_done
