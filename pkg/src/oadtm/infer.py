"""Stride-1 online scoring.

At unit ``t`` the model sees units ``max(0, t-L+1) .. t``; the first ``L-1``
units are scored on the truncated window.  No state is carried between
windows.
"""

from __future__ import annotations

import io
import struct
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ValidationError
from .models import ParamStore, TemporalModel

TIMELINE_MAGIC = b"OADS"
TIMELINE_VERSION = 1


@dataclass
class ScoreTimeline:
    """Per-unit class probabilities ``[T, K+1]`` plus the producing model's fingerprint."""

    probs: np.ndarray
    fingerprint: str = ""
    video_id: str = ""
    latencies: list = field(default_factory=list, compare=False, repr=False)

    @property
    def predictions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    def __len__(self):
        return self.probs.shape[0]

    def equals(self, other) -> bool:
        return (
            self.fingerprint == other.fingerprint
            and self.probs.dtype == other.probs.dtype
            and self.probs.shape == other.probs.shape
            and self.probs.tobytes() == other.probs.tobytes()
        )

    def latency_percentiles(self):
        if not self.latencies:
            return float("nan"), float("nan")
        p50, p99 = np.percentile(np.asarray(self.latencies), [50, 99])
        return float(p50), float(p99)

    # --- export -----------------------------------------------------------

    def to_csv(self) -> str:
        """``t,p0..pK,argmax``; probabilities written with 17 significant digits."""
        buf = io.StringIO()
        k1 = self.probs.shape[1]
        buf.write(",".join(["t"] + [f"p{j}" for j in range(k1)] + ["argmax"]) + "\n")
        for t, (row, pred) in enumerate(zip(self.probs, self.predictions)):
            buf.write(",".join([str(t)] + [f"{float(x):.17g}" for x in row] + [str(int(pred))]) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, fingerprint: str = "", video_id: str = "") -> "ScoreTimeline":
        lines = [ln for ln in text.splitlines() if ln]
        header = lines[0].split(",")
        k1 = len(header) - 2
        probs = np.array([[float(x) for x in ln.split(",")[1 : 1 + k1]] for ln in lines[1:]], dtype=np.float64)
        return cls(probs.reshape(-1, k1), fingerprint, video_id)

    def to_bytes(self) -> bytes:
        """``OADS | u32 version | 32-byte fingerprint | u32 T | u32 K+1 | T*(K+1) float64``."""
        fp = bytes.fromhex(self.fingerprint) if self.fingerprint else bytes(32)
        t, k1 = self.probs.shape
        head = TIMELINE_MAGIC + struct.pack("<I", TIMELINE_VERSION) + fp + struct.pack("<II", t, k1)
        return head + np.ascontiguousarray(self.probs, dtype="<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, video_id: str = "") -> "ScoreTimeline":
        if data[:4] != TIMELINE_MAGIC:
            raise ValidationError("not a score timeline file")
        (version,) = struct.unpack_from("<I", data, 4)
        if version != TIMELINE_VERSION:
            raise ValidationError(f"unsupported timeline version {version}")
        fp = data[8:40]
        t, k1 = struct.unpack_from("<II", data, 40)
        if len(data) != 48 + 8 * t * k1:
            raise ValidationError("timeline payload has the wrong length")
        probs = np.frombuffer(data, dtype="<f8", offset=48).reshape(t, k1).astype(np.float64)
        return cls(probs, "" if fp == bytes(32) else fp.hex(), video_id)

    def save(self, path):
        path = Path(path)
        if path.suffix.lower() == ".csv":
            path.write_text(self.to_csv(), encoding="utf-8")
        else:
            path.write_bytes(self.to_bytes())


class OnlineScorer:
    """A frozen model ready to score windows; safe to share across sessions."""

    def __init__(self, model: TemporalModel, params: ParamStore):
        self.model = model
        self.params = params
        self.spec = model.spec
        self.dtype = next(iter(params.tensors.values())).values.dtype
        self.fingerprint = params.fingerprint or model.spec.fingerprint()

    def score_window(self, window: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            probs = self.model.probabilities(self.params, ad.DiffTensor(window, dtype=self.dtype))
        return np.asarray(probs.values, dtype=np.float64)

    def _check_dim(self, d):
        if d != self.spec.feature_dim:
            raise ValidationError(f"feature dim {d} does not match model dim {self.spec.feature_dim}")


def infer_stream(stream, model: TemporalModel, params: ParamStore) -> ScoreTimeline:
    scorer = model if isinstance(model, OnlineScorer) else OnlineScorer(model, params)
    scorer._check_dim(stream.d)
    L = scorer.spec.seq_len
    feats = stream.features
    rows = []
    latencies = []
    for t in range(stream.T):
        tic = time.perf_counter()
        rows.append(scorer.score_window(feats[max(0, t - L + 1) : t + 1]))
        latencies.append(time.perf_counter() - tic)
    probs = np.stack(rows)
    return ScoreTimeline(probs, scorer.fingerprint, stream.video_id, latencies)


class OnlineSession:
    """Frame-by-frame scorer holding at most ``L - 1`` past units."""

    def __init__(self, model: TemporalModel, params: ParamStore):
        self.scorer = OnlineScorer(model, params)
        self.L = self.scorer.spec.seq_len
        self.buffer = deque(maxlen=max(self.L - 1, 0))

    def reset(self):
        self.buffer.clear()

    def push(self, frame) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.ndim != 1:
            raise ValidationError(f"expected a single feature vector, got shape {frame.shape}")
        self.scorer._check_dim(frame.shape[0])
        window = np.stack(list(self.buffer) + [frame])
        row = self.scorer.score_window(window)
        if self.L > 1:
            self.buffer.append(frame)
        return row


def infer_incremental(session: OnlineSession, frame) -> np.ndarray:
    return session.push(frame)
