"""Feature streams: validation, OADF binary / CSV persistence, synthetic generation.

OADF layout (little-endian)::

    b"OADF" | u32 version (1) | u32 T | u32 d | u32 K
    | T*d float32 features, row-major | T uint32 labels

CSV layout: header ``t,label,f0,...,f{d-1}`` then one row per unit.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, StreamFormatError

STREAM_MAGIC = b"OADF"
STREAM_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


@dataclass
class FeatureStream:
    """One video as a ``T x d`` sequence of unit features with per-unit labels.

    Label 0 is background; actions are ``1..K``.
    """

    video_id: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    unit_duration: float = 0.25
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def validate(self) -> "FeatureStream":
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise StreamFormatError("bad_shape", f"features must be a non-empty T x d array, got {self.features.shape}")
        if self.labels.shape != (self.T,):
            raise StreamFormatError("bad_shape", f"expected {self.T} labels, got {self.labels.shape}")
        if not np.all(np.isfinite(self.features)):
            row = int(np.argwhere(~np.isfinite(self.features))[0, 0])
            raise StreamFormatError("non_finite_feature", f"{self.video_id}: non-finite feature at unit {row}")
        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise StreamFormatError(
                "label_out_of_range", f"{self.video_id}: labels must lie in [0, {self.num_classes}]"
            )
        return self


# --- binary -----------------------------------------------------------------


def stream_to_bytes(stream: FeatureStream) -> bytes:
    stream.validate()
    head = _HEADER.pack(STREAM_MAGIC, STREAM_VERSION, stream.T, stream.d, stream.num_classes)
    feats = np.ascontiguousarray(stream.features, dtype="<f4").tobytes()
    labels = np.ascontiguousarray(stream.labels, dtype="<u4").tobytes()
    return head + feats + labels


def stream_from_bytes(data: bytes, video_id: str = "") -> FeatureStream:
    if len(data) < 4 or data[:4] != STREAM_MAGIC:
        raise StreamFormatError("bad_magic", "not an OADF feature file")
    if len(data) < _HEADER.size:
        raise StreamFormatError("truncated_payload", "header is incomplete")
    _, version, T, d, K = _HEADER.unpack_from(data)
    if version != STREAM_VERSION:
        raise StreamFormatError("bad_version", f"unsupported OADF version {version}")
    need = _HEADER.size + 4 * T * d + 4 * T
    if len(data) < need:
        raise StreamFormatError("truncated_payload", f"expected {need} bytes, got {len(data)}")
    if len(data) > need:
        raise StreamFormatError("trailing_bytes", f"expected {need} bytes, got {len(data)}")
    feats = np.frombuffer(data, dtype="<f4", count=T * d, offset=_HEADER.size).reshape(T, d).astype(np.float32)
    labels = np.frombuffer(data, dtype="<u4", count=T, offset=_HEADER.size + 4 * T * d).astype(np.int64)
    return FeatureStream(video_id, feats, labels, K).validate()


def save_stream(stream: FeatureStream, path, format: str = "binary") -> None:  # noqa: A002
    path = Path(path)
    if format == "binary":
        path.write_bytes(stream_to_bytes(stream))
    elif format == "csv":
        path.write_text(stream_to_csv(stream), encoding="utf-8")
    else:
        raise ValueError(f"unknown stream format {format!r}")


def load_stream(path, format: str | None = None, num_classes: int | None = None) -> FeatureStream:
    """Load and validate a stream; ``format`` defaults from the file suffix.

    CSV files carry no class count, so ``num_classes`` is taken from the
    argument or, failing that, the largest label present.
    """
    path = Path(path)
    if format is None:
        format = "csv" if path.suffix.lower() == ".csv" else "binary"  # noqa: A001
    if format == "binary":
        return stream_from_bytes(path.read_bytes(), video_id=path.stem)
    if format == "csv":
        return stream_from_csv(path.read_text(encoding="utf-8"), video_id=path.stem, num_classes=num_classes)
    raise ValueError(f"unknown stream format {format!r}")


# --- csv --------------------------------------------------------------------


def stream_to_csv(stream: FeatureStream) -> str:
    stream.validate()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "label"] + [f"f{j}" for j in range(stream.d)])
    feats = stream.features.astype(np.float32)
    for t in range(stream.T):
        # str() of a float32 is its shortest round-tripping decimal
        writer.writerow([t, int(stream.labels[t])] + [str(x) for x in feats[t]])
    return buf.getvalue()


def stream_from_csv(text: str, video_id: str = "", num_classes: int | None = None) -> FeatureStream:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise StreamFormatError("bad_csv", "empty CSV") from None
    if header[:2] != ["t", "label"] or header[2:] != [f"f{j}" for j in range(len(header) - 2)]:
        raise StreamFormatError("bad_csv", f"unexpected header {header[:4]}...")
    d = len(header) - 2
    rows = [r for r in reader if r]
    if not rows:
        raise StreamFormatError("truncated_payload", "CSV has no data rows")
    feats = np.empty((len(rows), d), dtype=np.float32)
    labels = np.empty(len(rows), dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != d + 2 or int(row[0]) != i:
            raise StreamFormatError("bad_csv", f"malformed row {i}")
        labels[i] = int(row[1])
        feats[i] = np.array(row[2:], dtype=np.float32)
    k = num_classes if num_classes is not None else max(1, int(labels.max()))
    return FeatureStream(video_id, feats, labels, k).validate()


# --- synthetic ----------------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic benchmark.

    ``mode="order"`` builds classes that share per-window frame content and
    differ only in temporal order; ``mode="static"`` gives every class its own
    constant prototype.  ``seed`` drives layout and noise, ``prototype_seed``
    the class prototypes, so train and test sets drawn with different seeds
    describe the same classes.
    """

    num_streams: int = 10
    T: int = 256
    d: int = 16
    K: int = 2
    noise: float = 0.1
    mode: str = "order"
    seed: int = 0
    prototype_seed: int = 0
    background_len: tuple = (8, 24)
    action_len: tuple = (16, 40)

    def validate(self):
        if self.mode not in ("order", "static"):
            raise ConfigError(f"mode must be 'order' or 'static', got {self.mode!r}")
        if self.num_streams < 1 or self.T < 1 or self.d < 1 or self.K < 1:
            raise ConfigError("num_streams, T, d and K must be positive")
        if self.noise < 0:
            raise ConfigError("noise level must be non-negative")
        if self.mode == "order":
            if self.K < 2:
                raise ConfigError("order-sensitive mode needs K >= 2")
            if self.d < 2 * ((self.K + 1) // 2):
                raise ConfigError(f"order-sensitive mode needs d >= {2 * ((self.K + 1) // 2)} for K={self.K}")
        elif self.d < self.K:
            raise ConfigError(f"static mode needs d >= K ({self.K})")
        lo, hi = self.background_len
        alo, ahi = self.action_len
        if not (1 <= lo <= hi and 1 <= alo <= ahi):
            raise ConfigError("segment length ranges must be positive and ordered")
        return self


def prototype_vectors(spec: SynthSpec) -> np.ndarray:
    """Unit vectors with pairwise-disjoint supports, fixed by ``spec.prototype_seed``.

    Order mode returns ``2 * ceil(K / 2)`` rows (a ``u, v`` pair per class
    pair); static mode returns ``K`` rows.  Disjoint supports keep every sum
    of prototypes exact in floating point.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.prototype_seed, 0x9E3779B9]))
    n = 2 * ((spec.K + 1) // 2) if spec.mode == "order" else spec.K
    perm = rng.permutation(spec.d)
    groups = np.array_split(perm, n)
    protos = np.zeros((n, spec.d))
    for row, idx in enumerate(groups):
        vals = np.abs(rng.normal(size=len(idx))) + 0.5
        protos[row, idx] = vals / np.linalg.norm(vals)
    return protos


def order_cycle(u: np.ndarray, v: np.ndarray, cls_parity: int) -> np.ndarray:
    """Four-step prototype cycle.

    Parity 0 (odd class ids) gives ``u, v, -u, -v``; parity 1 gives
    ``v, u, -v, -u``.  Both cycles visit the same four vectors and every
    aligned pair of frames holds the same multiset, but consecutive frames
    rotate in opposite directions in the ``(u, v)`` plane.
    """
    if cls_parity == 0:
        return np.stack([u, v, -u, -v])
    return np.stack([v, u, -v, -u])


def class_prototype_sequence(spec: SynthSpec, cls: int, n: int, phase: int = 0, protos=None) -> np.ndarray:
    """Noise-free features for ``n`` consecutive units of class ``cls``."""
    protos = prototype_vectors(spec) if protos is None else protos
    if cls == 0:
        return np.zeros((n, spec.d))
    if spec.mode == "static":
        return np.tile(protos[cls - 1], (n, 1))
    pair = (cls - 1) // 2
    cycle = order_cycle(protos[2 * pair], protos[2 * pair + 1], (cls - 1) % 2)
    return cycle[(np.arange(n) + phase) % 4]


def _segment_layout(spec: SynthSpec, rng) -> list:
    """Background gaps around action segments as ``(class, length)`` pairs.

    In order mode both classes of a pair are emitted as equal-length twins
    (random order) and a twin is only started if both fit, so the two classes
    always cover the same number of units.
    """
    segments = []
    t = 0

    def draw(bounds):
        return int(rng.integers(bounds[0], bounds[1] + 1))

    while t < spec.T:
        bg = draw(spec.background_len)
        if spec.mode == "order":
            pair = int(rng.integers(0, (spec.K + 1) // 2))
            classes = [c for c in (2 * pair + 1, 2 * pair + 2) if c <= spec.K]
            if rng.random() < 0.5:
                classes.reverse()
            length = draw(spec.action_len)
            gap = draw(spec.background_len)
            # shrink the twins to fit short streams, but keep a full cycle
            room = (spec.T - t - bg - gap) // 2
            if 4 <= room < length:
                length = room
            block = [(0, bg), (classes[0], length)]
            if len(classes) == 2:
                block += [(0, gap), (classes[1], length)]
        else:
            block = [(0, bg), (int(rng.integers(1, spec.K + 1)), draw(spec.action_len))]
        size = sum(n for _, n in block)
        if t + size > spec.T:
            segments.append((0, spec.T - t))
            break
        segments += block
        t += size
    return segments


def generate_stream(spec: SynthSpec, index: int, protos=None) -> FeatureStream:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    protos = prototype_vectors(spec) if protos is None else protos
    clean = np.zeros((spec.T, spec.d))
    labels = np.zeros(spec.T, dtype=np.int64)
    t = 0
    for cls, length in _segment_layout(spec, rng):
        n = min(length, spec.T - t)
        phase = int(rng.integers(0, 4))
        clean[t : t + n] = class_prototype_sequence(spec, cls, n, phase, protos)
        labels[t : t + n] = cls
        t += n
    feats = clean + spec.noise * rng.normal(size=clean.shape)
    return FeatureStream(f"synth_{spec.seed}_{index:04d}", feats.astype(np.float32), labels, spec.K).validate()


def generate_synthetic(spec: SynthSpec) -> list:
    """Deterministic list of streams; stream ``i`` is seeded by ``(spec.seed, i)``."""
    spec.validate()
    protos = prototype_vectors(spec)
    return [generate_stream(spec, i, protos) for i in range(spec.num_streams)]
