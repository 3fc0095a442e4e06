"""Per-frame average precision and calibrated average precision."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


def _ranked_hits(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    # descending score, ties by ascending frame index
    order = np.lexsort((np.arange(len(scores)), -scores))
    return labels[order]


def per_frame_ap(scores, labels) -> float:
    """Mean of precision@k over the ranks k that hold a positive.

    Returns ``nan`` when there is no positive frame (undefined class).
    """
    hits = _ranked_hits(scores, labels)
    P = int(hits.sum())
    if P == 0:
        return math.nan
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    return float(np.sum((tp / ranks)[hits]) / P)


def calibration_ratio(labels) -> float:
    labels = np.asarray(labels).astype(bool)
    pos = int(labels.sum())
    neg = len(labels) - pos
    if pos == 0:
        return math.nan
    return math.inf if neg == 0 else neg / pos


def per_frame_cap(scores, labels) -> float:
    """AP with precision calibrated by ``w = #neg / #pos``: ``TP / (TP + FP / w)``."""
    hits = _ranked_hits(scores, labels)
    P = int(hits.sum())
    if P == 0:
        return math.nan
    neg = len(hits) - P
    if neg == 0:
        return 1.0
    w = neg / P
    tp = np.cumsum(hits)
    fp = np.arange(1, len(hits) + 1) - tp
    cprec = tp / (tp + fp / w)
    return float(np.sum(cprec[hits]) / P)


@dataclass
class EvalReport:
    protocol: str
    classes: list
    ap: dict
    cap: dict
    positives: dict
    ratio: dict
    frame_accuracy: float
    num_frames: int
    meta: dict = field(default_factory=dict)

    def _mean(self, values):
        defined = [values[c] for c in self.classes if self.positives[c] > 0]
        return float(np.mean(defined)) if defined else math.nan

    @property
    def mean_ap(self) -> float:
        return self._mean(self.ap)

    @property
    def mean_cap(self) -> float:
        return self._mean(self.cap)

    @property
    def headline(self) -> float:
        return self.mean_ap if self.protocol == "map" else self.mean_cap

    def to_text(self) -> str:
        name = "mAP" if self.protocol == "map" else "mean cAP"
        lines = [
            f"protocol: {self.protocol}",
            f"frames: {self.num_frames}",
            "",
            f"{'class':>5}  {'P':>7}  {'w':>10}  {'AP':>8}  {'cAP':>8}",
        ]
        for c in self.classes:
            if self.positives[c] == 0:
                lines.append(f"{c:>5}  {0:>7}  {'-':>10}  {'undef':>8}  {'undef':>8}")
                continue
            lines.append(
                f"{c:>5}  {self.positives[c]:>7}  {self.ratio[c]:>10.4f}  {self.ap[c]:>8.4f}  {self.cap[c]:>8.4f}"
            )
        lines += [
            "",
            f"mAP: {self.mean_ap:.6f}",
            f"mean cAP: {self.mean_cap:.6f}",
            f"frame accuracy: {self.frame_accuracy:.6f}",
            f"{name} (headline): {self.headline:.6f}",
        ]
        for key in sorted(self.meta):
            lines.append(f"{key}: {self.meta[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "positives", "w", "ap", "cap"])
        for c in self.classes:
            P = self.positives[c]
            w.writerow([c, P, f"{self.ratio[c]:.17g}", f"{self.ap[c]:.17g}", f"{self.cap[c]:.17g}"])
        w.writerow(["mean", "", "", f"{self.mean_ap:.17g}", f"{self.mean_cap:.17g}"])
        return buf.getvalue()


def evaluate(timelines, streams, protocol: str = "cap") -> EvalReport:
    """Concatenate all evaluation frames and score every action class.

    ``protocol`` is ``"cap"`` (mean cAP headline) or ``"map"``.  Background
    (class 0) is excluded, as are classes with no positive frame.
    """
    if protocol not in ("cap", "map"):
        raise ValidationError(f"protocol must be 'cap' or 'map', got {protocol!r}")
    timelines, streams = list(timelines), list(streams)
    if not streams:
        raise ValidationError("empty evaluation set")
    if len(timelines) != len(streams):
        raise ValidationError(f"{len(timelines)} timelines for {len(streams)} streams")
    for tl, s in zip(timelines, streams):
        if len(tl) != s.T:
            raise ValidationError(f"timeline for {s.video_id!r} has {len(tl)} rows, stream has {s.T}")
    K = streams[0].num_classes
    probs = np.concatenate([tl.probs for tl in timelines])
    if probs.shape[1] != K + 1:
        raise ValidationError(f"timelines score {probs.shape[1]} classes, streams have K+1={K + 1}")
    labels = np.concatenate([s.labels for s in streams])
    classes = list(range(1, K + 1))
    ap, cap, pos, ratio = {}, {}, {}, {}
    for c in classes:
        y = labels == c
        pos[c] = int(y.sum())
        ratio[c] = calibration_ratio(y)
        ap[c] = per_frame_ap(probs[:, c], y)
        cap[c] = per_frame_cap(probs[:, c], y)
    acc = float(np.mean(np.argmax(probs, axis=1) == labels))
    return EvalReport(protocol, classes, ap, cap, pos, ratio, acc, len(labels))
