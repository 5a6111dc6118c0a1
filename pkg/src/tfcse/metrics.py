"""Segment-based evaluation for polyphonic sound event detection.

Frame-level event rolls are collapsed onto fixed-length segments (one
second by default): a class is active in a segment if any of its frames is.
Per segment, reference/estimate agreement is counted as true positives,
false positives and false negatives, and the error decomposition

    substitutions = min(FN, FP),  deletions = max(0, FN - FP),
    insertions = max(0, FP - FN)

is accumulated.  Micro-averaged across segments and classes:

    F1    = 2 TP / (2 TP + FP + FN)
    ER    = (S + D + I) / N_ref
    joint = (ER + 1 - F1) / 2        (lower is better)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_roll_array


@dataclass
class EventRoll:
    """Binary frame activity [frames, classes] with its frame hop."""

    active: np.ndarray
    frame_hop_seconds: float

    def __post_init__(self):
        self.active = check_roll_array(self.active).astype(np.uint8)
        if self.active.ndim != 2:
            raise ValueError(f"roll must be 2-D [frames, classes], got {self.active.shape}")
        if self.frame_hop_seconds <= 0:
            raise ValueError(f"frame hop must be positive, got {self.frame_hop_seconds}")

    @property
    def num_frames(self) -> int:
        return self.active.shape[0]

    @property
    def num_classes(self) -> int:
        return self.active.shape[1]


def frame_segment_indices(num_frames: int, frame_hop_seconds: float,
                          segment_seconds: float) -> np.ndarray:
    """Segment index of each frame, by the frame's start time."""
    times = np.arange(num_frames) * frame_hop_seconds
    return np.floor(times / segment_seconds).astype(int)


def roll_to_segments(roll: EventRoll, segment_seconds: float = 1.0) -> np.ndarray:
    """Segment activity [segments, classes]; a trailing partial segment
    counts like any other."""
    idx = frame_segment_indices(roll.num_frames, roll.frame_hop_seconds, segment_seconds)
    segments = np.zeros((idx[-1] + 1 if len(idx) else 0, roll.num_classes), dtype=np.uint8)
    np.maximum.at(segments, idx, roll.active)
    return segments


@dataclass
class SegmentCounts:
    """Accumulated per-segment counts; mergeable across recordings."""

    n_ref: int = 0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    per_class: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def merge(self, other: "SegmentCounts") -> "SegmentCounts":
        if self.per_class.shape[0] == 0:
            per_class = other.per_class.copy()
        elif other.per_class.shape[0] == 0:
            per_class = self.per_class.copy()
        else:
            if self.per_class.shape != other.per_class.shape:
                raise ValueError("cannot merge counts with different class counts")
            per_class = self.per_class + other.per_class
        return SegmentCounts(
            self.n_ref + other.n_ref, self.tp + other.tp, self.fp + other.fp,
            self.fn + other.fn, self.substitutions + other.substitutions,
            self.deletions + other.deletions, self.insertions + other.insertions,
            per_class)


def segment_counts(ref: EventRoll, est: EventRoll,
                   segment_seconds: float = 1.0) -> SegmentCounts:
    """Count agreement between a reference and an estimated roll."""
    if ref.active.shape != est.active.shape:
        raise ValueError(f"rolls disagree in shape: {ref.active.shape} vs {est.active.shape}")
    ref_seg = roll_to_segments(ref, segment_seconds).astype(bool)
    est_seg = roll_to_segments(est, segment_seconds).astype(bool)

    tp = ref_seg & est_seg
    fp = est_seg & ~ref_seg
    fn = ref_seg & ~est_seg
    fp_k = fp.sum(axis=1)
    fn_k = fn.sum(axis=1)
    subs = np.minimum(fn_k, fp_k)
    per_class = np.stack([tp.sum(axis=0), fp.sum(axis=0), fn.sum(axis=0)], axis=1)
    return SegmentCounts(
        n_ref=int(ref_seg.sum()),
        tp=int(tp.sum()),
        fp=int(fp.sum()),
        fn=int(fn.sum()),
        substitutions=int(subs.sum()),
        deletions=int(np.maximum(0, fn_k - fp_k).sum()),
        insertions=int(np.maximum(0, fp_k - fn_k).sum()),
        per_class=per_class.astype(np.int64))


def metrics_from_counts(counts: SegmentCounts) -> dict[str, float]:
    """F1, ER and the joint score from accumulated counts."""
    if counts.n_ref == 0:
        raise ValueError("error rate undefined: reference contains no active events")
    denom = 2 * counts.tp + counts.fp + counts.fn
    f1 = 2 * counts.tp / denom if denom else 0.0
    er = (counts.substitutions + counts.deletions + counts.insertions) / counts.n_ref
    return {"F1": f1, "ER": er, "S_SED": joint_score(er, f1)}


def joint_score(er: float, f1: float) -> float:
    """Single-number trade-off of error rate and F1; lower is better."""
    return (er + 1.0 - f1) / 2.0


def evaluate(ref: EventRoll, est: EventRoll, segment_seconds: float = 1.0) -> dict[str, float]:
    """Segment-based F1 / ER / joint score for a single roll pair."""
    return metrics_from_counts(segment_counts(ref, est, segment_seconds))


def format_record(metrics: dict[str, float]) -> str:
    """The single-line machine-readable result record."""
    return f"F1={metrics['F1']:.6f} ER={metrics['ER']:.6f} S_SED={metrics['S_SED']:.6f}"


def per_class_rows(counts: SegmentCounts) -> list[dict]:
    """Per-class breakdown rows for the CSV report."""
    rows = []
    for class_id, (tp, fp, fn) in enumerate(counts.per_class):
        denom = 2 * tp + fp + fn
        rows.append({"class": class_id, "tp": int(tp), "fp": int(fp), "fn": int(fn),
                     "f1": 2 * tp / denom if denom else 0.0})
    return rows


def write_class_csv(path, counts: SegmentCounts) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["class", "tp", "fp", "fn", "f1"])
        writer.writeheader()
        for row in per_class_rows(counts):
            writer.writerow(row)
