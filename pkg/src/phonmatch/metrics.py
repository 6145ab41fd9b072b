"""Sample-level detection metrics and the distance-binned error report."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import List, NamedTuple, Sequence

import numpy as np


class ScoredTrial(NamedTuple):
    trial_id: str
    keyword: str
    label: int
    score: float
    distance: float


@dataclass(frozen=True)
class RocSummary:
    eer: float
    auc: float
    threshold_at_eer: float
    eer_above_chance: bool


def _split(scores, labels) -> tuple:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and the same length")
    if not labels.any() or labels.all():
        raise ValueError("need at least one positive and one negative trial")
    return scores, labels


def error_rates(scores, labels) -> tuple:
    """(thresholds, false-accept rates, false-reject rates).

    Thresholds are the distinct scores in ascending order followed by +inf;
    a trial is accepted when its score is >= the threshold.
    """
    scores, labels = _split(scores, labels)
    thresholds = np.append(np.unique(scores), np.inf)
    pos = np.sort(scores[labels])
    neg = np.sort(scores[~labels])
    far = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    return thresholds, far, frr


def eer_with_threshold(scores, labels) -> tuple:
    """EER by linear interpolation between the two thresholds that bracket FAR == FRR."""
    thresholds, far, frr = error_rates(scores, labels)
    diff = far - frr  # starts at 1, ends at -1, non-increasing
    k = int(np.nonzero(diff <= 0)[0][0])
    if diff[k] == 0 or k == 0:
        return float(far[k]), float(thresholds[k])
    d0, d1 = diff[k - 1], diff[k]
    t = d0 / (d0 - d1)
    eer = far[k - 1] + t * (far[k] - far[k - 1])
    lo, hi = thresholds[k - 1], thresholds[k]
    threshold = lo if np.isinf(hi) else lo + t * (hi - lo)
    return float(eer), float(threshold)


def compute_eer(scores, labels) -> float:
    return eer_with_threshold(scores, labels)[0]


def compute_auc(scores, labels) -> float:
    """Probability a positive outscores a negative, ties counting one half (rank statistic)."""
    scores, labels = _split(scores, labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    _, first, counts = np.unique(sorted_scores, return_index=True, return_counts=True)
    avg = first + (counts + 1) / 2.0  # 1-based average rank of each tie group
    ranks[order] = np.repeat(avg, counts)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_summary(scores, labels) -> RocSummary:
    eer, thr = eer_with_threshold(scores, labels)
    return RocSummary(eer, compute_auc(scores, labels), thr, eer > 0.5)


def accuracy_at_threshold(scores, labels, threshold: float = 0.8) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0:
        raise ValueError("no trials")
    return float(np.mean((scores >= threshold) == labels))


def mse_by_distance(distances, scores, labels, bins: int = 20) -> List[dict]:
    """Squared error of scores against labels, binned uniformly over 0 < distance < 1.

    Trials at distance exactly 0 or 1 are excluded.
    """
    d = np.asarray(distances, dtype=np.float64)
    err = (np.asarray(scores, dtype=np.float64) - np.asarray(labels, dtype=np.float64)) ** 2
    keep = (d > 0) & (d < 1)
    idx = np.minimum((d[keep] * bins).astype(int), bins - 1)
    table = []
    for b in range(bins):
        sel = err[keep][idx == b]
        table.append({"center": (b + 0.5) / bins, "mse": float(sel.mean()) if sel.size else None,
                      "count": int(sel.size)})
    return table


def build_report(trials: Sequence[ScoredTrial], bins: int = 20, threshold: float = 0.8) -> dict:
    scores = [t.score for t in trials]
    labels = [t.label for t in trials]
    return {
        "roc": asdict(roc_summary(scores, labels)),
        "accuracy": accuracy_at_threshold(scores, labels, threshold),
        "accuracy_threshold": threshold,
        "num_trials": len(trials),
        "num_positive": int(sum(labels)),
        "bins": mse_by_distance([t.distance for t in trials], scores, labels, bins),
    }


SCORE_FIELDS = ("trial_id", "keyword", "label", "score", "phoneme_distance")


def write_scores(path, trials: Sequence[ScoredTrial]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SCORE_FIELDS)
        for t in trials:
            writer.writerow([t.trial_id, t.keyword, t.label, repr(float(t.score)), repr(float(t.distance))])


def read_scores(path) -> List[ScoredTrial]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SCORE_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(SCORE_FIELDS)}")
        for row in reader:
            out.append(ScoredTrial(row["trial_id"], row["keyword"], int(row["label"]),
                                   float(row["score"]), float(row["phoneme_distance"])))
    return out


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
