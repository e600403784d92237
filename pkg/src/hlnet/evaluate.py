"""Frame-level evaluation: score expansion, PR curve, AP, and ROC-AUC.

Snippet scores expand to frames (each frame inherits its covering snippet's
score), frames from all test videos are pooled, and one precision-recall
curve is computed over the pool. AP is the step-interpolated sum of
precisions at the positive ranks; ties in scores are broken by frame index
(stable), which keeps results deterministic.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import sigmoid_np
from .data import VideoRecord
from .model import HLNetParams, eval_forward

HEADS = ("offline", "online")


@dataclass(frozen=True)
class CurveReport:
    """One head's pooled frame-level result."""

    points: tuple[tuple[float, float, float], ...]  # (threshold, precision, recall)
    ap: float
    auc: float | None
    n_frames: int
    n_positive: int

    def to_json(self) -> str:
        return json.dumps(
            {"ap": self.ap, "auc": self.auc, "n_frames": self.n_frames, "n_positive": self.n_positive},
            sort_keys=True,
        )

    def write_json(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    def write_csv(self, path) -> None:
        lines = ["threshold,precision,recall"]
        lines.extend(f"{t!r},{p!r},{r!r}" for t, p, r in self.points)
        auc = "" if self.auc is None else repr(self.auc)
        lines.append(
            f"# summary ap={self.ap!r} auc={auc} n_frames={self.n_frames} n_positive={self.n_positive}"
        )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def expand_to_frames(snippet_scores: np.ndarray, snippet_len: int, total_frames: int) -> np.ndarray:
    """Each frame inherits the score of its covering snippet.

    The final snippet may be partial; the declared frame total must land
    inside it.
    """
    scores = np.asarray(snippet_scores, dtype=np.float64).reshape(-1)
    t_prime = scores.shape[0]
    if t_prime < 1 or snippet_len < 1:
        raise ValueError("need at least one snippet and snippet_len >= 1")
    if not (t_prime - 1) * snippet_len < total_frames <= t_prime * snippet_len:
        raise ValueError(
            f"total_frames={total_frames} inconsistent with {t_prime} snippets of {snippet_len} frames"
        )
    return np.repeat(scores, snippet_len)[:total_frames]


def interval_frame_labels(intervals: Sequence[tuple[int, int]], total_frames: int) -> np.ndarray:
    """Binary frame labels from [start, end) frame intervals."""
    labels = np.zeros(total_frames, dtype=np.int8)
    for start, end in intervals:
        if not 0 <= start < end <= total_frames:
            raise ValueError(f"interval ({start}, {end}) outside [0, {total_frames})")
        labels[start:end] = 1
    return labels


def _ranked(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in length: {scores.shape} vs {labels.shape}")
    order = np.argsort(-scores, kind="stable")  # ties: lower frame index first
    return scores[order], labels[order].astype(np.float64)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Step-interpolated AP: mean precision over the positive ranks."""
    ranked_scores, ranked_labels = _ranked(scores, labels)
    n_positive = ranked_labels.sum()
    if n_positive == 0:
        raise ValueError("average precision undefined without positive labels")
    cum_tp = np.cumsum(ranked_labels)
    ranks = np.arange(1, ranked_labels.shape[0] + 1)
    precision = cum_tp / ranks
    return float(precision[ranked_labels == 1].sum() / n_positive)


def pr_points(scores: np.ndarray, labels: np.ndarray) -> tuple[tuple[float, float, float], ...]:
    """(threshold, precision, recall) at each distinct score, descending."""
    ranked_scores, ranked_labels = _ranked(scores, labels)
    n_positive = ranked_labels.sum()
    if n_positive == 0:
        raise ValueError("precision-recall curve undefined without positive labels")
    cum_tp = np.cumsum(ranked_labels)
    ranks = np.arange(1, ranked_labels.shape[0] + 1)
    last = np.flatnonzero(np.diff(ranked_scores, append=np.nan) != 0)  # last index per value
    return tuple(
        (float(ranked_scores[i]), float(cum_tp[i] / ranks[i]), float(cum_tp[i] / n_positive))
        for i in last
    )


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """AUC via the rank statistic with midrank tie correction."""
    ranked_scores, ranked_labels = _ranked(scores, labels)
    n = ranked_labels.shape[0]
    n_pos = ranked_labels.sum()
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc auc undefined unless both classes are present")
    # midranks over the ascending order
    asc_scores = ranked_scores[::-1]
    asc_labels = ranked_labels[::-1]
    ranks = np.empty(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and asc_scores[j + 1] == asc_scores[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_rank_sum = ranks[asc_labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# corpus-level harness


def _record_inputs(record: VideoRecord, params: HLNetParams):
    cfg = params.config
    xv = record.features["visual"].values if "visual" in record.features else None
    xa = record.features["audio"].values if "audio" in record.features else None
    if cfg.modality in ("both", "visual") and xv is None:
        raise ValueError(f"{record.id}: model needs visual features")
    if cfg.modality in ("both", "audio") and xa is None:
        raise ValueError(f"{record.id}: model needs audio features")
    return xv, xa


def video_frame_scores(
    record: VideoRecord, params: HLNetParams, head: str
) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame (scores, labels) for one video under one head."""
    if head not in HEADS:
        raise ValueError(f"head must be one of {HEADS}, got {head!r}")
    xv, xa = _record_inputs(record, params)
    activations = eval_forward(xv, xa, params, heads=(head,))[head]
    scores = expand_to_frames(sigmoid_np(activations), record.snippet_len, record.total_frames)
    labels = interval_frame_labels(record.gt_intervals, record.total_frames)
    return scores, labels


def evaluate_head(
    params: HLNetParams,
    records: Sequence[VideoRecord],
    head: str,
    workers: int = 1,
) -> CurveReport:
    """Pool frames across all videos and compute one curve for the head.

    Online evaluation touches only the fusion and approximator weights, so it
    succeeds on checkpoints whose branch weights were removed.
    """
    if not records:
        raise ValueError("evaluation set is empty")

    def one(record: VideoRecord):
        return video_frame_scores(record, params, head)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(r) for r in records]
    scores = np.concatenate([s for s, _ in results])
    labels = np.concatenate([l for _, l in results])
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("evaluation set has no positive frames; ground truth missing?")
    auc = None
    if 0 < n_pos < labels.shape[0]:
        auc = roc_auc(scores, labels)
    return CurveReport(
        points=pr_points(scores, labels),
        ap=average_precision(scores, labels),
        auc=auc,
        n_frames=int(labels.shape[0]),
        n_positive=n_pos,
    )
