"""Snippet-relation adjacency matrices.

Three kinds of T' x T' aggregation weights over a video's snippets:

* holistic: feature-similarity prior over the raw concatenated audio-visual
  features, thresholded then row-softmax normalized,
* localized: temporal-proximity prior, a pure function of sequence length,
* score: closeness of predicted scores, rebuilt every forward pass and
  treated as a constant with respect to gradients.

All functions here operate on plain float64 arrays: gradients never flow
through adjacency construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import row_softmax_np, sigmoid_np

SIMILARITY_KINDS = ("cosine_v1", "exp_v3")


@dataclass(frozen=True)
class RelationConfig:
    """Knobs for adjacency construction.

    ``mask_zeros`` switches the normalization of thresholded similarities from
    the literal form (zeroed entries still contribute exp(0) = 1 mass) to a
    sparser variant that excludes them from the softmax entirely.
    ``normalize_local`` set to False uses the raw proximity weights, whose
    rows do not sum to one.
    """

    tau: float = 0.7
    gamma: float = 1.0
    sigma: float = 1.0
    similarity_kind: str = "cosine_v1"
    mask_zeros: bool = False
    normalize_local: bool = True

    def __post_init__(self):
        if not 0.0 <= self.tau < 1.0:
            raise ValueError(f"tau must be in [0, 1), got {self.tau}")
        if self.gamma <= 0.0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.similarity_kind not in SIMILARITY_KINDS:
            raise ValueError(
                f"similarity_kind must be one of {SIMILARITY_KINDS}, got {self.similarity_kind!r}"
            )


@dataclass(frozen=True)
class RelationMatrix:
    """Row-normalized aggregation weights: every row sums to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"relation matrix must be square, got shape {w.shape}")

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def similarity_matrix(x: np.ndarray, kind: str = "cosine_v1") -> np.ndarray:
    """Pairwise feature similarity of the rows of a T' x d matrix.

    cosine_v1 gives S_ij = <x_i, x_j> / (|x_i| |x_j|); exp_v3 gives
    S_ij = exp(<x_i, x_j> - max_k <x_i, x_k>), whose row maxima are exactly 1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty T' x d matrix, got shape {x.shape}")
    gram = x @ x.T
    if kind == "cosine_v1":
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise ValueError(f"cosine similarity undefined: row {bad} has zero norm")
        s = gram / np.outer(norms, norms)
        np.clip(s, -1.0, 1.0, out=s)
        np.fill_diagonal(s, 1.0)
        return s
    if kind == "exp_v3":
        return np.exp(gram - gram.max(axis=1, keepdims=True))
    raise ValueError(f"similarity kind must be one of {SIMILARITY_KINDS}, got {kind!r}")


def threshold_filter(s: np.ndarray, tau: float) -> np.ndarray:
    """Zero out weak relations: entries <= tau become 0, the rest pass through."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must be in [0, 1), got {tau}")
    return np.where(s > tau, s, 0.0)


def normalize(a: np.ndarray, mask_zeros: bool = False) -> RelationMatrix:
    """Row-softmax normalization of (possibly thresholded) raw weights.

    Default: softmax over the values as they stand, so zeroed entries each
    contribute exp(0) = 1. With ``mask_zeros`` the zeroed entries are excluded;
    a fully zeroed row falls back to uniform weights.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("relation weights must be finite")
    if not mask_zeros:
        return RelationMatrix(row_softmax_np(a))
    keep = a != 0.0
    shifted = np.where(keep, a, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        e = np.where(keep, np.exp(shifted), 0.0)
    sums = e.sum(axis=1, keepdims=True)
    empty = sums[:, 0] == 0.0
    if np.any(empty):
        e[empty] = 1.0
        sums = e.sum(axis=1, keepdims=True)
    return RelationMatrix(e / sums)


def holistic_matrix(x_raw: np.ndarray, cfg: RelationConfig) -> RelationMatrix:
    """Similarity prior over raw concatenated features: threshold + normalize."""
    s = similarity_matrix(x_raw, cfg.similarity_kind)
    return normalize(threshold_filter(s, cfg.tau), mask_zeros=cfg.mask_zeros)


def proximity_weights(t_prime: int, gamma: float = 1.0, sigma: float = 1.0) -> np.ndarray:
    """Raw proximity prior exp(-|i-j|^gamma / sigma); symmetric, unit diagonal."""
    if t_prime < 1:
        raise ValueError(f"t_prime must be >= 1, got {t_prime}")
    idx = np.arange(t_prime, dtype=np.float64)
    dist = np.abs(idx[:, None] - idx[None, :])
    return np.exp(-(dist**gamma) / sigma)


def proximity_matrix(t_prime: int, gamma: float = 1.0, sigma: float = 1.0) -> RelationMatrix:
    """Row-softmax normalized proximity prior; depends only on (T', gamma, sigma)."""
    return RelationMatrix(row_softmax_np(proximity_weights(t_prime, gamma, sigma)))


def rho(x):
    """Sharpened logistic that boosts closeness above 0.5 and damps it below."""
    x = np.asarray(x, dtype=np.float64)
    return sigmoid_np((x - 0.5) / 0.1)


def score_relation_weights(c_s: np.ndarray) -> np.ndarray:
    """Raw score-closeness weights rho(1 - |s_i - s_j|) from raw activations."""
    c = np.asarray(c_s, dtype=np.float64).reshape(-1)
    s = sigmoid_np(c)
    return rho(1.0 - np.abs(s[:, None] - s[None, :]))


def score_relation_matrix(c_s: np.ndarray) -> RelationMatrix:
    """Row-softmax normalized score-closeness weights.

    Rebuilt from the current forward pass's raw online activations; callers
    treat the result as a constant (no gradient flows into the scores).
    """
    return RelationMatrix(row_softmax_np(score_relation_weights(c_s)))
