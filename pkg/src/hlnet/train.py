"""Weakly supervised training: top-K bag scoring, losses, Adam, epoch loop.

A video is a bag of snippets carrying only a bag-level label. Each head's bag
probability is the sigmoid of the mean of its K largest raw activations,
K = floor(T'/q) + 1. The loss is binary cross-entropy on both heads plus a
distillation term pulling the online head's per-snippet probabilities toward
the offline head's (teacher treated as a constant).
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Mat, Tape
from .data import VideoRecord
from .model import Activations, HLNetParams, ModelConfig, hl_net_forward

PROB_EPS = 1e-7  # probability clamp; keeps cross-entropy finite

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    """A loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    q: int = 16
    lam: float = 5.0  # distillation weight; "lambda" in config files
    gamma_len: int = 200
    batch_size: int = 128
    epochs: int = 50
    lr: float = 1e-3
    lr_drop_epochs: tuple[int, ...] = (10, 30)
    dropout_rate: float = 0.7
    seed: int = 0
    distill_sum: bool = False  # True: batch-sum distillation instead of mean
    freeze_approx: bool = False

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"q must be >= 1, got {self.q}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.gamma_len < 1:
            raise ValueError(f"gamma_len must be >= 1, got {self.gamma_len}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        object.__setattr__(self, "lr_drop_epochs", tuple(sorted(self.lr_drop_epochs)))


@dataclass(frozen=True)
class LossReport:
    l_bce: float
    l_bce2: float
    l_distill: float
    l_total: float


def total_loss(l_bce: float, l_bce2: float, l_distill: float, lam: float) -> LossReport:
    """Combine components; l_total is the weighted sum by construction."""
    return LossReport(l_bce, l_bce2, l_distill, l_bce + l_bce2 + lam * l_distill)


# ---------------------------------------------------------------------------
# training config file: flat "key = value" lines

_CONFIG_KEY_TO_FIELD = {
    "q": "q",
    "lambda": "lam",
    "gamma_len": "gamma_len",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "lr": "lr",
    "lr_drop_epochs": "lr_drop_epochs",
    "dropout_rate": "dropout_rate",
    "seed": "seed",
    "distill_sum": "distill_sum",
    "freeze_approx": "freeze_approx",
}
_FIELD_TO_CONFIG_KEY = {v: k for k, v in _CONFIG_KEY_TO_FIELD.items()}


def _parse_bool(value: str) -> bool:
    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


def _parse_drops(value: str) -> tuple[int, ...]:
    value = value.strip()
    if not value:
        return ()
    return tuple(int(part.strip()) for part in value.split(","))


_CONVERTERS: dict[str, Callable] = {
    "q": int,
    "lam": float,
    "gamma_len": int,
    "batch_size": int,
    "epochs": int,
    "lr": float,
    "lr_drop_epochs": _parse_drops,
    "dropout_rate": float,
    "seed": int,
    "distill_sum": _parse_bool,
    "freeze_approx": _parse_bool,
}


def parse_train_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse "key = value" lines; unknown keys are rejected with line numbers."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CONFIG_KEY_TO_FIELD:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        field_name = _CONFIG_KEY_TO_FIELD[key]
        try:
            overrides[field_name] = _CONVERTERS[field_name](value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return replace(base or TrainConfig(), **overrides)


def format_train_config(config: TrainConfig) -> str:
    lines = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "lr_drop_epochs":
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{_FIELD_TO_CONFIG_KEY[f.name]} = {value}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# scoring and losses


def k_of(t_prime: int, q: int) -> int:
    """Number of top activations in the bag score: floor(T'/q) + 1, capped at T'."""
    if t_prime < 1 or q < 1:
        raise ValueError(f"need t_prime >= 1 and q >= 1, got {t_prime}, {q}")
    return min(t_prime, t_prime // q + 1)


def bag_score(c: Mat, q: int) -> Mat:
    """Bag probability: sigmoid of the mean of the K largest raw activations."""
    return ad.sigmoid(ad.topk_mean(c, k_of(c.rows, q)))


def bce(y_hat: Mat, y: int) -> Mat:
    """Binary cross-entropy of a 1x1 probability against a {0,1} label."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    if y_hat.shape != (1, 1):
        raise ad.ShapeError(f"bag probability must be 1x1, got {y_hat.shape}")
    p = y_hat if y == 1 else ad.add_const(ad.scale(y_hat, -1.0), 1.0)
    return ad.scale(ad.log(ad.clamp(p, PROB_EPS, 1.0 - PROB_EPS)), -1.0)


def distill_loss(c_p: Mat, c_s: Mat) -> Mat:
    """Per-video distillation: -sum_i s(c_p_i) * log s(c_s_i).

    The teacher probabilities s(c_p) are a constant target; gradient flows
    only into the online activations.
    """
    if c_p.shape != c_s.shape:
        raise ad.ShapeError(f"activation lengths differ: {c_p.shape} vs {c_s.shape}")
    teacher = ad.constant(ad.sigmoid_np(c_p.data))
    student = ad.clamp(ad.sigmoid(c_s), PROB_EPS, 1.0 - PROB_EPS)
    return ad.scale(ad.sum_all(ad.mul(teacher, ad.log(student))), -1.0)


# ---------------------------------------------------------------------------
# length sampling


def sample_indices(t_prime: int, gamma_len: int) -> np.ndarray:
    """Uniform-stride subsample of range(t_prime) down to at most gamma_len.

    Identity below the cap; otherwise index_j = floor(j * T' / gamma_len),
    strictly increasing and order preserving.
    """
    if t_prime < 1 or gamma_len < 1:
        raise ValueError(f"need t_prime >= 1 and gamma_len >= 1, got {t_prime}, {gamma_len}")
    if t_prime <= gamma_len:
        return np.arange(t_prime)
    return (np.arange(gamma_len) * t_prime) // gamma_len


def sample_to_length(x: np.ndarray, gamma_len: int) -> np.ndarray:
    return np.asarray(x)[sample_indices(np.asarray(x).shape[0], gamma_len)]


# ---------------------------------------------------------------------------
# optimizer and schedule


def adam_update(
    data: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> None:
    """One in-place Adam step with bias correction."""
    if grad.shape != data.shape or m.shape != data.shape or v.shape != data.shape:
        raise ad.ShapeError(
            f"adam shapes differ: data {data.shape}, grad {grad.shape}, m {m.shape}, v {v.shape}"
        )
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam state over a parameter set; one exclusive step per batch."""

    def __init__(self, params: HLNetParams):
        self._params = params
        self._m = {name: np.zeros_like(mat.data) for name, mat in params.items()}
        self._v = {name: np.zeros_like(mat.data) for name, mat in params.items()}
        self._t = 0

    def step(self, lr: float) -> None:
        self._t += 1
        for name, mat in self._params.items():
            grad = mat.grad if mat.grad is not None else np.zeros_like(mat.data)
            adam_update(mat.data, grad, self._m[name], self._v[name], self._t, lr)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Learning rate for a 1-based epoch: divided by 10 at each drop epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    drops = sum(1 for d in config.lr_drop_epochs if d <= epoch)
    return config.lr * 10.0 ** (-drops)


# ---------------------------------------------------------------------------
# training loop


def _video_losses(
    record: VideoRecord,
    params: HLNetParams,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[Activations, Mat, Mat, Mat]:
    idx = sample_indices(record.t_prime, config.gamma_len)
    xv = record.features["visual"].values[idx] if "visual" in record.features else None
    xa = record.features["audio"].values[idx] if "audio" in record.features else None
    acts = hl_net_forward(
        xv, xa, params, training=True, rng=rng, detach_approx=config.freeze_approx
    )
    y = record.weak_label
    l_p = bce(bag_score(acts.c_p, config.q), y)
    l_s = bce(bag_score(acts.c_s, config.q), y)
    l_d = distill_loss(acts.c_p, acts.c_s)
    return acts, l_p, l_s, l_d


def fit(
    records: Sequence[VideoRecord],
    config: TrainConfig,
    model_config: ModelConfig,
    on_epoch: Callable[[int, HLNetParams, LossReport], None] | None = None,
) -> tuple[HLNetParams, list[LossReport]]:
    """Train on weakly labeled videos; returns final params and epoch history.

    Deterministic given (records, config, model_config): one seeded generator
    drives shuffling and dropout. Videos longer than gamma_len are subsampled
    by uniform stride. Losses are computed per video and averaged over the
    batch; gradients accumulate across the batch before a single Adam step.
    """
    if not records:
        raise ValueError("training set is empty")
    labels = {r.weak_label for r in records}
    if labels != {0, 1}:
        raise ValueError(f"training set needs both classes, found labels {sorted(labels)}")
    model_config = replace(model_config, dropout_rate=config.dropout_rate)
    params = HLNetParams.initialize(model_config, seed=config.seed)
    optimizer = Adam(params)
    rng = np.random.default_rng(config.seed)
    history: list[LossReport] = []
    n = len(records)
    for epoch in range(1, config.epochs + 1):
        lr = lr_at(epoch, config)
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_n = len(batch)
            params.zero_grads()
            for vid in batch:
                record = records[vid]
                with Tape() as tape:
                    _, l_p, l_s, l_d = _video_losses(record, params, config, rng)
                    distill_weight = config.lam if config.distill_sum else config.lam / batch_n
                    contribution = ad.add(
                        ad.scale(ad.add(l_p, l_s), 1.0 / batch_n),
                        ad.scale(l_d, distill_weight),
                    )
                    tape.backward(contribution)
                parts = (l_p.item(), l_s.item(), l_d.item())
                if not all(np.isfinite(parts)):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, video {record.id!r}: "
                        f"bce={parts[0]!r} bce2={parts[1]!r} distill={parts[2]!r}"
                    )
                sums += parts
            optimizer.step(lr)
        scale_bce = 1.0 / n
        # in batch-sum mode the distillation term is reported per batch-average
        scale_dist = 1.0 / n if not config.distill_sum else config.batch_size / n
        report = total_loss(
            sums[0] * scale_bce, sums[1] * scale_bce, sums[2] * scale_dist, config.lam
        )
        history.append(report)
        if on_epoch is not None:
            on_epoch(epoch, params, report)
    return params, history
