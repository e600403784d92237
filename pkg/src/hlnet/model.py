"""The detection network.

Offline head: audio-visual fusion MLP feeding three parallel relation
branches (holistic, localized, score) with residual shortcuts, whose
concatenated outputs are projected to one raw activation per snippet (c_p).

Online head: a causal approximator (two FC layers, channel sum, 5-tap causal
temporal convolution) producing c_s from the fused features. It never reads
any relation matrix, so it can run with the branch weights absent.

Training-mode forwards run on the autodiff tape. Evaluation-mode forwards are
plain numpy and deliberately process dense layers row by row: the streaming
scorer then reproduces full-sequence online scores bit-exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Mat
from .relation import (
    RelationConfig,
    RelationMatrix,
    holistic_matrix,
    proximity_matrix,
    proximity_weights,
    score_relation_matrix,
)

BRANCH_ORDER = ("holistic", "localized", "score")
MODALITIES = ("both", "visual", "audio")

CHECKPOINT_MAGIC = b"HLNP"
CHECKPOINT_VERSION = 1

_MODALITY_CODE = {"both": 0.0, "visual": 1.0, "audio": 2.0}
_BRANCH_BIT = {"holistic": 1, "localized": 2, "score": 4}
_SIMILARITY_CODE = {"cosine_v1": 0.0, "exp_v3": 1.0}


class CheckpointError(ValueError):
    """Malformed or truncated parameter checkpoint."""


class MissingParameterError(ValueError):
    """A forward pass needs a parameter the checkpoint does not carry."""


@dataclass(frozen=True)
class ModelConfig:
    d_visual: int = 64
    d_audio: int = 32
    modality: str = "both"
    branches: tuple[str, ...] = BRANCH_ORDER
    fusion_hidden: int = 512
    fusion_width: int = 128
    branch_width: int = 32
    approx_hidden: int = 512
    conv_taps: int = 5
    dropout_rate: float = 0.7
    relation: RelationConfig = field(default_factory=RelationConfig)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        unknown = set(self.branches) - set(BRANCH_ORDER)
        if unknown:
            raise ValueError(f"unknown branches: {sorted(unknown)}")
        canon = tuple(b for b in BRANCH_ORDER if b in self.branches)
        if not canon:
            raise ValueError("at least one relation branch must be enabled")
        object.__setattr__(self, "branches", canon)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def input_width(self) -> int:
        if self.modality == "visual":
            return self.d_visual
        if self.modality == "audio":
            return self.d_audio
        return self.d_visual + self.d_audio


@dataclass
class Activations:
    """Raw per-snippet activations of both heads; columns of length T'."""

    c_p: Mat
    c_s: Mat
    branch_outputs: dict[str, Mat]
    adjacency: dict[str, np.ndarray]


def _uniform(rng: np.random.Generator, shape: tuple[int, int], bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class HLNetParams:
    """All learnable weights, keyed by dotted names.

    Weight layout per name (rows x cols):
      fusion.fc1.weight   input_width x fusion_hidden, + bias 1 x fusion_hidden
      fusion.fc2.weight   fusion_hidden x fusion_width, + bias
      {branch}.layer1.weight    fusion_width x branch_width
      {branch}.layer1.shortcut  fusion_width x branch_width
      {branch}.layer2.weight    branch_width x branch_width
      projection.weight   (branch_width * n_branches) x 1, + bias 1 x 1
      approx.fc1.weight   fusion_width x approx_hidden, + bias
      approx.fc2.weight   approx_hidden x fusion_width, + bias
      approx.conv.kernel  conv_taps x 1, + approx.conv.bias 1 x 1
    """

    def __init__(self, config: ModelConfig, mats: dict[str, Mat]):
        self.config = config
        self.mats = mats

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "HLNetParams":
        rng = np.random.default_rng(seed)
        mats: dict[str, Mat] = {}

        def dense(prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
            bound = 1.0 / np.sqrt(fan_in)
            mats[f"{prefix}.weight"] = ad.parameter(_uniform(rng, (fan_in, fan_out), bound))
            if bias:
                mats[f"{prefix}.bias"] = ad.parameter(_uniform(rng, (1, fan_out), bound))

        dense("fusion.fc1", config.input_width, config.fusion_hidden)
        dense("fusion.fc2", config.fusion_hidden, config.fusion_width)
        for branch in config.branches:
            dense(f"{branch}.layer1", config.fusion_width, config.branch_width, bias=False)
            # scale-preserving projection shortcut across the width change
            short = _uniform(
                rng, (config.fusion_width, config.branch_width), np.sqrt(3.0 / config.branch_width)
            )
            mats[f"{branch}.layer1.shortcut"] = ad.parameter(short)
            dense(f"{branch}.layer2", config.branch_width, config.branch_width, bias=False)
        dense("projection", config.branch_width * len(config.branches), 1)
        dense("approx.fc1", config.fusion_width, config.approx_hidden)
        dense("approx.fc2", config.approx_hidden, config.fusion_width)
        bound = 1.0 / np.sqrt(config.conv_taps)
        mats["approx.conv.kernel"] = ad.parameter(_uniform(rng, (config.conv_taps, 1), bound))
        mats["approx.conv.bias"] = ad.parameter(_uniform(rng, (1, 1), bound))
        return cls(config, mats)

    def __getitem__(self, name: str) -> Mat:
        try:
            return self.mats[name]
        except KeyError:
            raise MissingParameterError(f"checkpoint lacks parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.mats

    def names(self) -> list[str]:
        return list(self.mats)

    def items(self) -> Iterable[tuple[str, Mat]]:
        return self.mats.items()

    def count(self) -> int:
        """Total number of learnable scalars."""
        return sum(m.data.size for m in self.mats.values())

    def zero_grads(self) -> None:
        for m in self.mats.values():
            m.zero_grad()

    def online_subset(self) -> "HLNetParams":
        """Only what online inference needs: fusion plus approximator."""
        keep = {
            name: mat
            for name, mat in self.mats.items()
            if name.startswith("fusion.") or name.startswith("approx.")
        }
        return HLNetParams(self.config, keep)

    # -- checkpoint container ------------------------------------------------

    def _meta(self) -> dict[str, float]:
        cfg = self.config
        rel = cfg.relation
        return {
            "meta.approx_hidden": float(cfg.approx_hidden),
            "meta.branch_width": float(cfg.branch_width),
            "meta.branches": float(sum(_BRANCH_BIT[b] for b in cfg.branches)),
            "meta.conv_taps": float(cfg.conv_taps),
            "meta.d_audio": float(cfg.d_audio),
            "meta.d_visual": float(cfg.d_visual),
            "meta.dropout": float(cfg.dropout_rate),
            "meta.fusion_hidden": float(cfg.fusion_hidden),
            "meta.fusion_width": float(cfg.fusion_width),
            "meta.gamma": float(rel.gamma),
            "meta.mask_zeros": float(rel.mask_zeros),
            "meta.modality": _MODALITY_CODE[cfg.modality],
            "meta.normalize_local": float(rel.normalize_local),
            "meta.sigma": float(rel.sigma),
            "meta.similarity": _SIMILARITY_CODE[rel.similarity_kind],
            "meta.tau": float(rel.tau),
        }

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            for name, value in sorted(self._meta().items()):
                _write_entry(fh, name, np.array([[value]]))
            for name, mat in self.mats.items():
                _write_entry(fh, name, mat.data)

    @classmethod
    def load(cls, path) -> "HLNetParams":
        entries = read_checkpoint_entries(path)
        meta = {k: float(v[0, 0]) for k, v in entries.items() if k.startswith("meta.")}
        mats = {
            k: ad.parameter(v) for k, v in entries.items() if not k.startswith("meta.")
        }
        config = _config_from_meta(meta, path)
        return cls(config, mats)


def _write_entry(fh, name: str, data: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<II", data.shape[0], data.shape[1]))
    fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_checkpoint_entries(path) -> dict[str, np.ndarray]:
    """Parse an HLNP container into name -> matrix, validating eagerly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r} at byte 0, expected {CHECKPOINT_MAGIC!r}")
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated header at byte {len(blob)}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version} at byte 4")
    entries: dict[str, np.ndarray] = {}
    pos = 8
    total = len(blob)
    while pos < total:
        if pos + 4 > total:
            raise CheckpointError(f"{path}: truncated entry header at byte {pos}")
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if name_len == 0 or name_len > 4096:
            raise CheckpointError(f"{path}: implausible name length {name_len} at byte {pos - 4}")
        if pos + name_len + 8 > total:
            raise CheckpointError(f"{path}: truncated entry at byte {pos}")
        try:
            name = blob[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"{path}: undecodable parameter name at byte {pos}: {exc}") from None
        pos += name_len
        rows, cols = struct.unpack_from("<II", blob, pos)
        pos += 8
        if rows == 0 or cols == 0:
            raise CheckpointError(f"{path}: empty matrix {name!r} at byte {pos - 8}")
        nbytes = rows * cols * 8
        if pos + nbytes > total:
            raise CheckpointError(
                f"{path}: payload of {name!r} needs {nbytes} bytes at byte {pos}, file has {total - pos}"
            )
        values = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += nbytes
        if not np.all(np.isfinite(values)):
            raise CheckpointError(f"{path}: non-finite values in {name!r}")
        if name in entries:
            raise CheckpointError(f"{path}: duplicate parameter name {name!r}")
        entries[name] = values.astype(np.float64)
    return entries


def _config_from_meta(meta: dict[str, float], path) -> ModelConfig:
    required = HLNetParams(ModelConfig(), {})._meta().keys()
    missing = sorted(set(required) - set(meta))
    if missing:
        raise CheckpointError(f"{path}: missing metadata entries {missing}")
    code_to_modality = {v: k for k, v in _MODALITY_CODE.items()}
    code_to_similarity = {v: k for k, v in _SIMILARITY_CODE.items()}
    try:
        modality = code_to_modality[meta["meta.modality"]]
        similarity = code_to_similarity[meta["meta.similarity"]]
    except KeyError as exc:
        raise CheckpointError(f"{path}: unknown metadata code {exc}") from None
    mask = int(meta["meta.branches"])
    branches = tuple(b for b in BRANCH_ORDER if mask & _BRANCH_BIT[b])
    if not branches:
        raise CheckpointError(f"{path}: metadata enables no branches")
    relation = RelationConfig(
        tau=meta["meta.tau"],
        gamma=meta["meta.gamma"],
        sigma=meta["meta.sigma"],
        similarity_kind=similarity,
        mask_zeros=bool(meta["meta.mask_zeros"]),
        normalize_local=bool(meta["meta.normalize_local"]),
    )
    return ModelConfig(
        d_visual=int(meta["meta.d_visual"]),
        d_audio=int(meta["meta.d_audio"]),
        modality=modality,
        branches=branches,
        fusion_hidden=int(meta["meta.fusion_hidden"]),
        fusion_width=int(meta["meta.fusion_width"]),
        branch_width=int(meta["meta.branch_width"]),
        approx_hidden=int(meta["meta.approx_hidden"]),
        conv_taps=int(meta["meta.conv_taps"]),
        dropout_rate=meta["meta.dropout"],
        relation=relation,
    )


# ---------------------------------------------------------------------------
# input assembly


def _input_parts(config: ModelConfig, xv: np.ndarray | None, xa: np.ndarray | None) -> list[np.ndarray]:
    parts = []
    if config.modality in ("both", "visual"):
        if xv is None:
            raise ValueError(f"modality {config.modality!r} needs visual features")
        xv = np.asarray(xv, dtype=np.float64)
        if xv.ndim != 2 or xv.shape[1] != config.d_visual:
            raise ad.ShapeError(f"visual features must be T' x {config.d_visual}, got {xv.shape}")
        parts.append(xv)
    if config.modality in ("both", "audio"):
        if xa is None:
            raise ValueError(f"modality {config.modality!r} needs audio features")
        xa = np.asarray(xa, dtype=np.float64)
        if xa.ndim != 2 or xa.shape[1] != config.d_audio:
            raise ad.ShapeError(f"audio features must be T' x {config.d_audio}, got {xa.shape}")
        parts.append(xa)
    lengths = {p.shape[0] for p in parts}
    if len(lengths) != 1:
        raise ad.ShapeError(f"modalities disagree on snippet count: {sorted(lengths)}")
    if parts[0].shape[0] < 1:
        raise ad.ShapeError("need at least one snippet")
    return parts


def raw_concat(config: ModelConfig, xv: np.ndarray | None, xa: np.ndarray | None) -> np.ndarray:
    """Pre-fusion concatenation of the enabled modalities (feeds the holistic prior)."""
    return np.concatenate(_input_parts(config, xv, xa), axis=1)


# ---------------------------------------------------------------------------
# training-mode forwards (autodiff tape)


def fuse(
    xv: np.ndarray | None,
    xa: np.ndarray | None,
    params: HLNetParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Mat:
    """Concatenate modalities and run the two-layer fusion MLP."""
    cfg = params.config
    if training and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    parts = _input_parts(cfg, xv, xa)
    x = ad.concat_cols([ad.constant(p) for p in parts])
    rate = cfg.dropout_rate
    h = ad.matmul(x, params["fusion.fc1.weight"])
    h = ad.dropout(ad.relu(ad.add_bias(h, params["fusion.fc1.bias"])), rate, training, rng)
    out = ad.matmul(h, params["fusion.fc2.weight"])
    return ad.dropout(ad.relu(ad.add_bias(out, params["fusion.fc2.bias"])), rate, training, rng)


def branch_forward(
    xf: Mat,
    adjacency: np.ndarray | RelationMatrix,
    branch: str,
    params: HLNetParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Mat:
    """Two aggregation layers with residual shortcuts on one relation matrix."""
    weights = adjacency.weights if isinstance(adjacency, RelationMatrix) else adjacency
    if weights.shape != (xf.rows, xf.rows):
        raise ad.ShapeError(f"adjacency {weights.shape} does not match T'={xf.rows}")
    a = ad.constant(weights)
    rate = params.config.dropout_rate
    h = ad.relu(ad.matmul(ad.matmul(a, xf), params[f"{branch}.layer1.weight"]))
    h = ad.dropout(h, rate, training, rng)
    h = ad.add(h, ad.matmul(xf, params[f"{branch}.layer1.shortcut"]))
    out = ad.relu(ad.matmul(ad.matmul(a, h), params[f"{branch}.layer2.weight"]))
    out = ad.dropout(out, rate, training, rng)
    return ad.add(out, h)


def approximator_forward(
    xf: Mat,
    params: HLNetParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    detached: bool = False,
) -> Mat:
    """Causal online head: two FC layers, channel sum, 5-tap causal conv.

    With ``detached`` the whole head runs outside the gradient flow (inputs
    and weights wrapped as constants), which freezes it under any optimizer.
    """
    cfg = params.config
    rate = cfg.dropout_rate

    def p(name: str) -> Mat:
        mat = params[name]
        return ad.constant(mat.data) if detached else mat

    x = ad.constant(xf.data) if detached else xf
    h = ad.matmul(x, p("approx.fc1.weight"))
    h = ad.dropout(ad.relu(ad.add_bias(h, p("approx.fc1.bias"))), rate, training, rng)
    z = ad.matmul(h, p("approx.fc2.weight"))
    z = ad.dropout(ad.relu(ad.add_bias(z, p("approx.fc2.bias"))), rate, training, rng)
    # the channel sum keeps the classifier's only weights in the conv kernel;
    # fc2 absorbs any per-channel weighting
    u = ad.row_sums(z)
    return ad.causal_conv1d(u, p("approx.conv.kernel"), p("approx.conv.bias"))


def build_adjacency(
    config: ModelConfig,
    x_raw: np.ndarray,
    c_s: np.ndarray | None,
) -> dict[str, np.ndarray]:
    """Relation matrices for the enabled branches, as plain arrays."""
    rel = config.relation
    t_prime = x_raw.shape[0]
    adjacency: dict[str, np.ndarray] = {}
    for branch in config.branches:
        if branch == "holistic":
            adjacency[branch] = holistic_matrix(x_raw, rel).weights
        elif branch == "localized":
            if rel.normalize_local:
                adjacency[branch] = proximity_matrix(t_prime, rel.gamma, rel.sigma).weights
            else:
                adjacency[branch] = proximity_weights(t_prime, rel.gamma, rel.sigma)
        else:
            if c_s is None:
                raise ValueError("score branch needs the online activations")
            adjacency[branch] = score_relation_matrix(c_s).weights
    return adjacency


def hl_net_forward(
    xv: np.ndarray | None,
    xa: np.ndarray | None,
    params: HLNetParams,
    training: bool = False,
    rng: np.random.Generator | None = None,
    detach_approx: bool = False,
) -> Activations:
    """Full forward pass producing both heads' raw activations.

    The holistic prior is built from the raw concatenated features; the score
    relation is rebuilt from this pass's online activations and treated as a
    constant with respect to gradients.
    """
    cfg = params.config
    x_raw = raw_concat(cfg, xv, xa)
    xf = fuse(xv, xa, params, training, rng)
    c_s = approximator_forward(xf, params, training, rng, detached=detach_approx)
    adjacency = build_adjacency(cfg, x_raw, c_s.data[:, 0])
    branch_outputs = {
        b: branch_forward(xf, adjacency[b], b, params, training, rng) for b in cfg.branches
    }
    stacked = ad.concat_cols([branch_outputs[b] for b in cfg.branches])
    c_p = ad.add_bias(ad.matmul(stacked, params["projection.weight"]), params["projection.bias"])
    return Activations(c_p=c_p, c_s=c_s, branch_outputs=branch_outputs, adjacency=adjacency)


# ---------------------------------------------------------------------------
# evaluation-mode forwards (plain numpy, dropout off)
#
# Dense layers run row by row so a streaming scorer performing the same
# per-row products reproduces these numbers bit-exactly; whole-matrix BLAS
# calls round differently and would break the streaming equality.


def _affine_rows(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.stack([row @ w for row in x])
    return out + b


def eval_fuse(xv: np.ndarray | None, xa: np.ndarray | None, params: HLNetParams) -> np.ndarray:
    cfg = params.config
    x = raw_concat(cfg, xv, xa)
    h = np.maximum(_affine_rows(x, params["fusion.fc1.weight"].data, params["fusion.fc1.bias"].data), 0.0)
    return np.maximum(_affine_rows(h, params["fusion.fc2.weight"].data, params["fusion.fc2.bias"].data), 0.0)


def _conv_causal(u: np.ndarray, kernel: np.ndarray, bias: float) -> np.ndarray:
    t = u.shape[0]
    taps = kernel.shape[0]
    y = np.full(t, bias)
    for k in range(taps):
        shift = taps - 1 - k
        if shift == 0:
            y += kernel[k] * u
        elif shift < t:
            y[shift:] += kernel[k] * u[: t - shift]
    return y


def eval_approximator(xf: np.ndarray, params: HLNetParams) -> np.ndarray:
    """Online activations c_s for fused features, shape (T',)."""
    h = np.maximum(_affine_rows(xf, params["approx.fc1.weight"].data, params["approx.fc1.bias"].data), 0.0)
    z = np.maximum(_affine_rows(h, params["approx.fc2.weight"].data, params["approx.fc2.bias"].data), 0.0)
    u = np.array([row.sum() for row in z])
    return _conv_causal(u, params["approx.conv.kernel"].data[:, 0], params["approx.conv.bias"].data[0, 0])


def eval_forward(
    xv: np.ndarray | None,
    xa: np.ndarray | None,
    params: HLNetParams,
    heads: tuple[str, ...] = ("offline", "online"),
) -> dict[str, np.ndarray]:
    """Deterministic raw activations per requested head, each shape (T',)."""
    cfg = params.config
    xf = eval_fuse(xv, xa, params)
    c_s = eval_approximator(xf, params)
    out: dict[str, np.ndarray] = {}
    if "online" in heads:
        out["online"] = c_s
    if "offline" in heads:
        x_raw = raw_concat(cfg, xv, xa)
        adjacency = build_adjacency(cfg, x_raw, c_s)
        columns = []
        for branch in cfg.branches:
            a = adjacency[branch]
            h = np.maximum((a @ xf) @ params[f"{branch}.layer1.weight"].data, 0.0)
            h = h + xf @ params[f"{branch}.layer1.shortcut"].data
            y = np.maximum((a @ h) @ params[f"{branch}.layer2.weight"].data, 0.0)
            columns.append(y + h)
        stacked = np.concatenate(columns, axis=1)
        c_p = stacked @ params["projection.weight"].data + params["projection.bias"].data[0, 0]
        out["offline"] = c_p[:, 0]
    return out


class OnlineScorer:
    """Streams per-snippet online scores in constant memory.

    Uses only the fusion and approximator weights; each pushed snippet yields
    the sigmoid of its raw online activation. Feeding any prefix of a sequence
    produces exactly the prefix of the full-sequence scores.
    """

    def __init__(self, params: HLNetParams):
        cfg = params.config
        self._cfg = cfg
        self._w1 = params["fusion.fc1.weight"].data
        self._b1 = params["fusion.fc1.bias"].data[0]
        self._w2 = params["fusion.fc2.weight"].data
        self._b2 = params["fusion.fc2.bias"].data[0]
        self._wa1 = params["approx.fc1.weight"].data
        self._ba1 = params["approx.fc1.bias"].data[0]
        self._wa2 = params["approx.fc2.weight"].data
        self._ba2 = params["approx.fc2.bias"].data[0]
        self._kernel = params["approx.conv.kernel"].data[:, 0]
        self._bias = params["approx.conv.bias"].data[0, 0]
        self._window = np.zeros(cfg.conv_taps)  # left zero padding

    def push_activation(self, xv_row: np.ndarray | None, xa_row: np.ndarray | None) -> float:
        """Raw online activation for the next snippet."""
        cfg = self._cfg
        parts = []
        if cfg.modality in ("both", "visual"):
            if xv_row is None:
                raise ValueError("visual snippet row required")
            parts.append(np.asarray(xv_row, dtype=np.float64).reshape(-1))
        if cfg.modality in ("both", "audio"):
            if xa_row is None:
                raise ValueError("audio snippet row required")
            parts.append(np.asarray(xa_row, dtype=np.float64).reshape(-1))
        x = np.concatenate(parts)
        if x.shape[0] != cfg.input_width:
            raise ad.ShapeError(f"snippet row has width {x.shape[0]}, expected {cfg.input_width}")
        h = np.maximum(x @ self._w1 + self._b1, 0.0)
        f = np.maximum(h @ self._w2 + self._b2, 0.0)
        h2 = np.maximum(f @ self._wa1 + self._ba1, 0.0)
        z = np.maximum(h2 @ self._wa2 + self._ba2, 0.0)
        self._window[:-1] = self._window[1:]
        self._window[-1] = z.sum()
        y = self._bias
        for k in range(self._kernel.shape[0]):
            y += self._kernel[k] * self._window[k]
        return float(y)

    def push(self, xv_row: np.ndarray | None, xa_row: np.ndarray | None) -> float:
        """Violence score in [0, 1] for the next snippet."""
        c = self.push_activation(xv_row, xa_row)
        return float(ad.sigmoid_np(np.array(c)))


def online_scores(
    xv: np.ndarray | None, xa: np.ndarray | None, params: HLNetParams
) -> np.ndarray:
    """Scores from streaming the whole sequence through an OnlineScorer."""
    cfg = params.config
    t_prime = (xv if cfg.modality != "audio" else xa).shape[0]
    scorer = OnlineScorer(params)
    return np.array(
        [
            scorer.push(
                None if xv is None else xv[t],
                None if xa is None else xa[t],
            )
            for t in range(t_prime)
        ]
    )
