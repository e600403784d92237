"""Synthetic weakly labeled corpora, the feature container, and manifests.

A corpus is a set of videos, each with one visual and one audio feature
matrix over aligned snippets, a video-level label, and (for positives)
frame intervals covering the planted events. Event snippets add nonnegative
bumps along a sparse per-corpus signature direction; some events carry the
signature only in the audio block and some only in the visual block, so
modality fusion is informative by construction. Negative videos, like
positive ones, receive off-signature distractor bumps, which rules out a
plain activity-energy shortcut.

Features are stored on disk as "XDVF" files: float32 payload, float64 in
memory. Generated values are quantized to the float32 grid so the round trip
is bit-exact.
"""
from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"XDVF"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<IBIIII")  # version, modality tag, t_prime, dim, fps, snippet_len

MODALITY_TAGS = {"visual": 0, "audio": 1}
_TAG_TO_MODALITY = {v: k for k, v in MODALITY_TAGS.items()}


class FormatError(ValueError):
    """Malformed, truncated, or foreign feature file."""


class ManifestError(ValueError):
    """Malformed manifest or inconsistent referenced files."""


@dataclass
class FeatureSequence:
    """Per-snippet features of one modality with snippet timing metadata."""

    modality: str
    values: np.ndarray  # t_prime x dim, float64, nonnegative
    fps: int = 24
    snippet_len: int = 16

    def __post_init__(self):
        if self.modality not in MODALITY_TAGS:
            raise ValueError(f"modality must be one of {sorted(MODALITY_TAGS)}, got {self.modality!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"values must be a non-empty T' x d matrix, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if np.any(self.values < 0):
            raise ValueError("feature values must be nonnegative")
        if self.fps < 1 or self.snippet_len < 1:
            raise ValueError("fps and snippet_len must be >= 1")

    @property
    def t_prime(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class VideoRecord:
    """A bag: per-modality features, weak label, and ground-truth intervals."""

    id: str
    features: dict[str, FeatureSequence]
    weak_label: int
    gt_intervals: tuple[tuple[int, int], ...] = ()
    split: str = "train"

    def __post_init__(self):
        if self.weak_label not in (0, 1):
            raise ValueError(f"weak_label must be 0 or 1, got {self.weak_label!r}")
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be train or test, got {self.split!r}")
        if not self.features:
            raise ValueError("record needs at least one modality")
        lengths = {fs.t_prime for fs in self.features.values()}
        if len(lengths) != 1:
            raise ValueError(f"{self.id}: modalities disagree on snippet count: {sorted(lengths)}")
        self.gt_intervals = tuple((int(a), int(b)) for a, b in self.gt_intervals)
        prev_end = 0
        for a, b in self.gt_intervals:
            if a < prev_end or b <= a or b > self.total_frames:
                raise ValueError(f"{self.id}: bad interval ({a}, {b}) for {self.total_frames} frames")
            prev_end = b

    @property
    def t_prime(self) -> int:
        return next(iter(self.features.values())).t_prime

    @property
    def snippet_len(self) -> int:
        return next(iter(self.features.values())).snippet_len

    @property
    def total_frames(self) -> int:
        return self.t_prime * self.snippet_len


# ---------------------------------------------------------------------------
# feature container


def write_features(fs: FeatureSequence, path) -> None:
    payload = np.ascontiguousarray(fs.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(
            _HEADER.pack(
                FEATURE_VERSION, MODALITY_TAGS[fs.modality], fs.t_prime, fs.dim, fs.fps, fs.snippet_len
            )
        )
        fh.write(payload)


def read_features(path) -> FeatureSequence:
    """Read an XDVF file; every defect is reported with its byte offset."""
    size = os.stat(path).st_size
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {FEATURE_MAGIC!r}")
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"{path}: truncated header at byte {4 + len(header)}")
        version, tag, t_prime, dim, fps, snippet_len = _HEADER.unpack(header)
        if version != FEATURE_VERSION:
            raise FormatError(f"{path}: unsupported version {version} at byte 4")
        if tag not in _TAG_TO_MODALITY:
            raise FormatError(f"{path}: unknown modality tag {tag} at byte 8")
        if t_prime < 1 or dim < 1:
            raise FormatError(f"{path}: empty shape {t_prime} x {dim} declared at byte 9")
        header_end = 4 + _HEADER.size
        expected = t_prime * dim * 4
        actual = size - header_end
        if actual != expected:  # checked against the file size before any payload allocation
            raise FormatError(
                f"{path}: payload of {expected} bytes declared at byte {header_end}, file carries {actual}"
            )
        payload = fh.read(expected)
    values = np.frombuffer(payload, dtype="<f4").reshape(t_prime, dim).astype(np.float64)
    try:
        return FeatureSequence(
            modality=_TAG_TO_MODALITY[tag],
            values=values,
            fps=fps,
            snippet_len=snippet_len,
        )
    except ValueError as exc:
        raise FormatError(f"{path}: invalid payload: {exc}") from None


def read_feature_header(path) -> tuple[str, int, int]:
    """Cheap header probe: (modality, t_prime, dim) without reading the payload."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r} at byte 0, expected {FEATURE_MAGIC!r}")
        header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {4 + len(header)}")
    version, tag, t_prime, dim, _, _ = _HEADER.unpack(header)
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    if tag not in _TAG_TO_MODALITY:
        raise FormatError(f"{path}: unknown modality tag {tag} at byte 8")
    return _TAG_TO_MODALITY[tag], t_prime, dim


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass(frozen=True)
class CorpusSpec:
    """Shape and difficulty of a generated corpus."""

    n_videos: int = 200
    positive_fraction: float = 0.5
    train_fraction: float = 0.8
    t_prime_range: tuple[int, int] = (40, 200)
    d_visual: int = 64
    d_audio: int = 32
    audio_dominant_fraction: float = 0.3
    visual_dominant_fraction: float = 0.3
    events_range: tuple[int, int] = (1, 3)
    event_coverage: tuple[float, float] = (0.10, 0.25)
    signature_dims: int = 8
    bump_scale: float = 1.1
    noise_scale: float = 0.5
    distractor_scale: float = 1.1
    fps: int = 24
    snippet_len: int = 16

    def __post_init__(self):
        if self.n_videos < 1:
            raise ValueError(f"n_videos must be >= 1, got {self.n_videos}")
        if self.d_visual < 2 or self.d_audio < 2:
            raise ValueError("feature dims must be >= 2")
        for name in ("positive_fraction", "train_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.audio_dominant_fraction + self.visual_dominant_fraction > 1.0 + 1e-12:
            raise ValueError("modality-dominant fractions must sum to at most 1")
        lo, hi = self.t_prime_range
        if lo < 4 or hi < lo:
            raise ValueError(f"t_prime_range must satisfy 4 <= lo <= hi, got {self.t_prime_range}")
        elo, ehi = self.events_range
        n_positive = round(self.n_videos * self.positive_fraction)
        if n_positive > 0 and (elo < 1 or ehi < elo or self.event_coverage[1] <= 0.0):
            raise ValueError("positive videos requested but the event profile is degenerate")


@dataclass(frozen=True)
class CorpusSignature:
    """The planted event directions; used by probe oracles in tests."""

    visual: np.ndarray
    audio: np.ndarray


def corpus_signature(spec: CorpusSpec, seed: int) -> CorpusSignature:
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    sig = {}
    for modality, dim in (("visual", spec.d_visual), ("audio", spec.d_audio)):
        k = min(spec.signature_dims, dim)
        dims = rng.choice(dim, size=k, replace=False)
        weights = 0.5 + rng.random(k)
        vec = np.zeros(dim)
        vec[dims] = weights / np.linalg.norm(weights)
        sig[modality] = vec
    return CorpusSignature(visual=sig["visual"], audio=sig["audio"])


def _place_intervals(
    rng: np.random.Generator, t_prime: int, n_events: int, total_len: int
) -> list[tuple[int, int]]:
    """Non-overlapping sorted snippet intervals with the requested total length."""
    lengths = np.full(n_events, total_len // n_events)
    lengths[: total_len % n_events] += 1
    lengths = lengths[lengths > 0]
    slack = t_prime - int(lengths.sum())
    gaps = rng.multinomial(slack, np.full(len(lengths) + 1, 1.0 / (len(lengths) + 1)))
    intervals = []
    cursor = 0
    for gap, length in zip(gaps[:-1], lengths):
        start = cursor + int(gap)
        intervals.append((start, start + int(length)))
        cursor = start + int(length)
    return intervals


def _min_event_snippets(t_prime: int) -> int:
    # keeps the top-K bag assumption satisfiable at the default divisor q=16
    return t_prime // 16 + 1


def _synthesize_video(
    spec: CorpusSpec,
    signature: CorpusSignature,
    rng: np.random.Generator,
    positive: bool,
) -> tuple[dict[str, np.ndarray], tuple[tuple[int, int], ...]]:
    t_prime = int(rng.integers(spec.t_prime_range[0], spec.t_prime_range[1] + 1))
    blocks = {
        "visual": spec.noise_scale * np.abs(rng.normal(size=(t_prime, spec.d_visual))),
        "audio": spec.noise_scale * np.abs(rng.normal(size=(t_prime, spec.d_audio))),
    }

    # distractor bumps along throwaway directions, planted in every video
    for _ in range(int(rng.integers(1, 4))):
        length = int(rng.integers(2, 6))
        start = int(rng.integers(0, max(1, t_prime - length)))
        modality = "visual" if rng.random() < 0.5 else "audio"
        dim = blocks[modality].shape[1]
        k = min(spec.signature_dims, dim)
        direction = np.zeros(dim)
        dims = rng.choice(dim, size=k, replace=False)
        weights = 0.5 + rng.random(k)
        direction[dims] = weights / np.linalg.norm(weights)
        jitter = 0.8 + 0.4 * rng.random(length)
        blocks[modality][start : start + length] += spec.distractor_scale * np.outer(jitter, direction)

    intervals: list[tuple[int, int]] = []
    if positive:
        n_events = int(rng.integers(spec.events_range[0], spec.events_range[1] + 1))
        coverage = rng.uniform(*spec.event_coverage)
        total_len = max(int(np.ceil(coverage * t_prime)), _min_event_snippets(t_prime), n_events)
        total_len = min(total_len, t_prime)
        intervals = _place_intervals(rng, t_prime, n_events, total_len)
        a_cut = spec.audio_dominant_fraction
        v_cut = a_cut + spec.visual_dominant_fraction
        for start, end in intervals:
            draw = rng.random()
            if draw < a_cut:
                targets = (("audio", 1.0),)
            elif draw < v_cut:
                targets = (("visual", 1.0),)
            else:
                targets = (("visual", 0.7), ("audio", 0.7))
            length = end - start
            for modality, strength in targets:
                jitter = 0.8 + 0.4 * rng.random(length)
                bump = spec.bump_scale * strength * np.outer(jitter, getattr(signature, modality))
                blocks[modality][start:end] += bump

    for modality in blocks:
        # quantize to the float32 grid so container round trips are bit-exact
        blocks[modality] = blocks[modality].astype(np.float32).astype(np.float64)
    frame_intervals = tuple(
        (a * spec.snippet_len, b * spec.snippet_len) for a, b in intervals
    )
    return blocks, frame_intervals


def generate_corpus(spec: CorpusSpec, seed: int, workers: int = 1) -> list[VideoRecord]:
    """Deterministic corpus: a pure function of (spec, seed).

    Each video draws from its own child generator, so the result does not
    depend on generation order or worker count.
    """
    signature = corpus_signature(spec, seed)
    n_train = round(spec.n_videos * spec.train_fraction)
    n_test = spec.n_videos - n_train
    plan: list[tuple[str, int, int]] = []
    for split, count in (("train", n_train), ("test", n_test)):
        n_pos = round(count * spec.positive_fraction)
        plan.extend((split, 1, serial) for serial in range(n_pos))
        plan.extend((split, 0, serial) for serial in range(count - n_pos))
    seeds = np.random.SeedSequence(seed).spawn(1 + len(plan))[1:]

    def make(index: int) -> VideoRecord:
        split, label, serial = plan[index]
        rng = np.random.default_rng(seeds[index])
        blocks, frame_intervals = _synthesize_video(spec, signature, rng, positive=bool(label))
        features = {
            modality: FeatureSequence(
                modality=modality, values=blocks[modality], fps=spec.fps, snippet_len=spec.snippet_len
            )
            for modality in ("visual", "audio")
        }
        return VideoRecord(
            id=f"{split}_{'pos' if label else 'neg'}_{serial:04d}",
            features=features,
            weak_label=label,
            gt_intervals=frame_intervals,
            split=split,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(make, range(len(plan))))
    return [make(index) for index in range(len(plan))]


# ---------------------------------------------------------------------------
# manifests


def save_corpus(records: list[VideoRecord], out_dir) -> Path:
    """Write feature files plus a JSON-lines manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    lines = []
    for record in records:
        entry: dict = {
            "id": record.id,
            "split": record.split,
            "label": record.weak_label,
            "gt_intervals": [list(iv) for iv in record.gt_intervals],
        }
        for modality, fs in record.features.items():
            rel = f"features/{record.id}_{modality}.xdvf"
            write_features(fs, out / rel)
            entry[modality] = rel
        lines.append(json.dumps(entry, sort_keys=True, separators=(",", ":")))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return manifest


def load_manifest(path) -> list[VideoRecord]:
    """Load a manifest and all referenced feature files, validating eagerly.

    Ground-truth intervals on train records are carried through; the trainer
    never reads them (weak supervision).
    """
    path = Path(path)
    base = path.parent
    records: list[VideoRecord] = []
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(entry, dict):
            raise ManifestError(f"{path}:{lineno}: expected an object per line")
        missing = {"id", "split", "label"} - set(entry)
        if missing:
            raise ManifestError(f"{path}:{lineno}: missing keys {sorted(missing)}")
        features: dict[str, FeatureSequence] = {}
        for modality in MODALITY_TAGS:
            rel = entry.get(modality)
            if rel is None:
                continue
            file_path = base / rel
            if not file_path.is_file():
                raise ManifestError(f"{path}:{lineno}: missing feature file {file_path}")
            try:
                fs = read_features(file_path)
            except FormatError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if fs.modality != modality:
                raise ManifestError(
                    f"{path}:{lineno}: {file_path} carries {fs.modality!r} features, expected {modality!r}"
                )
            features[modality] = fs
        if not features:
            raise ManifestError(f"{path}:{lineno}: no feature files listed")
        try:
            records.append(
                VideoRecord(
                    id=str(entry["id"]),
                    features=features,
                    weak_label=int(entry["label"]),
                    gt_intervals=tuple(tuple(iv) for iv in entry.get("gt_intervals", [])),
                    split=str(entry["split"]),
                )
            )
        except ValueError as exc:
            raise ManifestError(f"{path}:{lineno}: {exc}") from None
    return records
