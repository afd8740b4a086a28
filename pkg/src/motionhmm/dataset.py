"""Labeled motion datasets: manifest loading, validation, shuffling and export.

A motion lives in a UTF-8 CSV frame file::

    # sample_rate_hz: 100
    root_pos,root_rot,joint_pos
    3,3,40
    0.0,0.0,0.9,...

The optional ``#`` comment lines carry metadata (only ``sample_rate_hz`` is
read; it defaults to 100 Hz). The first non-comment line lists channel names,
the second their widths, and every following line is one frame.

Per-segment dynamics are stored as channels named ``segment:<name>`` of width
19: mass, CoM position (3), CoM velocity (3), inertia tensor (9, row major)
and angular velocity (3).
"""

from __future__ import annotations

import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import XorShift64Star

DEFAULT_SAMPLE_RATE = 100.0
SEGMENT_PREFIX = "segment:"
SEGMENT_WIDTH = 19
EXPORT_FORMAT = "motionhmm-dataset/1"


class DatasetError(Exception):
    """Base class for dataset problems."""


class LoadError(DatasetError):
    """A file could not be read or written."""


class ValidationError(DatasetError, ValueError):
    """Content is malformed or inconsistent."""


@dataclass(frozen=True)
class SegmentTrack:
    """Per-frame dynamics of one body segment."""

    mass: np.ndarray  # (T,)
    com: np.ndarray  # (T, 3)
    com_vel: np.ndarray  # (T, 3)
    inertia: np.ndarray  # (T, 3, 3)
    ang_vel: np.ndarray  # (T, 3)


@dataclass(frozen=True, eq=False)
class MotionRecord:
    id: str
    sample_rate_hz: float
    channels: tuple[tuple[str, int], ...]
    frames: np.ndarray

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=float)
        if frames.ndim != 2:
            raise ValidationError(f"{self.id}: frames must be a 2-D matrix")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "channels", tuple((str(n), int(w)) for n, w in self.channels))
        names = [n for n, _ in self.channels]
        if len(set(names)) != len(names):
            raise ValidationError(f"{self.id}: duplicate channel names")
        if any(w <= 0 for _, w in self.channels):
            raise ValidationError(f"{self.id}: channel widths must be positive")
        if not self.sample_rate_hz > 0:
            raise ValidationError(f"{self.id}: sample rate must be positive")
        width = sum(w for _, w in self.channels)
        if frames.shape[1] != width:
            raise ValidationError(
                f"{self.id}: frame rows have {frames.shape[1]} entries, channels declare {width}"
            )
        if frames.shape[0] < 2:
            raise ValidationError(f"{self.id}: at least 2 frames required")
        for name, w in self.channels:
            if name.startswith(SEGMENT_PREFIX):
                if w != SEGMENT_WIDTH:
                    raise ValidationError(f"{self.id}: segment channel {name} must have width {SEGMENT_WIDTH}")
                seg = self._segment(name)
                if np.any(seg.mass <= 0):
                    raise ValidationError(f"{self.id}: segment {name} has non-positive mass")
                if not np.allclose(seg.inertia, np.swapaxes(seg.inertia, 1, 2), rtol=0, atol=1e-9):
                    raise ValidationError(f"{self.id}: segment {name} inertia tensor is not symmetric")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def has_channel(self, name: str) -> bool:
        return any(n == name for n, _ in self.channels)

    def channel(self, name: str) -> np.ndarray:
        start = 0
        for n, w in self.channels:
            if n == name:
                return self.frames[:, start:start + w]
            start += w
        raise KeyError(name)

    def _segment(self, name: str) -> SegmentTrack:
        block = self.channel(name)
        return SegmentTrack(
            mass=block[:, 0],
            com=block[:, 1:4],
            com_vel=block[:, 4:7],
            inertia=block[:, 7:16].reshape(-1, 3, 3),
            ang_vel=block[:, 16:19],
        )

    @property
    def segments(self) -> dict[str, SegmentTrack]:
        """Segment tracks keyed by segment name (empty if none are stored)."""
        return {
            n[len(SEGMENT_PREFIX):]: self._segment(n)
            for n, _ in self.channels
            if n.startswith(SEGMENT_PREFIX)
        }

    def __eq__(self, other):
        if not isinstance(other, MotionRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )

    __hash__ = None


@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(sorted(set(self.labels)))
        if labels != tuple(self.labels):
            raise ValidationError("vocabulary must be sorted and free of duplicates")

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "LabelVocabulary":
        return cls(tuple(sorted(set(labels))))

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown label {label!r}") from None

    def encode(self, labels: Iterable[str]) -> np.ndarray:
        bits = np.zeros(len(self.labels), dtype=np.int8)
        for label in labels:
            bits[self.index(label)] = 1
        return bits

    def decode(self, bits: Sequence[int]) -> tuple[str, ...]:
        if len(bits) != len(self.labels):
            raise ValidationError("label vector length does not match vocabulary")
        return tuple(l for l, b in zip(self.labels, bits) if b)


@dataclass(frozen=True, eq=False)
class Dataset:
    vocabulary: LabelVocabulary
    samples: tuple[tuple[MotionRecord, np.ndarray], ...] = field(default_factory=tuple)

    def __post_init__(self):
        samples = tuple((rec, np.asarray(bits, dtype=np.int8)) for rec, bits in self.samples)
        object.__setattr__(self, "samples", samples)
        ids = [rec.id for rec, _ in samples]
        dupes = sorted(i for i, c in Counter(ids).items() if c > 1)
        if dupes:
            raise ValidationError(f"duplicate motion ids: {', '.join(dupes)}")
        if samples:
            schema = _schema(samples[0][0])
            for rec, bits in samples:
                if len(bits) != len(self.vocabulary):
                    raise ValidationError(f"{rec.id}: label vector length does not match vocabulary")
                if not np.all((bits == 0) | (bits == 1)) or bits.sum() == 0:
                    raise ValidationError(f"{rec.id}: label vector must be binary with at least one bit set")
                if _schema(rec) != schema:
                    diff = sorted(set(_schema(rec)) ^ set(schema))
                    raise ValidationError(
                        f"{rec.id}: channel schema differs from {samples[0][0].id}; offending channels: "
                        + ", ".join(f"{n}({w})" for n, w in diff)
                    )

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.vocabulary == other.vocabulary
            and len(self) == len(other)
            and all(
                ra == rb and np.array_equal(ya, yb)
                for (ra, ya), (rb, yb) in zip(self.samples, other.samples)
            )
        )

    __hash__ = None

    @property
    def records(self) -> list[MotionRecord]:
        return [rec for rec, _ in self.samples]

    @property
    def ids(self) -> list[str]:
        return [rec.id for rec, _ in self.samples]

    def label_matrix(self) -> np.ndarray:
        if not self.samples:
            return np.zeros((0, len(self.vocabulary)), dtype=np.int8)
        return np.stack([bits for _, bits in self.samples])

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(self.vocabulary, tuple(self.samples[i] for i in indices))


def _schema(rec: MotionRecord) -> tuple[tuple[str, int], ...]:
    return rec.channels


# ---------------------------------------------------------------------------
# frame files


def _fmt(x: float) -> str:
    return repr(float(x))


def frames_to_csv(record: MotionRecord) -> str:
    """Canonical CSV text of one record (shortest round-tripping decimals)."""
    out = io.StringIO()
    out.write(f"# sample_rate_hz: {_fmt(record.sample_rate_hz)}\n")
    out.write(",".join(n for n, _ in record.channels) + "\n")
    out.write(",".join(str(w) for _, w in record.channels) + "\n")
    for row in record.frames:
        out.write(",".join(_fmt(v) for v in row) + "\n")
    return out.getvalue()


def parse_frames(text: str, motion_id: str, source: str = "<string>") -> MotionRecord:
    meta: dict[str, str] = {}
    lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                meta[key.strip()] = value.strip()
            continue
        lines.append(line)
    if len(lines) < 2:
        raise ValidationError(f"{source}: missing channel header")
    names = [n.strip() for n in lines[0].split(",")]
    try:
        widths = [int(w) for w in lines[1].split(",")]
    except ValueError:
        raise ValidationError(f"{source}: channel widths must be integers") from None
    if len(names) != len(widths):
        raise ValidationError(f"{source}: {len(names)} channel names but {len(widths)} widths")
    try:
        rows = [[float(v) for v in line.split(",")] for line in lines[2:]]
        rate = float(meta.get("sample_rate_hz", DEFAULT_SAMPLE_RATE))
    except ValueError as exc:
        raise ValidationError(f"{source}: {exc}") from None
    width = sum(widths)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ValidationError(f"{source}: frame {i} has {len(row)} entries, expected {width}")
    frames = np.array(rows, dtype=float).reshape(len(rows), width)
    if not np.all(np.isfinite(frames)):
        raise ValidationError(f"{source}: non-finite frame values")
    return MotionRecord(motion_id, rate, tuple(zip(names, widths)), frames)


def read_motion(path: str | Path, motion_id: str | None = None) -> MotionRecord:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot read motion file {path}: {exc.strerror or exc}") from None
    return parse_frames(text, motion_id or path.stem, str(path))


def write_motion(record: MotionRecord, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(frames_to_csv(record), encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot write motion file {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path: str | Path) -> Dataset:
    """Load a JSON manifest of ``{"id", "file", "labels"}`` entries.

    Frame files are resolved relative to the manifest's directory. The label
    vocabulary is the sorted union of all labels; sample order follows the
    manifest.
    """
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(entries, list):
        raise ValidationError(f"{path}: manifest must be a JSON array")
    records, label_sets = [], []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or not {"id", "file", "labels"} <= set(entry):
            raise ValidationError(f"{path}: entry {i} needs id, file and labels")
        labels = entry["labels"]
        if not isinstance(labels, list) or not labels or not all(isinstance(l, str) and l for l in labels):
            raise ValidationError(f"{path}: entry {entry['id']!r} has an empty or invalid label list")
        records.append(read_motion(path.parent / entry["file"], str(entry["id"])))
        label_sets.append(labels)
    vocab = LabelVocabulary.from_labels(l for ls in label_sets for l in ls)
    return Dataset(vocab, tuple((r, vocab.encode(ls)) for r, ls in zip(records, label_sets)))


def write_manifest(dataset: Dataset, directory: str | Path, manifest_name: str = "manifest.json") -> Path:
    """Write one CSV per motion plus a manifest into ``directory``."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise LoadError(f"cannot create {directory}: {exc.strerror or exc}") from None
    entries = []
    for rec, bits in dataset.samples:
        fname = f"{rec.id}.csv"
        write_motion(rec, directory / fname)
        entries.append({"id": rec.id, "file": fname, "labels": list(dataset.vocabulary.decode(bits))})
    out = directory / manifest_name
    try:
        out.write_text(json.dumps(entries, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot write {out}: {exc.strerror or exc}") from None
    return out


# ---------------------------------------------------------------------------
# operations


def shuffle(dataset: Dataset, seed: int) -> Dataset:
    """Permute samples with a seeded xorshift64* Fisher-Yates shuffle."""
    order = XorShift64Star(seed).permutation(len(dataset))
    return dataset.subset(order)


@dataclass(frozen=True)
class DatasetReport:
    n_samples: int
    label_counts: tuple[tuple[str, int], ...]
    combination_counts: tuple[tuple[tuple[str, ...], int], ...]

    def to_text(self) -> str:
        lines = [f"samples: {self.n_samples}", "", "Samples\tLabel"]
        lines += [f"{n}\t{label}" for label, n in self.label_counts]
        lines += ["", "Samples\tLabel Combination"]
        lines += [f"{n}\t{', '.join(combo)}" for combo, n in self.combination_counts]
        return "\n".join(lines) + "\n"


def report(dataset: Dataset) -> DatasetReport:
    """Per-label and per-combination sample counts.

    Labels are ordered by descending count then name; combinations by
    descending count then first appearance.
    """
    Y = dataset.label_matrix()
    counts = Y.sum(axis=0) if len(Y) else np.zeros(len(dataset.vocabulary), dtype=int)
    label_counts = sorted(
        ((l, int(c)) for l, c in zip(dataset.vocabulary.labels, counts) if c > 0),
        key=lambda t: (-t[1], t[0]),
    )
    combos: Counter = Counter()
    first: dict[tuple[str, ...], int] = {}
    for i, (_, bits) in enumerate(dataset.samples):
        combo = dataset.vocabulary.decode(bits)
        combos[combo] += 1
        first.setdefault(combo, i)
    combination_counts = sorted(combos.items(), key=lambda t: (-t[1], first[t[0]]))
    return DatasetReport(len(dataset), tuple(label_counts), tuple(combination_counts))


def export(dataset: Dataset, path: str | Path) -> None:
    """Write the whole dataset as one JSON archive with embedded CSV blocks."""
    doc = {
        "format": EXPORT_FORMAT,
        "vocabulary": list(dataset.vocabulary.labels),
        "samples": [
            {
                "id": rec.id,
                "labels": list(dataset.vocabulary.decode(bits)),
                "csv": frames_to_csv(rec),
            }
            for rec, bits in dataset.samples
        ],
    }
    text = json.dumps(doc, indent=1, sort_keys=True, ensure_ascii=False) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise LoadError(f"cannot write archive {path}: {exc.strerror or exc}") from None


def import_archive(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise LoadError(f"cannot read archive {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != EXPORT_FORMAT:
        raise ValidationError(f"{path}: not a {EXPORT_FORMAT} archive")
    vocab = LabelVocabulary(tuple(doc["vocabulary"]))
    samples = tuple(
        (parse_frames(s["csv"], s["id"], f"{path}:{s['id']}"), vocab.encode(s["labels"]))
        for s in doc["samples"]
    )
    return Dataset(vocab, samples)


def load(path: str | Path) -> Dataset:
    """Load either an exported archive or a manifest, sniffing the JSON shape."""
    path = Path(path)
    try:
        head = path.read_text(encoding="utf-8").lstrip()[:1]
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc.strerror or exc}") from None
    return import_archive(path) if head == "{" else load_manifest(path)
