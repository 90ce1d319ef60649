"""Gait sequence ingestion, filtering, windowing, normalization and splitting."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

STD_FLOOR = 1e-8
MANIFEST_VERSION = 1


class DataError(ValueError):
    """Base class for dataset problems."""


class ParseError(DataError):
    pass


class SchemaError(DataError):
    pass


class LengthError(DataError):
    pass


class StratificationError(DataError):
    pass


class LabelError(DataError):
    pass


@dataclass(frozen=True)
class PathologyLabel:
    index: int
    vocabulary: tuple[str, ...]

    def __post_init__(self):
        if len(self.vocabulary) < 2:
            raise LabelError(f"need at least 2 classes, got {len(self.vocabulary)}")
        if not 0 <= self.index < len(self.vocabulary):
            raise LabelError(f"label index {self.index} outside [0, {len(self.vocabulary)})")

    @classmethod
    def from_name(cls, name: str, vocabulary: Sequence[str]) -> "PathologyLabel":
        vocabulary = tuple(vocabulary)
        if name not in vocabulary:
            raise LabelError(f"unknown class {name!r}; vocabulary is {list(vocabulary)}")
        return cls(vocabulary.index(name), vocabulary)

    @property
    def name(self) -> str:
        return self.vocabulary[self.index]

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def one_hot(self) -> np.ndarray:
        out = np.zeros(len(self.vocabulary))
        out[self.index] = 1.0
        return out


@dataclass
class GaitSequence:
    frames: np.ndarray
    label: PathologyLabel
    subject_id: str
    source_length: int
    seq_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise SchemaError(f"frames must be T x d, got shape {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError(f"sequence {self.seq_id!r} contains NaN/Inf")
        if self.source_length < 1:
            raise DataError("source_length must be >= 1")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def d(self) -> int:
        return self.frames.shape[1]


# ---------------------------------------------------------------- loading

def _read_meta(path: Path) -> dict[str, str]:
    meta = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def _read_csv_frames(path: Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}:1: empty file") from None
        expected = ["t"] + [f"f{i}" for i in range(len(header) - 1)]
        if header != expected or len(header) < 2:
            raise ParseError(f"{path}:1: bad header, expected t,f0,...,f{{d-1}}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ParseError(f"{path}: no frames")
    return np.asarray(rows, dtype=np.float64)


def _raw_records(path: Path, fmt: str) -> Iterable[tuple[str, np.ndarray, str, str, dict]]:
    """Yield (seq_id, frames, label_name, subject, extra_meta) per record."""
    if fmt == "csv":
        files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
        for f in files:
            meta_path = f.with_suffix(".meta")
            if not meta_path.exists():
                raise ParseError(f"{f}: missing sidecar metadata {meta_path.name}")
            meta = _read_meta(meta_path)
            if "label" not in meta:
                raise ParseError(f"{meta_path}: missing label=")
            extra = {k: v for k, v in meta.items() if k not in ("label", "subject")}
            yield f.stem, _read_csv_frames(f), meta["label"], meta.get("subject", ""), extra
    elif fmt == "jsonl":
        files = sorted(path.glob("*.jsonl")) if path.is_dir() else [path]
        for f in files:
            with open(f) as fh:
                for lineno, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        frames = np.asarray(obj["frames"], dtype=np.float64)
                        label = str(obj["label"])
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                        raise ParseError(f"{f}:{lineno}: {exc}") from None
                    if frames.ndim != 2:
                        raise ParseError(f"{f}:{lineno}: frames must be a list of equal-length rows")
                    seq_id = str(obj.get("id", f"{f.stem}-{lineno:06d}"))
                    extra = {k: v for k, v in obj.items() if k not in ("frames", "label", "subject", "id")}
                    yield seq_id, frames, label, str(obj.get("subject", "")), extra
    else:
        raise ValueError(f"unknown format {fmt!r}")


def load_dataset(path, format: str = "csv", vocabulary: Sequence[str] | None = None) -> list[GaitSequence]:
    """Load every sequence under ``path``.

    CSV: a directory of ``<id>.csv`` files with ``<id>.meta`` sidecars.
    JSONL: a file (or directory of files), one sequence object per line.
    The class vocabulary is the sorted set of label names unless given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    records = list(_raw_records(path, format))
    if not records:
        return []
    d = records[0][1].shape[1]
    for seq_id, frames, *_ in records:
        if frames.shape[1] != d:
            raise SchemaError(f"record {seq_id!r} has d={frames.shape[1]}, expected d={d}")
    if vocabulary is None:
        vocabulary = sorted({r[2] for r in records})
    vocabulary = tuple(vocabulary)
    out = []
    for seq_id, frames, label, subject, extra in records:
        source_length = int(extra.pop("source_length", frames.shape[0]))
        out.append(GaitSequence(frames, PathologyLabel.from_name(label, vocabulary),
                                subject, source_length, seq_id, extra))
    return out


# ---------------------------------------------------------------- transforms

def filter_min_length(sequences: Sequence[GaitSequence], min_len: int) -> list[GaitSequence]:
    if min_len < 1:
        raise ValueError("min_len must be >= 1")
    return [s for s in sequences if s.source_length >= min_len]


def window_fixed(sequence: GaitSequence, T: int, policy: str = "center_crop") -> GaitSequence:
    n = sequence.T
    if policy == "center_crop":
        if n < T:
            raise LengthError(f"sequence {sequence.seq_id!r} has {n} frames, need >= {T} to crop")
        start = (n - T) // 2
        frames = sequence.frames[start:start + T]
    elif policy == "resample":
        if n < 2:
            raise LengthError(f"sequence {sequence.seq_id!r} has {n} frames, need >= 2 to resample")
        if n == T:
            frames = sequence.frames
        else:
            src = np.linspace(0.0, 1.0, n)
            dst = np.linspace(0.0, 1.0, T)
            frames = np.stack([np.interp(dst, src, col) for col in sequence.frames.T], axis=1)
    else:
        raise ValueError(f"unknown windowing policy {policy!r}")
    return replace(sequence, frames=np.array(frames))


def stack_frames(sequences: Sequence[GaitSequence]) -> np.ndarray:
    return np.stack([s.frames for s in sequences])


def label_indices(sequences: Sequence[GaitSequence]) -> np.ndarray:
    return np.array([s.label.index for s in sequences], dtype=np.int64)


def compute_stats(sequences: Sequence[GaitSequence]) -> tuple[np.ndarray, np.ndarray]:
    flat = np.concatenate([s.frames for s in sequences], axis=0)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return mean, std


def normalize(sequences: Sequence[GaitSequence], manifest: "DatasetManifest") -> list[GaitSequence]:
    mean, std = manifest.mean_array, manifest.std_array
    return [replace(s, frames=(s.frames - mean) / std) for s in sequences]


def denormalize(sequences: Sequence[GaitSequence], manifest: "DatasetManifest") -> list[GaitSequence]:
    mean, std = manifest.mean_array, manifest.std_array
    return [replace(s, frames=s.frames * std + mean) for s in sequences]


def split(sequences: Sequence[GaitSequence], test_fraction: float = 0.2,
          seed: int = 0) -> tuple[list[GaitSequence], list[GaitSequence]]:
    """Stratified, seeded train/test partition preserving input order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(sequences):
        by_class.setdefault(s.label.index, []).append(i)
    test_idx: set[int] = set()
    for cls in sorted(by_class):
        members = by_class[cls]
        if len(members) < 2:
            raise StratificationError(f"class {sequences[members[0]].label.name!r} has fewer than 2 sequences")
        n_test = int(math.floor(test_fraction * len(members) + 0.5))
        n_test = min(max(n_test, 1), len(members) - 1)
        chosen = rng.choice(len(members), size=n_test, replace=False)
        test_idx.update(members[j] for j in chosen)
    train = [s for i, s in enumerate(sequences) if i not in test_idx]
    test = [s for i, s in enumerate(sequences) if i in test_idx]
    return train, test


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class DatasetManifest:
    vocabulary: tuple[str, ...]
    class_counts: dict[str, int]
    d: int
    T: int
    min_length_filter: int
    splits: dict[str, str]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    window_policy: str = "center_crop"
    normalized: bool = True
    data_file: str = "dataset.jsonl"
    synthetic: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if sum(self.class_counts.values()) != len(self.splits):
            raise DataError("class counts do not sum to the number of sequences")
        if any(s <= 0 for s in self.std):
            raise DataError("normalization std must be strictly positive")
        if set(self.splits.values()) - {"train", "test"}:
            raise DataError("split assignments must be 'train' or 'test'")

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.mean, dtype=np.float64)

    @property
    def std_array(self) -> np.ndarray:
        return np.asarray(self.std, dtype=np.float64)

    @property
    def total(self) -> int:
        return len(self.splits)

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "vocabulary": list(self.vocabulary),
            "class_counts": {k: self.class_counts[k] for k in self.vocabulary if k in self.class_counts},
            "d": self.d,
            "T": self.T,
            "min_length_filter": self.min_length_filter,
            "window_policy": self.window_policy,
            "normalized": self.normalized,
            "synthetic": self.synthetic,
            "data_file": self.data_file,
            "normalization": {"mean": list(self.mean), "std": list(self.std)},
            "splits": dict(self.splits),
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetManifest":
        if obj.get("version") != MANIFEST_VERSION:
            raise DataError(f"unsupported manifest version {obj.get('version')!r}")
        return cls(
            vocabulary=tuple(obj["vocabulary"]),
            class_counts={k: int(v) for k, v in obj["class_counts"].items()},
            d=int(obj["d"]),
            T=int(obj["T"]),
            min_length_filter=int(obj["min_length_filter"]),
            splits=dict(obj["splits"]),
            mean=tuple(obj["normalization"]["mean"]),
            std=tuple(obj["normalization"]["std"]),
            window_policy=obj.get("window_policy", "center_crop"),
            normalized=bool(obj.get("normalized", True)),
            data_file=obj.get("data_file", "dataset.jsonl"),
            synthetic=bool(obj.get("synthetic", False)),
            extra=obj.get("extra", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_manifest(train: Sequence[GaitSequence], test: Sequence[GaitSequence], *,
                   min_length_filter: int, window_policy: str = "center_crop",
                   **kwargs) -> DatasetManifest:
    """Manifest for a split dataset; statistics come from ``train`` only."""
    everything = list(train) + list(test)
    if not everything:
        raise DataError("cannot build a manifest for an empty dataset")
    vocabulary = everything[0].label.vocabulary
    counts = {name: 0 for name in vocabulary}
    for s in everything:
        counts[s.label.name] += 1
    splits = {s.seq_id: "train" for s in train}
    splits.update({s.seq_id: "test" for s in test})
    if len(splits) != len(everything):
        raise DataError("sequence ids must be unique")
    mean, std = compute_stats(train)
    return DatasetManifest(
        vocabulary=vocabulary, class_counts=counts, d=everything[0].d, T=everything[0].T,
        min_length_filter=min_length_filter, splits=splits,
        mean=tuple(float(x) for x in mean), std=tuple(float(x) for x in std),
        window_policy=window_policy, **kwargs)


# ---------------------------------------------------------------- writing

def _fmt(x: float, precision: int | None) -> str:
    return repr(float(x)) if precision is None else f"{x:.{precision}g}"


def write_jsonl(sequences: Sequence[GaitSequence], path, precision: int | None = None) -> None:
    """One sequence per line; ``precision=None`` keeps exact float repr."""
    with open(path, "w") as fh:
        for s in sequences:
            rows = ",".join("[" + ",".join(_fmt(v, precision) for v in row) + "]" for row in s.frames)
            head = {"id": s.seq_id, "label": s.label.name, "subject": s.subject_id}
            extra = dict(s.meta)
            extra["source_length"] = s.source_length
            body = json.dumps({**head, **extra}, sort_keys=True)
            fh.write(body[:-1] + ', "frames": [' + rows + "]}\n")


def write_csv_dir(sequences: Sequence[GaitSequence], directory, precision: int | None = 9) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for s in sequences:
        header = ["t"] + [f"f{i}" for i in range(s.d)]
        with open(directory / f"{s.seq_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in enumerate(s.frames):
                w.writerow([t] + [_fmt(v, precision) for v in row])
        meta = {"label": s.label.name, "subject": s.subject_id, "source_length": s.source_length}
        meta.update(s.meta)
        (directory / f"{s.seq_id}.meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))


def save_split_dataset(out_dir, train, test, manifest: DatasetManifest) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_jsonl(list(train) + list(test), out_dir / manifest.data_file)
    path = out_dir / "manifest.json"
    manifest.save(path)
    return path


def load_manifest_dataset(manifest_path, *, normalized: bool = True,
                          stats: DatasetManifest | None = None
                          ) -> tuple[DatasetManifest, list[GaitSequence], list[GaitSequence]]:
    """Load a manifest plus its data as (manifest, train, test).

    Sequences are returned in normalized units when ``normalized`` is set,
    using ``stats`` (defaults to the manifest's own statistics).
    """
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    fmt = manifest.extra.get("format", "jsonl")
    seqs = load_dataset(manifest_path.parent / manifest.data_file, fmt, vocabulary=manifest.vocabulary)
    stats = stats or manifest
    if manifest.normalized and not normalized:
        seqs = denormalize(seqs, manifest)
    elif not manifest.normalized and normalized:
        seqs = normalize(seqs, stats)
    elif manifest.normalized and normalized and stats is not manifest:
        seqs = normalize(denormalize(seqs, manifest), stats)
    train = [s for s in seqs if manifest.splits.get(s.seq_id) == "train"]
    test = [s for s in seqs if manifest.splits.get(s.seq_id) == "test"]
    return manifest, train, test


def ingest(path, format: str = "csv", *, min_len: int = 60, T: int = 60,
           policy: str = "center_crop", test_fraction: float = 0.2, seed: int = 0
           ) -> tuple[DatasetManifest, list[GaitSequence], list[GaitSequence]]:
    """Load, filter, window, split and normalize a raw dataset."""
    seqs = filter_min_length(load_dataset(path, format), min_len)
    if not seqs:
        raise DataError(f"no sequences with at least {min_len} frames under {path}")
    seqs = [window_fixed(s, T, policy) for s in seqs]
    train, test = split(seqs, test_fraction, seed)
    manifest = build_manifest(train, test, min_length_filter=min_len, window_policy=policy,
                              extra={"test_fraction": test_fraction, "seed": seed})
    return manifest, normalize(train, manifest), normalize(test, manifest)
