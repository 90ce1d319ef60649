"""Label-conditioned sampling from a trained generator and export."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .checkpoint import load_generator
from .data import (DataError, DatasetManifest, GaitSequence, LabelError, PathologyLabel,
                   load_dataset, write_csv_dir, write_jsonl)


class SynthesisError(ValueError):
    pass


class ExportError(OSError):
    pass


@dataclass
class SynthesisRequest:
    checkpoint: str
    counts: dict[str, int]
    seed: int = 0
    denormalize: bool = True
    format: str = "jsonl"
    batch_size: int = 256


def balanced_counts(total: int, vocabulary: Sequence[str]) -> dict[str, int]:
    """Split ``total`` as evenly as possible, earlier classes taking the remainder."""
    base, rem = divmod(total, len(vocabulary))
    return {name: base + (i < rem) for i, name in enumerate(vocabulary)}


def synthesize(request: SynthesisRequest) -> list[GaitSequence]:
    """Generate sequences class by class in vocabulary order.

    Class ``c`` draws its noise from an RNG stream seeded by (seed, c), so a
    class's samples do not depend on the counts requested for other classes.
    """
    g, meta = load_generator(request.checkpoint)
    vocabulary = tuple(meta.get("vocabulary") or [f"class{i}" for i in range(g.config.C)])
    for name, n in request.counts.items():
        if name not in vocabulary:
            raise LabelError(f"unknown class {name!r}; vocabulary is {list(vocabulary)}")
        if n < 0:
            raise SynthesisError(f"negative count for {name!r}")
    if sum(request.counts.values()) < 1:
        raise SynthesisError("requested total count must be >= 1")
    mean = std = None
    if request.denormalize:
        norm = meta.get("normalization")
        if not norm:
            raise SynthesisError("checkpoint has no normalization statistics to denormalize with")
        mean, std = np.asarray(norm["mean"]), np.asarray(norm["std"])

    out: list[GaitSequence] = []
    for c, name in enumerate(vocabulary):
        n = request.counts.get(name, 0)
        if n == 0:
            continue
        gen = torch.Generator().manual_seed(int(np.random.SeedSequence([request.seed, c]).generate_state(1)[0]))
        label = PathologyLabel(c, vocabulary)
        made = 0
        while made < n:
            b = min(request.batch_size, n - made)
            with torch.no_grad():
                noise = torch.randn((b, g.config.T, g.config.d), generator=gen,
                                    dtype=next(g.parameters()).dtype)
                batch = g(noise, [c] * b).double().numpy()
            for i in range(b):
                frames = batch[i] * std + mean if request.denormalize else batch[i]
                out.append(GaitSequence(frames, label, subject_id="synthetic", source_length=g.config.T,
                                        seq_id=f"synth-{name}-{made + i:06d}", meta={"synthetic": True}))
            made += b
    return out


def export(sequences: Sequence[GaitSequence], path, format: str = "jsonl", *,
           normalized: bool = False, stats: dict | None = None, extra: dict | None = None
           ) -> DatasetManifest:
    """Write sequences in the ingestion format plus a manifest (all in 'train').

    JSONL goes to ``<path>/dataset.jsonl``, CSV to ``<path>/sequences/``.
    """
    if not sequences:
        raise ExportError("nothing to export")
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        vocabulary = sequences[0].label.vocabulary
        counts = {name: 0 for name in vocabulary}
        for s in sequences:
            counts[s.label.name] += 1
        if stats is None:
            d = sequences[0].d
            stats = {"mean": [0.0] * d, "std": [1.0] * d}
        if format == "jsonl":
            data_file = "dataset.jsonl"
            write_jsonl(sequences, path / data_file)
        elif format == "csv":
            data_file = "sequences"
            write_csv_dir(sequences, path / data_file)
        else:
            raise ExportError(f"unknown export format {format!r}")
        manifest = DatasetManifest(
            vocabulary=vocabulary, class_counts=counts, d=sequences[0].d, T=sequences[0].T,
            min_length_filter=sequences[0].T, splits={s.seq_id: "train" for s in sequences},
            mean=tuple(stats["mean"]), std=tuple(stats["std"]), normalized=normalized,
            data_file=data_file, synthetic=True, extra={"format": format, **(extra or {})})
        manifest.save(path / "manifest.json")
    except OSError as exc:
        raise ExportError(f"export to {path} failed: {exc}") from exc
    return manifest


def load_export(path) -> tuple[DatasetManifest, list[GaitSequence]]:
    path = Path(path)
    manifest = DatasetManifest.load(path / "manifest.json")
    fmt = manifest.extra.get("format", "jsonl")
    seqs = load_dataset(path / manifest.data_file, fmt, vocabulary=manifest.vocabulary)
    return manifest, seqs
