"""Downstream benchmark: GRU / LSTM / 1D-CNN classifiers trained on real,
synthetic, or real+synthetic data and always tested on held-out real data."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import GaitSequence, label_indices, stack_frames

logger = logging.getLogger(__name__)

KINDS = ("gru", "lstm", "cnn")
REGIMES = ("real", "synthetic", "real_plus_synthetic")
REGIME_HEADERS = {"real": "Real", "synthetic": "Synthetic", "real_plus_synthetic": "Real + Synthetic"}


class BenchmarkError(ValueError):
    pass


@dataclass
class ClassifierSpec:
    kind: str
    hidden: int = 128
    channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    layers: int = 2
    kernel_size: int = 5
    stride: int = 2
    dropout: float = 0.3
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"classifier kind must be one of {KINDS}, got {self.kind!r}")


class RecurrentClassifier(nn.Module):
    def __init__(self, d: int, C: int, spec: ClassifierSpec):
        super().__init__()
        rnn = nn.GRU if spec.kind == "gru" else nn.LSTM
        self.rnn = rnn(d, spec.hidden, num_layers=spec.layers, batch_first=True,
                       dropout=spec.dropout if spec.layers > 1 else 0.0)
        self.drop = nn.Dropout(spec.dropout)
        self.head = nn.Linear(spec.hidden, C)

    def forward(self, x):
        out, _ = self.rnn(x)
        return self.head(self.drop(out[:, -1]))


class ConvClassifier(nn.Module):
    def __init__(self, d: int, C: int, spec: ClassifierSpec):
        super().__init__()
        blocks = []
        widths = [d] + list(spec.channels)
        for a, b in zip(widths[:-1], widths[1:]):
            blocks += [nn.Conv1d(a, b, spec.kernel_size, stride=spec.stride, padding=spec.kernel_size // 2),
                       nn.ReLU(), nn.Dropout(spec.dropout)]
        self.body = nn.Sequential(*blocks)
        self.head = nn.Linear(widths[-1], C)

    def forward(self, x):
        return self.head(self.body(x.transpose(1, 2)).mean(dim=-1))


def build_classifier(spec: ClassifierSpec, d: int, C: int) -> nn.Module:
    torch.manual_seed(spec.seed)
    if spec.kind == "cnn":
        return ConvClassifier(d, C, spec)
    return RecurrentClassifier(d, C, spec)


@dataclass
class RegimeResult:
    regime: str
    kind: str
    accuracy: float
    per_class_accuracy: list[float]
    confusion: np.ndarray  # rows = true class, cols = predicted

    def to_json(self) -> dict:
        return {"regime": self.regime, "kind": self.kind, "accuracy": self.accuracy,
                "per_class_accuracy": self.per_class_accuracy, "confusion": self.confusion.tolist()}


def _is_synthetic(s: GaitSequence) -> bool:
    return str(s.meta.get("synthetic", "")).lower() in ("true", "1")


def confusion_matrix(true: np.ndarray, pred: np.ndarray, C: int) -> np.ndarray:
    cm = np.zeros((C, C), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def train_classifier(spec: ClassifierSpec, train_set: Sequence[GaitSequence],
                     test_set: Sequence[GaitSequence], regime: str = "real") -> RegimeResult:
    if not train_set or not test_set:
        raise BenchmarkError("train and test sets must be non-empty")
    if any(_is_synthetic(s) for s in test_set):
        raise BenchmarkError("synthetic sequences must never enter the test set")
    train_ids = {s.seq_id for s in train_set if s.seq_id}
    if any(s.seq_id in train_ids for s in test_set if s.seq_id):
        raise BenchmarkError("train and test sets overlap")
    C = test_set[0].label.num_classes
    present = set(label_indices(train_set).tolist())
    missing = [test_set[0].label.vocabulary[c] for c in range(C) if c not in present]
    if missing:
        warnings.warn(f"classes absent from the training set: {missing}")

    X = torch.as_tensor(stack_frames(train_set), dtype=torch.float32)
    y = torch.as_tensor(label_indices(train_set))
    Xt = torch.as_tensor(stack_frames(test_set), dtype=torch.float32)
    yt = label_indices(test_set)

    net = build_classifier(spec, X.shape[2], C)
    opt = torch.optim.Adam(net.parameters(), lr=spec.learning_rate)
    rng = np.random.default_rng(spec.seed)
    torch.manual_seed(spec.seed)
    net.train()
    for _ in range(spec.epochs):
        order = torch.as_tensor(rng.permutation(len(X)))
        for start in range(0, len(X), spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss = F.cross_entropy(net(X[idx]), y[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    net.eval()
    with torch.no_grad():
        pred = torch.cat([net(Xt[i:i + 512]).argmax(dim=1) for i in range(0, len(Xt), 512)]).numpy()
    cm = confusion_matrix(yt, pred, C)
    totals = cm.sum(axis=1)
    per_class = [float(cm[c, c] / totals[c]) if totals[c] else float("nan") for c in range(C)]
    return RegimeResult(regime, spec.kind, float(np.trace(cm) / cm.sum()), per_class, cm)


@dataclass
class BenchmarkResult:
    results: dict[str, dict[str, RegimeResult]]

    def grid(self) -> dict[str, dict[str, float]]:
        """Accuracies in percent, models x regimes."""
        return {k: {r: 100.0 * res.accuracy for r, res in row.items()} for k, row in self.results.items()}

    def deltas(self) -> dict[str, dict[str, float]]:
        g = self.grid()
        return {k: {r: row[r] - row["real"] for r in row if r != "real"} for k, row in g.items() if "real" in row}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Model"] + [REGIME_HEADERS[r] for r in REGIMES])
            for kind, row in self.grid().items():
                w.writerow([kind.upper()] + [f"{row[r]:.2f}" if r in row else "" for r in REGIMES])

    def write_confusions(self, path) -> None:
        doc = {k: {r: res.to_json() for r, res in row.items()} for k, row in self.results.items()}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_grid_csv(path) -> dict[str, dict[str, float]]:
    inverse = {v: k for k, v in REGIME_HEADERS.items()}
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [inverse[h] for h in rows[0][1:]]
    return {r[0].lower(): {reg: float(v) for reg, v in zip(header, r[1:]) if v} for r in rows[1:]}


def run_benchmark(real_train: Sequence[GaitSequence], real_test: Sequence[GaitSequence],
                  synthetic: Sequence[GaitSequence], specs: Sequence[ClassifierSpec],
                  regimes: Sequence[str] = REGIMES) -> BenchmarkResult:
    """Train every spec under every regime; the augmented regime concatenates
    the real training split with the synthetic set."""
    if not real_train or not real_test or not synthetic:
        raise BenchmarkError("real train, real test and synthetic sets must all be non-empty")
    if real_train[0].frames.shape != synthetic[0].frames.shape:
        raise BenchmarkError("real and synthetic sequences differ in T x d")
    if real_train[0].label.vocabulary != synthetic[0].label.vocabulary:
        raise BenchmarkError("real and synthetic vocabularies differ")
    synthetic = [s if _is_synthetic(s) else replace(s, meta={**s.meta, "synthetic": True}) for s in synthetic]
    sources = {"real": list(real_train), "synthetic": list(synthetic),
               "real_plus_synthetic": list(real_train) + list(synthetic)}
    results: dict[str, dict[str, RegimeResult]] = {}
    for spec in specs:
        for regime in regimes:
            logger.info("training %s on %s", spec.kind, regime)
            res = train_classifier(spec, sources[regime], real_test, regime)
            results.setdefault(spec.kind, {})[regime] = res
    return BenchmarkResult(results)


def compare_baseline(grid: dict[str, dict[str, float]], baseline_accuracy: float) -> dict:
    """Best augmented accuracy against a published real-only baseline (percent)."""
    if not grid or not any(grid.values()):
        raise BenchmarkError("empty accuracy grid")
    augmented = {k: row["real_plus_synthetic"] for k, row in grid.items() if "real_plus_synthetic" in row}
    if not augmented:
        raise BenchmarkError("grid has no real+synthetic results")
    best_kind = max(augmented, key=lambda k: (augmented[k], -KINDS.index(k) if k in KINDS else 0))
    best = augmented[best_kind]
    return {
        "baseline_accuracy": baseline_accuracy,
        "best_augmented_model": best_kind,
        "best_augmented_accuracy": best,
        "delta": round(best - baseline_accuracy, 10),
        "augmentation_beats_real": {k: row["real_plus_synthetic"] > row["real"]
                                    for k, row in grid.items() if "real" in row and "real_plus_synthetic" in row},
    }


def default_specs(seed: int = 0, **overrides) -> list[ClassifierSpec]:
    return [ClassifierSpec(kind=k, seed=seed, **overrides) for k in KINDS]


def spec_to_json(spec: ClassifierSpec) -> dict:
    return asdict(spec)
