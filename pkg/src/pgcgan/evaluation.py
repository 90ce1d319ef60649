"""Structural realism metrics for synthetic gait.

R^2 of class mean trajectories, kinematic envelopes, PCA / t-SNE embeddings
of real and synthetic sequences and a leave-one-out 1-NN overlap score.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import GaitSequence, PathologyLabel
from .tsne import tsne_embed

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


class MetricError(ValueError):
    pass


# ---------------------------------------------------------------- R^2

def r_squared(reference, candidate) -> float:
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape or ref.ndim != 1:
        raise MetricError("curves must be 1-D and equally long")
    if ref.size < 2:
        raise MetricError("need at least 2 points")
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricError("R^2 undefined for a constant reference curve")
    ss_res = float(np.sum((ref - cand) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass
class EnvelopeSummary:
    label: str
    mean: np.ndarray  # T x d
    std: np.ndarray   # T x d, population std
    count: int

    def to_json(self) -> dict:
        return {"label": self.label, "count": self.count,
                "mean": self.mean.T.tolist(), "std": self.std.T.tolist()}


def mean_envelope(sequences: Sequence[GaitSequence], label: PathologyLabel | str) -> EnvelopeSummary:
    name = label.name if isinstance(label, PathologyLabel) else label
    frames = [s.frames for s in sequences if s.label.name == name]
    if not frames:
        raise MetricError(f"no sequences of class {name!r}")
    stack = np.stack(frames)
    return EnvelopeSummary(name, stack.mean(axis=0), stack.std(axis=0), len(frames))


def class_r2(real: Sequence[GaitSequence], synthetic: Sequence[GaitSequence]
             ) -> tuple[dict[str, float], float]:
    """R^2 of synthetic against real mean curves, averaged over dimensions
    then over classes. Classes or dimensions that cannot be scored are
    skipped with a warning."""
    if not real:
        raise MetricError("empty real dataset")
    vocabulary = real[0].label.vocabulary
    real_names = {s.label.name for s in real}
    synth_names = {s.label.name for s in synthetic}
    per_class: dict[str, float] = {}
    for name in vocabulary:
        if name not in real_names or name not in synth_names:
            warnings.warn(f"class {name!r} missing from real or synthetic set; excluded from R^2")
            continue
        ref = mean_envelope(real, name).mean
        cand = mean_envelope(synthetic, name).mean
        if ref.shape != cand.shape:
            raise MetricError(f"shape mismatch for class {name!r}: {ref.shape} vs {cand.shape}")
        values = []
        for j in range(ref.shape[1]):
            if np.ptp(ref[:, j]) == 0.0:
                warnings.warn(f"class {name!r} dimension {j} has a constant real mean curve; excluded")
                continue
            values.append(r_squared(ref[:, j], cand[:, j]))
        if values:
            per_class[name] = float(np.mean(values))
    if not per_class:
        raise MetricError("no class could be scored")
    return per_class, float(np.mean(list(per_class.values())))


# ---------------------------------------------------------------- embeddings

@dataclass
class PCAResult:
    projections: np.ndarray
    explained_variance_ratio: np.ndarray  # all min(M, F) components
    components: np.ndarray                # k x F
    mean: np.ndarray
    eigenvalues: np.ndarray


def pca_project(features, k: int) -> PCAResult:
    X = np.asarray(features, dtype=np.float64)
    m = X.shape[0]
    if not 1 <= k < m:
        raise MetricError(f"need M > k >= 1, got M={m}, k={k}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    eig = s ** 2 / (m - 1)
    total = eig.sum()
    ratio = eig / total if total > 0 else np.zeros_like(eig)
    k_eff = min(k, vt.shape[0])
    comps = vt[:k_eff]
    proj = Xc @ comps.T
    if k_eff < k:
        proj = np.pad(proj, ((0, 0), (0, k - k_eff)))
    return PCAResult(proj, ratio, comps, mean, eig)


def flatten_features(sequences: Sequence[GaitSequence]) -> np.ndarray:
    return np.stack([s.frames.reshape(-1) for s in sequences])


def nn_overlap_score(real_features, synthetic_features) -> float:
    """Leave-one-out 1-NN accuracy of telling real from synthetic.

    0.5 means the two sets are mixed; 1.0 means fully separable. Points are
    ordered real first; distance ties go to the lower index.
    """
    R = np.asarray(real_features, dtype=np.float64)
    S = np.asarray(synthetic_features, dtype=np.float64)
    if len(R) == 0 or len(S) == 0:
        raise MetricError("both sets must be non-empty")
    if R.shape[1] != S.shape[1]:
        raise MetricError("feature dimensions differ")
    X = np.concatenate([R, S])
    is_synth = np.r_[np.zeros(len(R), bool), np.ones(len(S), bool)]
    block = max(1, int(2e7 // (X.shape[0] * max(X.shape[1], 1))))
    correct = 0
    for start in range(0, len(X), block):
        rows = X[start:start + block]
        # direct differences, so exact duplicates get distance exactly 0
        dist = np.sum((rows[:, None, :] - X[None, :, :]) ** 2, axis=-1)
        r = np.arange(len(rows))
        dist[r, start + r] = np.inf
        nn = np.argmin(dist, axis=1)
        correct += int(np.sum(is_synth[nn] == is_synth[start:start + len(rows)]))
    return correct / len(X)


# ---------------------------------------------------------------- report

@dataclass
class EvaluationConfig:
    pca_components: int = 50
    tsne_perplexity: float = 30.0
    tsne_iters: int = 1000
    tsne_max_points: int = 1000
    seed: int = 0
    plots: bool = True


@dataclass
class StructuralReport:
    per_class_r2: dict[str, float]
    mean_r2: float
    explained_variance_ratio: list[float]
    nn_overlap: float
    pca_coords: np.ndarray
    tsne_coords: np.ndarray
    tags: list[str]
    labels: list[str]
    envelopes: dict[str, dict[str, EnvelopeSummary]] = field(default_factory=dict)
    tsne_kl: list[tuple[int, float]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "per_class_r2": self.per_class_r2,
            "mean_r2": self.mean_r2,
            "explained_variance_ratio": [float(x) for x in self.explained_variance_ratio],
            "nn_overlap": self.nn_overlap,
            "embedding": {
                "tags": self.tags,
                "labels": self.labels,
                "pca": np.round(self.pca_coords, 10).tolist(),
                "tsne": np.round(self.tsne_coords, 10).tolist(),
                "tsne_kl": [[i, kl] for i, kl in self.tsne_kl],
            },
            "envelopes": {name: {side: env.to_json() for side, env in sides.items()}
                          for name, sides in self.envelopes.items()},
        }


def _subsample(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return np.arange(n) if n <= k else np.sort(rng.choice(n, size=k, replace=False))


def build_report(real: Sequence[GaitSequence], synthetic: Sequence[GaitSequence],
                 config: EvaluationConfig | None = None) -> StructuralReport:
    config = config or EvaluationConfig()
    if not real or not synthetic:
        raise MetricError("both real and synthetic sets must be non-empty")
    if real[0].frames.shape != synthetic[0].frames.shape:
        raise MetricError("real and synthetic sequences differ in T x d")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        per_class, mean_r2 = class_r2(real, synthetic)
    for w in caught:
        logger.warning("%s", w.message)

    envelopes = {}
    for name in real[0].label.vocabulary:
        sides = {}
        for side, seqs in (("real", real), ("synthetic", synthetic)):
            if any(s.label.name == name for s in seqs):
                sides[side] = mean_envelope(seqs, name)
        envelopes[name] = sides

    rng = np.random.default_rng(config.seed)
    half = config.tsne_max_points // 2
    ri = _subsample(len(real), half, rng)
    si = _subsample(len(synthetic), config.tsne_max_points - len(ri), rng)
    R = flatten_features([real[i] for i in ri])
    S = flatten_features([synthetic[i] for i in si])
    both = np.concatenate([R, S])
    k = min(config.pca_components, both.shape[0] - 1, both.shape[1])
    pca = pca_project(both, k)
    feats = pca.projections
    overlap = nn_overlap_score(feats[: len(R)], feats[len(R):])
    perplexity = min(config.tsne_perplexity, (len(both) - 1) / 3.0 - 1e-9)
    tsne = tsne_embed(feats, perplexity=perplexity, seed=config.seed, iters=config.tsne_iters)
    return StructuralReport(
        per_class_r2=per_class, mean_r2=mean_r2,
        explained_variance_ratio=list(pca.explained_variance_ratio[:k]),
        nn_overlap=overlap, pca_coords=feats[:, :2], tsne_coords=tsne.embedding,
        tags=["real"] * len(R) + ["synthetic"] * len(S),
        labels=[real[i].label.name for i in ri] + [synthetic[i].label.name for i in si],
        envelopes=envelopes, tsne_kl=tsne.kl_history)


def write_report(report: StructuralReport, out_dir, plots: bool = True) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    path.write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    if plots:
        from . import plots as _plots
        _plots.envelope_plots(report, out_dir)
        _plots.embedding_plot(report.pca_coords, report.tags, out_dir / "pca.png", "PCA")
        _plots.embedding_plot(report.tsne_coords, report.tags, out_dir / "tsne.png", "t-SNE")
    return path
