"""Class-conditioned noisy sinusoids: a small stand-in for keypoint trajectories."""
from __future__ import annotations

import numpy as np

from .data import GaitSequence, PathologyLabel

TOY_CLASSES = ("normal", "antalgic", "stiff_knee")


def toy_sequences(per_class: int, *, T: int = 60, d: int = 6, C: int = 3, seed: int = 0,
                  noise: float = 0.1, min_length: int | None = None, max_length: int | None = None,
                  prefix: str = "toy") -> list[GaitSequence]:
    """Each class has its own frequency and phase; samples jitter amplitude,
    phase and offset, plus white noise. Lengths are drawn from
    [min_length, max_length] when given, else fixed at T."""
    rng = np.random.default_rng(seed)
    vocabulary = TOY_CLASSES[:C] if C <= len(TOY_CLASSES) else tuple(f"class{i}" for i in range(C))
    out = []
    for c in range(C):
        freq = 1.0 + c
        phase = 0.9 * c
        label = PathologyLabel(c, tuple(vocabulary))
        for i in range(per_class):
            n = T if min_length is None else int(rng.integers(min_length, (max_length or min_length) + 1))
            t = np.arange(n)[:, None]
            dims = np.arange(d)[None, :]
            amp = (1.0 + 0.15 * rng.standard_normal()) * (1.0 + 0.1 * dims)
            ph = phase + 0.25 * rng.standard_normal() + dims * np.pi / d
            offset = 0.1 * rng.standard_normal(d)[None, :]
            frames = amp * np.sin(2 * np.pi * freq * t / T + ph) + offset + noise * rng.standard_normal((n, d))
            out.append(GaitSequence(frames, label, subject_id=f"s{i % 10:02d}", source_length=n,
                                    seq_id=f"{prefix}-{c}-{i:05d}"))
    return out
