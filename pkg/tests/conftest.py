import numpy as np
import pytest
import torch

from pgcgan.data import GaitSequence, PathologyLabel

VOCAB = ("a", "b", "c")

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, name: str, passed: bool | None, detail: str = "") -> None:
    """``passed=None`` marks a conditional criterion that could not run."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] criterion {number}: {name}"
    if detail:
        line += f" ({detail})"
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_seq(frames, label=0, seq_id="s", vocab=VOCAB, source_length=None, **meta):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 1:
        frames = frames[:, None]
    return GaitSequence(frames, PathologyLabel(label, vocab), "subj", source_length or len(frames), seq_id, meta)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
