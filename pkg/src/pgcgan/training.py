"""Adversarial + reconstruction objectives and the alternating training loop."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .model import DiscriminatorModel, GeneratorModel, sample_noise

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-7
HISTORY_COLUMNS = ("step", "l_d", "l_g_adv", "l_rec", "d_acc_ema")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite or exceeded the divergence threshold."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass
class TrainingConfig:
    lambda_adv: float = 1.0
    lambda_rec: float = 10.0
    learning_rate_g: float = 2e-4
    learning_rate_d: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 64
    max_steps: int = 2000
    d_steps_per_g_step: int = 1
    seed: int = 0
    checkpoint_every: int = 500
    ema_decay: float = 0.99
    stop_band: tuple[float, float] = (0.45, 0.55)
    stop_patience: int = 500
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if self.lambda_adv < 0 or self.lambda_rec < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_adv + self.lambda_rec <= 0:
            raise ValueError("lambda_adv + lambda_rec must be positive")
        if self.learning_rate_g <= 0 or self.learning_rate_d <= 0:
            raise ValueError("learning rates must be positive")
        for b in (self.adam_beta1, self.adam_beta2):
            if not 0.0 < b < 1.0:
                raise ValueError("Adam betas must lie in (0, 1)")
        if self.batch_size < 1 or self.max_steps < 0 or self.d_steps_per_g_step < 1:
            raise ValueError("batch_size, d_steps_per_g_step must be >= 1 and max_steps >= 0")
        self.stop_band = tuple(self.stop_band)

    def to_json(self) -> dict:
        out = asdict(self)
        out["stop_band"] = list(self.stop_band)
        return out


@dataclass
class TrainingState:
    step: int = 0
    d_acc_ema: float | None = None
    in_band_steps: int = 0
    history: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    stopped_reason: str = ""

    def record(self, l_d: float, l_g_adv: float, l_rec: float) -> None:
        self.history.append((self.step, l_d, l_g_adv, l_rec, float(self.d_acc_ema)))

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_COLUMNS)
            for row in self.history:
                w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


# ---------------------------------------------------------------- losses

def _scores(x) -> torch.Tensor:
    t = x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))
    return t.clamp(SCORE_EPS, 1.0 - SCORE_EPS)


def discriminator_loss(real_scores, fake_scores) -> torch.Tensor:
    """Negated minimax value: -mean log D(real) - mean log(1 - D(fake))."""
    real, fake = _scores(real_scores), _scores(fake_scores)
    return -torch.log(real).mean() - torch.log1p(-fake).mean()


def generator_adversarial_loss(fake_scores) -> torch.Tensor:
    """Non-saturating generator term: -mean log D(fake)."""
    return -torch.log(_scores(fake_scores)).mean()


def reconstruction_loss(real_batch, fake_batch) -> torch.Tensor:
    real = torch.as_tensor(real_batch)
    fake = torch.as_tensor(fake_batch)
    if real.shape != fake.shape:
        raise ValueError(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    return ((real - fake) ** 2).mean()


def generator_loss(adv, rec, config: TrainingConfig):
    return config.lambda_adv * adv + config.lambda_rec * rec


# ---------------------------------------------------------------- steps

def make_optimizers(g_model: GeneratorModel, d_model: DiscriminatorModel, config: TrainingConfig):
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(g_model.parameters(), lr=config.learning_rate_g, betas=betas)
    opt_d = torch.optim.Adam(d_model.parameters(), lr=config.learning_rate_d, betas=betas)
    return opt_g, opt_d


def _check_finite(name: str, value: float, threshold: float, snapshot: dict) -> None:
    if not math.isfinite(value) or value > threshold:
        raise TrainingDiverged(f"{name}={value} is non-finite or above {threshold}", snapshot)


def train_discriminator_step(d_model: DiscriminatorModel, g_model: GeneratorModel,
                             real_batch: torch.Tensor, labels: torch.Tensor,
                             optimizer: torch.optim.Optimizer, noise,
                             threshold: float = 1e6) -> tuple[float, float]:
    """One Adam step on the discriminator; returns (L_D, batch accuracy).

    Real and generated sequences go through one forward pass so the
    spectral-norm estimates advance once per step.
    """
    with torch.no_grad():
        fake = g_model(noise, labels)
    d_model.train()
    scores = d_model(torch.cat([real_batch, fake]), torch.cat([labels, labels]))
    real_scores, fake_scores = scores[: len(real_batch)], scores[len(real_batch):]
    loss = discriminator_loss(real_scores, fake_scores)
    value = loss.item()
    _check_finite("L_D", value, threshold, {"real_scores": real_scores.tolist()})
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    acc = float(torch.cat([real_scores > 0.5, fake_scores < 0.5]).float().mean())
    return value, acc


def generator_objective(g_model: GeneratorModel, d_model: DiscriminatorModel,
                        real_batch: torch.Tensor, labels: torch.Tensor, noise,
                        config: TrainingConfig) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(L_gen, L_adv, L_rec) with one generated sample per real, paired by index."""
    fake = g_model(noise, labels)
    adv = generator_adversarial_loss(d_model(fake, labels))
    rec = reconstruction_loss(real_batch, fake)
    return generator_loss(adv, rec, config), adv, rec


def train_generator_step(g_model: GeneratorModel, d_model: DiscriminatorModel,
                         real_batch: torch.Tensor, labels: torch.Tensor, noise,
                         optimizer: torch.optim.Optimizer, config: TrainingConfig
                         ) -> tuple[float, float]:
    """One Adam step on the generator; the discriminator is held fixed."""
    d_model.eval()
    d_model.requires_grad_(False)
    try:
        total, adv, rec = generator_objective(g_model, d_model, real_batch, labels, noise, config)
        snapshot = {"l_adv": adv.item(), "l_rec": rec.item()}
        _check_finite("L_gen", total.item(), config.divergence_threshold, snapshot)
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
    finally:
        d_model.requires_grad_(True)
        d_model.train()
    return adv.item(), rec.item()


# ---------------------------------------------------------------- loop

class Trainer:
    """Owns both models, their optimizers and every RNG the loop draws from."""

    def __init__(self, g_model: GeneratorModel, d_model: DiscriminatorModel,
                 frames: np.ndarray, labels: np.ndarray, config: TrainingConfig):
        self.g = g_model
        self.d = d_model
        self.config = config
        dtype = next(g_model.parameters()).dtype
        self.frames = torch.as_tensor(np.asarray(frames), dtype=dtype)
        self.labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
        if len(self.frames) == 0:
            raise ValueError("empty training set")
        self.opt_g, self.opt_d = make_optimizers(g_model, d_model, config)
        self.state = TrainingState()
        self.meta: dict = {}
        self.batch_rng = np.random.default_rng(config.seed)
        self.noise_gen = torch.Generator().manual_seed(config.seed + 7919)

    def _batch(self) -> tuple[torch.Tensor, torch.Tensor]:
        n = len(self.frames)
        idx = self.batch_rng.choice(n, size=self.config.batch_size, replace=n < self.config.batch_size)
        idx = torch.as_tensor(idx)
        return self.frames[idx], self.labels[idx]

    def _noise(self, batch: int):
        return sample_noise(batch, self.g.config, self.noise_gen, self.frames.dtype)

    def step(self) -> tuple[float, float, float]:
        cfg = self.config
        l_d = acc = 0.0
        for _ in range(cfg.d_steps_per_g_step):
            real, labels = self._batch()
            l_d, acc = train_discriminator_step(self.d, self.g, real, labels, self.opt_d,
                                                self._noise(len(real)), cfg.divergence_threshold)
        real, labels = self._batch()
        l_adv, l_rec = train_generator_step(self.g, self.d, real, labels, self._noise(len(real)),
                                            self.opt_g, cfg)
        st = self.state
        st.step += 1
        st.d_acc_ema = acc if st.d_acc_ema is None else cfg.ema_decay * st.d_acc_ema + (1 - cfg.ema_decay) * acc
        lo, hi = cfg.stop_band
        st.in_band_steps = st.in_band_steps + 1 if lo <= st.d_acc_ema <= hi else 0
        st.record(l_d, l_adv, l_rec)
        return l_d, l_adv, l_rec

    def should_stop(self) -> bool:
        st = self.state
        if st.step >= self.config.max_steps:
            st.stopped_reason = "max_steps"
            return True
        if st.in_band_steps >= self.config.stop_patience:
            st.stopped_reason = "discriminator_at_chance"
            return True
        return False

    def run(self, checkpoint_dir=None, callback: Callable[["Trainer"], None] | None = None) -> TrainingState:
        from .checkpoint import save_checkpoint

        last_good = None
        every = self.config.checkpoint_every
        while not self.should_stop():
            try:
                self.step()
            except TrainingDiverged as exc:
                exc.snapshot.update(step=self.state.step, last_checkpoint=str(last_good) if last_good else None)
                logger.error("training diverged at step %d: %s", self.state.step, exc)
                raise
            if checkpoint_dir is not None and every > 0 and self.state.step % every == 0:
                last_good = save_checkpoint(Path(checkpoint_dir) / f"step_{self.state.step:06d}", self)
            if callback is not None:
                callback(self)
        return self.state


def train(g_model: GeneratorModel, d_model: DiscriminatorModel, frames, labels,
          config: TrainingConfig, checkpoint_dir=None) -> Trainer:
    """Run the alternating loop to completion and return the trainer."""
    torch.manual_seed(config.seed)
    trainer = Trainer(g_model, d_model, frames, labels, config)
    trainer.run(checkpoint_dir)
    return trainer
