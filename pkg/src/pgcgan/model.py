"""Conditional generator (noise encoder -> labelled latent -> decoder) and
spectrally normalized conditional discriminator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import LabelError, PathologyLabel

SIGMA_FLOOR = 1e-12


class ContractError(ValueError):
    """Raised when a tensor does not have the shape a network expects."""


@dataclass
class GeneratorConfig:
    T: int
    d: int
    C: int
    latent_dim: int = 32
    encoder_channels: list[int] = field(default_factory=lambda: [64, 64])
    decoder_channels: list[int] = field(default_factory=lambda: [64, 64])
    kernel_size: int = 5
    positional_bias: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if not self.encoder_channels or not self.decoder_channels:
            raise ValueError("channel lists must be non-empty")
        if self.C < 2 or self.T < 1 or self.d < 1:
            raise ValueError("T, d must be >= 1 and C >= 2")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class DiscriminatorConfig:
    T: int
    d: int
    C: int
    conv_channels: list[int] = field(default_factory=lambda: [64, 128, 128])
    fc_widths: list[int] = field(default_factory=lambda: [64, 1])
    kernel_size: int = 5
    stride: int = 2
    power_iterations: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd")
        if not self.conv_channels or not self.fc_widths:
            raise ValueError("channel lists must be non-empty")
        if self.fc_widths[-1] != 1:
            raise ValueError("discriminator head must have width 1")
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class NoiseBatch:
    values: torch.Tensor
    seed: int | None = None


# ---------------------------------------------------------------- spectral norm

def _unit(x: torch.Tensor) -> torch.Tensor:
    return x / x.norm().clamp_min(SIGMA_FLOOR)


def _power_iteration(weight: torch.Tensor, u: torch.Tensor, steps: int) -> tuple[torch.Tensor, torch.Tensor]:
    with torch.no_grad():
        for _ in range(steps):
            v = _unit(weight.t() @ u)
            u = _unit(weight @ v)
    return u, v


def spectral_normalize(weight: torch.Tensor, u: torch.Tensor, steps: int = 1
                       ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Divide a 2-D weight by its top singular value, estimated by power iteration.

    ``u`` is the current left singular vector estimate. The iteration runs
    without gradient; the returned weight stays differentiable in ``weight``
    through sigma = u^T W v. Returns (normalized weight, new u, sigma).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if weight.dim() != 2:
        raise ContractError(f"expected a 2-D weight, got shape {tuple(weight.shape)}")
    u, v = _power_iteration(weight, u, steps)
    sigma = torch.dot(u, weight @ v).clamp_min(SIGMA_FLOOR)
    return weight / sigma, u, sigma


class SNConv1d(nn.Module):
    """Conv1d whose weight is spectrally normalized on every forward pass.

    In training mode the persistent (u, v) estimates advance by
    ``power_iterations`` steps per call; in eval mode they are held fixed,
    which makes sigma = u^T W v an exact linear function of the weight.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, stride: int = 1,
                 power_iterations: int = 1):
        super().__init__()
        self.stride = stride
        self.padding = kernel_size // 2
        self.power_iterations = power_iterations
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.register_buffer("u", torch.empty(out_ch))
        self.register_buffer("v", torch.empty(in_ch * kernel_size))

    def reset_parameters(self, gen: torch.Generator) -> None:
        _fan_in_normal(self.weight, gen)
        nn.init.zeros_(self.bias)
        with torch.no_grad():
            self.u.copy_(_unit(torch.randn(self.u.shape, generator=gen, dtype=self.u.dtype)))
            self.v.copy_(_unit(self.weight.view(self.weight.shape[0], -1).t() @ self.u))

    @property
    def sigma(self) -> float:
        w2d = self.weight.detach().view(self.weight.shape[0], -1)
        return float(torch.dot(self.u, w2d @ self.v))

    def normalized_weight(self) -> torch.Tensor:
        w2d = self.weight.view(self.weight.shape[0], -1)
        if self.training:
            u, v = _power_iteration(w2d, self.u, self.power_iterations)
            with torch.no_grad():
                self.u.copy_(u)
                self.v.copy_(v)
        sigma = torch.dot(self.u, w2d @ self.v).clamp_min(SIGMA_FLOOR)
        return (w2d / sigma).view_as(self.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.conv1d(x, self.normalized_weight(), self.bias, stride=self.stride, padding=self.padding)


def _fan_in_normal(weight: torch.Tensor, gen: torch.Generator) -> None:
    fan_in = weight[0].numel()
    with torch.no_grad():
        weight.copy_(torch.randn(weight.shape, generator=gen, dtype=weight.dtype) * math.sqrt(2.0 / fan_in))


def _init_params(module: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, SNConv1d):
            m.reset_parameters(gen)
        elif isinstance(m, (nn.Conv1d, nn.Linear)):
            _fan_in_normal(m.weight, gen)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


# ---------------------------------------------------------------- conditioning

def one_hot_labels(labels, C: int, dtype=torch.float32) -> torch.Tensor:
    """Accept PathologyLabels or integer indices; returns B x C."""
    idx = []
    for lab in labels:
        i = lab.index if isinstance(lab, PathologyLabel) else int(lab)
        if not 0 <= i < C:
            raise LabelError(f"label index {i} outside [0, {C})")
        idx.append(i)
    return F.one_hot(torch.tensor(idx, dtype=torch.long), C).to(dtype)


def condition_latent(latent: torch.Tensor, labels, C: int) -> torch.Tensor:
    """Append C one-hot channels, constant along time: B x (k + C) x T'."""
    if isinstance(labels, PathologyLabel):
        labels = [labels] * latent.shape[0]
    if isinstance(labels, torch.Tensor) and labels.dim() == 2:
        onehot = labels.to(latent.dtype)
    else:
        onehot = one_hot_labels(labels, C, latent.dtype)
    if onehot.shape[0] != latent.shape[0]:
        raise ContractError(f"{onehot.shape[0]} labels for a batch of {latent.shape[0]}")
    return torch.cat([latent, onehot.unsqueeze(-1).expand(-1, -1, latent.shape[-1])], dim=1)


# ---------------------------------------------------------------- networks

class GeneratorModel(nn.Module):
    """Noise -> encoder latent -> [latent; one-hot] -> decoder -> B x T x d.

    Every convolution is stride 1 with symmetric padding, so time length is
    preserved end to end. With ``positional_bias`` the first decoder block
    adds a learned per-time-step bias, which lets the network place motion
    at absolute positions in the window.
    """

    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        k, pad = config.kernel_size, config.kernel_size // 2
        enc = []
        widths = [config.d] + list(config.encoder_channels) + [config.latent_dim]
        for a, b in zip(widths[:-1], widths[1:]):
            enc += [nn.Conv1d(a, b, k, padding=pad), nn.ReLU()]
        self.encoder = nn.Sequential(*enc)
        dec = []
        widths = [config.latent_dim + config.C] + list(config.decoder_channels)
        for a, b in zip(widths[:-1], widths[1:]):
            dec += [nn.Conv1d(a, b, k, padding=pad), nn.ReLU()]
        dec.append(nn.Conv1d(widths[-1], config.d, k, padding=pad))
        self.decoder = nn.Sequential(*dec)
        if config.positional_bias:
            self.pos_bias = nn.Parameter(torch.zeros(config.decoder_channels[0], config.T))
        else:
            self.pos_bias = None
        _init_params(self, config.seed)

    def encode(self, noise: torch.Tensor | NoiseBatch) -> torch.Tensor:
        x = noise.values if isinstance(noise, NoiseBatch) else noise
        cfg = self.config
        if x.dim() != 3 or x.shape[1:] != (cfg.T, cfg.d):
            raise ContractError(f"noise must be B x {cfg.T} x {cfg.d}, got {tuple(x.shape)}")
        return self.encoder(x.transpose(1, 2))

    def decode(self, conditioned: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if conditioned.dim() != 3 or conditioned.shape[1] != cfg.latent_dim + cfg.C:
            raise ContractError(
                f"conditioned latent must have {cfg.latent_dim + cfg.C} channels, got {tuple(conditioned.shape)}")
        h = conditioned
        layers = list(self.decoder)
        h = layers[0](h)
        if self.pos_bias is not None:
            h = h + self.pos_bias
        for layer in layers[1:]:
            h = layer(h)
        return h.transpose(1, 2)

    def forward(self, noise, labels) -> torch.Tensor:
        return self.decode(condition_latent(self.encode(noise), labels, self.config.C))


class DiscriminatorModel(nn.Module):
    """[X; one-hot] -> SN temporal convs -> mean over time -> FC -> sigmoid."""

    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        convs = []
        widths = [config.d + config.C] + list(config.conv_channels)
        for a, b in zip(widths[:-1], widths[1:]):
            convs.append(SNConv1d(a, b, config.kernel_size, config.stride, config.power_iterations))
        self.convs = nn.ModuleList(convs)
        fcs = []
        widths = [config.conv_channels[-1]] + list(config.fc_widths)
        for a, b in zip(widths[:-1], widths[1:]):
            fcs.append(nn.Linear(a, b))
        self.fcs = nn.ModuleList(fcs)
        _init_params(self, config.seed)

    def logits(self, sequences: torch.Tensor, labels) -> torch.Tensor:
        cfg = self.config
        if sequences.dim() != 3 or sequences.shape[1:] != (cfg.T, cfg.d):
            raise ContractError(f"sequences must be B x {cfg.T} x {cfg.d}, got {tuple(sequences.shape)}")
        h = condition_latent(sequences.transpose(1, 2), labels, cfg.C)
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        h = h.mean(dim=-1)
        for fc in self.fcs[:-1]:
            h = F.leaky_relu(fc(h), 0.2)
        return self.fcs[-1](h).squeeze(-1)

    def forward(self, sequences: torch.Tensor, labels) -> torch.Tensor:
        return torch.sigmoid(self.logits(sequences, labels))


# ---------------------------------------------------------------- functional API

def sample_noise(batch: int, config: GeneratorConfig, seed: int | torch.Generator,
                 dtype=torch.float32) -> NoiseBatch:
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if isinstance(seed, torch.Generator):
        gen, seed_value = seed, None
    else:
        gen, seed_value = torch.Generator().manual_seed(int(seed)), int(seed)
    values = torch.randn((batch, config.T, config.d), generator=gen, dtype=dtype)
    return NoiseBatch(values, seed_value)


def encode(model: GeneratorModel, noise) -> torch.Tensor:
    return model.encode(noise)


def decode(model: GeneratorModel, conditioned: torch.Tensor) -> torch.Tensor:
    return model.decode(conditioned)


def _param_dtype(model: nn.Module) -> torch.dtype:
    return next(model.parameters()).dtype


@torch.no_grad()
def generate(model: GeneratorModel, labels: Sequence, seed: int | torch.Generator) -> torch.Tensor:
    if len(labels) == 0:
        raise ValueError("labels must be non-empty")
    noise = sample_noise(len(labels), model.config, seed, _param_dtype(model))
    return model(noise, labels)


@torch.no_grad()
def discriminate(model: DiscriminatorModel, sequences, labels) -> torch.Tensor:
    was_training = model.training
    model.eval()
    try:
        x = torch.as_tensor(np.asarray(sequences) if not isinstance(sequences, torch.Tensor) else sequences,
                            dtype=_param_dtype(model))
        return model(x, labels)
    finally:
        model.train(was_training)


def build_models(T: int, d: int, C: int, seed: int = 0, generator: dict | None = None,
                 discriminator: dict | None = None) -> tuple[GeneratorModel, DiscriminatorModel]:
    gcfg = GeneratorConfig(T=T, d=d, C=C, seed=seed, **(generator or {}))
    dcfg = DiscriminatorConfig(T=T, d=d, C=C, seed=seed + 1, **(discriminator or {}))
    return GeneratorModel(gcfg), DiscriminatorModel(dcfg)
