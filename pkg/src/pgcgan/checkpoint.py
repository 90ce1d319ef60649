"""Checkpoint directories.

Layout (format version 1)::

    <dir>/config.json            model/training configs, loop state, RNG state, metadata
    <dir>/generator/<name>.npy   one array per generator state_dict entry
    <dir>/discriminator/<name>.npy   (includes spectral-norm u/v buffers)
    <dir>/optim_g/<i>.<key>.npy  Adam moment buffers and step counters
    <dir>/optim_d/<i>.<key>.npy
    <dir>/noise_rng.npy          torch generator state for noise draws
    <dir>/history.csv            step,l_d,l_g_adv,l_rec,d_acc_ema

Arrays are written with ``np.save`` so every value round-trips bit-exactly.
"""
from __future__ import annotations

import csv
import json
import shutil
from pathlib import Path

import numpy as np
import torch

from .model import DiscriminatorConfig, DiscriminatorModel, GeneratorConfig, GeneratorModel
from .training import Trainer, TrainingConfig, TrainingState

FORMAT = "pgcgan-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _save_state_dict(sd: dict, directory: Path) -> list[str]:
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(sd)
    for name in names:
        np.save(directory / f"{name}.npy", sd[name].detach().cpu().numpy())
    return names


def _load_state_dict(directory: Path, names: list[str]) -> dict:
    out = {}
    for name in names:
        f = directory / f"{name}.npy"
        if not f.exists():
            raise CheckpointError(f"missing parameter file {f}")
        out[name] = torch.from_numpy(np.load(f))
    return out


def _save_optimizer(opt: torch.optim.Optimizer, directory: Path) -> dict:
    sd = opt.state_dict()
    directory.mkdir(parents=True, exist_ok=True)
    keys = {}
    for idx, entry in sd["state"].items():
        keys[str(idx)] = sorted(entry)
        for key, value in entry.items():
            np.save(directory / f"{idx}.{key}.npy", torch.as_tensor(value).cpu().numpy())
    return {"param_groups": sd["param_groups"], "keys": keys}


def _load_optimizer(opt: torch.optim.Optimizer, directory: Path, info: dict) -> None:
    state = {}
    for idx, keys in info["keys"].items():
        state[int(idx)] = {k: torch.from_numpy(np.load(directory / f"{idx}.{k}.npy")) for k in keys}
    opt.load_state_dict({"state": state, "param_groups": info["param_groups"]})


def save_checkpoint(path, trainer: Trainer, meta: dict | None = None) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    st = trainer.state
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "dtype": str(trainer.frames.dtype).replace("torch.", ""),
        "generator": trainer.g.config.to_json(),
        "discriminator": trainer.d.config.to_json(),
        "training": trainer.config.to_json(),
        "state": {"step": st.step, "d_acc_ema": st.d_acc_ema, "in_band_steps": st.in_band_steps,
                  "stopped_reason": st.stopped_reason},
        "rng": {"batch": trainer.batch_rng.bit_generator.state},
        "meta": meta if meta is not None else getattr(trainer, "meta", {}),
    }
    doc["generator_params"] = _save_state_dict(trainer.g.state_dict(), tmp / "generator")
    doc["discriminator_params"] = _save_state_dict(trainer.d.state_dict(), tmp / "discriminator")
    doc["optim_g"] = _save_optimizer(trainer.opt_g, tmp / "optim_g")
    doc["optim_d"] = _save_optimizer(trainer.opt_d, tmp / "optim_d")
    np.save(tmp / "noise_rng.npy", trainer.noise_gen.get_state().numpy())
    st.write_history(tmp / "history.csv")
    (tmp / "config.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if path.exists():
        shutil.rmtree(path)
    tmp.rename(path)
    return path


def _read_config(path: Path) -> dict:
    f = path / "config.json"
    try:
        doc = json.loads(f.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint config {f}: {exc}") from None
    if doc.get("format") != FORMAT or doc.get("version") != VERSION:
        raise CheckpointError(f"{f} is not a version-{VERSION} {FORMAT}")
    return doc


def _dtype(doc: dict) -> torch.dtype:
    return getattr(torch, doc.get("dtype", "float32"))


def load_generator(path) -> tuple[GeneratorModel, dict]:
    """Generator only, in eval mode, plus the checkpoint metadata."""
    path = Path(path)
    doc = _read_config(path)
    g = GeneratorModel(GeneratorConfig(**doc["generator"])).to(_dtype(doc))
    try:
        g.load_state_dict(_load_state_dict(path / "generator", doc["generator_params"]))
    except (RuntimeError, ValueError) as exc:
        raise CheckpointError(f"corrupt generator parameters in {path}: {exc}") from None
    g.eval()
    return g, doc.get("meta", {})


def load_trainer(path, frames, labels) -> Trainer:
    """Rebuild a Trainer for exact resumption over the given training data."""
    path = Path(path)
    doc = _read_config(path)
    dtype = _dtype(doc)
    g = GeneratorModel(GeneratorConfig(**doc["generator"])).to(dtype)
    d = DiscriminatorModel(DiscriminatorConfig(**doc["discriminator"])).to(dtype)
    try:
        g.load_state_dict(_load_state_dict(path / "generator", doc["generator_params"]))
        d.load_state_dict(_load_state_dict(path / "discriminator", doc["discriminator_params"]))
    except (RuntimeError, ValueError) as exc:
        raise CheckpointError(f"corrupt parameters in {path}: {exc}") from None
    tcfg = dict(doc["training"])
    trainer = Trainer(g, d, frames, labels, TrainingConfig(**tcfg))
    _load_optimizer(trainer.opt_g, path / "optim_g", doc["optim_g"])
    _load_optimizer(trainer.opt_d, path / "optim_d", doc["optim_d"])
    trainer.batch_rng.bit_generator.state = doc["rng"]["batch"]
    trainer.noise_gen.set_state(torch.from_numpy(np.load(path / "noise_rng.npy")))
    s = doc["state"]
    trainer.state = TrainingState(step=s["step"], d_acc_ema=s["d_acc_ema"], in_band_steps=s["in_band_steps"],
                                  stopped_reason=s["stopped_reason"], history=read_history(path / "history.csv"))
    trainer.meta = doc.get("meta", {})
    return trainer


def read_history(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return [(int(r[0]),) + tuple(float(x) for x in r[1:]) for r in rows[1:]]
