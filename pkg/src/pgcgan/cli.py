"""Command-line entry point: ingest -> train -> synth -> eval -> benchmark -> report.

Exit codes: 0 success, 1 validation error, 2 runtime or divergence error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import ConfigError, RunConfig, load_config
from .data import DataError, label_indices, load_manifest_dataset, save_split_dataset, ingest, stack_frames
from .training import TrainingConfig, TrainingDiverged

logger = logging.getLogger("pgcgan")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _print_histogram(counts: dict[str, int]) -> None:
    width = max(len(k) for k in counts)
    top = max(counts.values()) or 1
    for name, n in counts.items():
        print(f"  {name:<{width}} {n:>7d} {'#' * max(1, round(40 * n / top)) if n else ''}")


def cmd_ingest(args, cfg: RunConfig) -> int:
    d = cfg.data
    manifest, train, test = ingest(args.data_dir, d.format, min_len=d.min_len, T=d.T, policy=d.policy,
                                   test_fraction=d.test_fraction, seed=cfg.seed_for("data"))
    path = save_split_dataset(args.out, train, test, manifest)
    print(f"wrote {path} ({manifest.total} sequences, T={manifest.T}, d={manifest.d}, "
          f"{len(train)} train / {len(test)} test)")
    _print_histogram(manifest.class_counts)
    return EXIT_OK


def _training_config(cfg: RunConfig) -> TrainingConfig:
    t = cfg.training
    fields = {k: v for k, v in vars(t).items() if k != "seed"}
    return TrainingConfig(seed=cfg.seed_for("training"), **fields)


def cmd_train(args, cfg: RunConfig) -> int:
    from .model import build_models
    from .plots import loss_plot
    from .training import Trainer

    manifest, train, _ = load_manifest_dataset(args.manifest)
    m = cfg.model
    seed = cfg.seed_for("model")
    torch.manual_seed(seed)
    g, d = build_models(
        manifest.T, manifest.d, len(manifest.vocabulary), seed=seed,
        generator=dict(latent_dim=m.latent_dim, encoder_channels=m.encoder_channels,
                       decoder_channels=m.decoder_channels, kernel_size=m.kernel_size,
                       positional_bias=m.positional_bias),
        discriminator=dict(conv_channels=m.disc_conv_channels, fc_widths=m.disc_fc_widths,
                           kernel_size=m.disc_kernel_size, stride=m.disc_stride,
                           power_iterations=m.power_iterations))
    trainer = Trainer(g, d, stack_frames(train), label_indices(train), _training_config(cfg))
    trainer.meta = {"vocabulary": list(manifest.vocabulary),
                    "normalization": {"mean": list(manifest.mean), "std": list(manifest.std)},
                    "train_count": len(train),
                    "train_class_counts": dict(Counter(s.label.name for s in train))}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        trainer.run(out / "checkpoints")
    finally:
        trainer.state.write_history(out / "history.csv")
        loss_plot(trainer.state.history, out / "loss.png")
    final = ckpt.save_checkpoint(out / "final", trainer)
    st = trainer.state
    print(f"trained {st.step} steps ({st.stopped_reason}); final checkpoint {final}")
    if st.history:
        _, l_d, l_adv, l_rec, acc = st.history[-1]
        print(f"  L_D={l_d:.4f} L_G_adv={l_adv:.4f} L_rec={l_rec:.4f} D_acc_ema={acc:.3f}")
    return EXIT_OK


def _parse_counts(text: str) -> dict[str, int]:
    counts = {}
    for item in text.split(","):
        if "=" not in item:
            raise ConfigError(f"--counts expects name=n pairs, got {item!r}")
        name, n = item.split("=", 1)
        try:
            counts[name.strip()] = int(n)
        except ValueError:
            raise ConfigError(f"--counts: {n!r} is not an integer") from None
    return counts


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synthesis import SynthesisRequest, balanced_counts, export, synthesize

    s = cfg.synthesis
    _, meta = ckpt.load_generator(args.checkpoint)
    vocabulary = meta.get("vocabulary", [])
    counts = _parse_counts(args.counts) if args.counts else s.counts
    if counts is None:
        total = args.total if args.total is not None else int(round(s.multiplier * meta.get("train_count", 0)))
        counts = balanced_counts(total, vocabulary)
    request = SynthesisRequest(checkpoint=str(args.checkpoint), counts=counts, seed=cfg.seed_for("synthesis"),
                               denormalize=s.denormalize, format=s.format)
    seqs = synthesize(request)
    manifest = export(seqs, args.out, s.format, normalized=not s.denormalize,
                      stats=meta.get("normalization"), extra={"checkpoint": str(args.checkpoint),
                                                              "seed": request.seed})
    print(f"wrote {len(seqs)} synthetic sequences to {args.out}")
    _print_histogram(manifest.class_counts)
    return EXIT_OK


def _real_and_synth(real_manifest, synth_manifest):
    real_m, train, test = load_manifest_dataset(real_manifest)
    synth_m, synth, _ = load_manifest_dataset(synth_manifest, stats=real_m)
    if synth_m.vocabulary != real_m.vocabulary:
        raise DataError("real and synthetic vocabularies differ")
    return real_m, train, test, synth


def cmd_eval(args, cfg: RunConfig) -> int:
    from .evaluation import EvaluationConfig, build_report, write_report

    _, train, _, synth = _real_and_synth(args.real_manifest, args.synth_manifest)
    e = cfg.evaluation
    ecfg = EvaluationConfig(pca_components=e.pca_components, tsne_perplexity=e.tsne_perplexity,
                            tsne_iters=e.tsne_iters, tsne_max_points=e.tsne_max_points,
                            seed=cfg.seed_for("evaluation"), plots=e.plots)
    report = build_report(train, synth, ecfg)
    path = write_report(report, args.out, plots=e.plots)
    print(f"wrote {path}")
    print(f"  mean R^2 = {report.mean_r2:.4f}  " +
          "  ".join(f"{k}={v:.3f}" for k, v in report.per_class_r2.items()))
    print(f"  1-NN real/synthetic overlap = {report.nn_overlap:.3f} (0.5 = mixed)")
    return EXIT_OK


def cmd_benchmark(args, cfg: RunConfig) -> int:
    from .classify import ClassifierSpec, compare_baseline, run_benchmark

    _, train, test, synth = _real_and_synth(args.real_manifest, args.synth_manifest)
    c = cfg.classify
    specs = [ClassifierSpec(kind=k, hidden=c.hidden, channels=c.channels, layers=c.layers,
                            kernel_size=c.kernel_size, stride=c.stride, dropout=c.dropout,
                            learning_rate=c.learning_rate, epochs=c.epochs, batch_size=c.batch_size,
                            seed=cfg.seed_for("classify")) for k in c.kinds]
    result = run_benchmark(train, test, synth, specs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "grid.csv")
    result.write_confusions(out / "confusion.json")
    comparison = compare_baseline(result.grid(), c.baseline_accuracy)
    comparison["deltas_vs_real"] = result.deltas()
    (out / "baseline.json").write_text(json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    print((out / "grid.csv").read_text().rstrip())
    print(f"best augmented {comparison['best_augmented_model']} {comparison['best_augmented_accuracy']:.2f}% "
          f"vs baseline {c.baseline_accuracy:.2f}% (delta {comparison['delta']:+.2f})")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    from .checkpoint import read_history
    from .classify import read_grid_csv

    summary: dict = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    if args.train_dir:
        hist = read_history(Path(args.train_dir) / "history.csv")
        if hist:
            step, l_d, l_adv, l_rec, acc = hist[-1]
            summary["training"] = {"steps": step, "l_d": l_d, "l_g_adv": l_adv, "l_rec": l_rec,
                                   "d_acc_ema": acc}
    if args.eval_dir:
        rep = json.loads((Path(args.eval_dir) / "report.json").read_text())
        summary["evaluation"] = {k: rep[k] for k in ("per_class_r2", "mean_r2", "nn_overlap")}
        summary["evaluation"]["explained_variance_ratio_top2"] = rep["explained_variance_ratio"][:2]
    if args.bench_dir:
        bench = Path(args.bench_dir)
        summary["benchmark"] = {"grid": read_grid_csv(bench / "grid.csv"),
                                "baseline": json.loads((bench / "baseline.json").read_text())}
    if len(summary) == 1:
        raise ConfigError("report needs at least one of --train-dir, --eval-dir, --bench-dir")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgcgan", description=__doc__.splitlines()[0],
                                epilog="Any config value can be overridden with --section.key=value.")
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="filter, window, split and normalize a raw dataset")
    s.add_argument("data_dir", type=Path)
    s.add_argument("--out", type=Path, required=True, help="output directory for manifest.json + data")
    s.add_argument("--format", choices=["csv", "jsonl"])
    s.add_argument("--min-len", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--policy", choices=["center_crop", "resample"])
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_ingest, flag_map={"format": "data.format", "min_len": "data.min_len",
                                              "T": "data.T", "policy": "data.policy",
                                              "test_fraction": "data.test_fraction", "seed": "data.seed"})

    s = sub.add_parser("train", help="train the conditional GAN")
    s.add_argument("manifest", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train, flag_map={"steps": "training.max_steps", "seed": "training.seed"})

    s = sub.add_parser("synth", help="sample labelled sequences from a checkpoint")
    s.add_argument("checkpoint", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--counts", help="class=n pairs, comma separated")
    s.add_argument("--total", type=int, help="class-balanced total (default: multiplier x train size)")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth, flag_map={"seed": "synthesis.seed"})

    s = sub.add_parser("eval", help="structural metrics and plots")
    s.add_argument("real_manifest", type=Path)
    s.add_argument("synth_manifest", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_eval, flag_map={})

    s = sub.add_parser("benchmark", help="GRU/LSTM/CNN accuracy grid over three data regimes")
    s.add_argument("real_manifest", type=Path)
    s.add_argument("synth_manifest", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_benchmark, flag_map={})

    s = sub.add_parser("report", help="aggregate earlier outputs into one summary")
    s.add_argument("--train-dir", type=Path)
    s.add_argument("--eval-dir", type=Path)
    s.add_argument("--bench-dir", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_report, flag_map={})
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    dotted = [a for a in argv if a.startswith("--") and "." in a.split("=", 1)[0]]
    rest = [a for a in argv if a not in dotted]
    try:
        args, unknown = parser.parse_known_args(rest)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if unknown:
            raise ConfigError(f"unrecognized arguments: {' '.join(unknown)}")
        overrides = list(dotted)
        for attr, key in args.flag_map.items():
            value = getattr(args, attr, None)
            if value is not None:
                overrides.append(f"--{key}={json.dumps(value)}")
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (ConfigError, DataError, ValueError, FileNotFoundError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDiverged as exc:
        print(f"training diverged: {exc} {json.dumps(exc.snapshot, default=str)[:500]}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
