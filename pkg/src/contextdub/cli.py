"""Command-line entry point for reproducible corpus/train/eval/ablation runs.

Subcommands: ``gen-data``, ``train``, ``eval``, ``ablate`` and the debug
``dump-graph``. Every command is deterministic given (config, seed).
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure (non-finite loss). The ``M2CI_DATA_DIR`` environment variable
supplies the default corpus root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .aggregation import AggregatedFeature
from .config import RunConfig
from .corpus import corpus_digest, generate_corpus, load_manifest
from .errors import (ConfigError, ManifestError, NonFiniteLossError,
                     TensorFormatError)
from .fusion import build_graph
from .metrics import (EvalReport, Transcript, gpe, ffe,
                      track_from_phoneme_pitch, wer, write_plot_data)
from .synthesis import ABLATION_FLAGS, DubbingModel, load_checkpoint
from .tensor import Tensor
from .training import Trainer, evaluate, load_dataset, split_samples

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

EVAL_METRICS = ("gpe", "ffe", "wer", "pitch_mse")

ABLATION_LABELS = {
    "global": "w/o Global", "local": "w/o Local", "ima": "w/o IMA",
    "imf": "w/o IMF", "caa": "w/o CAA", "int-ima": "w/o Int. in IMA",
    "int-imf": "w/o Int. in IMF", "video": "w/o Video", "text": "w/o Text",
    "audio": "w/o Audio", "pre": "w/o Previous Sentence",
    "fol": "w/o Following Sentence",
}


def _parse_flags(spec):
    """Comma list of ablation entries; '+' joins flags within one entry."""
    entries = []
    for part in str(spec).split(","):
        part = part.strip()
        if not part:
            continue
        flags = tuple(f.strip() for f in part.split("+"))
        for f in flags:
            if f not in ABLATION_FLAGS:
                raise ConfigError(f"unknown ablation flag '{f}'; "
                                  f"valid: {', '.join(ABLATION_FLAGS)}")
        entries.append(flags)
    return entries


def _entry_label(flags):
    return " & ".join(ABLATION_LABELS[f] for f in flags)


def _load_config(path, seed=None, steps=None):
    cfg = RunConfig.from_file(path) if path else RunConfig()
    if seed is not None:
        cfg.seed = seed
        cfg.corpus.seed = seed
    if steps is not None:
        if steps < 1:
            raise ConfigError("--steps must be >= 1")
        cfg.training.steps = steps
    return cfg


def _corpus_root(value):
    root = value or os.environ.get("M2CI_DATA_DIR")
    if not root:
        raise ConfigError("no corpus directory: pass --corpus or set M2CI_DATA_DIR")
    return Path(root)


def cmd_gen_data(args):
    cfg = _load_config(args.config, seed=args.seed)
    manifest = generate_corpus(cfg.corpus, args.out)
    digest = corpus_digest(args.out)
    print(f"generated {len(manifest)} samples at {args.out}")
    print(f"corpus sha256 {digest}")
    return EXIT_OK


def _prepare_run(cfg, corpus_root):
    manifest = load_manifest(corpus_root)
    for name, model_value in (("phoneme_vocab_size", cfg.model.vocab_size),
                              ("raw_feature_dim", cfg.model.raw_feature_dim),
                              ("mel_bins", cfg.model.mel_bins)):
        stored = manifest.config.get(name)
        if stored is not None and stored != model_value:
            raise ManifestError("<config>", name,
                                f"corpus has {stored}, model expects {model_value}")
    samples = load_dataset(manifest)
    train, val = split_samples(samples, cfg.training.val_fraction, cfg.seed)
    return manifest, train, val


def cmd_train(args):
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        cfg = _load_config(args.config, steps=args.steps)
        manifest, train, val = _prepare_run(cfg, _corpus_root(args.corpus))
        trainer = Trainer.resume(args.resume, train)
    else:
        cfg = _load_config(args.config, seed=args.seed, steps=args.steps)
        ablate = cfg.ablate
        if args.ablate:
            ablate = tuple(f for entry in _parse_flags(args.ablate) for f in entry)
        manifest, train, val = _prepare_run(cfg, _corpus_root(args.corpus))
        model = DubbingModel(cfg.model, seed=cfg.seed)
        trainer = Trainer(model, train, cfg.optimizer, seed=cfg.seed, ablate=ablate)
        with open(out_dir / "run_config.json", "w", encoding="utf-8") as fh:
            json.dump(cfg.to_dict(), fh, indent=2)
    history = trainer.run(cfg.training.steps, log_path=out_dir / "train_log.txt",
                          log_every=cfg.training.log_every, val_samples=val,
                          eval_every=cfg.training.eval_every, checkpoint_dir=out_dir)
    final = history[-1]
    print(f"trained to step {final.step}: total {final.total:.4f} "
          f"mel_l1 {final.mel_l1:.4f} pitch_mse {final.pitch_mse:.4f}")
    print(f"checkpoint written to {out_dir / 'last.ckpt'}")
    return EXIT_OK


def _metric_rows(model, samples, metric_names, ablate=(), hypotheses=None):
    report = EvalReport(columns=list(metric_names))
    model.eval()
    for sample in samples:
        predictions = model(sample, ablate=frozenset(ablate))
        values = {}
        reference = track_from_phoneme_pitch(sample.pitch, sample.durations)
        synthesized = track_from_phoneme_pitch(predictions.pitch.data, sample.durations)
        if "gpe" in metric_names:
            values["gpe"] = gpe(reference, synthesized)
        if "ffe" in metric_names:
            values["ffe"] = ffe(reference, synthesized)
        if "wer" in metric_names:
            ref_words = Transcript.from_words(sample.transcript)
            hyp_text = (hypotheses or {}).get(sample.sample_id)
            hyp = (Transcript.from_text(hyp_text) if hyp_text is not None
                   else ref_words)
            values["wer"] = wer(ref_words, hyp)
        if "pitch_mse" in metric_names:
            diff = predictions.pitch.data - sample.pitch
            values["pitch_mse"] = float(np.mean(diff * diff))
        report.add_row(sample.sample_id, values)
    return report


def cmd_eval(args):
    metric_names = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = [m for m in metric_names if m not in EVAL_METRICS]
    if unknown:
        raise ConfigError(f"unknown metric name(s) {unknown}; "
                          f"valid: {', '.join(EVAL_METRICS)}")
    model, header, _ = load_checkpoint(args.checkpoint)
    manifest = load_manifest(_corpus_root(args.corpus))
    samples = load_dataset(manifest)
    trainer_state = header.get("trainer", {})
    seed = trainer_state.get("seed", 0)
    val_fraction = args.val_fraction
    train, val = split_samples(samples, val_fraction, seed)
    subset = {"train": train, "val": val, "all": samples}[args.split]
    if not subset:
        raise ManifestError("<split>", args.split, "selected split is empty")
    hypotheses = None
    if args.hypotheses:
        with open(args.hypotheses, "r", encoding="utf-8") as fh:
            hypotheses = json.load(fh)
    ablate = tuple(trainer_state.get("ablate", ()))
    report = _metric_rows(model, subset, metric_names, ablate=ablate,
                          hypotheses=hypotheses)
    text = report.render()
    print(text, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write(out_dir / "report.txt")
        means = report.means()
        step = header.get("step", 0)
        for name in metric_names:
            if means[name] is not None:
                write_plot_data(out_dir / f"plot_{name}.txt", [(step, means[name])])
        print(f"report written to {out_dir / 'report.txt'}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = _load_config(args.config, steps=args.steps)
    entries = _parse_flags(args.ablate)
    if not entries:
        raise ConfigError("--ablate must name at least one flag")
    manifest, train, val = _prepare_run(cfg, _corpus_root(args.corpus))
    if not val:
        raise ManifestError("<split>", "val",
                            "ablation needs a validation split (val_fraction > 0)")
    seeds = [cfg.seed + i for i in range(args.seeds)]
    configs = [("full", ())] + [(_entry_label(flags), flags) for flags in entries]
    results = {label: [] for label, _ in configs}
    for seed in seeds:
        for label, flags in configs:
            model = DubbingModel(cfg.model, seed=seed)
            trainer = Trainer(model, train, cfg.optimizer, seed=seed, ablate=flags)
            trainer.run(cfg.training.steps)
            score = evaluate(model, val, ablate=flags)
            results[label].append(score["pitch_mse"])
            print(f"seed {seed} {label}: val pitch MSE {score['pitch_mse']:.5f}",
                  flush=True)
    lines = ["configuration\tmean_val_pitch_mse\twins_vs_full\tper_seed"]
    full_scores = results["full"]
    for label, _ in configs:
        scores = results[label]
        wins = sum(1 for a, b in zip(scores, full_scores) if a < b)
        per_seed = ",".join(f"{s:.5f}" for s in scores)
        lines.append(f"{label}\t{np.mean(scores):.5f}\t{wins}\t{per_seed}")
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation_report.txt", "w", encoding="utf-8") as fh:
            fh.write(table)
        print(f"ablation report written to {out_dir / 'ablation_report.txt'}")
    return EXIT_OK


def cmd_dump_graph(args):
    if args.length < 1:
        raise ConfigError("--length must be >= 1")
    rng = np.random.default_rng(args.seed or 0)
    dim = 8

    def feature(modality):
        return AggregatedFeature(modality, "previous",
                                 Tensor(rng.normal(size=(args.length, dim))))

    graph = build_graph(feature("video"), feature("text"), feature("audio"),
                        Tensor(rng.normal(size=(args.length, dim))))
    text = graph.serialize()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"graph written to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="contextdub",
        description="Context-aware dubbing synthesizer: corpus generation, "
                    "training, evaluation and ablation.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a synthetic corpus")
    gen.add_argument("--config", help="run config JSON")
    gen.add_argument("--out", required=True, help="corpus output directory")
    gen.add_argument("--seed", type=int, help="override the config seed")
    gen.set_defaults(func=cmd_gen_data)

    train = sub.add_parser("train", help="train a model on a corpus")
    train.add_argument("--config", help="run config JSON")
    train.add_argument("--corpus", help="corpus root (default $M2CI_DATA_DIR)")
    train.add_argument("--out", required=True, help="run output directory")
    train.add_argument("--seed", type=int)
    train.add_argument("--steps", type=int)
    train.add_argument("--ablate", help="comma list of ablation flags")
    train.add_argument("--resume", help="checkpoint to resume from")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--corpus", help="corpus root (default $M2CI_DATA_DIR)")
    ev.add_argument("--split", choices=("train", "val", "all"), default="val")
    ev.add_argument("--metrics", default="gpe,ffe,wer,pitch_mse")
    ev.add_argument("--val-fraction", type=float, default=0.1)
    ev.add_argument("--hypotheses", help="JSON file {sample_id: transcript} for WER")
    ev.add_argument("--out", help="directory for report.txt and plot data")
    ev.set_defaults(func=cmd_eval)

    ab = sub.add_parser("ablate", help="train and compare ablation variants")
    ab.add_argument("--config", help="run config JSON")
    ab.add_argument("--corpus", help="corpus root (default $M2CI_DATA_DIR)")
    ab.add_argument("--out", help="directory for the comparison table")
    ab.add_argument("--ablate", required=True,
                    help="comma list of flags; join flags with '+' per entry")
    ab.add_argument("--seeds", type=int, default=5, help="paired seeds per config")
    ab.add_argument("--steps", type=int)
    ab.set_defaults(func=cmd_ablate)

    dump = sub.add_parser("dump-graph", help="serialize an interaction graph")
    dump.add_argument("--length", type=int, required=True, help="current text steps")
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--out", help="write to this file instead of stdout")
    dump.set_defaults(func=cmd_dump_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ManifestError, TensorFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
