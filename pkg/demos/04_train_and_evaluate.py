"""A miniature end-to-end run: generate, train, evaluate, ablate.

Uses a small model so the whole scriptlet finishes in about a minute.
The equivalent shell commands are shown alongside each stage.
"""

import tempfile
from pathlib import Path

from contextdub import (CorpusConfig, DubbingModel, ModelConfig,
                        OptimizerConfig, Trainer, evaluate, generate_corpus,
                        load_dataset, load_manifest, split_samples)

with tempfile.TemporaryDirectory() as tmp:
    # contextdub gen-data --config cfg.json --out corpus/
    corpus_cfg = CorpusConfig(num_triples=24, phonemes_per_sentence=(6, 9),
                              duration_frames=(3, 5), seed=2)
    generate_corpus(corpus_cfg, Path(tmp) / "corpus")
    samples = load_dataset(load_manifest(Path(tmp) / "corpus"))
    train_set, val_set = split_samples(samples, 0.25, seed=2)
    print(f"{len(train_set)} training / {len(val_set)} validation samples")

    # contextdub train --config cfg.json --corpus corpus/ --out run/
    model_cfg = ModelConfig(hidden_dim=32, text_encoder_layers=1,
                            mel_decoder_layers=2, dropout=0.0)
    model = DubbingModel(model_cfg, seed=2)
    trainer = Trainer(model, train_set,
                      OptimizerConfig(batch_size=8, warmup_steps=40), seed=2)
    for step in range(150):
        metrics = trainer.train_step()
        if metrics.step % 50 == 0 or metrics.step == 1:
            print(f"  step {metrics.step:3d}  total {metrics.total:.3f}  "
                  f"mel {metrics.mel_l1:.3f}  pitch {metrics.pitch_mse:.4f}")

    # contextdub eval --checkpoint run/last.ckpt --corpus corpus/
    report = evaluate(model, val_set)
    print(f"validation: mel L1 {report['mel_l1']:.3f}, "
          f"pitch MSE {report['pitch_mse']:.4f}")

    # contextdub ablate --ablate pre+fol ... compares variants; here a quick
    # taste: the same weights with both context sentences withheld.
    blind = evaluate(model, val_set, ablate=("pre", "fol"))
    print(f"same weights, context withheld: pitch MSE {blind['pitch_mse']:.4f}")
    print("(train the ablation properly via `contextdub ablate` for a fair "
          "comparison)")
