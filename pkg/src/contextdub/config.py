"""Run configuration: one JSON file drives generation, training and ablation.

Defaults reproduce the reference setup: hidden size 256, 2 graph
attention heads, Adam at learning rate 0.00625 with betas (0.9, 0.98),
epsilon 1e-9 and batch size 8. The step budget defaults to a desk-scale
5000 instead of the original 40k.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .corpus import CorpusConfig
from .errors import ConfigError
from .synthesis import ABLATION_FLAGS, ModelConfig
from .training import OptimizerConfig


@dataclass
class TrainingConfig:
    steps: int = 5000
    log_every: int = 50
    eval_every: int = 500
    val_fraction: float = 0.1


_SECTIONS = {
    "model": ModelConfig,
    "optimizer": OptimizerConfig,
    "training": TrainingConfig,
    "corpus": CorpusConfig,
}

_TUPLE_FIELDS = {"phonemes_per_sentence", "duration_frames"}


@dataclass
class RunConfig:
    seed: int = 0
    ablate: tuple = ()
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError(f"config root must be an object, got {type(raw).__name__}")
        known = {"seed", "ablate"} | set(_SECTIONS)
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config section '{key}'; "
                                  f"expected one of {sorted(known)}")
        cfg = cls(seed=int(raw.get("seed", 0)),
                  ablate=tuple(raw.get("ablate", ())))
        for name, section_cls in _SECTIONS.items():
            section_raw = raw.get(name, {})
            if not isinstance(section_raw, dict):
                raise ConfigError(f"config section '{name}' must be an object")
            valid = {f.name for f in fields(section_cls)}
            for key in section_raw:
                if key not in valid:
                    raise ConfigError(f"unknown key '{key}' in section '{name}'; "
                                      f"expected one of {sorted(valid)}")
            values = {k: tuple(v) if k in _TUPLE_FIELDS and isinstance(v, list) else v
                      for k, v in section_raw.items()}
            setattr(cfg, name, section_cls(**values))
        bad = set(cfg.ablate) - set(ABLATION_FLAGS)
        if bad:
            raise ConfigError(f"unknown ablation flags {sorted(bad)}; "
                              f"valid: {', '.join(ABLATION_FLAGS)}")
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(
                f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                f"{exc.msg}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self):
        self.model.validate()
        self.corpus.validate()
        for name, model_value, corpus_value in (
                ("vocab_size", self.model.vocab_size, self.corpus.phoneme_vocab_size),
                ("raw_feature_dim", self.model.raw_feature_dim,
                 self.corpus.raw_feature_dim),
                ("mel_bins", self.model.mel_bins, self.corpus.mel_bins)):
            if model_value != corpus_value:
                raise ConfigError(
                    f"model.{name} ({model_value}) must match the corpus "
                    f"setting ({corpus_value})")
        if self.training.steps < 1:
            raise ConfigError("training.steps must be >= 1")
        if not 0.0 <= self.training.val_fraction < 1.0:
            raise ConfigError("training.val_fraction must lie in [0, 1)")

    def to_dict(self):
        return {
            "seed": self.seed,
            "ablate": list(self.ablate),
            "model": asdict(self.model),
            "optimizer": asdict(self.optimizer),
            "training": asdict(self.training),
            "corpus": asdict(self.corpus),
        }
