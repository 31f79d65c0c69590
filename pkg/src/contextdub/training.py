"""Training loop, optimizer, dataset loading and evaluation.

Optimizer defaults mirror the reference setup: Adam with initial
learning rate 0.00625, betas (0.9, 0.98), epsilon 1e-9 and batch size 8.
The learning rate ramps linearly over a short warmup and then decays
with inverse square root of the step, which keeps the large initial rate
stable at desk scale; the peak equals the configured initial rate.

Every run is deterministic given (config, seed): parameter init, batch
order and dropout draw from generators seeded by the run seed, and all
generator states are stored in checkpoints so a resumed run continues
the exact trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Manifest, load_context_sentence
from .errors import NonFiniteLossError
from .synthesis import (DubbingModel, DubbingSample, LossWeights, Predictions,
                        compute_losses, load_checkpoint, save_checkpoint)
from .tensorio import read_tensor


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.00625
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    batch_size: int = 8
    warmup_steps: int = 200
    grad_clip: float = 1.0


class Adam:
    def __init__(self, named_params, cfg: OptimizerConfig):
        self.cfg = cfg
        self.params = list(named_params)
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}
        self.step_count = 0

    def learning_rate(self, step):
        warmup = max(1, self.cfg.warmup_steps)
        scale = min(step / warmup, np.sqrt(warmup / step))
        return self.cfg.learning_rate * scale

    def step(self):
        self.step_count += 1
        lr = self.learning_rate(self.step_count)
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.epsilon
        correction = np.sqrt(1.0 - b2 ** self.step_count) / (1.0 - b1 ** self.step_count)
        for name, p in self.params:
            if p.grad is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            p.data -= lr * correction * m / (np.sqrt(v) + eps)
        return lr

    def clip_gradients(self):
        limit = self.cfg.grad_clip
        if not limit:
            return 0.0
        total = 0.0
        for _, p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        norm = np.sqrt(total)
        if norm > limit:
            scale = limit / norm
            for _, p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * scale
        return norm

    def state_tensors(self):
        out = {}
        for name, _ in self.params:
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        return out

    def load_state_tensors(self, tensors):
        for name, _ in self.params:
            self.m[name] = np.asarray(tensors[f"adam_m/{name}"], dtype=np.float64)
            self.v[name] = np.asarray(tensors[f"adam_v/{name}"], dtype=np.float64)


def load_dataset(manifest: Manifest):
    """Materialize every manifest record as a DubbingSample."""
    samples = []
    for rec in manifest.records:
        samples.append(DubbingSample(
            sample_id=rec.sample_id,
            phonemes=np.asarray(rec.phonemes, dtype=np.int64),
            durations=np.asarray(rec.durations, dtype=np.int64),
            pitch=np.asarray(rec.pitch, dtype=np.float64),
            energy=np.asarray(rec.energy, dtype=np.float64),
            mel=read_tensor(manifest.root / rec.tensors["mel"]),
            lip_frames=read_tensor(manifest.root / rec.tensors["lip"]).astype(np.float64),
            transcript=list(rec.transcript),
            context_previous=load_context_sentence(manifest, rec, "previous"),
            context_following=load_context_sentence(manifest, rec, "following"),
        ))
    return samples


def split_samples(samples, val_fraction, seed):
    """Deterministic shuffled train/validation split."""
    n = len(samples)
    rng = np.random.default_rng([seed, 3])
    order = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if n > 1:
        n_val = min(max(n_val, 0), n - 1)
    val_idx = set(order[:n_val].tolist())
    train = [s for i, s in enumerate(samples) if i not in val_idx]
    val = [samples[i] for i in sorted(val_idx)]
    return train, val


@dataclass
class StepMetrics:
    step: int
    total: float
    mel_l1: float
    pitch_mse: float
    energy_mse: float
    learning_rate: float

    def line(self):
        return (f"{self.step}\t{self.total:.6f}\t{self.mel_l1:.6f}\t"
                f"{self.pitch_mse:.6f}\t{self.energy_mse:.6f}\t{self.learning_rate:.6g}")


class Trainer:
    def __init__(self, model: DubbingModel, train_samples, opt_cfg: OptimizerConfig,
                 seed=0, ablate=(), loss_weights=LossWeights()):
        if not train_samples:
            raise ValueError("cannot train on an empty sample list")
        self.model = model
        self.samples = list(train_samples)
        self.opt_cfg = opt_cfg
        self.seed = seed
        self.ablate = frozenset(ablate)
        self.loss_weights = loss_weights
        self.optimizer = Adam(model.named_parameters(), opt_cfg)
        self.batch_rng = np.random.default_rng([seed, 2])
        self._batch_queue = []
        self.step = 0
        model.set_prosody_ranges(self.samples)

    def _next_batch(self):
        """Epoch-style sampling without replacement; the whole dataset when
        the batch is at least as large."""
        size = self.opt_cfg.batch_size
        if size >= len(self.samples):
            return list(range(len(self.samples)))
        while len(self._batch_queue) < size:
            self._batch_queue.extend(
                self.batch_rng.permutation(len(self.samples)).tolist())
        batch, self._batch_queue = (self._batch_queue[:size],
                                    self._batch_queue[size:])
        return batch

    def train_step(self) -> StepMetrics:
        self.model.train()
        self.model.zero_grad()
        batch = self._next_batch()
        scale = 1.0 / len(batch)
        totals = np.zeros(3)
        total_loss = 0.0
        for idx in batch:
            sample = self.samples[int(idx)]
            predictions = self.model(sample, ablate=self.ablate)
            loss, breakdown = compute_losses(predictions, sample, self.loss_weights)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLossError(value, f"sample '{sample.sample_id}' "
                                                f"at step {self.step}")
            total_loss += value * scale
            totals += scale * np.array([breakdown["mel_l1"], breakdown["pitch_mse"],
                                        breakdown["energy_mse"]])
            (loss * scale).backward()
        self.optimizer.clip_gradients()
        lr = self.optimizer.step()
        self.step += 1
        return StepMetrics(step=self.step, total=total_loss, mel_l1=totals[0],
                           pitch_mse=totals[1], energy_mse=totals[2],
                           learning_rate=lr)

    def run(self, steps, log_path=None, log_every=50, val_samples=(),
            eval_every=0, checkpoint_dir=None):
        """Train for ``steps`` more steps; returns the list of StepMetrics.

        Writes an append-only step-metrics log, a final checkpoint and,
        when validation samples are given, a best-validation checkpoint.
        """
        history = []
        log_fh = None
        if log_path is not None:
            log_path = Path(log_path)
            fresh = not log_path.exists()
            log_fh = open(log_path, "a", encoding="utf-8")
            if fresh:
                log_fh.write("# step\ttotal\tmel_l1\tpitch_mse\tenergy_mse\tlr\n")
        best = np.inf
        try:
            for _ in range(steps):
                metrics = self.train_step()
                history.append(metrics)
                if log_fh and (metrics.step % log_every == 0 or metrics.step == 1):
                    log_fh.write(metrics.line() + "\n")
                    log_fh.flush()
                due = eval_every and metrics.step % eval_every == 0
                if due and val_samples and checkpoint_dir is not None:
                    report = evaluate(self.model, val_samples, ablate=self.ablate,
                                      loss_weights=self.loss_weights)
                    if report["total"] < best:
                        best = report["total"]
                        self.save(Path(checkpoint_dir) / "best.ckpt")
            if checkpoint_dir is not None:
                self.save(Path(checkpoint_dir) / "last.ckpt")
        finally:
            if log_fh:
                log_fh.close()
        return history

    # -- checkpointing -----------------------------------------------------

    def save(self, path):
        save_checkpoint(
            path, self.model, step=self.step,
            extra={
                "trainer": {
                    "seed": self.seed,
                    "ablate": sorted(self.ablate),
                    "optimizer": vars(self.opt_cfg),
                    "batch_rng": self.batch_rng.bit_generator.state,
                    "batch_queue": list(self._batch_queue),
                    "dropout_rng": self.model.dropout_rng.bit_generator.state,
                    "adam_steps": self.optimizer.step_count,
                },
                "tensors": self.optimizer.state_tensors(),
            })

    @classmethod
    def resume(cls, path, train_samples, loss_weights=LossWeights()):
        model, header, extra = load_checkpoint(path)
        trainer_state = header.get("trainer")
        if trainer_state is None:
            raise ValueError(f"checkpoint {path} has no trainer state to resume")
        opt_cfg = OptimizerConfig(**trainer_state["optimizer"])
        trainer = cls(model, train_samples, opt_cfg, seed=trainer_state["seed"],
                      ablate=trainer_state.get("ablate", ()),
                      loss_weights=loss_weights)
        trainer.step = header["step"]
        trainer.optimizer.step_count = trainer_state["adam_steps"]
        trainer.optimizer.load_state_tensors(extra)
        trainer._batch_queue = list(trainer_state.get("batch_queue", []))
        trainer.batch_rng.bit_generator.state = trainer_state["batch_rng"]
        model.dropout_rng.bit_generator.state = trainer_state["dropout_rng"]
        return trainer


def evaluate(model: DubbingModel, samples, ablate=(), loss_weights=LossWeights()):
    """Frozen-parameter evaluation; returns per-sample rows and means."""
    model.eval()
    rows = []
    for sample in samples:
        predictions = model(sample, ablate=frozenset(ablate))
        _, breakdown = compute_losses(predictions, sample, loss_weights)
        rows.append({"sample_id": sample.sample_id, **breakdown})
    means = {key: float(np.mean([r[key] for r in rows]))
             for key in ("mel_l1", "pitch_mse", "energy_mse")}
    total = (loss_weights.mel * means["mel_l1"]
             + loss_weights.pitch * means["pitch_mse"]
             + loss_weights.energy * means["energy_mse"])
    return {"rows": rows, "total": total, **means}


def predict_sample(model: DubbingModel, sample: DubbingSample, ablate=()) -> Predictions:
    model.eval()
    return model(sample, ablate=frozenset(ablate))
