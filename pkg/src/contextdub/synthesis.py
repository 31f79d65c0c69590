"""The dubbing synthesizer: current-sentence encoding, context adaptation,
prosody prediction, length regulation and mel decoding.

The model keeps every sequence at phoneme resolution until length
regulation expands it to the 10 ms mel frame rate using ground-truth
durations (duration prediction is deliberately absent). Context
information enters through the gated fusion of the previous/following
fused sequences, used as keys and values in cross-attention against the
current hidden sequence, with a residual merge.

Ablation flags switch off individual components; each flag bypasses the
named computation entirely so the corresponding parameters receive no
gradient. Flags compose freely.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import tensorio
from .aggregation import AggregatedFeature, ModalityAggregators
from .errors import ShapeError
from .extraction import (AudioContextEncoder, ContextSentence, GlobalLocalFeatures,
                         TextContextEncoder, TextEncoder, VideoContextEncoder,
                         synthetic_front_end)
from .fusion import FusedContext, GraphFusion, build_graph
from .nn import (Conv1d, ConvDownsampleStack, Dropout, Embedding, FFTBlock,
                 LayerNorm, Linear, Module, ModuleList, MultiHeadAttention,
                 Parameter, add_positions)
from .tensor import (Tensor, broadcast_rows, concat, gather_rows,
                     repeat_rows, segment_sum)

ABLATION_FLAGS = ("global", "local", "ima", "imf", "caa", "int-ima", "int-imf",
                  "video", "text", "audio", "pre", "fol")

VIDEO_FRAMES_PER_STEP = 4   # 40 ms video step vs 10 ms mel hop
LIP_POOL_FRAMES = VIDEO_FRAMES_PER_STEP * 4  # after 4x downsampling


@dataclass
class ModelConfig:
    hidden_dim: int = 256
    mel_bins: int = 80
    vocab_size: int = 40
    raw_feature_dim: int = 64
    attention_heads: int = 2
    gae_heads: int = 2
    text_encoder_layers: int = 2
    mel_decoder_layers: int = 4
    dropout: float = 0.1
    quant_bins: int = 256
    tie_context_encoders: bool = True
    tc_intra_edges: bool = True
    intra_window: Optional[int] = None
    front_end_seed: int = 0

    def validate(self):
        if self.hidden_dim % self.attention_heads or self.hidden_dim % self.gae_heads:
            raise ShapeError("hidden_dim", "divisible by head counts",
                             self.hidden_dim, "model config")


@dataclass
class DubbingSample:
    """Current sentence targets plus optional neighbouring sentences."""

    sample_id: str
    phonemes: np.ndarray       # (L,)
    durations: np.ndarray      # (L,) mel frames per phoneme, 10 ms hop
    pitch: np.ndarray          # (L,) log-Hz targets
    energy: np.ndarray         # (L,)
    mel: np.ndarray            # (frames, mel_bins)
    lip_frames: np.ndarray     # (steps, raw_dim) at 40 ms/step
    transcript: list = field(default_factory=list)
    context_previous: Optional[ContextSentence] = None
    context_following: Optional[ContextSentence] = None

    def __post_init__(self):
        self.phonemes = np.asarray(self.phonemes, dtype=np.int64)
        self.durations = np.asarray(self.durations, dtype=np.int64)
        self.pitch = np.asarray(self.pitch, dtype=np.float64)
        self.energy = np.asarray(self.energy, dtype=np.float64)
        self.mel = np.asarray(self.mel, dtype=np.float64)
        if np.any(self.durations < 1):
            raise ValueError(f"sample '{self.sample_id}': durations must be >= 1")
        if int(self.durations.sum()) != self.mel.shape[0]:
            raise ValueError(
                f"sample '{self.sample_id}': durations sum to "
                f"{int(self.durations.sum())} but mel has {self.mel.shape[0]} frames")
        if not np.all(np.isfinite(self.pitch)):
            raise ValueError(f"sample '{self.sample_id}': non-finite pitch target")


@dataclass
class Predictions:
    mel: Tensor
    pitch: Tensor
    energy: Tensor
    current_text: Tensor
    fused: dict
    lip_skipped: bool = False


def length_regulate(hidden, durations):
    """Repeat step i of ``hidden`` durations[i] times; output sums the durations."""
    durations = np.asarray(durations, dtype=np.int64)
    if durations.shape[0] != hidden.shape[0]:
        raise ShapeError("time_steps", hidden.shape[0], durations.shape[0],
                         "length regulation durations")
    if np.any(durations < 1):
        bad = int(np.flatnonzero(durations < 1)[0])
        raise ValueError(f"duration at phoneme {bad} is {int(durations[bad])}; "
                         "every duration must be >= 1")
    return repeat_rows(hidden, durations)


def pool_frames_per_phoneme(seq, durations, frames_per_step):
    """Mean-pool sequence steps over each phoneme's frame span.

    Phoneme i covers mel frames [start_i, end_i); a sequence step covers
    ``frames_per_step`` mel frames. Steps overlapping the span are
    averaged; spans beyond the sequence clamp to the last step.
    """
    durations = np.asarray(durations, dtype=np.int64)
    steps = seq.shape[0]
    ends = np.cumsum(durations)
    starts = ends - durations
    lo = np.minimum(starts // frames_per_step, steps - 1)
    hi = np.minimum(-(-ends // frames_per_step), steps)
    hi = np.maximum(hi, lo + 1)
    counts = hi - lo
    index = np.concatenate([np.arange(a, b) for a, b in zip(lo, hi)])
    seg_starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    pooled = segment_sum(gather_rows(seq, index), seg_starts)
    return pooled * Tensor(1.0 / counts.reshape(-1, 1))


class PredictorHead(Module):
    """Two conv layers with ReLU, layer norm and dropout, then a linear scalar."""

    def __init__(self, dim, rng, kernel_size=3, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.conv1 = Conv1d(dim, dim, kernel_size, rng)
        self.norm1 = LayerNorm(dim)
        self.conv2 = Conv1d(dim, dim, kernel_size, rng)
        self.norm2 = LayerNorm(dim)
        self.dropout = Dropout(dropout, dropout_rng)
        self.out = Linear(dim, 1, rng)

    def forward(self, x):
        x = self.dropout(self.norm1(self.conv1(x).relu()))
        x = self.dropout(self.norm2(self.conv2(x).relu()))
        return self.out(x).reshape(x.shape[0])


class DubbingModel(Module):
    """Full context-aware synthesizer."""

    def __init__(self, config: ModelConfig, seed=0):
        super().__init__()
        config.validate()
        self.config = config
        dim = config.hidden_dim
        rng = np.random.default_rng([seed, 0])
        self.dropout_rng = np.random.default_rng([seed, 1])
        drng = self.dropout_rng
        p = config.dropout

        self.text_encoder = TextEncoder(config.vocab_size, dim, rng,
                                        config.text_encoder_layers, p, drng)
        self.lip_stack = ConvDownsampleStack(2, config.raw_feature_dim, rng,
                                             filters=dim, dropout=p, dropout_rng=drng)
        self.lip_proj = Linear(dim, dim, rng)
        self.face_stack = ConvDownsampleStack(2, config.raw_feature_dim, rng,
                                              filters=dim, dropout=p, dropout_rng=drng)

        sides = ("shared",) if config.tie_context_encoders else ("previous", "following")
        for side in sides:
            tag = "" if side == "shared" else f"_{side}"
            setattr(self, f"ctx_video{tag}",
                    VideoContextEncoder(config.raw_feature_dim, dim, rng, p, drng))
            setattr(self, f"ctx_text{tag}",
                    TextContextEncoder(config.vocab_size, dim, rng,
                                       config.text_encoder_layers, p, drng))
            setattr(self, f"ctx_audio{tag}",
                    AudioContextEncoder(config.raw_feature_dim, dim, rng, p, drng))
            setattr(self, f"aggregators{tag}",
                    ModalityAggregators(dim, rng, config.attention_heads, p, drng))
            setattr(self, f"graph_fusion{tag}",
                    GraphFusion(dim, rng, config.gae_heads, p, drng))

        self.constant_query = Parameter(rng.normal(0.0, 0.02, size=dim))
        self.gate = Linear(2 * dim, dim, rng)
        self.context_attention = MultiHeadAttention(dim, config.attention_heads, rng)
        self.pitch_head = PredictorHead(dim, rng, dropout=p, dropout_rng=drng)
        self.energy_head = PredictorHead(dim, rng, dropout=p, dropout_rng=drng)
        self.pitch_embedding = Embedding(config.quant_bins, dim, rng)
        self.energy_embedding = Embedding(config.quant_bins, dim, rng)
        self.mel_decoder = ModuleList(
            FFTBlock(dim, rng, heads=config.attention_heads, dropout=p, dropout_rng=drng)
            for _ in range(config.mel_decoder_layers)
        )
        self.mel_out = Linear(dim, config.mel_bins, rng)

        self.register_buffer("pitch_range", np.array([np.log(50.0), np.log(600.0)]))
        self.register_buffer("energy_range", np.array([0.0, 2.0]))

        self.front_ends = {
            m: synthetic_front_end(m, config.raw_feature_dim, dim,
                                   vocab_size=config.vocab_size,
                                   seed=config.front_end_seed)
            for m in ("video", "text", "audio")
        }

    # -- configuration -------------------------------------------------------

    def _side_module(self, name, side):
        if self.config.tie_context_encoders:
            return getattr(self, name)
        return getattr(self, f"{name}_{side}")

    def set_prosody_ranges(self, samples):
        """Pin quantization ranges to the training targets."""
        pitch = np.concatenate([s.pitch for s in samples])
        energy = np.concatenate([s.energy for s in samples])
        self.set_buffer("pitch_range",
                        [pitch.min(), max(pitch.max(), pitch.min() + 1e-6)])
        self.set_buffer("energy_range",
                        [energy.min(), max(energy.max(), energy.min() + 1e-6)])

    def _quantize(self, values, bounds):
        lo, hi = bounds
        bins = self.config.quant_bins
        idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
        return np.clip(idx, 0, bins - 1)

    # -- pipeline stages -------------------------------------------------------

    def encode_current(self, phonemes, lip_frames, durations):
        """Text path plus duration-pooled lip path; also yields the current
        text feature consumed by aggregation and fusion."""
        current_text = self.text_encoder(phonemes)
        skipped = lip_frames is None or lip_frames.shape[0] < 4
        if skipped:
            return current_text, current_text, True
        lip = self.lip_proj(self.lip_stack(Tensor(lip_frames)))
        pooled = pool_frames_per_phoneme(lip, durations, LIP_POOL_FRAMES)
        return current_text + pooled, current_text, False

    def gated_fuse(self, fused_previous, fused_following):
        """Sigmoid-gated convex blend of the two context sides.

        With one side absent the present side passes through unchanged;
        with both absent there is no context and the adaptor is skipped.
        """
        if fused_previous is None and fused_following is None:
            return None
        if fused_previous is None:
            return fused_following
        if fused_following is None:
            return fused_previous
        gate = self.gate(concat([fused_previous, fused_following], axis=1)).sigmoid()
        return gate * fused_previous + (1.0 - gate) * fused_following

    def context_aware_adapt(self, hidden, fused):
        if fused is None:
            return hidden
        return hidden + self.context_attention(hidden, fused, fused).values

    def predict_prosody(self, hidden, face_frames, durations):
        if face_frames is not None and face_frames.shape[0] >= 4:
            face = self.face_stack(Tensor(face_frames))
            hidden = hidden + pool_frames_per_phoneme(face, durations, LIP_POOL_FRAMES)
        pitch = self.pitch_head(hidden)
        energy = self.energy_head(hidden)
        pitch_idx = self._quantize(pitch.data, self.pitch_range)
        energy_idx = self._quantize(energy.data, self.energy_range)
        decoder_in = hidden + self.pitch_embedding(pitch_idx) \
            + self.energy_embedding(energy_idx)
        return pitch, energy, decoder_in

    def decode_mel(self, frames):
        x = add_positions(frames)
        for block in self.mel_decoder:
            x = block(x)
        return self.mel_out(x)

    # -- context side -------------------------------------------------------

    def _modality_features(self, encoder, front_end, sentence, ablate):
        dim = self.config.hidden_dim
        if "global" in ablate:
            global_vec = Tensor(np.zeros(dim))
        else:
            global_vec = Tensor(front_end.sentence_feature(sentence))
        if "local" in ablate:
            local_seq = Tensor(np.zeros((1, dim)))
        else:
            local_seq = encoder.encode(sentence, front_end).local_seq
        return GlobalLocalFeatures(front_end.modality, global_vec, local_seq)

    def _encode_side(self, side, sentence, current_text, ablate):
        dim = self.config.hidden_dim
        length = current_text.shape[0]
        aggregators = self._side_module("aggregators", side)
        aggregated = {}
        for modality in ("video", "text", "audio"):
            if modality in ablate:
                aggregated[modality] = AggregatedFeature(
                    modality, side, Tensor(np.zeros((length, dim))))
                continue
            encoder = self._side_module(f"ctx_{modality}", side)
            glf = self._modality_features(encoder, self.front_ends[modality],
                                          sentence, ablate)
            if "ima" in ablate:
                # Bypass the aggregator: broadcast a parameter-free blend of
                # the global vector and the local temporal mean.
                blended = glf.global_vec.reshape(1, dim) \
                    + glf.local_seq.mean(axis=0, keepdims=True)
                seq = broadcast_rows(blended.reshape(dim), length)
            else:
                if "int-ima" in ablate:
                    query = broadcast_rows(self.constant_query, length)
                else:
                    query = current_text
                seq = getattr(aggregators, modality)(query, glf)
            aggregated[modality] = AggregatedFeature(modality, side, seq)
        if "imf" in ablate:
            seq = (aggregated["video"].seq + aggregated["text"].seq
                   + aggregated["audio"].seq) * (1.0 / 3.0)
            return FusedContext(side=side, seq=seq)
        graph = build_graph(aggregated["video"], aggregated["text"],
                            aggregated["audio"], current_text,
                            tc_intra_edges=self.config.tc_intra_edges,
                            intra_window=self.config.intra_window)
        if "int-imf" in ablate:
            graph = graph.without_interaction_edges()
        fusion = self._side_module("graph_fusion", side)
        return FusedContext(side=side, seq=fusion(graph))

    # -- full pipeline -------------------------------------------------------

    def forward(self, sample: DubbingSample, ablate=()):
        ablate = frozenset(ablate)
        unknown = ablate.difference(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}; "
                             f"valid flags: {', '.join(ABLATION_FLAGS)}")
        hidden, current_text, lip_skipped = self.encode_current(
            sample.phonemes, sample.lip_frames, sample.durations)
        fused = {}
        for side, flag, sentence in (("previous", "pre", sample.context_previous),
                                     ("following", "fol", sample.context_following)):
            if flag in ablate or sentence is None:
                continue
            fused[side] = self._encode_side(side, sentence, current_text, ablate)
        blended = self.gated_fuse(
            fused["previous"].seq if "previous" in fused else None,
            fused["following"].seq if "following" in fused else None)
        if "caa" not in ablate:
            hidden = self.context_aware_adapt(hidden, blended)
        pitch, energy, decoder_in = self.predict_prosody(
            hidden, sample.lip_frames, sample.durations)
        frames = length_regulate(decoder_in, sample.durations)
        mel = self.decode_mel(frames)
        return Predictions(mel=mel, pitch=pitch, energy=energy,
                           current_text=current_text, fused=fused,
                           lip_skipped=lip_skipped)


@dataclass
class LossWeights:
    mel: float = 1.0
    pitch: float = 0.1
    energy: float = 0.1


def compute_losses(predictions: Predictions, sample: DubbingSample,
                   weights: LossWeights = LossWeights()):
    """Weighted sum of mel L1 and pitch/energy MSE, plus the breakdown."""
    if predictions.mel.shape != sample.mel.shape:
        raise ShapeError("mel", sample.mel.shape, predictions.mel.shape, "loss")
    if predictions.pitch.shape != sample.pitch.shape:
        raise ShapeError("pitch", sample.pitch.shape, predictions.pitch.shape, "loss")
    if predictions.energy.shape != sample.energy.shape:
        raise ShapeError("energy", sample.energy.shape, predictions.energy.shape, "loss")
    mel_l1 = (predictions.mel - Tensor(sample.mel)).abs().mean()
    pitch_err = predictions.pitch - Tensor(sample.pitch)
    pitch_mse = (pitch_err * pitch_err).mean()
    energy_err = predictions.energy - Tensor(sample.energy)
    energy_mse = (energy_err * energy_err).mean()
    total = weights.mel * mel_l1 + weights.pitch * pitch_mse \
        + weights.energy * energy_mse
    breakdown = {"mel_l1": float(mel_l1.data), "pitch_mse": float(pitch_mse.data),
                 "energy_mse": float(energy_mse.data)}
    return total, breakdown


# -- checkpoints ----------------------------------------------------------------
#
# Single binary container: one JSON header line (architecture config, step
# count, optional trainer state), then named float64 tensors in the corpus
# tensor format, each prefixed by a length-counted utf-8 name.


def save_checkpoint(path, model: DubbingModel, step=0, extra=None):
    entries = [("param/" + n, p.data) for n, p in model.named_parameters()]
    entries += [("buffer/" + n, b) for n, b in model.named_buffers()]
    if extra:
        entries += [("extra/" + n, np.asarray(v, dtype=np.float64))
                    for n, v in extra.get("tensors", {}).items()]
    header = {
        "format": "contextdub-checkpoint",
        "version": 1,
        "step": int(step),
        "config": asdict(model.config),
        "tensor_count": len(entries),
    }
    if extra:
        header.update({k: v for k, v in extra.items() if k != "tensors"})
    buf = io.BytesIO()
    buf.write(json.dumps(header).encode("utf-8") + b"\n")
    for name, data in entries:
        encoded = name.encode("utf-8")
        buf.write(len(encoded).to_bytes(4, "little"))
        buf.write(encoded)
        buf.write(tensorio.encode_tensor(np.asarray(data, dtype=np.float64)))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (model, header, extra_tensors); the model is in eval mode."""
    with open(path, "rb") as fh:
        blob = fh.read()
    newline = blob.index(b"\n")
    header = json.loads(blob[:newline].decode("utf-8"))
    if header.get("format") != "contextdub-checkpoint":
        raise ValueError(f"not a checkpoint file: {path}")
    model = DubbingModel(ModelConfig(**header["config"]))
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    pos = newline + 1
    extra = {}
    for _ in range(header["tensor_count"]):
        name_len = int.from_bytes(blob[pos:pos + 4], "little")
        pos += 4
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        data, pos = tensorio.decode_tensor(blob, pos)
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key].data = np.asarray(data, dtype=np.float64)
        elif kind == "buffer":
            owner, _, leaf = key.rpartition(".")
            model.get_submodule(owner).set_buffer(leaf, data)
            buffers[key] = data
        else:
            extra[key] = data
    model.eval()
    return model, header, extra
