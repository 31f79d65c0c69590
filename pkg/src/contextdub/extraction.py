"""Multiscale feature extraction for context sentences.

Each modality of a neighbouring sentence yields a pair of features: one
global sentence-level vector from a pluggable front end, and one local
quasi-phoneme-level sequence from a trainable encoder. Video frames
arrive at 40 ms per step and are halved twice (4x reduction); audio
frames arrive at 10 ms per step and are halved four times (16x). Text
keeps one step per phoneme. The quasi-phoneme level is defined purely by
these fixed reduction ratios; no alignment to real phoneme boundaries is
attempted.

Front ends stand in for frozen pretrained perception models: they are
deterministic functions of the stored raw streams and carry no trainable
state. The synthetic front end returns the stored stream as-is and
summarizes a sentence by a fixed linear projection of the stream's
temporal mean.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import UnknownSymbolError
from .nn import (ConvDownsampleStack, Embedding, FFTBlock, Linear, Module,
                 ModuleList, add_positions)
from .tensor import Tensor

MODALITIES = ("video", "text", "audio")


@dataclass
class ContextSentence:
    """Raw multimodal inputs of one neighbouring sentence."""

    sentence_id: str
    video_frames: np.ndarray  # (steps, raw_dim) at 40 ms/step
    phonemes: np.ndarray      # (num_phonemes,) integer ids
    audio_frames: np.ndarray  # (steps, raw_dim) at 10 ms/step

    def __post_init__(self):
        self.video_frames = np.asarray(self.video_frames, dtype=np.float64)
        self.audio_frames = np.asarray(self.audio_frames, dtype=np.float64)
        self.phonemes = np.asarray(self.phonemes, dtype=np.int64)
        if self.video_frames.shape[0] < 4:
            raise ValueError(
                f"sentence '{self.sentence_id}': need >= 4 video steps, "
                f"got {self.video_frames.shape[0]}")
        if self.audio_frames.shape[0] < 16:
            raise ValueError(
                f"sentence '{self.sentence_id}': need >= 16 audio steps, "
                f"got {self.audio_frames.shape[0]}")
        if self.phonemes.size == 0:
            raise ValueError(f"sentence '{self.sentence_id}': empty phoneme sequence")


@dataclass
class GlobalLocalFeatures:
    """Sentence-level vector plus quasi-phoneme-level sequence for one modality."""

    modality: str
    global_vec: Tensor  # (hidden_dim,)
    local_seq: Tensor   # (local_steps, hidden_dim)


@dataclass
class FrontEnd:
    """Pluggable pair of deterministic feature functions for one modality."""

    modality: str
    frame_features: Callable[[ContextSentence], np.ndarray]
    sentence_feature: Callable[[ContextSentence], np.ndarray]


def synthetic_front_end(modality, raw_dim, out_dim, vocab_size=None, seed=0):
    """Front end over the synthetic corpus streams.

    ``frame_features`` returns the feature stream stored with the sample.
    ``sentence_feature`` projects the stream's temporal mean (a one-hot
    average for text) through a fixed seeded linear map, so it is
    invariant to any reordering of the stream in time.
    """
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality '{modality}'")
    in_dim = vocab_size if modality == "text" else raw_dim
    if in_dim is None:
        raise ValueError("text front end needs vocab_size")
    rng = np.random.default_rng([seed, MODALITIES.index(modality)])
    projection = rng.normal(0.0, in_dim ** -0.5, size=(in_dim, out_dim))
    bias = rng.normal(0.0, 0.02, size=out_dim)

    def frames(sentence):
        if modality == "text":
            ids = sentence.phonemes
            bad = (ids < 0) | (ids >= in_dim)
            if np.any(bad):
                raise UnknownSymbolError(int(ids[bad][0]), in_dim)
            onehot = np.zeros((ids.size, in_dim))
            onehot[np.arange(ids.size), ids] = 1.0
            return onehot
        stream = sentence.video_frames if modality == "video" else sentence.audio_frames
        if stream is None or stream.size == 0:
            raise ValueError(
                f"sentence '{sentence.sentence_id}' has no stored {modality} stream")
        return stream

    def sentence_vector(sentence):
        return frames(sentence).mean(axis=0) @ projection + bias

    return FrontEnd(modality=modality, frame_features=frames,
                    sentence_feature=sentence_vector)


class _DownsampleEncoder(Module):
    """Projection, conv downsample stack, Tanh, linear, FFT block."""

    def __init__(self, num_layers, raw_dim, dim, rng, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.project = Linear(raw_dim, dim, rng)
        self.stack = ConvDownsampleStack(num_layers, dim, rng, filters=dim,
                                         dropout=dropout, dropout_rng=dropout_rng)
        self.post = Linear(dim, dim, rng)
        self.fft = FFTBlock(dim, rng, dropout=dropout, dropout_rng=dropout_rng)

    def forward(self, stream):
        x = self.project(Tensor(stream))
        return self.fft(self.post(self.stack(x).tanh()))


class VideoContextEncoder(_DownsampleEncoder):
    """Local video path: 4x temporal reduction of 40 ms frame features."""

    def __init__(self, raw_dim, dim, rng, dropout=0.1, dropout_rng=None):
        super().__init__(2, raw_dim, dim, rng, dropout, dropout_rng)

    def encode(self, sentence, front_end):
        return GlobalLocalFeatures(
            modality="video",
            global_vec=Tensor(front_end.sentence_feature(sentence)),
            local_seq=self.forward(front_end.frame_features(sentence)),
        )


class AudioContextEncoder(_DownsampleEncoder):
    """Local audio path: 16x temporal reduction of 10 ms frame features."""

    def __init__(self, raw_dim, dim, rng, dropout=0.1, dropout_rng=None):
        super().__init__(4, raw_dim, dim, rng, dropout, dropout_rng)

    def encode(self, sentence, front_end):
        return GlobalLocalFeatures(
            modality="audio",
            global_vec=Tensor(front_end.sentence_feature(sentence)),
            local_seq=self.forward(front_end.frame_features(sentence)),
        )


class TextEncoder(Module):
    """Phoneme embedding followed by a stack of FFT blocks; length-preserving."""

    def __init__(self, vocab_size, dim, rng, num_layers=2, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.embedding = Embedding(vocab_size, dim, rng)
        self.blocks = ModuleList(
            FFTBlock(dim, rng, dropout=dropout, dropout_rng=dropout_rng)
            for _ in range(num_layers)
        )

    def forward(self, phonemes):
        x = add_positions(self.embedding(phonemes))
        for block in self.blocks:
            x = block(x)
        return x


class TextContextEncoder(Module):
    """Local phoneme-level text path for a context sentence."""

    def __init__(self, vocab_size, dim, rng, num_layers=2, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.encoder = TextEncoder(vocab_size, dim, rng, num_layers, dropout, dropout_rng)

    def encode(self, sentence, front_end):
        return GlobalLocalFeatures(
            modality="text",
            global_vec=Tensor(front_end.sentence_feature(sentence)),
            local_seq=self.encoder(sentence.phonemes),
        )
