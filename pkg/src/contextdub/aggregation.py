"""Per-modality aggregation of global/local context features.

The aggregator merges one modality's sentence-level vector and
quasi-phoneme sequence while conditioning on the current text feature,
so its output always has the current text's length. Stages, in order:

1. broadcast the global vector onto every current-text step and restore
   the hidden size with a 1-D convolution,
2. self-attention over the result,
3. cross-attention with the self-attention output as query and the
   local sequence as key/value,
4. an FFT block,
5. broadcast the global vector again and project back down linearly.

Self- and cross-attention are plain attention layers (the surrounding
FFT block supplies residual normalization) with 2 heads each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .extraction import GlobalLocalFeatures
from .nn import (Conv1d, FFTBlock, Linear, Module, MultiHeadAttention,
                 add_positions)
from .tensor import Tensor, broadcast_rows, concat


@dataclass
class AggregatedFeature:
    """One modality's context sequence aligned to the current text length."""

    modality: str
    side: str  # "previous" or "following"
    seq: Tensor  # (current_text_steps, hidden_dim)


@dataclass
class AggregationDetails:
    self_attention_weights: Tensor
    cross_attention_weights: Tensor


class MultiscaleAggregator(Module):
    def __init__(self, dim, rng, heads=2, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.dim = dim
        self.merge_conv = Conv1d(2 * dim, dim, 3, rng)
        self.self_attention = MultiHeadAttention(dim, heads, rng)
        self.cross_attention = MultiHeadAttention(dim, heads, rng)
        self.fft = FFTBlock(dim, rng, dropout=dropout, dropout_rng=dropout_rng)
        self.out_proj = Linear(2 * dim, dim, rng)

    def forward(self, current_text, features: GlobalLocalFeatures,
                return_details=False):
        if current_text.shape[-1] != self.dim:
            raise ShapeError("hidden_dim", self.dim, current_text.shape[-1],
                             "aggregator current text")
        if features.global_vec.shape != (self.dim,):
            raise ShapeError("global_vec dim", (self.dim,),
                             features.global_vec.shape, "aggregator")
        steps = current_text.shape[0]
        broadcast = broadcast_rows(features.global_vec, steps)
        x = self.merge_conv(concat([current_text, broadcast], axis=1))
        attended = self.self_attention(x, x, x)
        local = add_positions(features.local_seq)
        crossed = self.cross_attention(attended.values, local, local)
        y = self.fft(crossed.values)
        out = self.out_proj(concat([y, broadcast], axis=1))
        if return_details:
            return out, AggregationDetails(attended.weights, crossed.weights)
        return out


class ModalityAggregators(Module):
    """Three independently parameterized aggregators, one per modality."""

    def __init__(self, dim, rng, heads=2, dropout=0.1, dropout_rng=None):
        super().__init__()
        self.video = MultiscaleAggregator(dim, rng, heads, dropout, dropout_rng)
        self.text = MultiscaleAggregator(dim, rng, heads, dropout, dropout_rng)
        self.audio = MultiscaleAggregator(dim, rng, heads, dropout, dropout_rng)

    def forward(self, current_text, video_glf, text_glf, audio_glf, side="previous"):
        out = []
        for name, glf in (("video", video_glf), ("text", text_glf),
                          ("audio", audio_glf)):
            if glf.modality != name:
                raise ValueError(
                    f"expected '{name}' features, got '{glf.modality}'")
            aggregator = getattr(self, name)
            out.append(AggregatedFeature(modality=name, side=side,
                                         seq=aggregator(current_text, glf)))
        return tuple(out)
