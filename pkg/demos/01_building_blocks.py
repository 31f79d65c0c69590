"""Tour of the differentiable building blocks.

Shows the attention weight contract, the fixed 4x/16x temporal reductions
of the downsample stacks, and the finite-difference gradient checker that
every block in this library is verified with.
"""

import numpy as np

from contextdub import (ConvDownsampleStack, FFTBlock, MultiHeadAttention,
                        Tensor, gradient_check)

rng = np.random.default_rng(0)

print("== multi-head attention ==")
attention = MultiHeadAttention(64, 2, rng)
query = Tensor(rng.normal(size=(5, 64)))
keys = Tensor(rng.normal(size=(9, 64)))
out = attention(query, keys, keys)
print(f"values {out.values.shape}, weights {out.weights.shape} "
      f"(heads x query steps x key steps)")
print("every weight row sums to one:",
      np.allclose(out.weights.data.sum(axis=-1), 1.0))

print("\n== convolutional downsampling ==")
video_stack = ConvDownsampleStack(2, 64, rng, dropout=0.0).eval()
audio_stack = ConvDownsampleStack(4, 64, rng, dropout=0.0).eval()
video = Tensor(rng.normal(size=(40, 64)))   # 40 ms steps
audio = Tensor(rng.normal(size=(64, 64)))   # 10 ms steps
print(f"video 40 steps -> {video_stack(video).shape[0]} (4x reduction)")
print(f"audio 64 steps -> {audio_stack(audio).shape[0]} (16x reduction)")
print("odd lengths floor at each halving: 41 ->",
      video_stack(Tensor(rng.normal(size=(41, 64)))).shape[0])

print("\n== gradient checking ==")
block = FFTBlock(16, rng, dropout=0.0).eval()
x = Tensor(rng.normal(size=(6, 16)))
probe = Tensor(rng.normal(size=(6, 16)))
report = gradient_check(lambda: (block(x) * probe).sum(),
                        block.named_parameters())
print(f"FFT block parameters checked: {len(report.parameters)}")
print(f"max relative error vs central differences: "
      f"{report.max_relative_error:.2e}")
