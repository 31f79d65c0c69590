"""contextdub: a context-aware video dubbing synthesizer at desk scale.

Numpy/scipy library with its own reverse-mode autodiff. Multiscale
multimodal context encoders aggregate neighbouring-sentence video, text
and audio against the current text, fuse them through an interaction
graph with graph attention, and condition a non-autoregressive mel
synthesizer through a gated cross-attention adaptor. A synthetic corpus
with controllable cross-sentence prosody dependence and a from-scratch
metric suite (F0 tracking, GPE, FFE, WER) close the loop.
"""

from .aggregation import AggregatedFeature, ModalityAggregators, MultiscaleAggregator
from .config import RunConfig, TrainingConfig
from .corpus import (CorpusConfig, Manifest, corpus_digest, generate_corpus,
                     load_manifest)
from .errors import (ConfigError, ManifestError, NonFiniteLossError,
                     SequenceTooShortError, ShapeError, TensorFormatError,
                     UnknownSymbolError)
from .extraction import (AudioContextEncoder, ContextSentence, FrontEnd,
                         GlobalLocalFeatures, TextContextEncoder, TextEncoder,
                         VideoContextEncoder, synthetic_front_end)
from .fusion import (FusedContext, GraphAttentionEncoder, GraphFusion,
                     InteractionGraph, build_graph)
from .gradcheck import GradCheckReport, compare_gradients, gradient_check
from .metrics import (EvalReport, PitchTrack, Transcript, estimate_f0, ffe, gpe,
                      track_from_phoneme_pitch, wer)
from .nn import (AttentionOutput, BatchNorm1d, Conv1d, ConvDownsampleStack,
                 Dropout, Embedding, FFTBlock, LayerNorm, Linear, Module,
                 MultiHeadAttention, Parameter, avg_pool_halve,
                 check_feature_sequence)
from .synthesis import (ABLATION_FLAGS, DubbingModel, DubbingSample, LossWeights,
                        ModelConfig, Predictions, compute_losses, length_regulate,
                        load_checkpoint, save_checkpoint)
from .tensor import Tensor
from .tensorio import read_tensor, read_tensor_shape, write_tensor
from .training import (Adam, OptimizerConfig, Trainer, evaluate, load_dataset,
                       split_samples)

__version__ = "0.1.0"
