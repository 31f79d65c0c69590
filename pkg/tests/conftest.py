import numpy as np
import pytest

from contextdub.corpus import CorpusConfig, generate_corpus, load_manifest
from contextdub.extraction import ContextSentence
from contextdub.synthesis import DubbingModel, DubbingSample, ModelConfig
from contextdub.training import load_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_model_config(**overrides):
    base = dict(hidden_dim=16, mel_bins=8, vocab_size=12, raw_feature_dim=8,
                text_encoder_layers=1, mel_decoder_layers=2, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


def make_context(rng, sentence_id="ctx", video_steps=8, audio_steps=33,
                 num_phonemes=5, raw_dim=8, vocab=12):
    return ContextSentence(
        sentence_id=sentence_id,
        video_frames=rng.normal(size=(video_steps, raw_dim)),
        phonemes=rng.integers(0, vocab, size=num_phonemes),
        audio_frames=rng.normal(size=(audio_steps, raw_dim)),
    )


def make_sample(rng, num_phonemes=3, duration=6, raw_dim=8, mel_bins=8, vocab=12,
                with_context=True, sample_id="s0"):
    durations = np.full(num_phonemes, duration, dtype=np.int64)
    frames = int(durations.sum())
    return DubbingSample(
        sample_id=sample_id,
        phonemes=rng.integers(0, vocab, size=num_phonemes),
        durations=durations,
        pitch=np.log(200.0) + 0.1 * rng.normal(size=num_phonemes),
        energy=1.0 + 0.1 * rng.normal(size=num_phonemes),
        mel=rng.normal(size=(frames, mel_bins)),
        lip_frames=rng.normal(size=(frames // 4, raw_dim)),
        transcript=["ab", "cd"],
        context_previous=make_context(rng, "pre", raw_dim=raw_dim, vocab=vocab)
        if with_context else None,
        context_following=make_context(rng, "fol", raw_dim=raw_dim, vocab=vocab)
        if with_context else None,
    )


@pytest.fixture
def tiny_model():
    return DubbingModel(tiny_model_config(), seed=7).eval()


@pytest.fixture
def tiny_sample(rng):
    return make_sample(rng)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    cfg = CorpusConfig(num_triples=10, phonemes_per_sentence=(6, 9),
                       duration_frames=(3, 5), mel_bins=16, seed=5)
    generate_corpus(cfg, root)
    return root


@pytest.fixture(scope="session")
def small_corpus_samples(small_corpus):
    return load_dataset(load_manifest(small_corpus))
