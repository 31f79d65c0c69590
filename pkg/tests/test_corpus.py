"""Corpus generator determinism, tensor wire format, manifest validation,
and the cross-sentence prosody dependence the corpus exists to provide."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from contextdub.corpus import (CorpusConfig, corpus_digest, generate_corpus,
                               load_manifest)
from contextdub.errors import ManifestError, TensorFormatError
from contextdub.tensorio import (decode_tensor, encode_tensor, read_tensor,
                                 read_tensor_shape, write_tensor)


def small_cfg(**overrides):
    base = dict(num_triples=8, phonemes_per_sentence=(6, 9),
                duration_frames=(3, 5), mel_bins=16, seed=3)
    base.update(overrides)
    return CorpusConfig(**base)


class TestTensorFormat:
    def test_round_trip_bits(self, tmp_path):
        data = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
        path = tmp_path / "t.m2ci"
        write_tensor(path, data)
        back = read_tensor(path)
        assert back.dtype == np.float32
        assert back.tobytes() == data.tobytes()

    def test_vector_header_is_ten_bytes(self, tmp_path):
        # magic 4 + dtype 1 + rank 1 + one 4-byte dim = 10
        path = tmp_path / "v.m2ci"
        vec = np.arange(10, dtype=np.float32)
        write_tensor(path, vec)
        blob = path.read_bytes()
        assert len(blob) == 10 + 10 * 4
        assert blob[:4] == b"M2CI"
        assert blob[4] == 0 and blob[5] == 1

    def test_bad_magic_offset_zero(self, tmp_path):
        path = tmp_path / "bad.m2ci"
        path.write_bytes(b"XXXX" + bytes(10))
        with pytest.raises(TensorFormatError) as err:
            read_tensor(path)
        assert err.value.offset == 0

    def test_truncated_payload_reports_offset(self, tmp_path):
        data = np.ones((4, 4), dtype=np.float32)
        blob = encode_tensor(data)
        path = tmp_path / "trunc.m2ci"
        path.write_bytes(blob[:-8])
        with pytest.raises(TensorFormatError, match="truncated payload"):
            read_tensor(path)

    def test_unknown_dtype_code(self, tmp_path):
        blob = bytearray(encode_tensor(np.ones(2, dtype=np.float32)))
        blob[4] = 9
        with pytest.raises(TensorFormatError) as err:
            decode_tensor(bytes(blob))
        assert err.value.offset == 4

    def test_float64_code_round_trips(self, tmp_path):
        data = np.random.default_rng(1).normal(size=(2, 3))
        path = tmp_path / "d.m2ci"
        write_tensor(path, data)
        back = read_tensor(path)
        assert back.dtype == np.float64
        assert back.tobytes() == data.tobytes()

    def test_header_shape_reader(self, tmp_path):
        path = tmp_path / "s.m2ci"
        write_tensor(path, np.zeros((5, 2, 7), dtype=np.float32))
        assert read_tensor_shape(path) == (5, 2, 7)

    @settings(max_examples=60, deadline=None)
    @given(arr=arrays(dtype=np.float32,
                      shape=array_shapes(min_dims=0, max_dims=4, min_side=0,
                                         max_side=6),
                      elements=st.floats(-1e6, 1e6, width=32)))
    def test_round_trip_property(self, arr):
        decoded, end = decode_tensor(encode_tensor(arr))
        assert end == len(encode_tensor(arr))
        assert decoded.shape == arr.shape
        assert decoded.tobytes() == arr.tobytes()


class TestGenerateCorpus:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_corpus(small_cfg(), a)
        generate_corpus(small_cfg(), b)
        assert corpus_digest(a) == corpus_digest(b)
        assert (a / "manifest").read_bytes() == (b / "manifest").read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_corpus(small_cfg(seed=1), a)
        generate_corpus(small_cfg(seed=2), b)
        assert corpus_digest(a) != corpus_digest(b)

    def test_cardinality_and_context_presence(self, tmp_path):
        cfg = small_cfg(num_triples=100)
        manifest = generate_corpus(cfg, tmp_path / "c")
        assert len(manifest) == 100
        for rec in manifest.records:
            assert rec.pre_phonemes and rec.fol_phonemes
            assert set(rec.tensors) == {"mel", "lip", "pre_video", "pre_audio",
                                        "fol_video", "fol_audio"}

    def test_durations_match_streams(self, tmp_path):
        manifest = generate_corpus(small_cfg(), tmp_path / "c")
        root = manifest.root
        for rec in manifest.records:
            frames = sum(rec.durations)
            assert read_tensor_shape(root / rec.tensors["mel"]) == (frames, 16)
            lip_steps = read_tensor_shape(root / rec.tensors["lip"])[0]
            assert lip_steps == frames // 4

    def test_prosody_state_correlates_with_pitch(self, tmp_path):
        cfg = CorpusConfig(num_triples=500, seed=11)
        manifest = generate_corpus(cfg, tmp_path / "big")
        s_pre = np.array([rec.states[0] for rec in manifest.records])
        mean_pitch = np.array([np.mean(rec.pitch) for rec in manifest.records])
        corr = np.corrcoef(s_pre, mean_pitch)[0, 1]
        assert corr > 0.5

    def test_context_stream_mean_informative(self, tmp_path):
        cfg = CorpusConfig(num_triples=300, seed=13)
        manifest = generate_corpus(cfg, tmp_path / "info")
        stream_means = []
        mean_pitch = []
        for rec in manifest.records:
            audio = read_tensor(manifest.root / rec.tensors["pre_audio"])
            stream_means.append(float(audio.mean()))
            mean_pitch.append(float(np.mean(rec.pitch)))
        corr = np.corrcoef(stream_means, mean_pitch)[0, 1]
        assert corr > 0.3

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError, match="prosody_ar_coeff"):
            CorpusConfig(prosody_ar_coeff=1.2).validate()
        with pytest.raises(ValueError, match="16 mel frames"):
            CorpusConfig(phonemes_per_sentence=(2, 4),
                         duration_frames=(1, 2)).validate()


class TestLoadManifest:
    def test_fresh_corpus_loads_cleanly(self, tmp_path, recwarn):
        generate_corpus(small_cfg(), tmp_path / "c")
        manifest = load_manifest(tmp_path / "c")
        assert len(manifest) == 8
        assert len(recwarn) == 0

    def test_duration_sum_mismatch_names_sample(self, tmp_path):
        root = tmp_path / "c"
        generate_corpus(small_cfg(), root)
        lines = (root / "manifest").read_text().splitlines()
        record = json.loads(lines[1])
        record["durations"][0] += 1
        lines[1] = json.dumps(record)
        (root / "manifest").write_text("\n".join(lines) + "\n")
        with pytest.raises(ManifestError, match=record["sample_id"]):
            load_manifest(root)

    def test_missing_tensor_file_names_path(self, tmp_path):
        root = tmp_path / "c"
        manifest = generate_corpus(small_cfg(), root)
        victim = root / manifest.records[2].tensors["pre_audio"]
        victim.unlink()
        with pytest.raises(ManifestError, match="pre_audio"):
            load_manifest(root)

    def test_wrong_format_header(self, tmp_path):
        root = tmp_path / "c"
        root.mkdir()
        (root / "manifest").write_text('{"format": "other"}\n')
        with pytest.raises(ManifestError, match="format"):
            load_manifest(root)
