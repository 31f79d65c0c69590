"""Synthetic multimodal corpus with controllable cross-sentence prosody.

Each sample is an independent triple of sentences (previous, current,
following). A hidden prosody state follows an order-1 autoregression
across the triple,

    s_next = rho * s + eps,   eps ~ N(0, 1 - rho^2),

so the stationary state variance is 1 and neighbouring states correlate
by rho. The current sentence's per-phoneme pitch (log domain) and energy
load linearly on its state; the context sentences' video/audio streams
are fixed random linear encodings of their own state and the locally
active phoneme, plus modality noise. Current-sentence lip features
encode phoneme identity only, so the neighbouring sentences are the sole
observable evidence about the current state: a model that reads them can
predict pitch strictly better than one that cannot.

Triples do not overlap (sample k's following sentence is unrelated to
sample k+1). Everything is deterministic given the config seed.

On-disk layout: a line-oriented ``manifest`` file at the corpus root and
binary ``tensors/<sample_id>/<field>.m2ci`` files for the per-frame
streams and the mel target.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .extraction import ContextSentence
from .tensorio import read_tensor, read_tensor_shape, write_tensor

TENSOR_FIELDS = ("mel", "lip", "pre_video", "pre_audio", "fol_video", "fol_audio")
MANIFEST_NAME = "manifest"
_WORD_LETTERS = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class CorpusConfig:
    num_triples: int = 100
    phoneme_vocab_size: int = 40
    phonemes_per_sentence: tuple = (8, 20)
    duration_frames: tuple = (4, 12)
    raw_feature_dim: int = 64
    mel_bins: int = 80
    prosody_ar_coeff: float = 0.8
    pitch_base: float = float(np.log(180.0))
    pitch_state_gain: float = 0.35
    pitch_noise: float = 0.05
    energy_state_gain: float = 0.25
    energy_noise: float = 0.05
    video_noise: float = 0.1
    audio_noise: float = 0.1
    lip_noise: float = 0.1
    seed: int = 0

    def validate(self):
        if not 0.0 < self.prosody_ar_coeff < 1.0:
            raise ValueError(f"prosody_ar_coeff must lie in (0, 1), "
                             f"got {self.prosody_ar_coeff}")
        lo, hi = self.phonemes_per_sentence
        dlo, dhi = self.duration_frames
        if not (1 <= lo <= hi) or not (1 <= dlo <= dhi):
            raise ValueError("phoneme and duration ranges must be ordered and >= 1")
        if lo * dlo < 16:
            raise ValueError(
                "shortest sentence must span >= 16 mel frames so context "
                f"streams stay admissible (got {lo} phonemes x {dlo} frames)")
        if self.num_triples < 1:
            raise ValueError("num_triples must be >= 1")


@dataclass
class SampleRecord:
    sample_id: str
    phonemes: list
    durations: list
    pitch: list
    energy: list
    transcript: list
    pre_phonemes: list
    fol_phonemes: list
    states: list                    # [s_pre, s_cur, s_fol], kept for analysis
    tensors: dict = field(default_factory=dict)  # field -> relative path


@dataclass
class Manifest:
    root: Path
    config: dict
    records: list

    def __len__(self):
        return len(self.records)


class _Tables:
    """Fixed per-vocabulary encoding tables, derived only from the seed."""

    def __init__(self, cfg: CorpusConfig):
        rng = np.random.default_rng([cfg.seed, 7])
        v, d, b = cfg.phoneme_vocab_size, cfg.raw_feature_dim, cfg.mel_bins
        self.pitch_offset = rng.normal(0.0, 0.15, size=v)
        self.energy_offset = rng.normal(0.0, 0.15, size=v)
        self.video = rng.normal(0.0, 0.5, size=(v, d))
        self.audio = rng.normal(0.0, 0.5, size=(v, d))
        self.lip = rng.normal(0.0, 0.5, size=(v, d))
        # State directions keep a 0.5 mean component so stream grand means
        # stay linearly informative about the hidden state.
        self.video_state = 0.5 + rng.normal(0.0, 0.3, size=d)
        self.audio_state = 0.5 + rng.normal(0.0, 0.3, size=d)
        self.mel_template = rng.normal(0.0, 0.4, size=(v, b))
        self.mel_pitch_dir = rng.normal(0.0, 0.3, size=b)
        self.mel_wave_phase = rng.uniform(0.0, 2 * np.pi, size=b)


def _transcript(phonemes):
    words = []
    for start in range(0, len(phonemes), 3):
        group = phonemes[start:start + 3]
        words.append("".join(_WORD_LETTERS[p % 26] for p in group))
    return words


def _sentence_plan(cfg, rng):
    lo, hi = cfg.phonemes_per_sentence
    n = int(rng.integers(lo, hi + 1))
    phonemes = rng.integers(0, cfg.phoneme_vocab_size, size=n)
    dlo, dhi = cfg.duration_frames
    durations = rng.integers(dlo, dhi + 1, size=n)
    return phonemes, durations


def _stream(phonemes, durations, table, state_dir, state, noise, rng, frames_per_step):
    frame_phonemes = np.repeat(phonemes, durations)
    steps = len(frame_phonemes) // frames_per_step
    step_phonemes = frame_phonemes[np.arange(steps) * frames_per_step]
    stream = table[step_phonemes]
    if state_dir is not None:
        stream = stream + state * state_dir
    stream = stream + rng.normal(0.0, noise, size=stream.shape)
    return stream.astype(np.float32)


def _mel_target(cfg, tables, phonemes, durations, pitch):
    frames = int(durations.sum())
    idx = np.repeat(np.arange(len(phonemes)), durations)
    mel = tables.mel_template[phonemes[idx]]
    mel = mel + np.outer(pitch[idx] - cfg.pitch_base, tables.mel_pitch_dir)
    t = np.arange(frames).reshape(-1, 1)
    mel = mel + 0.1 * np.sin(2 * np.pi * t / 32.0 + tables.mel_wave_phase)
    return mel.astype(np.float32)


def generate_corpus(cfg: CorpusConfig, out_dir) -> Manifest:
    """Write a corpus to ``out_dir`` and return its manifest."""
    cfg.validate()
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        probe = root / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"corpus directory '{root}' is not writable: {exc}") from exc

    tables = _Tables(cfg)
    rng = np.random.default_rng([cfg.seed, 11])
    sigma = np.sqrt(1.0 - cfg.prosody_ar_coeff ** 2)
    records = []
    for i in range(cfg.num_triples):
        sample_id = f"t{i:05d}"
        s_pre = rng.normal()
        s_cur = cfg.prosody_ar_coeff * s_pre + sigma * rng.normal()
        s_fol = cfg.prosody_ar_coeff * s_cur + sigma * rng.normal()

        cur_ph, cur_dur = _sentence_plan(cfg, rng)
        pre_ph, pre_dur = _sentence_plan(cfg, rng)
        fol_ph, fol_dur = _sentence_plan(cfg, rng)

        pitch = cfg.pitch_base + cfg.pitch_state_gain * s_cur \
            + tables.pitch_offset[cur_ph] \
            + rng.normal(0.0, cfg.pitch_noise, size=len(cur_ph))
        pitch = np.clip(pitch, np.log(60.0), np.log(560.0))
        energy = 1.0 + cfg.energy_state_gain * s_cur \
            + tables.energy_offset[cur_ph] \
            + rng.normal(0.0, cfg.energy_noise, size=len(cur_ph))

        streams = {
            "mel": _mel_target(cfg, tables, cur_ph, cur_dur, pitch),
            "lip": _stream(cur_ph, cur_dur, tables.lip, None, 0.0,
                           cfg.lip_noise, rng, 4),
            "pre_video": _stream(pre_ph, pre_dur, tables.video, tables.video_state,
                                 s_pre, cfg.video_noise, rng, 4),
            "pre_audio": _stream(pre_ph, pre_dur, tables.audio, tables.audio_state,
                                 s_pre, cfg.audio_noise, rng, 1),
            "fol_video": _stream(fol_ph, fol_dur, tables.video, tables.video_state,
                                 s_fol, cfg.video_noise, rng, 4),
            "fol_audio": _stream(fol_ph, fol_dur, tables.audio, tables.audio_state,
                                 s_fol, cfg.audio_noise, rng, 1),
        }
        sample_dir = root / "tensors" / sample_id
        sample_dir.mkdir(parents=True, exist_ok=True)
        tensors = {}
        for name, data in streams.items():
            rel = f"tensors/{sample_id}/{name}.m2ci"
            write_tensor(root / rel, data)
            tensors[name] = rel

        records.append(SampleRecord(
            sample_id=sample_id,
            phonemes=[int(p) for p in cur_ph],
            durations=[int(d) for d in cur_dur],
            pitch=[float(p) for p in pitch],
            energy=[float(e) for e in energy],
            transcript=_transcript(cur_ph),
            pre_phonemes=[int(p) for p in pre_ph],
            fol_phonemes=[int(p) for p in fol_ph],
            states=[float(s_pre), float(s_cur), float(s_fol)],
            tensors=tensors,
        ))

    manifest = Manifest(root=root, config=asdict(cfg), records=records)
    with open(root / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": "contextdub-corpus", "version": 1,
                             "num_samples": len(records),
                             "config": asdict(cfg)}) + "\n")
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")
    return manifest


def load_manifest(path) -> Manifest:
    """Parse and validate a corpus manifest.

    Every referenced tensor file must exist and the per-record durations
    must sum to the stored mel frame count.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"manifest not found at {path}")
    root = path.parent
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError("<header>", "format", "manifest file is empty")
    header = json.loads(lines[0])
    if header.get("format") != "contextdub-corpus":
        raise ManifestError("<header>", "format",
                            f"unexpected format {header.get('format')!r}")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        rec = SampleRecord(**json.loads(line))
        for name in TENSOR_FIELDS:
            if name not in rec.tensors:
                raise ManifestError(rec.sample_id, name, "missing tensor entry")
            tensor_path = root / rec.tensors[name]
            if not tensor_path.exists():
                raise ManifestError(rec.sample_id, name,
                                    f"referenced tensor file '{tensor_path}' does not exist")
        mel_frames = read_tensor_shape(root / rec.tensors["mel"])[0]
        if sum(rec.durations) != mel_frames:
            raise ManifestError(rec.sample_id, "durations",
                                f"durations sum to {sum(rec.durations)} but mel "
                                f"has {mel_frames} frames")
        if len(rec.durations) != len(rec.phonemes) or min(rec.durations) < 1:
            raise ManifestError(rec.sample_id, "durations",
                                "need one positive duration per phoneme")
        records.append(rec)
    if header.get("num_samples") != len(records):
        raise ManifestError("<header>", "num_samples",
                            f"header says {header.get('num_samples')}, "
                            f"found {len(records)}")
    return Manifest(root=root, config=header.get("config", {}), records=records)


def load_context_sentence(manifest: Manifest, record: SampleRecord, side):
    prefix = {"previous": "pre", "following": "fol"}[side]
    return ContextSentence(
        sentence_id=f"{record.sample_id}/{prefix}",
        video_frames=read_tensor(manifest.root / record.tensors[f"{prefix}_video"]),
        phonemes=np.asarray(getattr(record, f"{prefix}_phonemes"), dtype=np.int64),
        audio_frames=read_tensor(manifest.root / record.tensors[f"{prefix}_audio"]),
    )


def corpus_digest(root) -> str:
    """SHA-256 over the manifest and every tensor file, in sorted path order."""
    root = Path(root)
    digest = hashlib.sha256()
    files = [root / MANIFEST_NAME] + sorted((root / "tensors").rglob("*.m2ci"))
    for f in files:
        digest.update(f.relative_to(root).as_posix().encode("utf-8"))
        digest.update(f.read_bytes())
    return digest.hexdigest()
