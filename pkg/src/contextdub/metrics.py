"""Objective dubbing metrics: F0 tracking, GPE, FFE and WER.

The pitch tracker is a plain normalized-autocorrelation detector over
40 ms windows with a 10 ms hop at 16 kHz: a frame is voiced when the
peak normalized autocorrelation in the 50-600 Hz lag range reaches 0.3
and the frame has energy above a silence floor. GPE counts frames
voiced in *both* tracks whose relative pitch error exceeds 20 % (the
reference appears in the denominator); FFE counts, over all frames,
voicing decision errors plus jointly-voiced >20 % pitch errors. WER is
word-level Levenshtein distance over the reference length; transcripts
are case-folded and punctuation-stripped, and no recognizer is bundled,
so hypotheses must be supplied.

Because no vocoder exists at desk scale, tracks can also be built
directly from per-phoneme pitch values expanded by durations, which is
the primary evaluation path.

All functions here are pure and safe to run in parallel over samples.
"""

from __future__ import annotations

import string
import warnings
from dataclasses import dataclass, field

import numpy as np

SAMPLE_RATE = 16000
WINDOW_SECONDS = 0.040
HOP_SECONDS = 0.010
F0_MIN = 50.0
F0_MAX = 600.0
VOICING_THRESHOLD = 0.3
SILENCE_FLOOR = 1e-6          # mean-square energy below this is silence
PITCH_ERROR_RATIO = 0.20


@dataclass
class PitchTrack:
    """Per-frame F0 in Hz (0 when unvoiced) plus voicing flags, 10 ms hop."""

    f0: np.ndarray
    voiced: np.ndarray

    def __post_init__(self):
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        self.voiced = np.asarray(self.voiced, dtype=bool)
        if self.f0.shape != self.voiced.shape:
            raise ValueError("f0 and voiced must have the same length")
        if np.any((self.f0 > 0) != self.voiced):
            raise ValueError("f0 must be positive exactly on voiced frames")
        voiced_f0 = self.f0[self.voiced]
        if voiced_f0.size and (voiced_f0.min() < F0_MIN or voiced_f0.max() > F0_MAX):
            raise ValueError(
                f"voiced f0 must lie in [{F0_MIN:g}, {F0_MAX:g}] Hz")

    def __len__(self):
        return len(self.f0)


@dataclass
class Transcript:
    """Case-folded, punctuation-free word list."""

    words: list

    def __post_init__(self):
        if any(not w for w in self.words):
            raise ValueError("transcript words must be non-empty")

    @classmethod
    def from_text(cls, text):
        table = str.maketrans("", "", string.punctuation)
        words = [w.translate(table).lower() for w in str(text).split()]
        return cls([w for w in words if w])

    @classmethod
    def from_words(cls, words):
        return cls.from_text(" ".join(words))

    def __len__(self):
        return len(self.words)


def estimate_f0(waveform, sample_rate) -> PitchTrack:
    """Frame-wise normalized autocorrelation pitch tracker.

    Only the 16 kHz rate the rest of the pipeline assumes is supported.
    """
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"unsupported sample rate {sample_rate}; "
                         f"expected {SAMPLE_RATE}")
    waveform = np.asarray(waveform, dtype=np.float64)
    window = int(round(WINDOW_SECONDS * sample_rate))
    hop = int(round(HOP_SECONDS * sample_rate))
    if waveform.size < window:
        raise ValueError(f"waveform shorter than one {window}-sample window")
    lag_min = int(np.ceil(sample_rate / F0_MAX))
    lag_max = int(np.floor(sample_rate / F0_MIN))
    num_frames = 1 + (waveform.size - window) // hop
    f0 = np.zeros(num_frames)
    voiced = np.zeros(num_frames, dtype=bool)
    for i in range(num_frames):
        frame = waveform[i * hop:i * hop + window]
        frame = frame - frame.mean()
        energy = float(np.mean(frame * frame))
        if energy < SILENCE_FLOOR:
            continue
        corr = np.empty(lag_max - lag_min + 1)
        sq = frame * frame
        for j, lag in enumerate(range(lag_min, lag_max + 1)):
            a, b = frame[:-lag], frame[lag:]
            denom = np.sqrt(sq[:-lag].sum() * sq[lag:].sum())
            corr[j] = (a @ b) / denom if denom > 0 else 0.0
        # Local maxima only; a periodic signal peaks at every multiple of
        # its period, so take the first peak close to the best one instead
        # of the raw argmax (which octave-errors on near-equal peaks).
        interior = (corr[1:-1] > corr[:-2]) & (corr[1:-1] >= corr[2:])
        candidates = np.flatnonzero(interior) + 1
        candidates = candidates[corr[candidates] >= VOICING_THRESHOLD]
        if candidates.size == 0:
            continue
        best = corr[candidates].max()
        peak = int(candidates[corr[candidates] >= 0.9 * best][0])
        lag = lag_min + peak
        left, mid, right = corr[peak - 1], corr[peak], corr[peak + 1]
        curvature = left - 2 * mid + right
        if curvature < 0:
            lag = lag + 0.5 * (left - right) / curvature
        voiced[i] = True
        f0[i] = float(np.clip(sample_rate / lag, F0_MIN, F0_MAX))
    return PitchTrack(f0=f0, voiced=voiced)


def track_from_phoneme_pitch(log_pitch, durations) -> PitchTrack:
    """Expand per-phoneme log-Hz values into a fully voiced frame track.

    This bypasses waveforms entirely: it is the desk-scale path used to
    score pitch predictions against corpus targets.
    """
    log_pitch = np.asarray(log_pitch, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.int64)
    hz = np.clip(np.exp(log_pitch), F0_MIN, F0_MAX)
    f0 = np.repeat(hz, durations)
    return PitchTrack(f0=f0, voiced=np.ones(len(f0), dtype=bool))


def _aligned(reference: PitchTrack, synthesized: PitchTrack):
    n_ref, n_syn = len(reference), len(synthesized)
    if n_ref != n_syn:
        warnings.warn(f"pitch tracks differ in length ({n_ref} vs {n_syn}); "
                      "truncating to the shorter", stacklevel=3)
    n = min(n_ref, n_syn)
    return (reference.f0[:n], reference.voiced[:n],
            synthesized.f0[:n], synthesized.voiced[:n])


def gpe(reference: PitchTrack, synthesized: PitchTrack):
    """Gross pitch error, percent of jointly-voiced frames.

    Returns ``None`` when no frame is voiced in both tracks: the metric
    is undefined there, which is distinct from a score of 0.
    """
    ref_f0, ref_v, syn_f0, syn_v = _aligned(reference, synthesized)
    joint = ref_v & syn_v
    if not np.any(joint):
        return None
    errors = np.abs(syn_f0[joint] - ref_f0[joint]) / ref_f0[joint] > PITCH_ERROR_RATIO
    return 100.0 * int(errors.sum()) / int(joint.sum())


def ffe(reference: PitchTrack, synthesized: PitchTrack):
    """F0 frame error, percent of all frames."""
    ref_f0, ref_v, syn_f0, syn_v = _aligned(reference, synthesized)
    if ref_v.size == 0:
        return 0.0
    voicing_error = ref_v != syn_v
    joint = ref_v & syn_v
    pitch_error = np.zeros_like(voicing_error)
    pitch_error[joint] = (np.abs(syn_f0[joint] - ref_f0[joint]) / ref_f0[joint]
                          > PITCH_ERROR_RATIO)
    return 100.0 * int((voicing_error | pitch_error).sum()) / ref_v.size


def wer(reference: Transcript, hypothesis: Transcript) -> float:
    """Word error rate: Levenshtein distance over the reference length."""
    if len(reference) == 0:
        raise ValueError("WER is undefined for an empty reference")
    ref, hyp = reference.words, hypothesis.words
    previous = np.arange(len(hyp) + 1)
    for i, ref_word in enumerate(ref, start=1):
        current = np.empty(len(hyp) + 1, dtype=np.int64)
        current[0] = i
        for j, hyp_word in enumerate(hyp, start=1):
            current[j] = min(previous[j] + 1,
                             current[j - 1] + 1,
                             previous[j - 1] + (ref_word != hyp_word))
        previous = current
    return float(previous[-1]) / len(ref)


# -- evaluation report ------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-sample metric rows plus corpus means, rendered as a text table."""

    columns: list
    rows: list = field(default_factory=list)

    def add_row(self, sample_id, values):
        self.rows.append({"sample_id": sample_id, **values})

    def means(self):
        out = {}
        for col in self.columns:
            values = [r[col] for r in self.rows if r.get(col) is not None]
            out[col] = float(np.mean(values)) if values else None
        return out

    @staticmethod
    def _fmt(value):
        return "undef" if value is None else f"{value:.4f}"

    def render(self):
        header = ["sample_id"] + list(self.columns)
        lines = ["\t".join(header)]
        for row in self.rows:
            lines.append("\t".join([row["sample_id"]]
                                   + [self._fmt(row.get(c)) for c in self.columns]))
        means = self.means()
        lines.append("\t".join(["mean"] + [self._fmt(means[c]) for c in self.columns]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def write_plot_data(path, pairs):
    """Plain (step, metric) pairs, one per line, for external plotting."""
    with open(path, "w", encoding="utf-8") as fh:
        for step, value in pairs:
            fh.write(f"{step}\t{value:.6g}\n")
