"""The evaluation metrics, fed with signals whose answers are known.

F0 tracking on pure tones, gross pitch error / F0 frame error on
hand-built tracks, and word error rate on toy transcripts.
"""

import numpy as np

from contextdub import (PitchTrack, Transcript, estimate_f0, ffe, gpe,
                        track_from_phoneme_pitch, wer)

print("== F0 tracking (normalized autocorrelation, 40 ms / 10 ms) ==")
t = np.arange(16000) / 16000.0
for freq in (110.0, 220.0, 440.0):
    track = estimate_f0(0.5 * np.sin(2 * np.pi * freq * t), 16000)
    interior = track.f0[2:-2]
    print(f"  {freq:5.0f} Hz sine -> median {np.median(interior):6.1f} Hz, "
          f"{track.voiced.mean() * 100:3.0f}% voiced")
noise = estimate_f0(0.3 * np.random.default_rng(0).normal(size=16000), 16000)
print(f"  white noise  -> {(~noise.voiced).mean() * 100:3.0f}% unvoiced")

print("\n== GPE and FFE ==")
reference = PitchTrack(f0=np.array([100.0, 100, 100, 100, 120, 0]),
                       voiced=np.array([True] * 5 + [False]))
synthesized = PitchTrack(f0=np.array([100.0, 130, 100, 75, 0, 90]),
                         voiced=np.array([True, True, True, True, False, True]))
print(f"  GPE {gpe(reference, synthesized):.1f}%  "
      "(2 of 4 jointly-voiced frames off by more than 20%)")
print(f"  FFE {ffe(reference, synthesized):.1f}%  "
      "(adds the 2 voicing decision errors, over all 6 frames)")

same = track_from_phoneme_pitch(np.log([180.0, 220.0]), [3, 4])
print(f"  identical tracks: GPE {gpe(same, same):.1f}%, FFE {ffe(same, same):.1f}%")

print("\n== WER ==")
pairs = [("the quick brown fox", "the quick brown fox"),
         ("the quick brown fox", "the quack brown fox"),
         ("the quick brown fox", "quick fox jumps")]
for ref_text, hyp_text in pairs:
    rate = wer(Transcript.from_text(ref_text), Transcript.from_text(hyp_text))
    print(f"  {rate:.2f}  '{ref_text}' vs '{hyp_text}'")
