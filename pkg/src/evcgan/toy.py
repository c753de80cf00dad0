"""Synthetic vowels and the two-emotion toy corpus."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import write_wav

DEFAULT_FORMANTS = ((700.0, 90.0), (1220.0, 110.0), (2600.0, 160.0))

# prosody classes: (mean F0 range Hz, modulation depth Hz, modulation rate Hz)
EMOTION_A = dict(f0_range=(105.0, 125.0), depth=(1.0, 3.0), rate=(4.5, 6.0))
EMOTION_B = dict(f0_range=(185.0, 215.0), depth=(20.0, 35.0), rate=(2.0, 3.5))


def synth_vowel(f0_track, sample_rate: int = 16000, formants=DEFAULT_FORMANTS,
                frame_shift: float = 0.005, tilt: float = 1.0) -> np.ndarray:
    """Additive harmonic source through a cascade of formant resonators.

    ``f0_track`` gives F0 in Hz per frame (or a scalar); harmonics above
    Nyquist are muted sample by sample so the source stays band-limited.
    """
    f0_track = np.atleast_1d(np.asarray(f0_track, dtype=np.float64))
    if f0_track.size == 1:
        raise ValueError("pass a per-frame F0 track; use np.full for constant pitch")
    n = int(round(len(f0_track) * frame_shift * sample_rate))
    frame_t = np.arange(len(f0_track)) * frame_shift
    f0 = np.interp(np.arange(n) / sample_rate, frame_t, f0_track)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    src = np.zeros(n)
    kmax = int(sample_rate / 2 / f0.min())
    for k in range(1, kmax + 1):
        live = k * f0 < 0.45 * sample_rate
        src += live * np.sin(k * phase) / k ** tilt
    y = src
    for freq, bw in formants:
        r = np.exp(-np.pi * bw / sample_rate)
        theta = 2.0 * np.pi * freq / sample_rate
        a = [1.0, -2.0 * r * np.cos(theta), r * r]
        y = lfilter([1.0 - r], a, y)
    fade = min(n // 4, int(0.02 * sample_rate))
    if fade:
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        y[:fade] *= ramp
        y[-fade:] *= ramp[::-1]
    return 0.8 * y / np.abs(y).max()


def prosody_track(n_frames: int, mean_f0: float, depth: float, rate: float, phase: float,
                  frame_shift: float = 0.005) -> np.ndarray:
    t = np.arange(n_frames) * frame_shift
    return mean_f0 + depth * np.sin(2.0 * np.pi * rate * t + phase)


def make_toy_corpus(out_dir, n_per_emotion: int = 10, seed: int = 0,
                    sample_rate: int = 16000, duration_range=(0.8, 2.5)) -> Path:
    """Write ``n_per_emotion`` WAVs per emotion plus ``manifest.tsv``; return the manifest path.

    Emotion A: low, nearly flat F0 with narrow vibrato.  Emotion B: higher
    mean F0 with wide, slow modulation.
    """
    if n_per_emotion < 2:
        raise ValueError(f"n_per_emotion must be >= 2, got {n_per_emotion}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    for label, spec in (("A", EMOTION_A), ("B", EMOTION_B)):
        for k in range(n_per_emotion):
            dur = rng.uniform(*duration_range)
            n_frames = int(round(dur / 0.005))
            track = prosody_track(n_frames, rng.uniform(*spec["f0_range"]), rng.uniform(*spec["depth"]),
                                  rng.uniform(*spec["rate"]), rng.uniform(0, 2 * np.pi))
            jitter = rng.uniform(0.9, 1.1, size=3)
            formants = [(f * j, bw) for (f, bw), j in zip(DEFAULT_FORMANTS, jitter)]
            wav = synth_vowel(track, sample_rate, formants)
            uid = f"{label}{k:03d}"
            path = out / f"{uid}.wav"
            write_wav(path, wav, sample_rate)
            rows.append((uid, label, path.name))
    manifest = out / "manifest.tsv"
    with open(manifest, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("id", "emotion", "path"))
        w.writerows(rows)
    return manifest


# Desk-scale training settings: tiny networks, one 4-crop batch per epoch,
# two 50-epoch curriculum blocks (0.5 s then 1.0 s).
TOY_TRAINING_CONFIG = {
    "max_length_s": 1.0,
    "epochs_per_block": 50,
    "batch_size": 4,
    "steps_per_epoch": 1,
    "lr": 2e-3,
    "generator": {"channels": 16, "hidden": 32, "heads": 2, "kernel": 5, "post_kernel": 5,
                  "gated_repeat": 1, "residual_repeat": 1, "norm": "layer", "input_skip": True},
    "discriminator": {"channels": [4, 8, 8], "strides": [[2, 2], [2, 2], [2, 2]]},
    "f0_discriminator": {"channels": [8, 16, 16]},
}
