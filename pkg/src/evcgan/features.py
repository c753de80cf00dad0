"""Per-utterance feature bundle, extraction pipeline and the EVCF cache format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import dsp
from .dsp import CwtScales, F0Contour, SpectralEnvelope
from .tensor import ShapeError

MAGIC = b"EVCF"
VERSION = 1


class CacheError(ValueError):
    pass


@dataclass
class FeatureSet:
    cwt: CwtScales
    envelope: SpectralEnvelope
    voicing: np.ndarray
    utterance_id: str = ""

    def __post_init__(self):
        t = self.cwt.n_frames
        if self.envelope.frames.shape[0] != t or len(self.voicing) != t:
            raise ShapeError(f"frame counts disagree: cwt {t}, envelope "
                             f"{self.envelope.frames.shape[0]}, voicing {len(self.voicing)}")

    @property
    def n_frames(self) -> int:
        return self.cwt.n_frames

    @property
    def duration(self) -> float:
        return self.n_frames * dsp.FRAME_SHIFT

    @property
    def sample_rate(self) -> int:
        return self.envelope.sample_rate

    def log_f0(self) -> np.ndarray:
        return dsp.reconstruct_log_f0(self.cwt)


def extract_features(samples, sample_rate: int, fft_size: int = dsp.DEFAULT_FFT_SIZE,
                     utterance_id: str = "", contour: Optional[F0Contour] = None) -> FeatureSet:
    """Track F0, decompose log-F0 with the CWT and estimate the envelope.

    Audio is resampled to 16 kHz first.  ``contour`` bypasses the tracker
    (e.g. an F0 file read with :func:`dsp.load_f0_file`).
    """
    dsp._check_rate(sample_rate)
    x = dsp.resample(samples, sample_rate, dsp.DEFAULT_RATE)
    sr = dsp.DEFAULT_RATE
    if contour is None:
        contour = dsp.track_f0(x, sr)
    n = min(len(contour), dsp.n_frames_for(len(x), sr))
    contour = F0Contour(values=np.asarray(contour.values[:n], dtype=np.float64),
                        voicing=np.asarray(contour.voicing[:n], dtype=bool))
    series, mu, sd = dsp.interpolate_and_normalize(contour)
    cwt = dsp.cwt_decompose(series, mu, sd)

    # the analysis window must fit the FFT; very low F0 is clamped for windowing only
    floor = dsp.min_window_f0(sr, fft_size)
    window_contour = F0Contour(values=np.where(contour.voicing, np.maximum(contour.values, floor), 0.0),
                               voicing=contour.voicing)
    env = dsp.cheaptrick_envelope(x, window_contour, sr, fft_size,
                                  default_f0=max(dsp.UNVOICED_F0, floor))
    return FeatureSet(
        cwt=CwtScales(cwt.coefficients.astype(np.float32), mu, sd),
        envelope=SpectralEnvelope(env.frames.astype(np.float32), fft_size, sr),
        voicing=contour.voicing.copy(),
        utterance_id=utterance_id,
    )


def encode_features(fs: FeatureSet) -> bytes:
    t = fs.n_frames
    parts = [MAGIC, struct.pack("<IIII", VERSION, fs.sample_rate, t, fs.envelope.fft_size),
             np.ascontiguousarray(fs.cwt.coefficients, dtype="<f4").tobytes(),
             np.ascontiguousarray(fs.envelope.frames, dtype="<f4").tobytes(),
             np.asarray(fs.voicing, dtype=np.uint8).tobytes(),
             struct.pack("<dd", fs.cwt.mean, fs.cwt.std)]
    return b"".join(parts)


def decode_features(blob: bytes, utterance_id: str = "") -> FeatureSet:
    if blob[:4] != MAGIC:
        raise CacheError("not an EVCF file (bad magic)")
    version, rate, t, fft_size = struct.unpack_from("<IIII", blob, 4)
    if version != VERSION:
        raise CacheError(f"unsupported EVCF version {version}")
    f = fft_size // 2 + 1
    pos = 20
    need = pos + 4 * dsp.N_SCALES * t + 4 * t * f + t + 16
    if len(blob) != need:
        raise CacheError(f"EVCF size {len(blob)} does not match header (expected {need})")
    cwt = np.frombuffer(blob, "<f4", dsp.N_SCALES * t, pos).reshape(dsp.N_SCALES, t)
    pos += 4 * dsp.N_SCALES * t
    env = np.frombuffer(blob, "<f4", t * f, pos).reshape(t, f)
    pos += 4 * t * f
    voicing = np.frombuffer(blob, np.uint8, t, pos).astype(bool)
    pos += t
    mu, sd = struct.unpack_from("<dd", blob, pos)
    return FeatureSet(
        cwt=CwtScales(cwt.astype(np.float32), mu, sd),
        envelope=SpectralEnvelope(env.astype(np.float32), fft_size, rate),
        voicing=voicing,
        utterance_id=utterance_id,
    )


def save_features(path, fs: FeatureSet) -> None:
    Path(path).write_bytes(encode_features(fs))


def load_features(path, utterance_id: Optional[str] = None) -> FeatureSet:
    path = Path(path)
    return decode_features(path.read_bytes(), utterance_id if utterance_id is not None else path.stem)
