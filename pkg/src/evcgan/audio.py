"""WAV input/output."""

from __future__ import annotations

import numpy as np
from scipy.io import wavfile


def read_wav(path):
    """Return ``(samples, sample_rate)`` as mono float64 in [-1, 1].

    Accepts 16-bit integer and 32-bit float files; stereo is averaged.
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32 or data.dtype == np.float64:
        x = data.astype(np.float64)
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return x, int(rate)


def write_wav(path, samples, sample_rate: int) -> None:
    """Write 16-bit PCM mono."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, np.round(x * 32767.0).astype(np.int16))
