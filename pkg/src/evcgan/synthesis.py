"""Minimum-phase source-filter vocoder used to render converted features.

This is a deliberately small substitute for a full WORLD synthesizer:
pulse-train excitation in voiced frames, white noise elsewhere, each shaped
by a minimum-phase filter folded from the log envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .features import FeatureSet, extract_features
from .tensor import ContractError


@dataclass
class SynthesisConfig:
    sample_rate: int = dsp.DEFAULT_RATE
    frame_shift: float = dsp.FRAME_SHIFT
    seed: int = 0
    peak: float = 0.9


def minimum_phase_spectrum(log_power: np.ndarray, fft_size: int) -> np.ndarray:
    """Complex minimum-phase response [..., fft_size/2+1] whose power is exp(log_power)."""
    ceps = np.fft.irfft(0.5 * log_power, n=fft_size, axis=-1)
    fold = np.zeros_like(ceps)
    half = fft_size // 2
    fold[..., 0] = ceps[..., 0]
    fold[..., 1:half] = 2.0 * ceps[..., 1:half]
    fold[..., half] = ceps[..., half]
    return np.exp(np.fft.rfft(fold, axis=-1))


def synthesize(features: FeatureSet, config: SynthesisConfig | None = None) -> np.ndarray:
    config = config or SynthesisConfig()
    if features.sample_rate != config.sample_rate:
        raise ContractError(f"feature rate {features.sample_rate} != synthesis rate {config.sample_rate}")
    t = features.n_frames
    env = np.asarray(features.envelope.frames, dtype=np.float64)
    if env.shape[0] != t or len(features.voicing) != t:
        raise ContractError("frame-count mismatch between CWT, envelope and voicing streams")
    if t == 0:
        return np.zeros(0)

    fs = config.sample_rate
    hop = int(round(fs * config.frame_shift))
    nfft = features.envelope.fft_size
    n = t * hop
    out = np.zeros(n + nfft)
    spectra = minimum_phase_spectrum(env, nfft)
    voiced = np.asarray(features.voicing, dtype=bool)
    f0 = np.exp(features.log_f0())

    frame_of_sample = np.minimum(np.arange(n) // hop, t - 1)
    sample_f0 = np.where(voiced[frame_of_sample], f0[frame_of_sample], 0.0)
    phase = np.cumsum(sample_f0) / fs
    crossings = np.flatnonzero(np.floor(phase[1:]) > np.floor(phase[:-1])) + 1
    k = np.arange(nfft // 2 + 1)
    for pos in crossings:
        # sub-sample pulse position from the phase overshoot
        over = (phase[pos] - np.floor(phase[pos])) / max(sample_f0[pos] / fs, 1e-12)
        exact = pos - over
        base = int(np.floor(exact))
        frac = exact - base
        fr = frame_of_sample[pos]
        resp = np.fft.irfft(spectra[fr] * np.exp(-2j * np.pi * k * frac / nfft), n=nfft)
        lo = max(base, 0)
        seg = resp[lo - base:]
        m = min(len(seg), len(out) - lo)
        out[lo:lo + m] += np.sqrt(fs / sample_f0[pos]) * seg[:m]

    rng = np.random.default_rng(config.seed)
    noise = rng.standard_normal(n)
    for fr in np.flatnonzero(~voiced):
        seg = np.zeros(nfft)
        seg[:hop] = noise[fr * hop:(fr + 1) * hop]
        resp = np.fft.irfft(np.fft.rfft(seg) * spectra[fr], n=nfft)
        out[fr * hop:fr * hop + nfft] += resp

    y = out[:n]
    peak = np.abs(y).max()
    if peak > 0:
        y = y * (config.peak / peak)
    return y


def spectral_flatness(samples, sample_rate: int = dsp.DEFAULT_RATE, nperseg: int = 512) -> float:
    """Geometric over arithmetic mean of the Welch power spectrum (DC and Nyquist excluded)."""
    from scipy.signal import welch

    _, psd = welch(samples, fs=sample_rate, nperseg=nperseg)
    psd = psd[1:-1]
    return float(np.exp(np.mean(np.log(psd))) / np.mean(psd))


def analysis_synthesis_roundtrip(samples, sample_rate: int, fft_size: int = dsp.DEFAULT_FFT_SIZE) -> dict:
    """Compare features of ``x`` with features of ``synthesize(extract(x))``.

    F0 RMSE (Hz) uses frames voiced in both tracks.  The log-envelope RMSE
    is taken after removing the overall level difference, since synthesis
    peak-normalizes its output.
    """
    x = dsp.resample(samples, sample_rate, dsp.DEFAULT_RATE)
    try:
        feats = extract_features(x, dsp.DEFAULT_RATE, fft_size)
    except dsp.UnvoicedUtteranceError:
        return {"unvoiced_only": True, "f0_rmse_hz": None, "log_envelope_rmse": None,
                "voiced_frames": 0}
    y = synthesize(feats)
    src = dsp.track_f0(x, dsp.DEFAULT_RATE)
    res = dsp.track_f0(y, dsp.DEFAULT_RATE)
    res_feats = extract_features(y, dsp.DEFAULT_RATE, fft_size)
    n = min(len(src), len(res), feats.n_frames, res_feats.n_frames)
    both = src.voicing[:n] & res.voicing[:n]
    if not both.any():
        return {"unvoiced_only": False, "f0_rmse_hz": float("inf"), "log_envelope_rmse": float("inf"),
                "voiced_frames": 0}
    f0_rmse = float(np.sqrt(np.mean((src.values[:n][both] - res.values[:n][both]) ** 2)))
    diff = (feats.envelope.frames[:n][both].astype(np.float64)
            - res_feats.envelope.frames[:n][both].astype(np.float64))
    diff -= diff.mean()
    return {"unvoiced_only": False, "f0_rmse_hz": f0_rmse,
            "log_envelope_rmse": float(np.sqrt(np.mean(diff ** 2))),
            "voiced_frames": int(both.sum())}
