"""
F0 tracking, CWT prosody rows and CheapTrick envelopes
======================================================

Synthesize a vowel with a rising-falling pitch contour, track its F0,
decompose log-F0 into ten wavelet scales and estimate the smoothed
spectral envelope.
"""

import warnings

import numpy as np

from evcgan import dsp
from evcgan.features import extract_features
from evcgan.toy import synth_vowel

warnings.simplefilter("ignore", dsp.BoundaryWarning)

SR = 16000
n = 400                                   # 2 s at a 5 ms hop
contour = 120 + 40 * np.sin(np.linspace(0, np.pi, n))
x = synth_vowel(contour, SR)

track = dsp.track_f0(x, SR)
v = track.voicing
err = np.abs(track.values[:n][v[:n]] - contour[:len(v)][v[:n]])
print(f"{v.mean():.0%} of frames voiced, median |F0 error| {np.median(err):.2f} Hz")

# Ten Mexican-hat scales, 20 ms to 10.24 s
print("scales (ms):", np.round(dsp.cwt_scale_grid() * 1000).astype(int).tolist())
series, mu, sd = dsp.interpolate_and_normalize(track)
cwt = dsp.cwt_decompose(series, mu, sd)
print("coefficient rows", cwt.coefficients.shape)
print("row energy:", np.round((cwt.coefficients ** 2).mean(axis=1), 3).tolist())

rec = dsp.reconstruct_log_f0(cwt)
voiced_rmse = np.sqrt(np.mean((np.exp(rec[v]) - track.values[v]) ** 2))
print(f"F0 RMSE after reconstruction {voiced_rmse:.2f} Hz")

# Pitch-adaptive envelope; the three formants show up as local maxima
feats = extract_features(x, SR)
env = feats.envelope.frames[n // 2]
freqs = np.arange(len(env)) * SR / feats.envelope.fft_size
peaks = [i for i in range(1, len(env) - 1) if env[i - 1] < env[i] > env[i + 1]]
print("envelope peaks (Hz):", [int(freqs[i]) for i in peaks[:4]])
