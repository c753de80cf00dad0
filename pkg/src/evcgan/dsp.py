"""Feature extraction: F0 tracking, CWT of log-F0, CheapTrick spectral envelope."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from math import gcd

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve, resample_poly

from .tensor import ContractError, ShapeError

logger = logging.getLogger(__name__)

FRAME_SHIFT = 0.005          # s, also the CWT base dilation
N_SCALES = 10
SUPPORTED_RATES = (16000, 22050, 44100, 48000)
DEFAULT_RATE = 16000
DEFAULT_FFT_SIZE = 1024
F0_FLOOR = 50.0
F0_CEIL = 600.0
VOICING_THRESHOLD = 0.3
UNVOICED_F0 = 160.0
Q0 = 1.18
Q1 = -0.09
WAVELET_SUPPORT = 8.0        # |u| cut-off for the Mexican hat, psi(8) ~ 1e-12


class InputError(ValueError):
    """Audio or contour unusable for analysis."""


class UnvoicedUtteranceError(InputError):
    """Utterance contains no voiced frame."""


class BoundaryWarning(UserWarning):
    pass


@dataclass
class F0Contour:
    values: np.ndarray                  # Hz per frame, 0 where unvoiced
    voicing: np.ndarray                 # bool per frame
    frame_shift: float = FRAME_SHIFT

    def __len__(self):
        return len(self.values)


@dataclass
class CwtScales:
    coefficients: np.ndarray            # [10, T]
    mean: float                         # log-F0 normalization stats
    std: float
    tau0: float = FRAME_SHIFT

    @property
    def scales(self) -> np.ndarray:
        return cwt_scale_grid(self.tau0)

    @property
    def n_frames(self) -> int:
        return self.coefficients.shape[1]


@dataclass
class SpectralEnvelope:
    frames: np.ndarray                  # [T, fft_size/2 + 1] log power
    fft_size: int
    sample_rate: int


def _check_rate(sample_rate: int) -> None:
    if sample_rate not in SUPPORTED_RATES:
        raise InputError(f"unsupported sample rate {sample_rate}; expected one of {SUPPORTED_RATES}")


def resample(samples: np.ndarray, sr_in: int, sr_out: int = DEFAULT_RATE) -> np.ndarray:
    if sr_in == sr_out:
        return np.asarray(samples, dtype=np.float64)
    g = gcd(sr_in, sr_out)
    return resample_poly(np.asarray(samples, dtype=np.float64), sr_out // g, sr_in // g)


def n_frames_for(n_samples: int, sample_rate: int) -> int:
    return int(np.floor(n_samples / (sample_rate * FRAME_SHIFT) + 1e-9))


# -- F0 tracking ---------------------------------------------------------------------

def track_f0(samples, sample_rate: int, threshold: float = VOICING_THRESHOLD,
             f0_floor: float = F0_FLOOR, f0_ceil: float = F0_CEIL,
             energy_gate_db: float = -40.0) -> F0Contour:
    """Normalized-autocorrelation pitch tracker, one estimate per 5 ms frame.

    A frame is voiced when its frame energy passes the gate (relative to the
    loudest frame) and the chosen NCCF peak reaches ``threshold``.  Among
    peaks within 90% of the best one the shortest lag wins, which suppresses
    octave-down errors.
    """
    _check_rate(sample_rate)
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InputError("track_f0 expects mono samples")
    if len(x) < 3 * sample_rate / f0_floor:
        raise InputError(f"signal of {len(x)} samples is shorter than 3 periods at {f0_floor} Hz")

    hop = sample_rate * FRAME_SHIFT
    n = n_frames_for(len(x), sample_rate)
    win = int(round(sample_rate / f0_floor))
    lag_min = int(np.floor(sample_rate / f0_ceil))
    lag_max = int(np.ceil(sample_rate / f0_floor))
    half = win // 2
    xp = np.concatenate([np.zeros(half), x, np.zeros(win + lag_max + 1)])
    sq = np.concatenate([[0.0], np.cumsum(xp * xp)])

    starts = np.round(np.arange(n) * hop).astype(int)
    frame_energy = sq[starts + win] - sq[starts]
    peak = frame_energy.max() if n else 0.0
    gate = max(peak * 10.0 ** (energy_gate_db / 10.0), 1e-10 * win)

    values = np.zeros(n)
    voiced = np.zeros(n, dtype=bool)
    lags = np.arange(lag_min, lag_max + 1)
    for i, s in enumerate(starts):
        e0 = frame_energy[i]
        if e0 <= gate:
            continue
        seg = xp[s:s + win + lag_max + 1]
        ref = seg[:win]
        cand = sliding_window_view(seg, win)[lag_min:lag_max + 1]
        el = sq[s + lags + win] - sq[s + lags]
        r = cand @ ref / np.sqrt(e0 * np.maximum(el, 1e-20))
        best = r.max()
        if best < threshold:
            continue
        interior = np.flatnonzero((r[1:-1] >= r[:-2]) & (r[1:-1] >= r[2:])) + 1
        good = interior[r[interior] >= 0.9 * best]
        j = int(good[0]) if len(good) else int(np.argmax(r))
        if r[j] < threshold:
            continue
        lag = float(lags[j])
        if 0 < j < len(r) - 1:
            denom = r[j - 1] - 2.0 * r[j] + r[j + 1]
            if denom < 0:
                lag += 0.5 * (r[j - 1] - r[j + 1]) / denom
        f0 = sample_rate / lag
        if f0_floor <= f0 <= f0_ceil:
            values[i] = f0
            voiced[i] = True
    return F0Contour(values=values, voicing=voiced)


def load_f0_file(path) -> F0Contour:
    """Read an external F0 track: one value in Hz per 5 ms frame, 0 for unvoiced."""
    values = np.atleast_1d(np.loadtxt(path, dtype=np.float64))
    if (values < 0).any():
        raise InputError(f"{path}: negative F0 values")
    return F0Contour(values=values, voicing=values > 0)


# -- log-F0 normalization -------------------------------------------------------------

def interpolate_and_normalize(contour: F0Contour):
    """Continuous z-scored log-F0 plus the (mean, std) needed to undo it."""
    voiced = np.asarray(contour.voicing, dtype=bool) & (np.asarray(contour.values) > 0)
    if not voiced.any():
        raise UnvoicedUtteranceError("no voiced frames in contour")
    idx = np.arange(len(contour.values))
    lf0 = np.interp(idx, idx[voiced], np.log(contour.values[voiced]))
    mu = float(lf0.mean())
    sd = float(lf0.std())
    if sd < 1e-8:
        # flat contour: the guard keeps the std invertible and the series exactly zero
        return np.zeros_like(lf0), mu, 1.0
    return (lf0 - mu) / sd, mu, sd


def denormalize(series, mean: float, std: float) -> np.ndarray:
    return np.asarray(series) * std + mean


# -- continuous wavelet transform -----------------------------------------------------

def cwt_scale_grid(tau0: float = FRAME_SHIFT) -> np.ndarray:
    """Dilations 2^(i+1) * tau0 for i = 1..10, in seconds."""
    return tau0 * 2.0 ** (np.arange(1, N_SCALES + 1) + 1)


def reconstruction_weights() -> np.ndarray:
    i = np.arange(1, N_SCALES + 1)
    return (i + 2.5) ** -2.5


def mexican_hat(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return 2.0 / (np.sqrt(3.0) * np.pi ** 0.25) * (1.0 - u * u) * np.exp(-0.5 * u * u)


def cwt_decompose(series, mean: float = 0.0, std: float = 1.0,
                  tau0: float = FRAME_SHIFT, dt: float = FRAME_SHIFT) -> CwtScales:
    """Mexican-hat CWT of a continuous series sampled every ``dt`` seconds.

    Row i holds ``tau^-1/2 * sum_x f(x) psi((x - t)/tau) dt`` at the i-th
    dilation.  The series is reflect-padded by the largest wavelet support.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or len(x) < 2:
        raise ShapeError(f"cwt_decompose needs a 1-D series of length >= 2, got shape {x.shape}")
    scales = cwt_scale_grid(tau0)
    halfwidths = [int(np.ceil(WAVELET_SUPPORT * tau / dt)) for tau in scales]
    pad = halfwidths[-1]
    if len(x) < scales[-1] / dt:
        warnings.warn(f"series of {len(x)} frames is shorter than the largest wavelet support; "
                      "coarse scales use reflected padding", BoundaryWarning, stacklevel=2)
    xp = np.pad(x, pad, mode="reflect")
    rows = np.empty((N_SCALES, len(x)))
    for i, (tau, hw) in enumerate(zip(scales, halfwidths)):
        kern = mexican_hat(np.arange(-hw, hw + 1) * dt / tau)
        full = fftconvolve(xp, kern, mode="same")
        rows[i] = full[pad:pad + len(x)] * dt / np.sqrt(tau)
    return CwtScales(coefficients=rows, mean=mean, std=std, tau0=tau0)


def cwt_reconstruct(scales) -> np.ndarray:
    """Weighted scale sum, each row times (i + 2.5)^-5/2."""
    coef = scales.coefficients if isinstance(scales, CwtScales) else np.asarray(scales)
    if coef.ndim != 2 or coef.shape[0] != N_SCALES:
        raise ShapeError(f"expected {N_SCALES} scale rows, got shape {coef.shape}")
    return reconstruction_weights() @ coef


def standardize(series) -> np.ndarray:
    """Z-score a reconstructed series; a flat series maps to zeros."""
    s = np.asarray(series, dtype=np.float64)
    sd = s.std()
    if sd < 1e-12:
        return np.zeros_like(s)
    return (s - s.mean()) / sd


def reconstruct_log_f0(scales: CwtScales) -> np.ndarray:
    """Log-F0 from CWT rows: weighted sum, re-standardized, then denormalized."""
    return denormalize(standardize(cwt_reconstruct(scales)), scales.mean, scales.std)


# -- CheapTrick -----------------------------------------------------------------------

def pitch_synchronous_window(f0: float, sample_rate: int):
    """Hann window spanning three pitch periods, sample offsets relative to the centre.

    Its energy equals 1.125 periods, the CheapTrick power normalization.
    """
    period = sample_rate / f0
    half = int(np.floor(1.5 * period))
    offsets = np.arange(-half, half + 1)
    w = 0.5 + 0.5 * np.cos(2.0 * np.pi * offsets / (3.0 * period))
    return w, offsets


def smooth_spectrum(power_full: np.ndarray, f0: float, sample_rate: int) -> np.ndarray:
    """Average a periodic power spectrum over +-f0/3 Hz (rectangular kernel of width 2 f0 / 3).

    Each bin is treated as a constant density over its width, so the
    integral of the spectrum is preserved exactly.
    """
    n = len(power_full)
    df = sample_rate / n
    h = f0 / 3.0
    m = int(np.ceil(h / df)) + 2
    ext = np.concatenate([power_full[-m:], power_full, power_full[:m]])
    cum = np.concatenate([[0.0], np.cumsum(ext) * df])
    edges = (np.arange(len(ext) + 1) - m - 0.5) * df
    centers = np.arange(n) * df
    return (np.interp(centers + h, edges, cum) - np.interp(centers - h, edges, cum)) / (2.0 * h)


def lifter_log_spectrum(log_full: np.ndarray, f0: float, sample_rate: int,
                        q0: float = Q0, q1: float = Q1) -> np.ndarray:
    """Cepstral liftering of a full-length log spectrum; returns the liftered log spectrum."""
    n = len(log_full)
    ceps = np.fft.ifft(log_full).real
    q = np.minimum(np.arange(n), n - np.arange(n)) / sample_rate
    ls = np.sinc(f0 * q)
    lq = q0 + 2.0 * q1 * np.cos(2.0 * np.pi * f0 * q)
    return np.fft.fft(ls * lq * ceps).real


def cheaptrick_envelope(samples, contour: F0Contour, sample_rate: int = DEFAULT_RATE,
                        fft_size: int = DEFAULT_FFT_SIZE, default_f0: float = UNVOICED_F0,
                        q1: float = Q1) -> SpectralEnvelope:
    """Per-frame log-power envelope: windowed power spectrum, smoothing, liftering."""
    if fft_size < 4 or fft_size & (fft_size - 1):
        raise ContractError(f"fft_size must be a power of two, got {fft_size}")
    x = np.asarray(samples, dtype=np.float64)
    values = np.asarray(contour.values, dtype=np.float64)
    voicing = np.asarray(contour.voicing, dtype=bool)
    if (voicing & (values <= 0)).any():
        raise ContractError("voiced frame with F0 = 0 passed to cheaptrick_envelope")
    f0s = np.where(voicing, values, default_f0)
    longest = sample_rate / f0s.min() if len(f0s) else 0.0
    if 4 * longest > fft_size:
        raise ContractError(f"fft_size {fft_size} is below 4x the longest pitch period "
                            f"({longest:.1f} samples)")

    q0 = 1.0 - 2.0 * q1
    n = len(f0s)
    hop = sample_rate * FRAME_SHIFT
    out = np.empty((n, fft_size // 2 + 1))
    for i in range(n):
        f0 = f0s[i]
        w, offs = pitch_synchronous_window(f0, sample_rate)
        idx = np.clip(int(round(i * hop)) + offs, 0, len(x) - 1)
        seg = x[idx] * w
        seg = seg - w * seg.sum() / w.sum()
        frame = np.zeros(fft_size)
        frame[:len(seg)] = seg
        power = np.abs(np.fft.fft(frame)) ** 2 / (w * w).sum()
        smoothed = smooth_spectrum(power, f0, sample_rate)
        logp = np.log(np.maximum(smoothed, 1e-12))
        out[i] = lifter_log_spectrum(logp, f0, sample_rate, q0, q1)[:fft_size // 2 + 1]
    return SpectralEnvelope(frames=out, fft_size=fft_size, sample_rate=sample_rate)


def min_window_f0(sample_rate: int, fft_size: int) -> float:
    """Lowest F0 whose three-period window still satisfies the fft_size rule."""
    return 4.0 * sample_rate / fft_size
