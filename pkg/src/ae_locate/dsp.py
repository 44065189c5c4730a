"""Waveform to scalogram-image preprocessing.

Chain per sensor channel: zero-phase Butterworth high-pass, Daubechies-4
wavelet shrinkage, Morlet continuous wavelet transform, bilinear resize
and per-channel min-max scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.fft import fft, ifft, next_fast_len
from scipy.special import comb

from .errors import InputError, ParameterError
from .sim import PlateSpec, Waveform


def daubechies_lowpass(moments: int) -> np.ndarray:
    """Minimum-phase Daubechies analysis low-pass with ``moments`` vanishing moments.

    Spectral factorization of the Daubechies polynomial; taps sum to sqrt(2).
    """
    q = [comb(moments - 1 + k, k) for k in range(moments)]
    h = np.array([1.0])
    for y in np.roots(q[::-1]):
        # y = (2 - z - 1/z) / 4; keep the root inside the unit circle
        z = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        h = np.convolve(h, [1.0, -z[np.argmin(np.abs(z))]])
    for _ in range(moments):
        h = np.convolve(h, [1.0, 1.0])
    h = np.real(h)[::-1]
    return h * np.sqrt(2.0) / h.sum()


DB4_LOWPASS = daubechies_lowpass(4)
DB4_HIGHPASS = DB4_LOWPASS[::-1] * (-1.0) ** np.arange(DB4_LOWPASS.size)

MORLET = "morlet_cwt"
DAUBECHIES4 = "daubechies4_dwt"


@dataclass(frozen=True)
class WaveletSpec:
    family: str = MORLET
    morlet_center_frequency: float = 6.0
    dwt_levels: int = 4

    def __post_init__(self):
        if self.family not in (MORLET, DAUBECHIES4):
            raise ParameterError(f"unknown wavelet family {self.family!r}")
        if self.dwt_levels < 1:
            raise ParameterError("dwt_levels must be >= 1")


@dataclass
class Scalogram:
    scales: np.ndarray
    magnitudes: np.ndarray  # (num_scales, num_times)
    coefficients: np.ndarray | None = field(default=None, repr=False)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.magnitudes.shape[1])


@dataclass(frozen=True)
class PreprocessConfig:
    highpass_cutoff: float = 1000.0
    image_size: int = 64
    num_scales: int = 64
    freq_min: float = 10e3
    freq_max: float = 500e3
    wavelet: WaveletSpec = WaveletSpec()


@dataclass
class Sample:
    channels: np.ndarray  # (4, H, W)
    label: tuple[float, float]
    event_id: str = ""


def highpass(w: Waveform, cutoff: float, order: int = 4) -> Waveform:
    nyquist = w.sample_rate / 2.0
    if not 0.0 < cutoff < nyquist:
        raise ParameterError(f"cutoff {cutoff} Hz outside (0, {nyquist}) Hz")
    sos = signal.butter(order, cutoff, btype="highpass", fs=w.sample_rate, output="sos")
    return Waveform(w.sample_rate, signal.sosfiltfilt(sos, w.samples))


def highpass_gain(freq: float, cutoff: float, sample_rate: float, order: int = 4) -> float:
    """Magnitude response of :func:`highpass` (forward-backward squares the single pass)."""
    sos = signal.butter(order, cutoff, btype="highpass", fs=sample_rate, output="sos")
    _, h = signal.sosfreqz(sos, worN=[freq], fs=sample_rate)
    return float(np.abs(h[0]) ** 2)


# --- discrete wavelet transform (periodized, orthogonal) -------------------

def _analysis_step(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = x.size
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(DB4_LOWPASS.size)[None, :]) % n
    windows = x[idx]
    return windows @ DB4_LOWPASS, windows @ DB4_HIGHPASS


def _synthesis_step(approx: np.ndarray, detail: np.ndarray) -> np.ndarray:
    n = 2 * approx.size
    out = np.zeros(n)
    idx = (2 * np.arange(approx.size)[:, None] + np.arange(DB4_LOWPASS.size)[None, :]) % n
    contrib = approx[:, None] * DB4_LOWPASS[None, :] + detail[:, None] * DB4_HIGHPASS[None, :]
    np.add.at(out, idx, contrib)
    return out


def dwt(x: np.ndarray, levels: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Multi-level periodized DWT; ``len(x)`` must be divisible by ``2**levels``.

    Returns the coarsest approximation and the detail bands, finest first.
    """
    if x.size % (2 ** levels):
        raise ParameterError("signal length must be divisible by 2**levels")
    details = []
    a = np.asarray(x, dtype=np.float64)
    for _ in range(levels):
        a, d = _analysis_step(a)
        details.append(d)
    return a, details


def idwt(approx: np.ndarray, details: list[np.ndarray]) -> np.ndarray:
    a = approx
    for d in reversed(details):
        a = _synthesis_step(a, d)
    return a


def soft_threshold(c: np.ndarray, thr: float) -> np.ndarray:
    return np.sign(c) * np.maximum(np.abs(c) - thr, 0.0)


def universal_threshold(finest_detail: np.ndarray, n: int) -> float:
    sigma = np.median(np.abs(finest_detail)) / 0.6745
    return float(sigma * np.sqrt(2.0 * np.log(n)))


def dwt_denoise(w: Waveform, spec: WaveletSpec = WaveletSpec(), threshold: float | None = None) -> Waveform:
    """Soft-threshold every detail band with the universal threshold.

    ``threshold`` overrides the estimate (``0`` gives a plain round trip).
    Lengths that are not a multiple of ``2**levels`` are padded by
    symmetric extension and cropped back.
    """
    n = len(w)
    block = 2 ** spec.dwt_levels
    if n < block:
        raise ParameterError(f"signal of {n} samples too short for {spec.dwt_levels} DWT levels")
    pad = (-n) % block
    x = np.pad(w.samples, (0, pad), mode="symmetric") if pad else w.samples
    approx, details = dwt(x, spec.dwt_levels)
    thr = universal_threshold(details[0], n) if threshold is None else threshold
    if thr > 0:
        details = [soft_threshold(d, thr) for d in details]
    return Waveform(w.sample_rate, idwt(approx, details)[:n])


# --- continuous wavelet transform ------------------------------------------

def morlet(t: np.ndarray, w0: float = 6.0) -> np.ndarray:
    return np.pi ** -0.25 * np.exp(1j * w0 * t) * np.exp(-0.5 * t * t)


def scale_for_frequency(freq, sample_rate: float, w0: float = 6.0):
    """Scale (in samples) whose Morlet centre frequency is ``freq``."""
    return w0 * sample_rate / (2.0 * np.pi * np.asarray(freq, dtype=np.float64))


def default_scales(cfg: PreprocessConfig, sample_rate: float) -> np.ndarray:
    freqs = np.geomspace(cfg.freq_max, cfg.freq_min, cfg.num_scales)
    return scale_for_frequency(freqs, sample_rate, cfg.wavelet.morlet_center_frequency)


def cwt_coefficients(x: np.ndarray, scales, w0: float = 6.0) -> np.ndarray:
    """Complex coefficients W[s, b] = a^-1/2 sum_n conj(psi((n - b)/a)) x[n].

    Zero padding outside the record; evaluated as a full-length FFT
    correlation, so no kernel truncation takes place.
    """
    x = np.asarray(x, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if scales.size == 0:
        raise ParameterError("scales must be nonempty")
    if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
        raise ParameterError("scales must be positive")
    n = x.size
    nfft = next_fast_len(2 * n - 1)
    lags = np.arange(-(n - 1), n)  # m = n_idx - b
    # kernel k[m] = conj(psi(m/a))/sqrt(a); W[b] = sum_m x[b+m] k[m]
    kern = np.conj(morlet(lags[None, :] / scales[:, None], w0)) / np.sqrt(scales)[:, None]
    conv = ifft(fft(kern[:, ::-1], nfft, axis=1) * fft(x, nfft)[None, :], axis=1)
    # full-convolution index j holds shift b = j - (n - 1)
    return conv[:, n - 1:2 * n - 1]


def cwt(w: Waveform, scales, spec: WaveletSpec = WaveletSpec(), keep_complex: bool = False) -> Scalogram:
    scales = np.asarray(scales, dtype=np.float64)
    coef = cwt_coefficients(w.samples, scales, spec.morlet_center_frequency)
    return Scalogram(scales, np.abs(coef), coef if keep_complex else None)


# --- image assembly ---------------------------------------------------------

def _linear_resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned linear interpolation matrix of shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = np.linspace(0.0, n_in - 1, n_out)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def bilinear_resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    ry = _linear_resize_matrix(img.shape[0], height)
    rx = _linear_resize_matrix(img.shape[1], width)
    return ry @ img @ rx.T


def minmax_normalize(img: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    lo = img.min()
    return (img - lo) / max(img.max() - lo, eps)


def scalogram_image(s: Scalogram, height: int, width: int) -> np.ndarray:
    if height < 2 or width < 2:
        raise ParameterError("image size must be at least 2x2")
    return minmax_normalize(bilinear_resize(s.magnitudes, height, width))


def waveform_to_image(w: Waveform, cfg: PreprocessConfig, scales: np.ndarray | None = None) -> np.ndarray:
    if scales is None:
        scales = default_scales(cfg, w.sample_rate)
    w = highpass(w, cfg.highpass_cutoff)
    w = dwt_denoise(w, cfg.wavelet)
    s = cwt(w, scales, cfg.wavelet)
    return scalogram_image(s, cfg.image_size, cfg.image_size)


def build_sample(waveforms, event: tuple[float, float], plate: PlateSpec,
                 cfg: PreprocessConfig = PreprocessConfig(), event_id: str = "") -> Sample:
    if len(waveforms) != 4:
        raise InputError("a sample needs exactly 4 waveforms")
    n, rate = len(waveforms[0]), waveforms[0].sample_rate
    if any(len(w) != n or w.sample_rate != rate for w in waveforms):
        raise InputError("waveforms must share length and sample rate")
    scales = default_scales(cfg, rate)
    channels = np.stack([waveform_to_image(w, cfg, scales) for w in waveforms])
    label = (event[0] / plate.width, event[1] / plate.height)
    return Sample(channels, label, event_id)
