"""Spectral transforms: Mel scale, STFT, Mel spectrogram, spectro-image, MFCC.

The Mel conversion is m = 2595 * log10(1 + f / 700); filter banks place
triangular filters on centers equally spaced along that axis, which gives
the unequal frequency spacing (fine at low frequency) that suits cough
energy concentrated in the low bands.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import scipy.signal

LOG_EPS = 1e-10  # floor inside log-power so silence stays finite

IMAGE_HEIGHT = 240  # frequency axis, rows
IMAGE_WIDTH = 320  # time axis, cols


class DspError(Exception):
    pass


class NegativeFrequency(DspError):
    pass


class NegativeMel(DspError):
    pass


class ClipShorterThanFrame(DspError):
    pass


class TooFewBins(DspError):
    pass


class DegenerateRange(DspError):
    """Raised only when degenerate input cannot take the 0.5 convention."""


@dataclass(frozen=True)
class SpectroConfig:
    frame_length: int = 2048
    hop_length: int = 512
    window: str = "hann"
    n_mels: int = 128
    sample_rate: int = 44100
    fmin: float = 0.0
    fmax: float | None = None  # None -> sample_rate / 2

    def __post_init__(self):
        if not 0 < self.hop_length <= self.frame_length:
            raise ValueError("require 0 < hop_length <= frame_length")
        if self.n_mels < 2:
            raise ValueError("require n_mels >= 2")
        if not self.fmin < self.effective_fmax <= self.sample_rate / 2:
            raise ValueError("require fmin < fmax <= sample_rate/2")

    @property
    def effective_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 13  # M
    n_filters: int = 40
    spectro: SpectroConfig = field(
        default_factory=lambda: SpectroConfig(n_mels=40)
    )

    def __post_init__(self):
        if self.n_coeffs < 1:
            raise ValueError("require n_coeffs >= 1")
        if self.spectro.n_mels != self.n_filters:
            object.__setattr__(self, "spectro", replace(self.spectro, n_mels=self.n_filters))


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-power Mel spectrogram in dB, shape (n_mels, frames)."""

    values: np.ndarray
    config: SpectroConfig

    @property
    def frame_count(self) -> int:
        return self.values.shape[1]


def hz_to_mel(f):
    """Mel pitch for frequency f in Hz: 2595 * log10(1 + f/700)."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise NegativeFrequency("frequency must be >= 0")
    out = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(out) if out.ndim == 0 else out


def mel_to_hz(m):
    """Inverse Mel conversion: 700 * (10^(m/2595) - 1)."""
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise NegativeMel("mel value must be >= 0")
    out = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(out) if out.ndim == 0 else out


def frame_count(n_samples: int, config: SpectroConfig) -> int:
    return 1 + (n_samples - config.frame_length) // config.hop_length


def _as_samples(clip_or_samples) -> np.ndarray:
    samples = getattr(clip_or_samples, "samples", clip_or_samples)
    return np.asarray(samples, dtype=np.float64)


def stft_power(samples, config: SpectroConfig) -> np.ndarray:
    """Windowed power spectrogram, shape (frame_length//2 + 1, frames)."""
    samples = _as_samples(samples)
    if len(samples) < config.frame_length:
        raise ClipShorterThanFrame(
            f"{len(samples)} samples < frame_length {config.frame_length}"
        )
    window = scipy.signal.get_window(config.window, config.frame_length, fftbins=True)
    frames = np.lib.stride_tricks.sliding_window_view(samples, config.frame_length)
    frames = frames[:: config.hop_length] * window
    spectrum = scipy.fft.rfft(frames, axis=1)
    return (spectrum.real**2 + spectrum.imag**2).T


def mel_filterbank(config: SpectroConfig, fft_bins: int) -> np.ndarray:
    """Triangular filters on Mel-spaced centers, shape (n_mels, fft_bins).

    Bin i is taken at frequency i * nyquist / (fft_bins - 1), matching the
    rfft layout produced by stft_power.
    """
    if fft_bins < config.n_mels + 2:
        raise TooFewBins(f"{fft_bins} bins cannot carry {config.n_mels} filters")
    mel_edges = np.linspace(
        hz_to_mel(config.fmin), hz_to_mel(config.effective_fmax), config.n_mels + 2
    )
    hz_edges = mel_to_hz(mel_edges)
    bin_freqs = np.linspace(0.0, config.sample_rate / 2.0, fft_bins)

    lower = hz_edges[:-2, None]
    center = hz_edges[1:-1, None]
    upper = hz_edges[2:, None]
    rising = (bin_freqs - lower) / (center - lower)
    falling = (upper - bin_freqs) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_spectrogram(samples, config: SpectroConfig | None = None) -> MelSpectrogram:
    """Mel-band log power in dB: 10*log10(filterbank @ power + eps)."""
    config = config or SpectroConfig()
    power = stft_power(_as_samples(samples), config)
    bank = mel_filterbank(config, power.shape[0])
    values = 10.0 * np.log10(bank @ power + LOG_EPS)
    return MelSpectrogram(values=values, config=config)


def _resize_bilinear(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize with corner alignment (endpoints preserved)."""
    in_h, in_w = values.shape

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if n_in == 1:
            zero = np.zeros(n_out, dtype=int)
            return zero, zero, np.zeros(n_out)
        pos = np.linspace(0.0, n_in - 1.0, n_out)
        lo = np.floor(pos).astype(int)
        lo = np.minimum(lo, n_in - 2)
        return lo, lo + 1, pos - lo

    r0, r1, rf = axis_coords(in_h, out_h)
    c0, c1, cf = axis_coords(in_w, out_w)
    rows = values[r0] * (1 - rf[:, None]) + values[r1] * rf[:, None]
    return rows[:, c0] * (1 - cf) + rows[:, c1] * cf


def to_image(spec: MelSpectrogram) -> np.ndarray:
    """Min-max normalized grayscale image, shape (240, 320, 1) in [0, 1].

    Rows carry the frequency axis (row 0 = lowest band), columns time.
    A constant spectrogram maps to all pixels 0.5.
    """
    values = spec.values
    if not np.all(np.isfinite(values)):
        raise DegenerateRange("spectrogram contains non-finite entries")
    if float(values.max()) - float(values.min()) == 0.0:
        return np.full((IMAGE_HEIGHT, IMAGE_WIDTH, 1), 0.5)
    resized = _resize_bilinear(values, IMAGE_HEIGHT, IMAGE_WIDTH)
    lo, hi = float(resized.min()), float(resized.max())
    if hi - lo == 0.0:
        return np.full((IMAGE_HEIGHT, IMAGE_WIDTH, 1), 0.5)
    return ((resized - lo) / (hi - lo))[:, :, None]


def mfcc(samples, config: MfccConfig | None = None) -> np.ndarray:
    """MFCC matrix of shape (n_coeffs, frames).

    Log energies of the 40-filter Mel bank per frame, then an orthonormal
    DCT-II along the filter axis keeping coefficients 0..M-1.
    """
    config = config or MfccConfig()
    power = stft_power(_as_samples(samples), config.spectro)
    bank = mel_filterbank(config.spectro, power.shape[0])
    log_energy = np.log(bank @ power + LOG_EPS)
    ceps = scipy.fft.dct(log_energy, type=2, norm="ortho", axis=0)
    return ceps[: config.n_coeffs]


def write_spectrogram_csv(spec: MelSpectrogram, path) -> None:
    """Row-major CSV with 6 significant digits per entry."""
    with open(path, "w") as fh:
        for row in spec.values:
            fh.write(",".join(f"{v:.6g}" for v in row) + "\n")


def write_image_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM (P5) dump of a [0, 1] grayscale image."""
    pixels = np.asarray(image)
    if pixels.ndim == 3:
        pixels = pixels[:, :, 0]
    h, w = pixels.shape
    data = np.clip(np.round(pixels * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())
