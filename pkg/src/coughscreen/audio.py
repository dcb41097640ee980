"""WAV decoding and normalization to the canonical 3 s / 44.1 kHz mono clip."""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass, field

import numpy as np

CANONICAL_RATE = 44100
CANONICAL_SECONDS = 3.0
CANONICAL_SAMPLES = round(CANONICAL_RATE * CANONICAL_SECONDS)  # 132300


class AudioError(Exception):
    """Base class for ingest failures."""


class MalformedContainer(AudioError):
    """Payload is not a RIFF/WAVE container."""


class UnsupportedEncoding(AudioError):
    """WAV is not integer PCM16 with 1 or 2 channels."""


class EmptyPayload(AudioError):
    """Container carries zero audio frames."""


class TooShort(AudioError):
    """Clip content is shorter than the policy minimum."""


class SilentInput(AudioError):
    """Peak amplitude is below the policy floor."""


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    @property
    def channel_count(self) -> int:
        return 1

    def is_canonical(self) -> bool:
        return (
            self.sample_rate == CANONICAL_RATE
            and len(self.samples) == CANONICAL_SAMPLES
        )


@dataclass(frozen=True)
class ValidationPolicy:
    """Limits applied when normalizing a decoded clip."""

    min_content_seconds: float = 0.5
    silence_floor: float = 1e-4
    target_rate: int = CANONICAL_RATE
    target_seconds: float = field(default=CANONICAL_SECONDS)

    @property
    def target_samples(self) -> int:
        return round(self.target_rate * self.target_seconds)


def decode_wav(payload: bytes) -> AudioClip:
    """Decode a RIFF/WAVE PCM16 payload; stereo is averaged to mono.

    Amplitudes are scaled by 1/32768 so the int16 range maps into [-1, 1].
    """
    if len(payload) < 12 or payload[:4] != b"RIFF" or payload[8:12] != b"WAVE":
        raise MalformedContainer("payload is not a RIFF/WAVE container")
    try:
        with wave.open(io.BytesIO(payload)) as wav:
            n_channels = wav.getnchannels()
            samp_width = wav.getsampwidth()
            rate = wav.getframerate()
            n_frames = wav.getnframes()
            raw = wav.readframes(n_frames)
    except (wave.Error, EOFError) as exc:
        raise UnsupportedEncoding(f"unreadable WAVE stream: {exc}") from exc
    if samp_width != 2:
        raise UnsupportedEncoding(f"expected 16-bit PCM, got {8 * samp_width}-bit")
    if n_channels not in (1, 2):
        raise UnsupportedEncoding(f"expected 1 or 2 channels, got {n_channels}")
    if n_frames == 0 or len(raw) == 0:
        raise EmptyPayload("WAVE container holds no frames")

    pcm = np.frombuffer(raw, dtype="<i2")
    if n_channels == 2:
        pcm = pcm.reshape(-1, 2).mean(axis=1)
    samples = np.asarray(pcm, dtype=np.float64) / 32768.0
    return AudioClip(samples=samples, sample_rate=rate)


def encode_wav(clip: AudioClip) -> bytes:
    """Encode a clip as mono PCM16 WAV (round-trips within one LSB)."""
    quantized = np.clip(np.round(clip.samples * 32768.0), -32768, 32767)
    pcm = quantized.astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(clip.sample_rate)
        wav.writeframes(pcm.tobytes())
    return buf.getvalue()


def _resample_linear(samples: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    """Linear-interpolation resampling onto a uniform grid at rate_out."""
    duration = len(samples) / rate_in
    n_out = round(duration * rate_out)
    t_out = np.arange(n_out) / rate_out
    t_in = np.arange(len(samples)) / rate_in
    return np.interp(t_out, t_in, samples)


def validate_clip(clip: AudioClip, policy: ValidationPolicy | None = None) -> AudioClip:
    """Normalize a decoded clip to the canonical rate and length.

    Longer clips are center-truncated, shorter ones zero-padded symmetrically,
    and other sample rates linearly resampled.  Idempotent on canonical clips.
    """
    policy = policy or ValidationPolicy()
    samples = np.asarray(clip.samples, dtype=np.float64)

    if clip.duration < policy.min_content_seconds:
        raise TooShort(
            f"clip holds {clip.duration:.3f} s of content, "
            f"policy minimum is {policy.min_content_seconds:.3f} s"
        )
    peak = float(np.max(np.abs(samples))) if len(samples) else 0.0
    if peak < policy.silence_floor:
        raise SilentInput(f"peak amplitude {peak:.2e} below floor {policy.silence_floor:.2e}")

    if clip.sample_rate != policy.target_rate:
        samples = _resample_linear(samples, clip.sample_rate, policy.target_rate)

    target = policy.target_samples
    n = len(samples)
    if n > target:
        start = (n - target) // 2
        samples = samples[start : start + target]
    elif n < target:
        pad = target - n
        left = pad // 2
        samples = np.pad(samples, (left, pad - left))
    samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=policy.target_rate)
