"""PCM16 WAV I/O, resampling to 16 kHz, normalization and noise mixing."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import AudioError, WavFormatError

TARGET_RATE = 16000
MIN_INPUT_RATE = 8000
DEFAULT_NOISE_LEVELS = (0.0, 0.1, 0.3)

# anti-alias filter used when downsampling
FIR_TAPS = 63
FIR_CUTOFF_HZ = 0.45 * TARGET_RATE


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"waveform must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise AudioError("waveform contains non-finite samples")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise AudioError("waveform samples must lie in [-1, 1]")
        if int(self.rate) != self.rate or self.rate <= 0:
            raise AudioError(f"sample rate must be a positive integer, got {self.rate!r}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "rate", int(self.rate))

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, Waveform):
            return NotImplemented
        return self.rate == other.rate and np.array_equal(self.samples, other.samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.rate


def check_noise_level(beta: float) -> float:
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise AudioError(f"noise level must be in [0, 1], got {beta}")
    return beta


def decode_wav(path) -> Waveform:
    """Read a PCM16 WAV file, averaging channels down to mono."""
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        # the stdlib reader only accepts format tag 1 (PCM)
        raise WavFormatError(f"{path}: unsupported or malformed WAV ({exc})") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated WAV header") from exc
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    frame_bytes = width * n_channels
    if len(raw) != n_frames * frame_bytes:
        raise WavFormatError(
            f"{path}: truncated data chunk ({len(raw)} of {n_frames * frame_bytes} bytes)"
        )
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    pcm = pcm.reshape(-1, n_channels).mean(axis=1)
    return Waveform(pcm, rate)


def quantize(samples) -> np.ndarray:
    # scale by 32768 to mirror decoding; full scale +1.0 clamps to 32767, so
    # decode(encode(x)) stays within 1/32767 of x
    scaled = np.rint(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def encode_wav(w: Waveform, path) -> None:
    """Write ``w`` as mono PCM16 at its own sample rate."""
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.rate)
        wf.writeframes(quantize(w.samples).tobytes())


def lowpass_fir(rate: int, cutoff_hz: float = FIR_CUTOFF_HZ, taps: int = FIR_TAPS) -> np.ndarray:
    """Hann-windowed sinc low-pass with unit DC gain."""
    n = np.arange(taps) - (taps - 1) / 2.0
    fc = cutoff_hz / rate
    h = 2.0 * fc * np.sinc(2.0 * fc * n) * np.hanning(taps)
    return h / h.sum()


def _linear_resample(x: np.ndarray, src_rate: int, n_out: int) -> np.ndarray:
    positions = np.arange(n_out) * (src_rate / TARGET_RATE)
    return np.interp(positions, np.arange(x.size), x)


def resample_to_16k(w: Waveform) -> Waveform:
    if w.rate < MIN_INPUT_RATE:
        raise AudioError(f"sample rate {w.rate} Hz below supported minimum {MIN_INPUT_RATE}")
    if w.rate == TARGET_RATE:
        return w
    x = w.samples
    n_out = int(round(x.size * TARGET_RATE / w.rate))
    if x.size == 0 or n_out == 0:
        return Waveform(np.zeros(0), TARGET_RATE)
    if w.rate > TARGET_RATE:
        x = np.convolve(x, lowpass_fir(w.rate), mode="same")
    y = _linear_resample(x, w.rate, n_out)
    # filtering can overshoot a full-scale input by a hair
    return Waveform(np.clip(y, -1.0, 1.0), TARGET_RATE)


def peak_normalize(w: Waveform) -> Waveform:
    if len(w) == 0:
        raise AudioError("cannot normalize an empty waveform")
    peak = np.max(np.abs(w.samples))
    if peak == 0.0:
        return w
    return Waveform(np.clip(w.samples / peak, -1.0, 1.0), w.rate)


def rms_normalize(w: Waveform, target_rms: float = 0.1) -> Waveform:
    """Scale to a target RMS, clipping to [-1, 1]. Alternative to peak normalization."""
    if len(w) == 0:
        raise AudioError("cannot normalize an empty waveform")
    rms = float(np.sqrt(np.mean(w.samples**2)))
    if rms == 0.0:
        return w
    return Waveform(np.clip(w.samples * (target_rms / rms), -1.0, 1.0), w.rate)


NORMALIZERS = {"peak": peak_normalize, "rms": rms_normalize, "none": lambda w: w}


def tile_to_length(x: np.ndarray, length: int) -> np.ndarray:
    if x.size == 0:
        raise AudioError("cannot extend an empty signal")
    return np.resize(x, length)


def mix_noise(speech: Waveform, noise: Waveform, beta: float, normalization: str = "peak") -> Waveform:
    """Convex mix ``(1 - beta) * speech + beta * noise`` of normalized signals.

    Noise shorter than the speech is repeated cyclically; longer noise is
    truncated to the speech length.
    """
    beta = check_noise_level(beta)
    if speech.rate != noise.rate:
        raise AudioError(
            f"rate mismatch: speech {speech.rate} Hz vs noise {noise.rate} Hz; resample first"
        )
    if normalization not in NORMALIZERS:
        raise AudioError(f"unknown normalization {normalization!r}; expected one of {sorted(NORMALIZERS)}")
    normalize = NORMALIZERS[normalization]
    s = normalize(speech).samples
    n = tile_to_length(normalize(noise).samples, s.size)
    out = (1.0 - beta) * s + beta * n
    return Waveform(np.clip(out, -1.0, 1.0), speech.rate)
