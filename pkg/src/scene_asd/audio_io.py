"""Audio clips: WAV I/O, channel averaging, 2x resampling, SNR mixing and synthesis."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    DataError,
    MalformedWavError,
    TruncatedWavError,
    UnsupportedEncodingError,
    WavNotFoundError,
)

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

RESAMPLE_TAPS = 65


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Multi-channel float64 sample buffer, shape (channels, frames)."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[np.newaxis, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValueError(f"samples must be (channels, frames), got {samples.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate

    @property
    def mono(self) -> np.ndarray:
        """The single channel of a mono clip."""
        if self.channels != 1:
            raise ValueError(f"expected a mono clip, got {self.channels} channels")
        return self.samples[0]


# --- WAV ---------------------------------------------------------------------


def _iter_chunks(data: bytes, start: int):
    pos = start
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)


def load_wav(path) -> AudioClip:
    """Read a PCM-16 / PCM-24 / PCM-32 / float-32 / float-64 RIFF WAV file.

    Integer samples are scaled by 2**(bits-1) into [-1, 1).
    """
    path = Path(path)
    if not path.is_file():
        raise WavNotFoundError(f"no such WAV file: {path}")
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    for cid, off, size in _iter_chunks(data, 12):
        if cid == b"fmt ":
            if size < 16 or off + size > len(data):
                raise MalformedWavError(f"{path}: bad fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", data, off)
            if fmt[0] == WAVE_FORMAT_EXTENSIBLE:
                if size < 40:
                    raise MalformedWavError(f"{path}: short WAVE_FORMAT_EXTENSIBLE chunk")
                sub = struct.unpack_from("<H", data, off + 24)[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if fmt is None:
                raise MalformedWavError(f"{path}: data chunk precedes fmt chunk")
            if off + size > len(data):
                raise TruncatedWavError(
                    f"{path}: data chunk declares {size} bytes, {len(data) - off} present"
                )
            payload = data[off:off + size]
            break
    if fmt is None:
        raise MalformedWavError(f"{path}: missing fmt chunk")
    if payload is None:
        raise MalformedWavError(f"{path}: missing data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedWavError(f"{path}: {channels} channels at {rate} Hz")
    if tag == WAVE_FORMAT_PCM and bits in (16, 24, 32):
        width = bits // 8
        if width == 3:
            raw = np.frombuffer(payload[: len(payload) // 3 * 3], dtype=np.uint8).reshape(-1, 3)
            ints = (raw[:, 0].astype(np.int32) | (raw[:, 1].astype(np.int32) << 8)
                    | (raw[:, 2].astype(np.int8).astype(np.int32) << 16))
        else:
            ints = np.frombuffer(payload[: len(payload) // width * width], dtype=f"<i{width}")
        flat = ints.astype(np.float64) / float(1 << (bits - 1))
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits in (32, 64):
        width = bits // 8
        flat = np.frombuffer(payload[: len(payload) // width * width], dtype=f"<f{width}")
        flat = flat.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag:#06x} with {bits} bits")

    if block_align != channels * (bits // 8):
        raise MalformedWavError(f"{path}: block_align {block_align} inconsistent with header")
    if len(payload) % block_align:
        raise TruncatedWavError(f"{path}: partial trailing frame in data chunk")
    frames = flat.reshape(-1, channels).T
    return AudioClip(rate, np.ascontiguousarray(frames))


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write `clip` as little-endian PCM-16 (clipped to range) or float-32."""
    path = Path(path)
    interleaved = clip.samples.T.reshape(-1)
    if encoding == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        q = np.clip(np.round(interleaved * 32768.0), -32768, 32767)
        payload = q.astype("<i2").tobytes()
    elif encoding == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        payload = interleaved.astype("<f4").tobytes()
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block_align = clip.channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, clip.channels, clip.sample_rate,
        clip.sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


# --- conversions ---------------------------------------------------------------


def to_mono(clip: AudioClip) -> AudioClip:
    if clip.channels == 1:
        return clip
    return AudioClip(clip.sample_rate, clip.samples.mean(axis=0))


def lowpass_kernel(cutoff: float, taps: int = RESAMPLE_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass with unit DC gain.

    `cutoff` is a fraction of the sampling rate (0.25 = half Nyquist).
    """
    n = np.arange(taps) - (taps - 1) / 2
    h = 2 * cutoff * np.sinc(2 * cutoff * n) * np.hamming(taps)
    return h / h.sum()


def _filter_reflect(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    half = (len(h) - 1) // 2
    padded = np.pad(x, half, mode="reflect" if len(x) > half else "edge")
    return np.convolve(padded, h, mode="valid")


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Change the rate of a mono clip by an integer factor.

    Downsampling low-passes at the new Nyquist then keeps every `factor`-th
    sample; upsampling zero-stuffs then applies the same filter with gain
    `factor`.
    """
    x = clip.mono
    src = clip.sample_rate
    target_rate = int(target_rate)
    if target_rate == src:
        return clip
    if src % target_rate == 0:
        factor = src // target_rate
        y = _filter_reflect(x, lowpass_kernel(0.5 / factor))[::factor]
    elif target_rate % src == 0:
        factor = target_rate // src
        up = np.zeros(len(x) * factor)
        up[::factor] = x
        y = factor * _filter_reflect(up, lowpass_kernel(0.5 / factor))
    else:
        raise ValueError(f"rate ratio {src}->{target_rate} is not an integer factor")
    return AudioClip(target_rate, y)


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def snr_gain(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Gain g such that 10*log10(P(signal) / P(g*noise)) == snr_db."""
    p_noise = mean_power(noise)
    if p_noise <= 0.0:
        raise DataError("noise has zero power")
    return float(np.sqrt(mean_power(signal) / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(signal: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    if signal.sample_rate != noise.sample_rate:
        raise DataError(f"rate mismatch: {signal.sample_rate} vs {noise.sample_rate}")
    if signal.n_frames != noise.n_frames:
        raise DataError(f"length mismatch: {signal.n_frames} vs {noise.n_frames}")
    s, n = signal.mono, noise.mono
    g = snr_gain(s, n, snr_db)
    return AudioClip(signal.sample_rate, s + g * n)


# --- synthesis -------------------------------------------------------------------

ARCHETYPES = ("hum", "am", "impulse", "chirp")
ANOMALIES = (None, "bursts", "detune")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic machine clip.

    `harmonics` are relative amplitudes of partials 1..K of `fundamental`.
    Variability between clips of one machine comes from random partial
    phases, `f0_jitter` (scale of a Laplace-distributed relative offset of
    the fundamental) and a benign "load" component: extra energy on
    `load_harmonics` at a lognormal level `load_level * exp(load_sigma * z)`
    relative to the base RMS.
    """

    duration: float = 10.0
    sample_rate: int = 16000
    fundamental: float = 170.0
    harmonics: Sequence[float] = (1.0, 0.5, 0.3, 0.2)
    archetype: str = "hum"
    f0_jitter: float = 0.0
    rms: float = 0.05
    mod_rate: float = 4.0
    mod_depth: float = 0.5
    pulse_rate: float = 2.0
    pulse_decay: float = 0.05
    sweep_rate: float = 0.5
    sweep_depth: float = 0.3
    anomaly: Optional[str] = None
    anomaly_gain: float = 1.0
    burst_count: int = 8
    burst_ms: float = 30.0
    detune: Sequence[float] = (1.53, 2.61, 3.37)
    load_level: float = 0.0
    load_sigma: float = 1.0
    load_harmonics: Sequence[int] = (5, 6, 7, 8)

    def __post_init__(self):
        if len(self.harmonics) == 0:
            raise ValueError("harmonic set is empty")
        if self.duration <= 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.archetype not in ARCHETYPES:
            raise ValueError(f"unknown archetype {self.archetype!r}")
        if self.anomaly not in ANOMALIES:
            raise ValueError(f"unknown anomaly {self.anomaly!r}")


def _partials(t, freqs, amps, phases) -> np.ndarray:
    out = np.zeros_like(t)
    for f, a, p in zip(freqs, amps, phases):
        out += a * np.sin(2 * np.pi * f * t + p)
    return out


def synth_clip(spec: SynthSpec, seed: int) -> AudioClip:
    """Deterministic synthetic machine sound for `(spec, seed)`.

    The normal part and the injected anomaly draw from independent streams,
    so an anomalous clip is the normal clip of the same seed plus the
    deviation, rescaled to the same RMS.
    """
    base_rng, anom_rng = np.random.default_rng(seed).spawn(2)
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    t = np.arange(n) / sr
    f0 = spec.fundamental * (1.0 + spec.f0_jitter * base_rng.laplace())
    amps = np.asarray(spec.harmonics, dtype=np.float64)
    k = np.arange(1, len(amps) + 1)
    phases = base_rng.uniform(0.0, 2 * np.pi, size=len(amps))

    if spec.archetype == "hum":
        x = _partials(t, k * f0, amps, phases)
    elif spec.archetype == "am":
        mod_phase = base_rng.uniform(0.0, 2 * np.pi)
        env = 1.0 + spec.mod_depth * np.sin(2 * np.pi * spec.mod_rate * t + mod_phase)
        x = env * _partials(t, k * f0, amps, phases)
    elif spec.archetype == "impulse":
        offset = base_rng.uniform(0.0, 1.0 / spec.pulse_rate)
        since = np.mod(t - offset, 1.0 / spec.pulse_rate)
        env = np.exp(-since / spec.pulse_decay)
        x = env * _partials(t, k * f0, amps, phases)
    else:  # chirp
        sweep_phase = base_rng.uniform(0.0, 1.0)
        tri = 2.0 * np.abs(2.0 * np.mod(spec.sweep_rate * t + sweep_phase, 1.0) - 1.0) - 1.0
        inst = f0 * (1.0 + spec.sweep_depth * tri)
        ph = 2 * np.pi * np.cumsum(inst) / sr
        x = np.zeros(n)
        for kk, a, p in zip(k, amps, phases):
            x += a * np.sin(kk * ph + p)
    x *= spec.rms / np.sqrt(mean_power(x))
    if spec.load_level > 0:
        level = spec.load_level * np.exp(spec.load_sigma * base_rng.standard_normal())
        lk = np.asarray(spec.load_harmonics, dtype=np.float64)
        lph = base_rng.uniform(0.0, 2 * np.pi, size=len(lk))
        load = _partials(t, lk * f0, np.ones(len(lk)), lph)
        x += level * spec.rms * load / np.sqrt(mean_power(load))
        x *= spec.rms / np.sqrt(mean_power(x))

    if spec.anomaly == "bursts":
        blen = max(1, int(spec.burst_ms * 1e-3 * sr))
        env = np.hanning(blen)
        starts = anom_rng.integers(0, max(1, n - blen), size=spec.burst_count)
        for s in np.sort(starts):
            burst = anom_rng.standard_normal(blen) * env
            x[s:s + blen] += spec.anomaly_gain * 4.0 * spec.rms * burst[: n - s]
    elif spec.anomaly == "detune":
        ratios = np.asarray(spec.detune, dtype=np.float64)
        ph = anom_rng.uniform(0.0, 2 * np.pi, size=len(ratios))
        extra = _partials(t, ratios * f0, np.ones(len(ratios)), ph)
        x += spec.anomaly_gain * spec.rms * extra / np.sqrt(mean_power(extra))
    if spec.anomaly is not None:
        x *= spec.rms / np.sqrt(mean_power(x))
    return AudioClip(sr, x)


def pink_noise(n: int, sample_rate: int, rng: np.random.Generator, rms: float = 1.0) -> np.ndarray:
    """White Gaussian noise shaped to a 1/f power spectrum (flat below 20 Hz)."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec /= np.sqrt(np.maximum(f, 20.0))
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x * (rms / np.sqrt(mean_power(x)))
