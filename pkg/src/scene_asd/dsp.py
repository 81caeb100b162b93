"""Feature extraction: log-mel context vectors for the autoencoder, raw segments for S-Net."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .audio_io import AudioClip, resample, to_mono
from .errors import ShapeError


def stft_power(clip: AudioClip, n_fft: int = 1024, hop: int = 512,
               sample_rate: int = 16000, power: float = 2.0) -> np.ndarray:
    """Centered Hann-window STFT, shape (n_fft // 2 + 1, 1 + len // hop).

    The input is reflect-padded by n_fft // 2 on both sides. `power=2`
    gives squared magnitude, `power=1` plain magnitude.
    """
    if clip.channels != 1:
        raise ShapeError(f"stft expects mono input, got {clip.channels} channels")
    if clip.sample_rate != sample_rate:
        raise ShapeError(f"stft expects {sample_rate} Hz input, got {clip.sample_rate} Hz")
    x = clip.mono
    if len(x) < 1:
        raise ShapeError("empty clip")
    pad = n_fft // 2
    x = np.pad(x, pad, mode="reflect" if len(x) > pad else "constant")
    frames = sliding_window_view(x, n_fft)[::hop]
    window = np.hanning(n_fft + 1)[:-1]
    spec = np.abs(np.fft.rfft(frames * window, axis=1))
    if power != 1.0:
        spec = spec ** power
    return np.ascontiguousarray(spec.T)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    weights: np.ndarray      # (n_mels, n_fft // 2 + 1)
    centers: np.ndarray      # Hz
    edges: np.ndarray        # Hz, n_mels + 2 points

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def build_mel_filterbank(n_mels: int = 64, n_fft: int = 1024, sample_rate: int = 16000,
                         f_min: float = 0.0, f_max: float | None = None) -> MelFilterbank:
    """Triangular filters, unit peak, centers equally spaced in mel."""
    if f_max is None:
        f_max = sample_rate / 2
    if n_mels < 1:
        raise ValueError(f"n_mels must be >= 1, got {n_mels}")
    if not 0.0 <= f_min < f_max <= sample_rate / 2:
        raise ValueError(f"invalid band range [{f_min}, {f_max}] for {sample_rate} Hz")
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    fft_freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs - lo) / (mid - lo)
    falling = (hi - fft_freqs) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.sum(axis=1) == 0)
    if len(empty):
        raise ValueError(f"mel bands {empty.tolist()} cover no FFT bin; use fewer bands or a larger n_fft")
    return MelFilterbank(weights, edges[1:-1].copy(), edges)


def log_mel(power_spec: np.ndarray, fb: MelFilterbank, floor_eps: float = 1e-10) -> np.ndarray:
    if power_spec.shape[0] != fb.weights.shape[1]:
        raise ShapeError(
            f"spectrogram has {power_spec.shape[0]} bins, filterbank expects {fb.weights.shape[1]}"
        )
    return np.log(np.maximum(fb.weights @ power_spec, floor_eps))


def context_frames(lm: np.ndarray, context: int = 5, stride: int = 1) -> np.ndarray:
    """Stack `context` consecutive frames into rows, frame-major.

    Row j holds frames j*stride .. j*stride+context-1, each contributing its
    full band vector in turn.
    """
    n_bands, n_frames = lm.shape
    if n_frames < context:
        raise ShapeError(f"need at least {context} frames, got {n_frames}")
    windows = sliding_window_view(lm.T, context, axis=0)[::stride]   # (N, bands, context)
    return np.ascontiguousarray(windows.transpose(0, 2, 1).reshape(len(windows), context * n_bands))


def segment_raw(clip: AudioClip, seg_len: int = 2000, sample_rate: int = 8000) -> np.ndarray:
    """Non-overlapping segments, shape (len // seg_len, seg_len); the tail is dropped."""
    if clip.channels != 1:
        raise ShapeError(f"segment_raw expects mono input, got {clip.channels} channels")
    if clip.sample_rate != sample_rate:
        raise ShapeError(f"segment_raw expects {sample_rate} Hz input, got {clip.sample_rate} Hz")
    x = clip.mono
    m = len(x) // seg_len
    return x[: m * seg_len].reshape(m, seg_len).copy()


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 16000
    n_fft: int = 1024
    hop: int = 512
    n_mels: int = 64
    f_min: float = 0.0
    f_max: float | None = None
    floor_eps: float = 1e-10
    power: float = 2.0
    context: int = 5
    stride: int = 1
    snet_rate: int = 8000
    segment_len: int = 2000

    @property
    def input_dim(self) -> int:
        return self.n_mels * self.context


@lru_cache(maxsize=8)
def _cached_filterbank(n_mels, n_fft, sample_rate, f_min, f_max) -> MelFilterbank:
    return build_mel_filterbank(n_mels, n_fft, sample_rate, f_min, f_max)


def _at_rate(clip: AudioClip, rate: int) -> AudioClip:
    clip = to_mono(clip)
    return clip if clip.sample_rate == rate else resample(clip, rate)


def logmel_spectrogram(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    clip = _at_rate(clip, cfg.sample_rate)
    fb = _cached_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max)
    spec = stft_power(clip, cfg.n_fft, cfg.hop, cfg.sample_rate, cfg.power)
    return log_mel(spec, fb, cfg.floor_eps)


def ae_features(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Mono, 16 kHz, log-mel, context stacking: (n_vectors, n_mels * context)."""
    return context_frames(logmel_spectrogram(clip, cfg), cfg.context, cfg.stride)


def snet_features(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Mono, 8 kHz, 250 ms segments: (n_segments, segment_len)."""
    return segment_raw(_at_rate(clip, cfg.snet_rate), cfg.segment_len, cfg.snet_rate)
