"""Deterministic DSP primitives: windowing, STFT/iSTFT, convolution, power.

All arithmetic is 64-bit. Waveforms are mono, 16 kHz, full-scale +-1.0.
Every function here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

SAMPLE_RATE = 16000

# 32 ms window / 8 ms shift at 16 kHz.
DEFAULT_WIN_LEN = 512
DEFAULT_HOP = 128

# Samples where the overlap-add weight falls below this are unrecoverable
# (window edges); they are emitted as zeros rather than divided.
_OLA_EPS = 1e-10


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono time-domain signal at 16 kHz."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """One-sided complex STFT coefficients, shape (num_frames, num_bins)."""

    frames: np.ndarray
    win_len: int
    hop: int
    window: str = "hann"

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.complex128)
        if frames.ndim != 2:
            raise ValueError(f"spectrogram frames must be 2-D, got shape {frames.shape}")
        if not (1 <= self.hop <= self.win_len):
            raise ValueError(f"need win_len >= hop >= 1, got win_len={self.win_len} hop={self.hop}")
        if frames.shape[1] != self.win_len // 2 + 1:
            raise ValueError(
                f"expected {self.win_len // 2 + 1} bins for win_len={self.win_len}, "
                f"got {frames.shape[1]}"
            )
        if self.window != "hann":
            raise ValueError(f"unsupported window kind {self.window!r}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("spectrogram contains non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]

    @property
    def recon_len(self) -> int:
        """Number of samples the overlap-add synthesis can reconstruct."""
        return (self.num_frames - 1) * self.hop + self.win_len


@lru_cache(maxsize=8)
def hann_window(win_len: int) -> np.ndarray:
    """Periodic Hann window, w[n] = 0.5 - 0.5*cos(2*pi*n/W)."""
    n = np.arange(win_len)
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_len)
    w.setflags(write=False)
    return w


def num_frames(length: int, win_len: int, hop: int) -> int:
    """Frame count so that every sample is covered; short input gives one frame."""
    if length <= win_len:
        return 1
    return int(np.ceil((length - win_len) / hop)) + 1


def stft(wave: Waveform, win_len: int = DEFAULT_WIN_LEN, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Short-time Fourier transform with a periodic Hann analysis window.

    Frame f covers samples [f*hop, f*hop + win_len); the tail is zero-padded
    to complete the last frame. Returns the one-sided spectrum.
    """
    if not (1 <= hop <= win_len):
        raise ValueError(f"need win_len >= hop >= 1, got win_len={win_len} hop={hop}")
    x = wave.samples
    if not np.all(np.isfinite(x)):
        raise ValueError("stft input contains non-finite samples")
    n_frames = num_frames(x.size, win_len, hop)
    padded_len = (n_frames - 1) * hop + win_len
    x = np.pad(x, (0, padded_len - x.size))
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    segments = x[idx] * hann_window(win_len)[None, :]
    return Spectrogram(frames=np.fft.rfft(segments, axis=1), win_len=win_len, hop=hop)


@lru_cache(maxsize=32)
def _ola_weight(win_len: int, hop: int, n_frames: int) -> np.ndarray:
    w2 = hann_window(win_len) ** 2
    wsum = np.zeros((n_frames - 1) * hop + win_len)
    for f in range(n_frames):
        wsum[f * hop : f * hop + win_len] += w2
    wsum.setflags(write=False)
    return wsum


def istft(spec: Spectrogram, out_len: int) -> Waveform:
    """Inverse STFT via weighted overlap-add, normalized by the summed
    squared window so that istft(stft(w)) == w in the interior.
    """
    if out_len < 1:
        raise ValueError("out_len must be >= 1")
    if out_len > spec.recon_len:
        raise ValueError(f"out_len {out_len} exceeds reconstructable length {spec.recon_len}")
    win_len, hop = spec.win_len, spec.hop
    window = hann_window(win_len)
    wsum = _ola_weight(win_len, hop, spec.num_frames)
    interior = wsum[win_len : max(wsum.size - win_len, win_len)]
    if interior.size and interior.min() <= _OLA_EPS:
        raise ValueError(
            f"degenerate window/hop (win_len={win_len}, hop={hop}): "
            "overlap-add normalization vanishes in the interior"
        )
    segments = np.fft.irfft(spec.frames, n=win_len, axis=1) * window[None, :]
    acc = np.zeros(spec.recon_len)
    for f in range(spec.num_frames):
        acc[f * hop : f * hop + win_len] += segments[f]
    out = np.divide(acc, wsum, out=np.zeros_like(acc), where=wsum > _OLA_EPS)
    return Waveform(out[:out_len])


def convolve(wave: Waveform, kernel) -> Waveform:
    """Linear convolution truncated to the input length (same-length
    convention, so targets stay aligned with their sources)."""
    kernel = np.asarray(kernel, dtype=np.float64).ravel()
    if kernel.size < 1:
        raise ValueError("kernel must contain at least one tap")
    if not np.all(np.isfinite(kernel)):
        raise ValueError("kernel contains non-finite values")
    full = fftconvolve(wave.samples, kernel, mode="full")
    return Waveform(full[: len(wave)])


def power(wave: Waveform) -> float:
    """Mean-square power, (1/T) * sum(samples^2)."""
    return float(np.mean(wave.samples**2))
