"""WAV file I/O: mono 16 kHz, PCM16 or IEEE float32 in, float32 out."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .signal import SAMPLE_RATE, Waveform


class WavFormatError(ValueError):
    """Input audio file violates the mono 16 kHz PCM16/float32 contract."""


def read_wav(path) -> Waveform:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise WavFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: sample rate is {rate} Hz, expected {SAMPLE_RATE} "
                             "(no silent resampling)")
    if data.ndim != 1:
        raise WavFormatError(f"{path}: has {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}, "
                             "expected PCM16 or float32")
    return Waveform(samples)


def write_wav(path, wave: Waveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, wave.sample_rate, wave.samples.astype(np.float32))
