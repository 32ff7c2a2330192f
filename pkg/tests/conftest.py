import numpy as np
import pytest

from sekit.signal import SAMPLE_RATE, Waveform


def synth_speech(length: int, seed: int) -> Waveform:
    """Speech-like test signal: a drifting harmonic source with a slow
    syllable-rate amplitude envelope and a whiff of breath noise."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / SAMPLE_RATE
    f0 = rng.uniform(100.0, 240.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / SAMPLE_RATE
    x = np.zeros(length)
    for h in range(1, 9):
        x += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    syllables = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    x = x * syllables + 0.01 * rng.standard_normal(length)
    x *= 0.1 / np.sqrt(np.mean(x**2))
    return Waveform(x)


@pytest.fixture
def speech_dir(tmp_path):
    """Directory with a few synthetic speech WAVs."""
    from sekit.wavio import write_wav

    d = tmp_path / "speech"
    d.mkdir()
    for i in range(3):
        write_wav(d / f"spk{i}.wav", synth_speech(SAMPLE_RATE, seed=100 + i))
    return d


@pytest.fixture
def noise_dir(tmp_path):
    from sekit.dataset import synth_noise
    from sekit.wavio import write_wav

    d = tmp_path / "noise"
    d.mkdir()
    for i, kind in enumerate(["white", "pink"]):
        write_wav(d / f"{kind}.wav", synth_noise(kind, 2 * SAMPLE_RATE, seed=200 + i))
    return d
