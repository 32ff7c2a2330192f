"""sekit: desk-scale single-channel speech denoising toolkit.

Time-domain (masking in a learned filterbank domain) and frequency-domain
(masking STFT magnitudes) denoising networks, with reverberant mixture
simulation, losses, training, and evaluation. See README.md for the CLI.
"""

from .signal import SAMPLE_RATE, Spectrogram, Waveform, convolve, istft, power, stft

__all__ = [
    "SAMPLE_RATE",
    "Spectrogram",
    "Waveform",
    "convolve",
    "istft",
    "power",
    "stft",
]

__version__ = "0.1.0"
