"""Losses and evaluation metrics.

Training losses are differentiable graph expressions; the metric variants
(`snr_db`, `sisnr_db`, `sdr_proxy`) are plain floats. The time-domain loss
is the negative classic SNR, which preserves the absolute signal scale; the
frequency-domain loss is a log-MSE on magnitude spectra computed before the
synthesis stage, in its ratio (amplitude-spectrum SNR) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import EPSILON, Tensor
from .signal import Spectrogram, Waveform


@dataclass(frozen=True)
class LossSpec:
    """Which loss to train with: kind 'tdl' or 'fdl', optionally with the
    extra noise-reconstruction term (requires a dual-output model)."""

    kind: str = "tdl"
    multitask: bool = False
    epsilon: float = EPSILON
    fdl_raw: bool = False

    def __post_init__(self):
        if self.kind not in ("tdl", "fdl"):
            raise ValueError(f"loss kind must be 'tdl' or 'fdl', got {self.kind!r}")


def _samples(wave) -> np.ndarray:
    if isinstance(wave, Waveform):
        return wave.samples
    return np.asarray(wave, dtype=np.float64)


def snr_db(reference, estimate) -> float:
    """Classic scale-sensitive SNR in dB:
    10*log10((||x||^2 + eps) / (||x - xhat||^2 + eps))."""
    x, xhat = _samples(reference), _samples(estimate)
    if x.shape != xhat.shape:
        raise ValueError(f"snr_db: length mismatch {x.shape} vs {xhat.shape}")
    sig = np.sum(x**2)
    err = np.sum((x - xhat) ** 2)
    return float(10.0 * np.log10((sig + EPSILON) / (err + EPSILON)))


def sisnr_db(reference, estimate) -> float:
    """Scale-invariant SNR: project the estimate onto the reference after
    removing means, then score the residual."""
    x, xhat = _samples(reference), _samples(estimate)
    if x.shape != xhat.shape:
        raise ValueError(f"sisnr_db: length mismatch {x.shape} vs {xhat.shape}")
    x = x - x.mean()
    xhat = xhat - xhat.mean()
    denom = np.sum(x**2)
    if denom <= 0.0:
        raise ValueError("sisnr_db: reference has zero energy")
    s = (np.dot(xhat, x) / denom) * x
    return float(10.0 * np.log10((np.sum(s**2) + EPSILON) / (np.sum((xhat - s) ** 2) + EPSILON)))


def sdr_proxy(reference, estimate) -> float:
    """SNR-based stand-in for a full distortion-ratio metric; reported as a
    proxy wherever it appears."""
    return snr_db(reference, estimate)


def _snr_term(reference: np.ndarray, estimate: Tensor) -> Tensor:
    """Differentiable 10*log10((||x||^2+eps)/(||x-xhat||^2+eps))."""
    ref = Tensor(reference)
    err = ad.sub(ref, estimate)
    sig_energy = float(np.sum(reference**2))
    return ad.mul(ad.sub(ad.log10_eps(Tensor(sig_energy)),
                         ad.log10_eps(ad.sum(ad.mul(err, err)))), 10.0)


def tdl_loss(x, xhat: Tensor, n=None, nhat: Tensor | None = None,
             multitask: bool = False) -> Tensor:
    """Time-domain loss: -SNR(x, xhat), plus -SNR(n, nhat) in multitask
    mode so gradients reach both output heads."""
    x = _samples(x)
    if x.shape != xhat.shape:
        raise ValueError(f"tdl_loss: length mismatch {x.shape} vs {xhat.shape}")
    loss = ad.mul(_snr_term(x, xhat), -1.0)
    if multitask:
        if n is None or nhat is None:
            raise ValueError("multitask tdl_loss requires the noise reference and a "
                             "dual-output model's noise estimate")
        n = _samples(n)
        if n.shape != nhat.shape:
            raise ValueError(f"tdl_loss: noise length mismatch {n.shape} vs {nhat.shape}")
        loss = ad.add(loss, ad.mul(_snr_term(n, nhat), -1.0))
    elif n is not None or nhat is not None:
        raise ValueError("noise signals supplied but multitask=False")
    return loss


def _magnitude(spec) -> np.ndarray:
    """Magnitudes as (num_bins, num_frames), the mask-net orientation."""
    if isinstance(spec, Spectrogram):
        return np.abs(spec.frames).T
    return np.asarray(spec, dtype=np.float64)


def fdl_loss(e_x, m_x: Tensor, e_y, raw: bool = False) -> Tensor:
    """Frequency-domain log-MSE between the target magnitude spectrum and
    the masked mixture magnitude, computed before any synthesis.

    Default is the ratio form -10*log10((||X||^2+eps)/(||X - M*Y||^2+eps)),
    the amplitude-spectrum SNR; `raw` selects the bare error-energy form
    -10*log10(||X - M*Y||^2 + eps) for comparison.
    """
    ref = _magnitude(e_x)
    mix = _magnitude(e_y)
    if m_x.shape != mix.shape or ref.shape != mix.shape:
        raise ValueError(
            f"fdl_loss: shape mismatch ref {ref.shape}, mask {m_x.shape}, mix {mix.shape}"
        )
    est = ad.mul(m_x, Tensor(mix))
    err = ad.sub(Tensor(ref), est)
    err_energy = ad.sum(ad.mul(err, err))
    if raw:
        return ad.mul(ad.log10_eps(err_energy), -10.0)
    ref_energy = float(np.sum(ref**2))
    return ad.mul(ad.sub(ad.log10_eps(Tensor(ref_energy)), ad.log10_eps(err_energy)), -10.0)
