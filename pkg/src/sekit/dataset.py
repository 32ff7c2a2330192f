"""Reverberant noisy mixture construction with controlled SNR, synthetic
noise generation, and corpus manifests.

A mixture is built as y = x + n where x is the dry speech convolved with a
room impulse response (the enhancement target stays reverberant: the task
is noise removal, not dereverberation) and n is a noise excerpt scaled so
the mixture hits the requested SNR exactly in power terms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rir import Rir, sample_scene, simulate_rir
from .signal import SAMPLE_RATE, Waveform, convolve, power
from .wavio import read_wav, write_wav

MANIFEST_VERSION = "1"

# Joint peak target for 16-bit-safe export; one common factor keeps ratios.
_PEAK = 0.95

_BABBLE_STREAMS = 8


def snr_gain(speech: Waveform, noise: Waveform, target_snr: float) -> float:
    """Gain g such that mixing speech + g*noise yields exactly target_snr dB."""
    p_s, p_n = power(speech), power(noise)
    if p_s <= 0.0:
        raise ValueError("snr_gain: speech has zero power")
    if p_n <= 0.0:
        raise ValueError("snr_gain: noise has zero power")
    return float(np.sqrt(p_s / (p_n * 10.0 ** (target_snr / 10.0))))


@dataclass(frozen=True, eq=False)
class MixtureExample:
    """Aligned (mixture, target speech, target noise) triple plus metadata."""

    mixture: Waveform
    target_speech: Waveform
    target_noise: Waveform
    meta: dict

    def __post_init__(self):
        y, x, n = self.mixture.samples, self.target_speech.samples, self.target_noise.samples
        if not (len(y) == len(x) == len(n)):
            raise ValueError("mixture, speech and noise must have equal lengths")
        if np.max(np.abs(y - x - n)) > 1e-9:
            raise ValueError("mixture != speech + noise")
        achieved = 10.0 * np.log10(np.mean(x**2) / np.mean(n**2))
        if abs(achieved - self.meta["snr_db"]) > 0.01:
            raise ValueError(
                f"achieved SNR {achieved:.4f} dB deviates from requested "
                f"{self.meta['snr_db']:.4f} dB"
            )


def _noise_excerpt(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    if noise.size >= length:
        offset = int(rng.integers(0, noise.size - length + 1))
        return noise[offset : offset + length]
    offset = int(rng.integers(0, noise.size))
    idx = (offset + np.arange(length)) % noise.size
    return noise[idx]


def make_mixture(dry_speech: Waveform, noise: Waveform, rir: Rir,
                 target_snr: float, seed: int, *, t60: float = float("nan"),
                 distance: float = float("nan")) -> MixtureExample:
    """Reverberate the speech, crop/tile and scale the noise to the target
    SNR, sum, and jointly peak-normalize all three signals."""
    rng = np.random.default_rng(seed)
    x = convolve(dry_speech, rir.taps.samples).samples
    if np.mean(x**2) <= 0.0:
        raise ValueError("make_mixture: reverberant speech has zero power")
    n = _noise_excerpt(noise.samples, x.size, rng)
    gain = snr_gain(Waveform(x), Waveform(n), target_snr)
    n = gain * n
    y = x + n

    peak = np.max(np.abs(y))
    if peak > _PEAK:
        scale = _PEAK / peak
        y, x, n = y * scale, x * scale, n * scale

    meta = {"snr_db": float(target_snr), "t60": float(t60),
            "distance": float(distance), "seed": int(seed)}
    return MixtureExample(mixture=Waveform(y), target_speech=Waveform(x),
                          target_noise=Waveform(n), meta=meta)


def synth_noise(kind: str, length: int, seed: int) -> Waveform:
    """Seeded pseudo-random noise with unit RMS: white, pink (-3 dB/octave),
    or babble-like (sum of amplitude-modulated band-limited streams)."""
    if length < 1:
        raise ValueError("synth_noise: length must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.standard_normal(length)
    elif kind == "pink":
        x = _shape_spectrum(rng.standard_normal(length),
                            lambda f: 1.0 / np.sqrt(np.maximum(f, 1.0)))
    elif kind == "babble":
        x = np.zeros(length)
        for _ in range(_BABBLE_STREAMS):
            lo = rng.uniform(100.0, 2000.0)
            hi = lo * rng.uniform(1.5, 3.0)
            stream = _shape_spectrum(rng.standard_normal(length),
                                     lambda f: ((f >= lo) & (f <= hi)).astype(float))
            envelope = np.abs(_shape_spectrum(rng.standard_normal(length),
                                              lambda f: (f <= 8.0).astype(float)))
            x += stream * envelope
    else:
        raise ValueError(f"synth_noise: unknown kind {kind!r}")
    rms = np.sqrt(np.mean(x**2))
    if rms <= 0.0:
        x = rng.standard_normal(length)
        rms = np.sqrt(np.mean(x**2))
    return Waveform(x / rms)


def _shape_spectrum(x: np.ndarray, weight_of_hz) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / SAMPLE_RATE)
    spec *= weight_of_hz(freqs)
    spec[0] = 0.0
    return np.fft.irfft(spec, n=x.size)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    mixture: str
    speech: str
    noise: str
    seed: int
    snr_db: float
    t60: float
    distance: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True)


@dataclass
class Manifest:
    """Corpus index: one JSON object per line, after a version header line."""

    entries: list[ManifestEntry] = field(default_factory=list)
    version: str = MANIFEST_VERSION
    root: Path | None = None

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("manifest ids must be unique")

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps({"manifest_version": self.version,
                             "count": len(self.entries)}, sort_keys=True)]
        lines += [e.to_json() for e in self.entries]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        lines = path.read_text().splitlines()
        if not lines:
            raise ValueError(f"{path}: empty manifest")
        header = json.loads(lines[0])
        version = header.get("manifest_version")
        if version != MANIFEST_VERSION:
            raise ValueError(f"{path}: unsupported manifest version {version!r}")
        entries = [ManifestEntry(**json.loads(line)) for line in lines[1:] if line.strip()]
        return cls(entries=entries, version=version, root=path.parent)

    def resolve(self, relative: str) -> Path:
        return (self.root / relative) if self.root is not None else Path(relative)


def _list_wavs(directory) -> list[Path]:
    directory = Path(directory)
    files = sorted(directory.glob("*.wav"))
    if not files:
        raise ValueError(f"{directory}: contains no .wav files")
    return files


def generate_corpus(speech_dir, noise_dir=None, *, count: int,
                    snr_range: tuple[float, float] = (0.0, 5.0),
                    base_seed: int = 0, out_dir, synth_kind: str | None = None) -> Manifest:
    """Generate `count` reverberant noisy mixtures into `out_dir`.

    Per index i the scene, file choices, SNR and noise placement all derive
    from base_seed + i, so regeneration is byte-identical. Noise comes from
    `noise_dir` WAVs, or is synthesized when `synth_kind` is given.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if noise_dir is None and synth_kind is None:
        raise ValueError("either noise_dir or synth_kind is required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    speech_files = _list_wavs(speech_dir)
    noise_files = _list_wavs(noise_dir) if noise_dir is not None else None

    entries = []
    for i in range(count):
        seed = base_seed + i
        scene_rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
        mix_seed = int(np.random.SeedSequence((seed, 1)).generate_state(1)[0])
        synth_seed = int(np.random.SeedSequence((seed, 2)).generate_state(1)[0])

        room, geom = sample_scene(scene_rng)
        rir = simulate_rir(room, geom)

        speech_path = speech_files[int(scene_rng.integers(0, len(speech_files)))]
        dry = read_wav(speech_path)
        if noise_files is not None:
            noise_path = noise_files[int(scene_rng.integers(0, len(noise_files)))]
            noise = read_wav(noise_path)
        else:
            noise = synth_noise(synth_kind, len(dry), synth_seed)
        snr = float(scene_rng.uniform(*snr_range))

        example = make_mixture(dry, noise, rir, snr, mix_seed,
                               t60=room.t60, distance=geom.distance)

        uid = f"utt{i:05d}"
        names = {"mixture": f"{uid}.mix.wav", "speech": f"{uid}.clean.wav",
                 "noise": f"{uid}.noise.wav"}
        write_wav(out_dir / names["mixture"], example.mixture)
        write_wav(out_dir / names["speech"], example.target_speech)
        write_wav(out_dir / names["noise"], example.target_noise)
        entries.append(ManifestEntry(id=uid, seed=seed, snr_db=example.meta["snr_db"],
                                     t60=example.meta["t60"],
                                     distance=example.meta["distance"], **names))

    manifest = Manifest(entries=entries, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
