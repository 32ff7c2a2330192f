"""Image-method room impulse response simulation for a shoebox room, plus a
reverberation-time validator based on Schroeder backward integration.

Rooms use a uniform wall reflection coefficient derived from the requested
T60 by inverting Sabine's formula. Image taps land on the nearest sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import SAMPLE_RATE, Waveform

SPEED_OF_SOUND = 343.0  # m/s

# Per-axis reflection order is capped; taps past the T60 horizon sit below
# -60 dB, and a low cap would selectively drop fast-decaying high-count
# paths, skewing the measured decay.
_MAX_ORDER_CAP = 100
_WALL_CLEARANCE = 0.1


@dataclass(frozen=True)
class RoomSpec:
    """Shoebox room dimensions (m) and target reverberation time (s)."""

    dims: tuple[float, float, float]
    t60: float

    def __post_init__(self):
        if len(self.dims) != 3 or any(not (2.5 <= d <= 10.0) for d in self.dims):
            raise ValueError(f"room dims must each lie in [2.5, 10.0] m, got {self.dims}")
        if not (0.0 <= self.t60 <= 2.0):
            raise ValueError(f"t60 must lie in [0.0, 2.0] s, got {self.t60}")

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)


@dataclass(frozen=True)
class Geometry:
    """Source and microphone positions (m) inside a room."""

    source: tuple[float, float, float]
    mic: tuple[float, float, float]

    def __post_init__(self):
        if np.array_equal(self.source, self.mic):
            raise ValueError("source and microphone must not coincide")

    def validate_inside(self, room: RoomSpec) -> None:
        for name, pos in (("source", self.source), ("mic", self.mic)):
            for coord, dim in zip(pos, room.dims):
                if not (_WALL_CLEARANCE <= coord <= dim - _WALL_CLEARANCE):
                    raise ValueError(
                        f"{name} at {pos} violates the {_WALL_CLEARANCE} m wall clearance "
                        f"for room {room.dims}"
                    )

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source, self.mic)))


@dataclass(frozen=True)
class Rir:
    """Room impulse response taps plus the direct-path delay in samples."""

    taps: Waveform
    direct_delay: int


def sabine_reflection(room: RoomSpec) -> float:
    """Uniform wall reflection coefficient beta = sqrt(1 - alpha) with the
    Sabine absorption alpha = 0.161 * V / (T60 * S)."""
    if room.t60 <= 0:
        raise ValueError("sabine_reflection requires t60 > 0")
    alpha = 0.161 * room.volume / (room.t60 * room.surface)
    if alpha > 1.0:
        raise ValueError(
            f"room {room.dims} with t60={room.t60}s needs absorption {alpha:.3f} > 1; "
            "the room is too small for the requested reverberation time"
        )
    return float(np.clip(np.sqrt(1.0 - alpha), 0.0, 0.9999))


def default_max_order(room: RoomSpec) -> int:
    """Smallest per-axis reflection order whose farthest image exceeds the
    T60 travel horizon, capped."""
    if room.t60 <= 0:
        return 0
    horizon = room.t60 * SPEED_OF_SOUND
    order = max(int(np.ceil(horizon / d)) + 1 for d in room.dims)
    return min(order, _MAX_ORDER_CAP)


def remove_dc_buildup(taps: np.ndarray, fs: int = SAMPLE_RATE) -> np.ndarray:
    """First-order ~100 Hz highpass applied to the raw tap train.

    Nearest-sample rounding piles same-sign image contributions onto shared
    samples, producing a spurious near-DC floor that masks the true decay;
    this is the classic correction for it. The value at each original tap
    instant is preserved exactly for isolated taps.
    """
    w = 2.0 * np.pi * 100.0 / fs
    r1 = np.exp(-w)
    b1, b2 = 2.0 * r1 * np.cos(w), -r1 * r1
    a1 = -(1.0 + r1)
    out = np.empty_like(taps)
    y1 = y2 = 0.0
    for i, x in enumerate(taps):
        y0 = b1 * y1 + b2 * y2 + x
        out[i] = y0 + a1 * y1 + r1 * y2
        y2, y1 = y1, y0
    return out


def simulate_rir(room: RoomSpec, geom: Geometry, fs: int = SAMPLE_RATE,
                 max_order: int | None = None) -> Rir:
    """Image-method RIR: each mirror image contributes
    beta^(reflection count) / (4*pi*d) at the nearest-sample delay
    round(d*fs/c). `max_order` bounds the image index per axis."""
    if fs != SAMPLE_RATE:
        raise ValueError(f"fs must be {SAMPLE_RATE}, got {fs}")
    geom.validate_inside(room)
    if max_order is None:
        max_order = default_max_order(room)
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    beta = sabine_reflection(room) if room.t60 > 0 else 0.0

    direct_delay = int(np.round(geom.distance * fs / SPEED_OF_SOUND))
    n_taps = max(int(np.round(room.t60 * fs)), direct_delay + 1, 1)

    # Per axis: candidate displacements 2*m*L + (1-2p)*s - r with reflection
    # count |m - p| + |m|; keep images with at most max_order reflections
    # per axis.
    disp, refl = [], []
    for axis in range(3):
        L, s, r = room.dims[axis], geom.source[axis], geom.mic[axis]
        m = np.arange(-(max_order // 2 + 1), max_order // 2 + 2)
        axis_disp, axis_refl = [], []
        for p in (0, 1):
            count = np.abs(m - p) + np.abs(m)
            keep = count <= max_order
            axis_disp.append(2.0 * m[keep] * L + (1 - 2 * p) * s - r)
            axis_refl.append(count[keep])
        disp.append(np.concatenate(axis_disp))
        refl.append(np.concatenate(axis_refl).astype(np.int64))

    d2 = (
        disp[0][:, None, None] ** 2
        + disp[1][None, :, None] ** 2
        + disp[2][None, None, :] ** 2
    )
    counts = (
        refl[0][:, None, None]
        + refl[1][None, :, None]
        + refl[2][None, None, :]
    )
    dist = np.sqrt(d2).ravel()
    counts = counts.ravel()

    delays = np.round(dist * fs / SPEED_OF_SOUND).astype(np.int64)
    keep = delays < n_taps
    delays, dist, counts = delays[keep], dist[keep], counts[keep]
    amps = np.power(beta, counts.astype(np.float64)) / (4.0 * np.pi * dist)

    taps = np.zeros(n_taps)
    np.add.at(taps, delays, amps)
    if beta > 0.0 and max_order >= 1:
        taps = remove_dc_buildup(taps, fs)
    return Rir(taps=Waveform(taps), direct_delay=direct_delay)


def measure_t60(rir: Rir) -> float:
    """T60 from Schroeder backward integration of the reverberant tail:
    fit the -5 dB to -35 dB segment of the energy decay curve and
    extrapolate the 30 dB fit to 60 dB.

    """
    h2 = rir.taps.samples**2
    total = h2.sum()
    if total <= 0:
        raise ValueError("measure_t60 requires a response with positive energy")
    edc = np.cumsum(h2[::-1])[::-1] / total
    db = 10.0 * np.log10(np.maximum(edc, 1e-30))

    start = int(np.argmax(db <= -5.0))
    end = int(np.argmax(db <= -35.0))
    if db[start] > -5.0 or db[end] > -35.0 or end - start < 2:
        raise ValueError("decay range -5..-35 dB never reached; response too short")
    t = np.arange(start, end + 1)
    slope, _ = np.polyfit(t, db[start : end + 1], 1)
    if slope >= 0:
        raise ValueError("energy decay curve is not decaying")
    return float(-60.0 / slope / rir.taps.sample_rate)


def sample_scene(rng: np.random.Generator) -> tuple[RoomSpec, Geometry]:
    """Draw a random room and source/mic layout: dims uniform in
    [3,8]x[3,8]x[2.5,4] m, T60 uniform in [0.2, 0.7] s, mic uniform in the
    interior (0.5 m clearance), source uniform on a sphere of radius
    uniform in [0.10, 0.60] m around the mic."""
    dims = (
        float(rng.uniform(3.0, 8.0)),
        float(rng.uniform(3.0, 8.0)),
        float(rng.uniform(2.5, 4.0)),
    )
    room = RoomSpec(dims=dims, t60=float(rng.uniform(0.2, 0.7)))
    mic = tuple(float(rng.uniform(0.5, d - 0.5)) for d in dims)

    for _ in range(1000):
        radius = rng.uniform(0.10, 0.60)
        direction = rng.standard_normal(3)
        norm = np.linalg.norm(direction)
        if norm < 1e-12:
            continue
        source = tuple(float(m + radius * u / norm) for m, u in zip(mic, direction))
        if all(_WALL_CLEARANCE <= c <= d - _WALL_CLEARANCE for c, d in zip(source, dims)):
            geom = Geometry(source=source, mic=mic)
            geom.validate_inside(room)
            return room, geom
    raise RuntimeError("could not place a source inside the room after 1000 attempts")
