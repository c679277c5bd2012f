"""Synthetic recordings of falling fluorescent droplets with known ground truth.

Each droplet falls at its Stokes terminal velocity from its spawn point and
drifts sideways at a constant speed. It is drawn as an isotropic Gaussian
(sigma = max(1, radius in pixels), truncated at 3 sigma) whose peak
brightness scales with the droplet's projected area:
``round(k * R**2 * transmission * gain(y))`` with ``k`` fixed so that a
100 um droplet under unit gain and transmission peaks at 255.

Noise is uniform on ``[0, noise_amplitude]`` per pixel, drawn from a
SplitMix64 stream keyed by ``seed ^ frame_index``; every frame is therefore
reproducible on its own, whatever order frames are rendered in.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ._parallel import ordered_map
from .errors import SpecViolation
from .imageproc import round_half_up
from .ingest import (
    DEFAULT_FPS,
    DEFAULT_FRAME_HEIGHT_UM,
    EVENT_KINDS,
    FrameStack,
    Manifest,
)
from .physics import WATER_IN_AIR, sedimentation_time, terminal_velocity

REFERENCE_RADIUS_UM = 100.0
BRIGHTNESS_K = 255.0 / REFERENCE_RADIUS_UM**2
TRUNCATION_SIGMAS = 3.0

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def splitmix64(state):
    """SplitMix64 finaliser applied elementwise to a uint64 array (wrapping)."""
    with np.errstate(over="ignore"):
        z = np.asarray(state, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def frame_noise(seed, frame_index, shape, amplitude):
    """Integer noise in ``[0, amplitude]`` for one frame."""
    if amplitude == 0:
        return np.zeros(shape, dtype=np.int64)
    key = np.uint64((int(seed) ^ int(frame_index)) & _MASK64)
    start = splitmix64(key)
    counter = np.arange(1, math.prod(shape) + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = splitmix64(start + counter * _GOLDEN)
    high = bits >> np.uint64(32)
    values = (high * np.uint64(amplitude + 1)) >> np.uint64(32)
    return values.astype(np.int64).reshape(shape)


@dataclass(frozen=True)
class Illumination:
    kind: str = "uniform"
    top_gain: float = 1.0
    bottom_gain: float = 1.0

    @classmethod
    def linear_gradient(cls, top_gain, bottom_gain):
        return cls("linear_gradient", float(top_gain), float(bottom_gain))

    def gain(self, y, height):
        """Gain at (possibly fractional) row ``y``; rows outside are clamped."""
        if self.kind == "uniform":
            return np.ones_like(np.asarray(y, dtype=np.float64))
        frac = np.clip(np.asarray(y, dtype=np.float64), 0, height - 1) / max(height - 1, 1)
        return self.top_gain + (self.bottom_gain - self.top_gain) * frac


@dataclass(frozen=True)
class DropletSpec:
    radius_um: float
    spawn_frame: int = 0
    x0_px: float = 0.0
    y0_px: float = 0.0
    horizontal_velocity_um_s: float = 0.0


@dataclass(frozen=True)
class SceneSpec:
    droplets: tuple = ()
    width: int = 64
    height: int = 48
    n_frames: int = 24
    illumination: Illumination = Illumination()
    transmission_factor: float = 1.0
    noise_amplitude: int = 0
    seed: int = 0
    background_level: float = 0.0
    fps: float = DEFAULT_FPS
    frame_height_um: float = DEFAULT_FRAME_HEIGHT_UM
    trial_id: str = "synth"
    mask_label: Optional[str] = None
    loudness_db: Optional[float] = None
    event_kind: Optional[str] = None

    @property
    def um_per_pixel(self):
        return self.frame_height_um / self.height

    def manifest(self):
        return Manifest(
            trial_id=self.trial_id,
            fps=float(self.fps),
            frame_height_um=float(self.frame_height_um),
            loudness_db=self.loudness_db,
            mask_label=self.mask_label,
            event_kind=self.event_kind,
        )

    def to_dict(self):
        out = asdict(self)
        out["droplets"] = [asdict(d) for d in self.droplets]
        return out

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        try:
            droplets = tuple(DropletSpec(**d) for d in raw.pop("droplets", ()))
            illum = raw.pop("illumination", None)
            if illum is not None:
                raw["illumination"] = Illumination(**illum)
            return cls(droplets=droplets, **raw)
        except TypeError as exc:
            raise SpecViolation(f"malformed scene description: {exc}") from None

    def validate(self):
        if self.width < 1 or self.height < 1 or self.n_frames < 1:
            raise SpecViolation("width, height and n_frames must be >= 1")
        if not (self.fps > 0 and self.frame_height_um > 0):
            raise SpecViolation("fps and frame_height_um must be positive")
        if not 0 <= self.transmission_factor <= 1:
            raise SpecViolation("transmission_factor must lie in [0, 1]")
        if int(self.noise_amplitude) != self.noise_amplitude or not 0 <= self.noise_amplitude <= 255:
            raise SpecViolation("noise_amplitude must be an integer in [0, 255]")
        if not 0 <= self.background_level <= 255:
            raise SpecViolation("background_level must lie in [0, 255]")
        if self.illumination.kind not in ("uniform", "linear_gradient"):
            raise SpecViolation(f"unknown illumination {self.illumination.kind!r}")
        if min(self.illumination.top_gain, self.illumination.bottom_gain) < 0:
            raise SpecViolation("illumination gains must be non-negative")
        if self.event_kind is not None and self.event_kind not in EVENT_KINDS:
            raise SpecViolation(f"event_kind must be one of {EVENT_KINDS}")
        if not self.trial_id:
            raise SpecViolation("trial_id must be non-empty")
        for i, d in enumerate(self.droplets):
            if not d.radius_um > 0:
                raise SpecViolation(f"droplet {i}: radius must be positive")
            if not (0 <= d.x0_px <= self.width - 1 and 0 <= d.y0_px <= self.height - 1):
                raise SpecViolation(f"droplet {i}: spawn position lies outside the frame")
            if not 0 <= d.spawn_frame < self.n_frames:
                raise SpecViolation(f"droplet {i}: spawn_frame outside [0, {self.n_frames})")


@dataclass(frozen=True)
class DropletTruth:
    droplet_id: int
    radius_um: float
    spawn_frame: int
    exit_frame: int
    exit_edge: str
    peak_brightness: tuple
    # (frame_index, x_px, y_px) for every rendered frame
    centroids: tuple = field(default=())

    def to_dict(self):
        return {
            "droplet_id": self.droplet_id,
            "radius_um": self.radius_um,
            "spawn_frame": self.spawn_frame,
            "exit_frame": self.exit_frame,
            "exit_edge": self.exit_edge,
            "peak_brightness": list(self.peak_brightness),
            "centroids": [list(c) for c in self.centroids],
        }


@dataclass(frozen=True)
class TruthRecord:
    droplets: tuple
    um_per_pixel: float
    n_frames: int
    fps: float
    brightness_k: float = BRIGHTNESS_K
    truncation_sigmas: float = TRUNCATION_SIGMAS
    noise_generator: str = "splitmix64(seed ^ frame_index)"

    def visible_in(self, frame_index):
        """Droplets drawn in ``frame_index`` as ``[(droplet_id, x, y), ...]``."""
        out = []
        for d in self.droplets:
            for f, x, y in d.centroids:
                if f == frame_index:
                    out.append((d.droplet_id, x, y))
        return out

    def to_dict(self):
        return {
            "um_per_pixel": self.um_per_pixel,
            "n_frames": self.n_frames,
            "fps": self.fps,
            "brightness_k": self.brightness_k,
            "truncation_sigmas": self.truncation_sigmas,
            "noise_generator": self.noise_generator,
            "droplets": [d.to_dict() for d in self.droplets],
        }


def _exit_after(position, velocity, low, high, fps):
    """Frames after spawn until ``position`` leaves ``[low, high]``; ``inf`` if never."""
    if velocity > 0:
        return math.ceil(fps * (high - position) / velocity)
    if velocity < 0:
        return math.ceil(fps * (position - low) / -velocity)
    return math.inf


def _trajectory(spec, d, model):
    """Per-frame centroids and exit bookkeeping for one droplet."""
    umpp = spec.um_per_pixel
    bottom = spec.height - 0.5
    remaining_um = (bottom - d.y0_px) * umpp
    fall_frames = math.ceil(spec.fps * sedimentation_time(d.radius_um, remaining_um, model))
    vy = terminal_velocity(d.radius_um, model) / umpp
    vx = d.horizontal_velocity_um_s / umpp
    side_frames = _exit_after(d.x0_px, vx, -0.5, spec.width - 0.5, spec.fps)
    if side_frames < fall_frames:
        exit_frame = d.spawn_frame + side_frames
        edge = "right" if vx > 0 else "left"
    else:
        exit_frame = d.spawn_frame + fall_frames
        edge = "bottom"
    last = min(exit_frame, spec.n_frames)
    frames = np.arange(d.spawn_frame, last)
    t = (frames - d.spawn_frame) / spec.fps
    return frames, d.x0_px + vx * t, d.y0_px + vy * t, int(exit_frame), edge


def render_scene(spec, model=WATER_IN_AIR, threads=1):
    """Render ``spec`` into a :class:`FrameStack` and its :class:`TruthRecord`."""
    spec.validate()
    h, w = spec.height, spec.width
    rows = np.arange(h, dtype=np.float64)
    background = spec.background_level * spec.illumination.gain(rows, h)[:, None] * np.ones((1, w))

    draws = {}  # frame -> list of (x, y, sigma, peak)
    truths = []
    for i, d in enumerate(spec.droplets):
        frames, xs, ys, exit_frame, edge = _trajectory(spec, d, model)
        sigma = max(1.0, d.radius_um / spec.um_per_pixel)
        # 255 * (R / R_ref)**2 equals k * R**2 but is exact at the reference radius
        raw = 255.0 * (d.radius_um / REFERENCE_RADIUS_UM) ** 2 * spec.transmission_factor
        peaks = np.clip(round_half_up(raw * spec.illumination.gain(ys, h)), 0, 255)
        for f, x, y, p in zip(frames.tolist(), xs.tolist(), ys.tolist(), peaks.tolist()):
            draws.setdefault(f, []).append((x, y, sigma, p))
        truths.append(
            DropletTruth(
                droplet_id=i,
                radius_um=float(d.radius_um),
                spawn_frame=int(d.spawn_frame),
                exit_frame=exit_frame,
                exit_edge=edge,
                peak_brightness=tuple(int(p) for p in peaks.tolist()),
                centroids=tuple(zip(frames.tolist(), xs.tolist(), ys.tolist())),
            )
        )

    def render(index):
        canvas = background.copy()
        for x, y, sigma, peak in draws.get(index, ()):
            reach = TRUNCATION_SIGMAS * sigma
            y_lo, y_hi = max(0, math.ceil(y - reach)), min(h - 1, math.floor(y + reach))
            x_lo, x_hi = max(0, math.ceil(x - reach)), min(w - 1, math.floor(x + reach))
            if y_lo > y_hi or x_lo > x_hi:
                continue
            py = np.arange(y_lo, y_hi + 1, dtype=np.float64)[:, None] - y
            px = np.arange(x_lo, x_hi + 1, dtype=np.float64)[None, :] - x
            d2 = py * py + px * px
            blob = peak * np.exp(-d2 / (2.0 * sigma * sigma))
            blob[d2 > reach * reach] = 0.0
            canvas[y_lo : y_hi + 1, x_lo : x_hi + 1] += blob
        pixels = np.clip(round_half_up(canvas), 0, 255).astype(np.int64)
        pixels += frame_noise(spec.seed, index, (h, w), int(spec.noise_amplitude))
        return np.clip(pixels, 0, 255).astype(np.uint8)

    frames = np.stack(ordered_map(render, range(spec.n_frames), threads))
    stack = FrameStack.from_frames(frames, spec.manifest(), source="synth")
    truth = TruthRecord(
        droplets=tuple(truths),
        um_per_pixel=spec.um_per_pixel,
        n_frames=spec.n_frames,
        fps=float(spec.fps),
    )
    return stack, truth


def column_scene(n_droplets, seed=0, radius_range=(20.0, 100.0), width=640, height=480,
                 n_frames=240, spawn_y_px=20.0, spawn_frame=0, **kwargs):
    """Scene with droplets in evenly spaced columns and seeded random radii.

    Column spacing is ``width / n_droplets`` so trajectories never overlap.
    Extra keyword arguments are passed to :class:`SceneSpec`.
    """
    rng = np.random.default_rng(seed)
    radii = rng.uniform(radius_range[0], radius_range[1], size=n_droplets)
    spacing = width / max(n_droplets, 1)
    droplets = tuple(
        DropletSpec(
            radius_um=float(r),
            spawn_frame=spawn_frame,
            x0_px=float(round(spacing * (i + 0.5), 3)),
            y0_px=float(spawn_y_px),
        )
        for i, r in enumerate(radii)
    )
    return SceneSpec(droplets=droplets, width=width, height=height, n_frames=n_frames,
                     seed=seed, **kwargs)
