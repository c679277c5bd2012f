"""Per-frame image transforms: contrast stretch, flat-field, threshold, segment.

Pixel quantisation uses round-half-up everywhere (``floor(x + 0.5)``) so that
outputs are bit-exact across platforms.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage

from ._parallel import ordered_map
from .errors import AllDarkBackground, DimensionMismatch

DEFAULT_SATURATION_FRACTION = 0.005
DEFAULT_PROFILE_FLOOR = 0.02
DEFAULT_MIN_AREA = 3
DEFAULT_CONNECTIVITY = 8


def round_half_up(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5)


def to_uint8(values):
    return np.clip(round_half_up(values), 0, 255).astype(np.uint8)


def _as_frame(frame):
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D frame, got shape {frame.shape}")
    return frame


def stretch_limits(frame, saturation_fraction=DEFAULT_SATURATION_FRACTION):
    """Low/high intensity quantiles used by :func:`histogram_stretch`.

    With ``n`` pixels sorted ascending, ``c = floor(fraction * n)`` pixels are
    clipped at each end: low = ``sorted[c]``, high = ``sorted[n - 1 - c]``.
    """
    if not 0 <= saturation_fraction < 0.5:
        raise ValueError("saturation_fraction must lie in [0, 0.5)")
    flat = np.sort(_as_frame(frame), axis=None)
    n = flat.size
    c = min(int(np.floor(saturation_fraction * n)), (n - 1) // 2)
    return int(flat[c]), int(flat[n - 1 - c])


def histogram_stretch(frame, saturation_fraction=DEFAULT_SATURATION_FRACTION):
    """Linear contrast stretch mapping the clip quantiles onto 0 and 255.

    Frames whose quantiles coincide (constant frames) map to all zeros.
    """
    frame = _as_frame(frame)
    lo, hi = stretch_limits(frame, saturation_fraction)
    if hi <= lo:
        return np.zeros(frame.shape, dtype=np.uint8)
    scaled = (frame.astype(np.float64) - lo) * 255.0 / (hi - lo)
    return to_uint8(scaled)


@dataclass(frozen=True)
class IlluminationProfile:
    """Per-row illumination gain, normalised so the brightest row is 1."""

    gains: np.ndarray
    floor: float = DEFAULT_PROFILE_FLOOR

    @classmethod
    def uniform(cls, height):
        return cls(np.ones(height))

    @property
    def height(self):
        return self.gains.shape[0]


def estimate_illumination_profile(stack, background_frame_count, floor=DEFAULT_PROFILE_FLOOR):
    """Estimate row gains from droplet-free leading frames.

    The gain of row ``y`` is the mean of that row in the temporal median of
    the first ``background_frame_count`` frames, divided by the largest row
    mean and clamped from below at ``floor``.
    """
    frames = stack.frames if hasattr(stack, "frames") else np.asarray(stack)
    if not 1 <= background_frame_count <= frames.shape[0]:
        raise ValueError(
            f"background_frame_count must lie in [1, {frames.shape[0]}], "
            f"got {background_frame_count}"
        )
    median = np.median(frames[:background_frame_count].astype(np.float64), axis=0)
    row_means = median.mean(axis=1)
    peak = row_means.max()
    if peak <= 0:
        raise AllDarkBackground("every background row has zero mean brightness")
    gains = np.maximum(row_means / peak, floor)
    gains.flags.writeable = False
    return IlluminationProfile(gains, floor)


def flat_field_correct(frame, profile):
    frame = _as_frame(frame)
    if profile.height != frame.shape[0]:
        raise DimensionMismatch(
            f"profile has {profile.height} rows but the frame has {frame.shape[0]}"
        )
    return to_uint8(frame.astype(np.float64) / profile.gains[:, None])


def otsu_level(frame):
    """Otsu threshold level, or ``None`` when no level splits the histogram.

    Pixels ``<= level`` form the background class. Between-class variance
    ``w0 * w1 * (mu0 - mu1)**2`` is proportional to
    ``(N * S0 - n0 * S)**2 / (n0 * n1)`` with ``n0``/``S0`` the count/sum of
    the background class; scores are compared in exact integer arithmetic and
    the lowest maximising level wins.
    """
    frame = _as_frame(frame)
    hist = np.bincount(frame.ravel().astype(np.int64), minlength=256)[:256]
    counts = np.cumsum(hist).tolist()
    sums = np.cumsum(hist * np.arange(256, dtype=np.int64)).tolist()
    n_total = counts[-1]
    s_total = sums[-1]
    best_level = None
    best_num, best_den = 0, 1
    for level in range(256):
        n0 = counts[level]
        n1 = n_total - n0
        if n0 == 0 or n1 == 0:
            continue
        diff = n_total * sums[level] - n0 * s_total
        num = diff * diff
        den = n0 * n1
        if best_level is None or num * best_den > best_num * den:
            best_level, best_num, best_den = level, num, den
    return best_level


class Thresholded(NamedTuple):
    mask: np.ndarray
    level: Optional[int]
    degenerate: bool


def threshold(frame, method="otsu", level=None):
    """Binarise a frame: a pixel is set iff its value is strictly above level.

    ``method`` is ``"fixed"`` (requires ``level``) or ``"otsu"``. Otsu on a
    frame with a single grey value returns an all-zero mask with
    ``degenerate=True`` rather than raising.
    """
    frame = _as_frame(frame)
    if method == "fixed":
        if level is None or not 0 <= level <= 255:
            raise ValueError("fixed threshold needs a level in [0, 255]")
        return Thresholded(frame > level, int(level), False)
    if method == "otsu":
        found = otsu_level(frame)
        if found is None:
            return Thresholded(np.zeros(frame.shape, dtype=bool), None, True)
        return Thresholded(frame > found, found, False)
    raise ValueError(f"unknown threshold method {method!r}")


@dataclass(frozen=True, order=True)
class Detection:
    """One above-threshold connected component in one frame."""

    frame_index: int
    centroid_y_px: float
    centroid_x_px: float
    area_px: int
    mean_intensity: float
    peak_intensity: int

    @property
    def position(self):
        return (self.centroid_x_px, self.centroid_y_px)


_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def segment(binary, source_frame, min_area=DEFAULT_MIN_AREA, connectivity=DEFAULT_CONNECTIVITY,
            frame_index=0, bridge_px=0):
    """Label connected components and measure each against ``source_frame``.

    With ``bridge_px > 0``, components separated by gaps of at most
    ``2 * bridge_px`` background pixels are merged (labels come from the mask
    dilated ``bridge_px`` times; only original mask pixels are measured).
    Centroids are weighted by source intensity (falling back to the plain
    pixel centroid for an all-zero component). Results are sorted by
    ``(centroid_y, centroid_x)``.
    """
    binary = _as_frame(binary).astype(bool)
    source = _as_frame(source_frame)
    if binary.shape != source.shape:
        raise DimensionMismatch(f"mask {binary.shape} and frame {source.shape} differ")
    if connectivity not in _STRUCTURES:
        raise ValueError("connectivity must be 4 or 8")
    structure = _STRUCTURES[connectivity]
    if bridge_px > 0:
        grown = ndimage.binary_dilation(binary, structure=structure, iterations=int(bridge_px))
        labels, n = ndimage.label(grown, structure=structure)
        labels[~binary] = 0
    else:
        labels, n = ndimage.label(binary, structure=structure)
    if n == 0:
        return []
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    w = source[ys, xs].astype(np.float64)
    length = n + 1
    area = np.bincount(lab, minlength=length)
    wsum = np.bincount(lab, weights=w, minlength=length)
    wy = np.bincount(lab, weights=w * ys, minlength=length)
    wx = np.bincount(lab, weights=w * xs, minlength=length)
    py = np.bincount(lab, weights=ys.astype(np.float64), minlength=length)
    px = np.bincount(lab, weights=xs.astype(np.float64), minlength=length)
    peak = np.zeros(length, dtype=np.int64)
    np.maximum.at(peak, lab, source[ys, xs].astype(np.int64))

    out = []
    for k in range(1, length):
        if area[k] == 0 or area[k] < min_area:
            continue
        if wsum[k] > 0:
            cy, cx = wy[k] / wsum[k], wx[k] / wsum[k]
        else:
            cy, cx = py[k] / area[k], px[k] / area[k]
        out.append(
            Detection(
                frame_index=int(frame_index),
                centroid_y_px=float(cy),
                centroid_x_px=float(cx),
                area_px=int(area[k]),
                mean_intensity=float(wsum[k] / area[k]),
                peak_intensity=int(peak[k]),
            )
        )
    out.sort(key=lambda d: (d.centroid_y_px, d.centroid_x_px, d.area_px))
    return out


@dataclass(frozen=True)
class DetectionConfig:
    method: str = "fixed"
    level: Optional[int] = 20
    min_area: int = DEFAULT_MIN_AREA
    connectivity: int = DEFAULT_CONNECTIVITY
    background_frames: Optional[int] = None
    bridge_px: int = 0

    def to_dict(self):
        return {
            "threshold_method": self.method,
            "threshold_level": self.level if self.method == "fixed" else "otsu",
            "min_area": self.min_area,
            "connectivity": self.connectivity,
            "flat_field_frames": self.background_frames or 0,
            "bridge_px": self.bridge_px,
        }


def detect_stack(stack, config=DetectionConfig(), threads=1):
    """Run (optional flat-field) -> threshold -> segment on every frame.

    Returns ``(per_frame_detections, degenerate_frame_indices)``.
    """
    profile = None
    if config.background_frames:
        profile = estimate_illumination_profile(stack, config.background_frames)

    def work(index):
        frame = stack.frames[index]
        if profile is not None:
            frame = flat_field_correct(frame, profile)
        result = threshold(frame, config.method, config.level)
        dets = segment(result.mask, frame, config.min_area, config.connectivity, index,
                       config.bridge_px)
        return dets, result.degenerate

    results = ordered_map(work, range(stack.n_frames), threads)
    detections = [dets for dets, _ in results]
    degenerate = [i for i, (_, flag) in enumerate(results) if flag]
    return detections, degenerate
