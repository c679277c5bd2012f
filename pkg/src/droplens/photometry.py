"""Brightness time series and the metrics derived from them."""

import math
from dataclasses import dataclass, field, replace
from itertools import permutations
from typing import Optional

import numpy as np

from .errors import ConstantSeries, EmptyGroup, InsufficientData

DEFAULT_BASELINE_FRAMES = 5
DEFAULT_DECAY_FRACTION = 0.1
REGIONS = ("full", "top_half", "bottom_half")
RATIO_FLOOR = 1e-6


@dataclass(frozen=True)
class BrightnessSeries:
    """Per-frame mean brightness.

    ``baseline`` is the mean of the first ``baseline_frames`` samples unless
    given explicitly.
    """

    values: np.ndarray
    fps: float
    baseline: float
    baseline_frames: int
    trial_id: str = ""
    region: str = "full"

    @classmethod
    def from_values(cls, values, fps=240.0, trial_id="", baseline=None,
                    baseline_frames=DEFAULT_BASELINE_FRAMES, region="full"):
        arr = np.asarray(values, dtype=np.float64).copy()
        if arr.ndim != 1 or arr.size == 0:
            raise InsufficientData("a brightness series needs at least one sample")
        if fps <= 0:
            raise ValueError("fps must be positive")
        if baseline_frames < 1:
            raise ValueError("baseline_frames must be >= 1")
        k = min(baseline_frames, arr.size)
        if baseline is None:
            baseline = float(arr[:k].mean())
        arr.flags.writeable = False
        return cls(arr, float(fps), float(baseline), k, trial_id, region)

    def __len__(self):
        return self.values.size

    @property
    def frame_indices(self):
        return np.arange(self.values.size)

    @property
    def times(self):
        return self.frame_indices / self.fps

    def samples(self):
        return list(zip(self.frame_indices.tolist(), self.times.tolist(), self.values.tolist()))


def _region_rows(height, region):
    half = height // 2
    if region == "full":
        return slice(0, height)
    if region == "top_half":
        return slice(0, half)
    if region == "bottom_half":
        return slice(half, height)
    raise ValueError(f"region must be one of {REGIONS}, got {region!r}")


def brightness_series(stack, region="full", baseline_frames=DEFAULT_BASELINE_FRAMES):
    """Mean pixel value of each frame over a region.

    ``top_half`` is rows ``[0, h // 2)``; ``bottom_half`` the remaining rows,
    so an odd middle row counts towards the bottom.
    """
    rows = _region_rows(stack.height, region)
    sub = stack.frames[:, rows, :]
    if sub.shape[1] == 0:
        raise InsufficientData(f"region {region!r} is empty for height {stack.height}")
    means = sub.reshape(sub.shape[0], -1).mean(axis=1, dtype=np.float64)
    return BrightnessSeries.from_values(
        means, stack.fps, stack.manifest.trial_id, baseline_frames=baseline_frames, region=region
    )


@dataclass(frozen=True)
class SeriesMetrics:
    peak_value: float
    peak_frame: int
    peak_time_s: float
    dissipation_s: Optional[float]
    baseline: float
    decay_fraction: float = DEFAULT_DECAY_FRACTION
    flags: tuple = ()
    trial_id: str = ""

    @property
    def resolved(self):
        return self.dissipation_s is not None

    @property
    def excess(self):
        """Peak above baseline."""
        return self.peak_value - self.baseline


def series_metrics(series, decay_fraction=DEFAULT_DECAY_FRACTION):
    """Peak and dissipation time of a brightness series.

    Dissipation is the time from the peak until the series first drops to
    ``baseline + decay_fraction * (peak - baseline)`` or below. It is ``None``
    (flag ``unresolved``) when that never happens. A constant series gets
    peak frame 0, zero dissipation and the ``degenerate`` flag.
    """
    if not 0 < decay_fraction < 1:
        raise ValueError("decay_fraction must lie in (0, 1)")
    v = series.values
    peak_frame = int(np.argmax(v))
    peak = float(v[peak_frame])
    common = dict(
        peak_value=peak,
        peak_frame=peak_frame,
        peak_time_s=peak_frame / series.fps,
        baseline=series.baseline,
        decay_fraction=decay_fraction,
        trial_id=series.trial_id,
    )
    if float(v.min()) == peak:
        return SeriesMetrics(dissipation_s=0.0, flags=("degenerate",), **common)
    level = series.baseline + decay_fraction * (peak - series.baseline)
    after = np.nonzero(v[peak_frame + 1 :] <= level)[0]
    if after.size == 0:
        return SeriesMetrics(dissipation_s=None, flags=("unresolved",), **common)
    return SeriesMetrics(dissipation_s=(int(after[0]) + 1) / series.fps, **common)


def normalize_series(series):
    """Affinely rescale a series so its minimum is 0 and maximum 1."""
    v = series.values
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise ConstantSeries("cannot normalise a constant series")
    span = hi - lo
    out = (v - lo) / span
    out[v == hi] = 1.0
    out.flags.writeable = False
    return replace(series, values=out, baseline=(series.baseline - lo) / span)


def uniformity_ratio(stack):
    """Temporal-mean bottom-half brightness over temporal-mean top-half brightness."""
    if stack.height < 2:
        raise InsufficientData("uniformity needs frames at least two rows tall")
    top = brightness_series(stack, "top_half").values.mean()
    bottom = brightness_series(stack, "bottom_half").values.mean()
    return float(bottom / max(top, RATIO_FLOOR))


@dataclass(frozen=True)
class GroupStats:
    label: str
    n: int
    mean_peak: float
    std_peak: float
    cv: float


@dataclass(frozen=True)
class ConditionComparison:
    groups: dict
    ratios: dict = field(default_factory=dict)

    def ratio(self, numerator, denominator):
        return self.ratios[(numerator, denominator)]


def _peak(item):
    return float(item.peak_value) if hasattr(item, "peak_value") else float(item)


def group_stats(label, peaks):
    peaks = np.asarray([_peak(p) for p in peaks], dtype=np.float64)
    if peaks.size == 0:
        raise EmptyGroup(f"group {label!r} has no trials")
    mean = float(peaks.mean())
    std = float(peaks.std())  # population: the group is the full set of trials
    cv = std / mean if mean != 0 else (0.0 if std == 0 else math.inf)
    return GroupStats(label, int(peaks.size), mean, std, cv)


def compare_conditions(groups):
    """Mean/std/CV of peak brightness per condition and pairwise mean ratios.

    ``groups`` maps a label to :class:`SeriesMetrics` (or bare peak values).
    ``ratios[(a, b)]`` is ``mean_peak[a] / mean_peak[b]``.
    """
    if not groups:
        raise EmptyGroup("no condition groups given")
    stats = {label: group_stats(label, items) for label, items in sorted(groups.items())}
    ratios = {}
    for a, b in permutations(stats, 2):
        den = stats[b].mean_peak
        ratios[(a, b)] = stats[a].mean_peak / den if den != 0 else math.inf
    return ConditionComparison(stats, ratios)


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    monotone: bool
    n: int


def loudness_correlation(trials):
    """Pearson correlation between loudness (dB) and peak brightness.

    ``monotone`` is true iff peaks ordered by loudness never decrease (equal
    loudness values are ordered by peak, so they never break monotonicity).
    """
    pairs = [(float(db), _peak(p)) for db, p in trials]
    if len(pairs) < 3:
        raise InsufficientData("loudness correlation needs at least 3 trials")
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if np.unique(x).size < 2:
        raise InsufficientData("loudness correlation needs at least 2 distinct loudness values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if syy == 0:
        raise InsufficientData("peak values are constant; correlation is undefined")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    ordered = [p for _, p in sorted(pairs)]
    monotone = all(b >= a for a, b in zip(ordered, ordered[1:]))
    return CorrelationResult(r, monotone, len(pairs))
