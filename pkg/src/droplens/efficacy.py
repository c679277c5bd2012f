"""Mask comparison across trials: peak-brightness ranking and blocking efficiency.

Blocking efficiency of a mask is

    1 - mean(peak - baseline | mask) / mean(peak - baseline | control)

clamped to ``[0, 1]``. Subtracting each trial's own baseline removes the
ambient/sensor offset, so a mask that lets nothing through scores exactly 1
and the score is unchanged when every recording is scaled by the same gain.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateControl, DuplicateTrialId, EmptyInput, MissingControl, UnknownLabel

CONTROL_LABEL = "none"


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    mask_label: str
    metrics: object  # photometry.SeriesMetrics
    loudness_db: Optional[float] = None
    radii_um: tuple = ()

    def __post_init__(self):
        if not self.mask_label:
            raise EmptyInput(f"trial {self.trial_id!r} has an empty mask label")
        if self.metrics is None:
            raise EmptyInput(f"trial {self.trial_id!r} has no metrics")


@dataclass(frozen=True)
class MaskStats:
    mask_label: str
    n_trials: int
    mean_peak: float
    std_peak: float
    cv: float
    mean_baseline: float
    mean_excess: float
    blocking_efficiency: Optional[float] = None
    flags: tuple = ()
    trial_ids: tuple = ()
    radii_um: tuple = ()

    def to_dict(self):
        return {
            "mask_label": self.mask_label,
            "n_trials": self.n_trials,
            "mean_peak": self.mean_peak,
            "std_peak": self.std_peak,
            "cv": self.cv,
            "mean_baseline": self.mean_baseline,
            "mean_excess": self.mean_excess,
            "blocking_efficiency": self.blocking_efficiency,
            "flags": list(self.flags),
            "trial_ids": list(self.trial_ids),
            "radii_um": list(self.radii_um),
        }


@dataclass(frozen=True)
class EfficacyReport:
    masks: dict  # label -> MaskStats, in label order
    ranking: tuple  # labels, ascending mean peak
    control_label: Optional[str] = CONTROL_LABEL
    metadata: dict = field(default_factory=dict)

    def efficiency(self, label):
        return self.masks[label].blocking_efficiency

    def to_dict(self):
        return {
            "control_label": self.control_label,
            "ranking": list(self.ranking),
            "masks": [self.masks[label].to_dict() for label in self.ranking],
            "metadata": dict(self.metadata),
        }


def build_report(trials, control_label=CONTROL_LABEL, efficiency=True):
    """Aggregate trials per mask label.

    Standard deviations are population values: each group is the complete
    set of trials being described. The ranking sorts masks by ascending mean
    peak, ties broken alphabetically. With ``efficiency=True`` the control
    group must be present.
    """
    trials = list(trials)
    if not trials:
        raise EmptyInput("no trials to report on")
    seen = set()
    for t in trials:
        if t.trial_id in seen:
            raise DuplicateTrialId(f"trial id {t.trial_id!r} appears more than once")
        seen.add(t.trial_id)

    groups = {}
    for t in sorted(trials, key=lambda t: t.trial_id):
        groups.setdefault(t.mask_label, []).append(t)

    control_excess = None
    if efficiency:
        if control_label not in groups:
            raise MissingControl(f"no trials labelled {control_label!r} to use as control")
        control = groups[control_label]
        control_excess = float(np.mean([t.metrics.peak_value - t.metrics.baseline for t in control]))
        if control_excess <= 0:
            raise DegenerateControl("control peaks do not rise above their baselines")

    masks = {}
    for label in sorted(groups):
        members = groups[label]
        peaks = np.array([t.metrics.peak_value for t in members], dtype=np.float64)
        baselines = np.array([t.metrics.baseline for t in members], dtype=np.float64)
        mean = float(peaks.mean())
        std = float(peaks.std())
        excess = float((peaks - baselines).mean())
        flags = []
        eff = None
        if control_excess is not None:
            raw = 1.0 - excess / control_excess
            eff = min(1.0, max(0.0, raw))
            if eff != raw:
                flags.append("clamped")
        radii = tuple(sorted(r for t in members for r in t.radii_um))
        masks[label] = MaskStats(
            mask_label=label,
            n_trials=len(members),
            mean_peak=mean,
            std_peak=std,
            cv=std / mean if mean != 0 else 0.0,
            mean_baseline=float(baselines.mean()),
            mean_excess=excess,
            blocking_efficiency=eff,
            flags=tuple(flags),
            trial_ids=tuple(t.trial_id for t in members),
            radii_um=radii,
        )
    ranking = tuple(sorted(masks, key=lambda label: (masks[label].mean_peak, label)))
    return EfficacyReport(masks, ranking, control_label if efficiency else None)


def rank_consistency(report, expected_order):
    """True iff the report ranks ``expected_order`` in that relative order."""
    unknown = [label for label in expected_order if label not in report.masks]
    if unknown:
        raise UnknownLabel(f"labels not in report: {', '.join(unknown)}")
    wanted = set(expected_order)
    restricted = [label for label in report.ranking if label in wanted]
    return restricted == list(expected_order)
