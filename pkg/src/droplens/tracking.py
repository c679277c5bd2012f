"""Frame-to-frame droplet linking and fall-time radius estimation."""

import math
from dataclasses import dataclass, replace
from typing import Optional

from .errors import NonPositiveInput, TooShort
from .physics import WATER_IN_AIR, estimate_radius

DEFAULT_GATE_PX = 25.0
DEFAULT_MAX_GAP_FRAMES = 2
DEFAULT_MARGIN_PX = 3.0

COMPLETE = "complete"
EXITED_SIDE = "exited_side"
TOO_SHORT = "too_short"
STALLED = "stalled"
TRUNCATED = "truncated"


@dataclass(frozen=True)
class Track:
    track_id: int
    detections: tuple
    fall_px: Optional[float] = None
    fall_um: Optional[float] = None
    duration_s: Optional[float] = None
    radius_um_est: Optional[float] = None
    flags: tuple = ()

    @property
    def start_frame(self):
        return self.detections[0].frame_index

    @property
    def end_frame(self):
        return self.detections[-1].frame_index

    @property
    def path(self):
        return [(d.centroid_x_px, d.centroid_y_px) for d in self.detections]


def _detection_key(d):
    return (d.centroid_y_px, d.centroid_x_px, d.area_px, d.mean_intensity, d.peak_intensity)


def link_detections(detections, gate_px=DEFAULT_GATE_PX, max_gap_frames=DEFAULT_MAX_GAP_FRAMES):
    """Link per-frame detections into tracks by greedy nearest neighbour.

    ``detections`` is an iterable of per-frame lists (each detection carries
    its own ``frame_index``). At every frame, all (open track, detection)
    pairs within ``gate_px`` of the track's last centroid are accepted in
    order of distance, then track id, then detection order, skipping pairs
    whose track or detection is already taken. Leftover detections open new
    tracks. A track not extended for more than ``max_gap_frames`` frames is
    closed.

    Greedy matching is exact when every droplet moves at most ``gate_px`` per
    frame and droplets stay more than ``2 * gate_px`` apart; dense crossings
    may swap identities.
    """
    if not gate_px > 0:
        raise NonPositiveInput("gate_px must be positive")
    if max_gap_frames < 0:
        raise NonPositiveInput("max_gap_frames must be >= 0")

    by_frame = {}
    for group in detections:
        for d in group:
            by_frame.setdefault(d.frame_index, []).append(d)

    tracks = []  # list of lists of detections, index == track id
    open_ids = []
    for frame in sorted(by_frame):
        current = sorted(by_frame[frame], key=_detection_key)
        open_ids = [t for t in open_ids if frame - tracks[t][-1].frame_index - 1 <= max_gap_frames]
        pairs = []
        for t in open_ids:
            tail = tracks[t][-1]
            for j, d in enumerate(current):
                dist = math.hypot(d.centroid_x_px - tail.centroid_x_px,
                                  d.centroid_y_px - tail.centroid_y_px)
                if dist <= gate_px:
                    pairs.append((dist, t, j))
        pairs.sort()
        used_tracks, used_dets = set(), set()
        for dist, t, j in pairs:
            if t in used_tracks or j in used_dets:
                continue
            tracks[t].append(current[j])
            used_tracks.add(t)
            used_dets.add(j)
        for j, d in enumerate(current):
            if j not in used_dets:
                open_ids.append(len(tracks))
                tracks.append([d])
    return [Track(i, tuple(dets)) for i, dets in enumerate(tracks)]


def measure_track(track, manifest, frame_shape, model=WATER_IN_AIR,
                  margin_px=DEFAULT_MARGIN_PX, final_frame=None):
    """Fill in fall distance, duration, exit flag and (if complete) radius.

    ``frame_shape`` is ``(height, width)``; the manifest supplies fps and the
    spatial scale for that height. A track is ``complete`` when it
    leaves through the bottom edge: its last centroid lies within
    ``margin_px`` of the bottom row, or one more mean per-frame step would
    carry it past ``bottom - margin_px`` and the recording had not yet ended
    (``final_frame``). Side exits are detected the same way. Tracks that stop
    inside the field are ``truncated``; tracks that do not descend are
    ``stalled``. Only complete tracks get a radius estimate.
    """
    dets = track.detections
    if len(dets) < 2:
        raise TooShort(f"track {track.track_id} has a single detection")
    height, width = frame_shape
    um_per_pixel = manifest.scale_for(height)
    fps = manifest.fps
    first, last = dets[0], dets[-1]
    frames = last.frame_index - first.frame_index
    fall_px = last.centroid_y_px - first.centroid_y_px
    fall_um = fall_px * um_per_pixel
    duration = frames / fps
    step_y = fall_px / frames
    step_x = (last.centroid_x_px - first.centroid_x_px) / frames
    more_frames = final_frame is None or last.frame_index < final_frame

    bottom = height - 0.5
    near_bottom = last.centroid_y_px >= height - 1 - margin_px
    heading_out_bottom = more_frames and last.centroid_y_px + step_y >= bottom - margin_px
    near_side = last.centroid_x_px <= margin_px or last.centroid_x_px >= width - 1 - margin_px
    next_x = last.centroid_x_px + step_x
    heading_out_side = more_frames and (next_x <= -0.5 + margin_px or next_x >= width - 0.5 - margin_px)

    radius = None
    if fall_um <= 0:
        flag = STALLED
    elif near_bottom or heading_out_bottom:
        flag = COMPLETE
        radius = estimate_radius(fall_um, duration, model)
    elif near_side or heading_out_side:
        flag = EXITED_SIDE
    else:
        flag = TRUNCATED
    return replace(
        track,
        fall_px=fall_px,
        fall_um=fall_um,
        duration_s=duration,
        radius_um_est=radius,
        flags=(flag,),
    )


def measure_tracks(tracks, stack, model=WATER_IN_AIR, margin_px=DEFAULT_MARGIN_PX):
    """Measure every track against ``stack``'s calibration; singletons are ``too_short``."""
    out = []
    for track in tracks:
        if len(track.detections) < 2:
            out.append(replace(track, flags=(TOO_SHORT,)))
            continue
        out.append(
            measure_track(track, stack.manifest, (stack.height, stack.width),
                          model, margin_px, final_frame=stack.n_frames - 1)
        )
    return out
