import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from droplens.errors import NonPositiveInput, TooShort
from droplens.imageproc import Detection, DetectionConfig, detect_stack
from droplens.ingest import Manifest
from droplens.physics import estimate_radius, sedimentation_time, terminal_velocity
from droplens.synth import DropletSpec, SceneSpec, render_scene
from droplens.tracking import (
    COMPLETE,
    EXITED_SIDE,
    STALLED,
    TOO_SHORT,
    TRUNCATED,
    Track,
    link_detections,
    measure_track,
    measure_tracks,
)


def det(frame, x, y, area=5):
    return Detection(frame, float(y), float(x), area, 100.0, 100)


def frames_of(points_per_frame):
    return [[det(f, x, y) for x, y in pts] for f, pts in enumerate(points_per_frame)]


# linking -----------------------------------------------------------------------------

def test_single_chain():
    tracks = link_detections(frames_of([[(10, 5 * f)] for f in range(8)]), gate_px=20)
    assert len(tracks) == 1
    assert [d.frame_index for d in tracks[0].detections] == list(range(8))


def test_two_separated_droplets_keep_identity():
    tracks = link_detections(
        frames_of([[(10, 5 * f), (110, 5 * f)] for f in range(8)]), gate_px=20
    )
    assert len(tracks) == 2
    for t in tracks:
        xs = {d.centroid_x_px for d in t.detections}
        assert len(xs) == 1 and len(t.detections) == 8


def test_gap_bridging_and_closing():
    frames = [[det(0, 5, 0)], [det(1, 5, 4)], [], [], [det(4, 5, 16)], [], [], [], [det(8, 5, 32)]]
    (bridged, late) = link_detections(frames, gate_px=20, max_gap_frames=2)
    assert [d.frame_index for d in bridged.detections] == [0, 1, 4]
    assert [d.frame_index for d in late.detections] == [8]
    assert len(link_detections(frames, gate_px=20, max_gap_frames=0)) == 3


def test_gate_rejects_far_detection():
    tracks = link_detections(frames_of([[(0, 0)], [(0, 30)]]), gate_px=25)
    assert len(tracks) == 2


def test_greedy_prefers_nearest_pair():
    # detection at y=10 is closest to track 1's tail (y=9), track 0 takes the other
    frames = [[det(0, 0, 0), det(0, 0, 9)], [det(1, 0, 10), det(1, 0, 3)]]
    t0, t1 = link_detections(frames, gate_px=20)
    assert t0.detections[-1].centroid_y_px == 3.0
    assert t1.detections[-1].centroid_y_px == 10.0


def test_equal_distance_tie_goes_to_lower_track_id():
    frames = [[det(0, 0, 0), det(0, 10, 0)], [det(1, 5, 0)]]
    tracks = link_detections(frames, gate_px=20)
    assert len(tracks[0].detections) == 2 and len(tracks[1].detections) == 1


def test_link_argument_validation():
    with pytest.raises(NonPositiveInput):
        link_detections([], gate_px=0)
    with pytest.raises(NonPositiveInput):
        link_detections([], max_gap_frames=-1)
    assert link_detections([]) == []


def _random_frames(rng, n_frames=12):
    frames = []
    for f in range(n_frames):
        frames.append([det(f, rng.uniform(0, 60), rng.uniform(0, 60), rng.randint(1, 4))
                       for _ in range(rng.randint(0, 5))])
    return frames


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_every_detection_in_exactly_one_track(seed):
    frames = _random_frames(random.Random(seed))
    tracks = link_detections(frames, gate_px=15, max_gap_frames=1)
    linked = [d for t in tracks for d in t.detections]
    assert sorted(linked) == sorted(d for group in frames for d in group)
    for t in tracks:
        idx = [d.frame_index for d in t.detections]
        assert all(b > a for a, b in zip(idx, idx[1:]))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_invariance(seed):
    rng = random.Random(seed)
    frames = _random_frames(rng)
    shuffled = [rng.sample(group, len(group)) for group in frames]
    rng.shuffle(shuffled)
    a = link_detections(frames, gate_px=15)
    b = link_detections(shuffled, gate_px=15)
    assert [t.detections for t in a] == [t.detections for t in b]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_separated_droplets_recover_identity(seed, n):
    rng = random.Random(seed)
    gate = 10.0
    # columns start 25 px apart and drift at most 0.2 px/frame, so over 10
    # frames they stay > 2 * gate apart; every step is shorter than the gate
    starts = [(25.0 * i, rng.uniform(0, 5)) for i in range(n)]
    steps = [(rng.uniform(-0.2, 0.2), rng.uniform(1, 7)) for _ in range(n)]
    frames = []
    for f in range(10):
        frames.append([det(f, x + dx * f, y + dy * f) for (x, y), (dx, dy) in zip(starts, steps)])
    tracks = link_detections(frames, gate_px=gate, max_gap_frames=0)
    assert len(tracks) == n
    for t in tracks:
        column = round(t.detections[0].centroid_x_px / 25.0)
        for f, d in enumerate(t.detections):
            expected = (starts[column][0] + steps[column][0] * f,
                        starts[column][1] + steps[column][1] * f)
            assert (d.centroid_x_px, d.centroid_y_px) == pytest.approx(expected)


def _ten_droplet_scene():
    radii = [40, 43, 46, 50, 53, 56, 60, 63, 66, 70]
    droplets = tuple(
        DropletSpec(float(r), spawn_frame=i % 3, x0_px=30.0 + 60.0 * i + (i % 4),
                    y0_px=6.0 + 2 * (i % 5), horizontal_velocity_um_s=(-1) ** i * 300.0)
        for i, r in enumerate(radii)
    )
    return SceneSpec(droplets=droplets, width=600, height=200, n_frames=40, fps=240.0,
                     frame_height_um=20000.0, noise_amplitude=4, seed=5)


def _owner(truth, d):
    """Truth droplet nearest to detection ``d`` in its frame."""
    return min(truth.visible_in(d.frame_index),
               key=lambda c: math.hypot(c[1] - d.centroid_x_px, c[2] - d.centroid_y_px))[0]


def test_ten_droplet_scene_tracks_match_generator_identities():
    spec = _ten_droplet_scene()
    stack, truth = render_scene(spec)
    per_frame, _ = detect_stack(stack, DetectionConfig(level=12, bridge_px=1))
    tracks = [t for t in link_detections(per_frame, gate_px=26) if len(t.detections) > 1]
    assert len(tracks) == 10
    owners = []
    for t in tracks:
        ids = {_owner(truth, d) for d in t.detections}
        assert len(ids) == 1
        owners.append(ids.pop())
    assert sorted(owners) == list(range(10))


# measurement -------------------------------------------------------------------------

FIELD = Manifest("m", fps=1000.0, frame_height_um=1e5)  # 10 cm over 500 rows


def test_ten_centimetre_fall_in_110_ms_gives_88_um():
    # 10 cm fall in 110 frames at 1000 fps; centroids from the top row to the bottom row
    rows = 500
    dets = [det(f, 50, (rows - 1) * f / 110) for f in range(111)]
    t = measure_track(Track(0, tuple(dets)), Manifest("m", fps=1000.0, um_per_pixel=1e5 / (rows - 1)),
                      (rows, 100))
    assert t.flags == (COMPLETE,)
    assert t.duration_s == pytest.approx(0.110)
    assert t.fall_um == pytest.approx(1e5)
    assert abs(t.radius_um_est - 88.0) / 88.0 < 0.01


def test_left_exit_has_no_radius():
    dets = [det(f, 40 - 10 * f, 100 + 2 * f) for f in range(5)]
    t = measure_track(Track(0, tuple(dets)), FIELD, (500, 100))
    assert t.flags == (EXITED_SIDE,) and t.radius_um_est is None


def test_stalled_and_truncated():
    flat = measure_track(Track(0, (det(0, 5, 50), det(1, 5, 50))), FIELD, (500, 100))
    assert flat.flags == (STALLED,) and flat.radius_um_est is None
    rising = measure_track(Track(0, (det(0, 5, 50), det(1, 5, 40))), FIELD, (500, 100))
    assert rising.flags == (STALLED,)
    mid = measure_track(Track(0, (det(0, 50, 50), det(1, 50, 60))), FIELD, (500, 100))
    assert mid.flags == (TRUNCATED,) and mid.radius_um_est is None


def test_end_of_recording_is_not_an_exit():
    dets = (det(0, 50, 470), det(1, 50, 490))
    assert measure_track(Track(0, dets), FIELD, (500, 100)).flags == (COMPLETE,)
    cut = measure_track(Track(0, dets[:1] + (det(1, 50, 480),)), FIELD, (500, 100), final_frame=1)
    assert cut.flags == (TRUNCATED,)


def test_single_detection_is_too_short():
    with pytest.raises(TooShort):
        measure_track(Track(0, (det(0, 1, 1),)), FIELD, (500, 100))


def test_measure_tracks_flags_singletons():
    from droplens.ingest import FrameStack
    import numpy as np

    stack = FrameStack.from_frames(np.zeros((3, 500, 100), np.uint8), FIELD)
    out = measure_tracks([Track(0, (det(0, 1, 1),)), Track(1, (det(0, 50, 450), det(2, 50, 498)))],
                         stack)
    assert out[0].flags == (TOO_SHORT,) and out[1].flags == (COMPLETE,)


@given(st.floats(100, 1e5), st.floats(0.01, 10), st.floats(0.01, 10))
def test_radius_decreases_with_duration(fall_um, t1, t2):
    if t1 < t2:
        assert estimate_radius(fall_um, t1) > estimate_radius(fall_um, t2)


def test_radius_present_only_for_complete_positive_fall():
    spec = _ten_droplet_scene()
    stack, _ = render_scene(spec)
    per_frame, _ = detect_stack(stack, DetectionConfig(level=12, bridge_px=1))
    for t in measure_tracks(link_detections(per_frame, gate_px=26), stack):
        if t.radius_um_est is not None:
            assert t.flags == (COMPLETE,) and t.fall_um > 0
        if len(t.detections) > 1:
            assert t.duration_s > 0


def test_forty_micron_droplet_end_to_end():
    spec = SceneSpec(
        droplets=(DropletSpec(40.0, 0, 50.0, 5.0),),
        width=100, height=200, n_frames=40, fps=240.0, frame_height_um=20000.0,
        noise_amplitude=6, seed=9,
    )
    assert sedimentation_time(40.0, (200 - 5.5) * 100) * 240 < 39  # exits inside the recording
    assert terminal_velocity(40.0) / 100 / 240 < 26  # per-frame step inside the default gate
    stack, _ = render_scene(spec)
    per_frame, _ = detect_stack(stack, DetectionConfig(level=12))
    tracks = [t for t in measure_tracks(link_detections(per_frame), stack) if COMPLETE in t.flags]
    assert len(tracks) == 1
    assert abs(tracks[0].radius_um_est - 40.0) / 40.0 < 0.05
