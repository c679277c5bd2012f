"""Frame-directory ingestion.

A frame directory holds ``manifest.json`` plus one image per frame named
``frame_<zero-padded ordinal>.pgm`` (binary P5, maxval 255) or ``.png``
(8-bit grayscale). Ordinals must be consecutive; numbering may start at any
value. Colour or high-bit-depth frames are rejected, never converted.
"""

import json
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from ._parallel import ordered_map
from .errors import (
    InconsistentDimensions,
    InvalidField,
    MissingManifest,
    MissingTrialId,
    NoFrames,
    NonMonotonicOrdinals,
    UnsupportedPixelFormat,
)

MANIFEST_NAME = "manifest.json"
DEFAULT_FPS = 240.0
DEFAULT_FRAME_HEIGHT_UM = 100_000.0
EVENT_KINDS = ("speech", "cough", "sneeze", "spray")

_FRAME_RE = re.compile(r"^frame_(\d+)\.([A-Za-z0-9]+)$")
_FORBIDDEN_TEXT = re.compile(r"[,\n\r\"]")


@dataclass(frozen=True)
class Manifest:
    trial_id: str
    fps: float = DEFAULT_FPS
    frame_height_um: float = DEFAULT_FRAME_HEIGHT_UM
    um_per_pixel: Optional[float] = None
    loudness_db: Optional[float] = None
    mask_label: Optional[str] = None
    event_kind: Optional[str] = None

    def scale_for(self, pixel_height):
        """Micrometres per pixel for frames ``pixel_height`` rows tall.

        An explicit ``um_per_pixel`` wins over ``frame_height_um``.
        """
        if pixel_height <= 0:
            raise InvalidField("frame pixel height must be positive")
        if self.um_per_pixel is not None:
            return self.um_per_pixel
        return self.frame_height_um / pixel_height

    def to_dict(self):
        out = {
            "trial_id": self.trial_id,
            "fps": self.fps,
            "frame_height_um": self.frame_height_um,
        }
        for key in ("um_per_pixel", "loudness_db", "mask_label", "event_kind"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        return out


def _positive_real(raw, key, default):
    if key not in raw or raw[key] is None:
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidField(f"{key} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value) or value <= 0:
        raise InvalidField(f"{key} must be positive, got {value!r}")
    return value


def _label(raw, key):
    value = raw.get(key)
    if value is None:
        return None
    if not isinstance(value, str) or not value.strip():
        raise InvalidField(f"{key} must be a non-empty string")
    if _FORBIDDEN_TEXT.search(value):
        raise InvalidField(f"{key} may not contain commas, quotes or newlines")
    return value


def validate_manifest(raw):
    """Validate a parsed manifest document and apply defaults.

    Unknown keys are ignored so newer manifests still load.

    >>> validate_manifest({"trial_id": "t1"}).fps
    240.0
    """
    if not isinstance(raw, dict):
        raise InvalidField("manifest must be a JSON object")
    trial_id = raw.get("trial_id")
    if trial_id is None or (isinstance(trial_id, str) and not trial_id.strip()):
        raise MissingTrialId("manifest has no trial_id")
    trial_id = _label(raw, "trial_id")

    loudness = raw.get("loudness_db")
    if loudness is not None:
        if isinstance(loudness, bool) or not isinstance(loudness, (int, float)):
            raise InvalidField(f"loudness_db must be a number, got {loudness!r}")
        loudness = float(loudness)
        if not math.isfinite(loudness):
            raise InvalidField("loudness_db must be finite")

    event_kind = raw.get("event_kind")
    if event_kind is not None and event_kind not in EVENT_KINDS:
        raise InvalidField(f"event_kind must be one of {EVENT_KINDS}, got {event_kind!r}")

    return Manifest(
        trial_id=trial_id,
        fps=_positive_real(raw, "fps", DEFAULT_FPS),
        frame_height_um=_positive_real(raw, "frame_height_um", DEFAULT_FRAME_HEIGHT_UM),
        um_per_pixel=_positive_real(raw, "um_per_pixel", None),
        loudness_db=loudness,
        mask_label=_label(raw, "mask_label"),
        event_kind=event_kind,
    )


@dataclass(frozen=True)
class FrameStack:
    """Ordered 8-bit grayscale frames with temporal and spatial calibration.

    ``frames`` is a read-only ``uint8`` array of shape ``(n, height, width)``.
    Frame ``i`` is taken at ``i / fps`` seconds.
    """

    frames: np.ndarray
    manifest: Manifest
    source: Optional[str] = field(default=None, compare=False)

    @classmethod
    def from_frames(cls, frames, manifest, source=None):
        arr = np.asarray(frames)
        if arr.ndim != 3:
            raise InconsistentDimensions(f"expected (n, h, w) frames, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise NoFrames("a frame stack needs at least one frame")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise UnsupportedPixelFormat("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True)
        arr.flags.writeable = False
        return cls(arr, manifest, source)

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]

    @property
    def fps(self):
        return self.manifest.fps

    @property
    def um_per_pixel(self):
        return self.manifest.scale_for(self.height)

    @property
    def frame_height_um(self):
        return self.um_per_pixel * self.height

    @property
    def timestamps(self):
        return np.arange(self.n_frames) / self.fps

    def time_of(self, index):
        return index / self.fps


def _read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise UnsupportedPixelFormat(f"{path}: truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic in (b"P6", b"P3"):
        raise UnsupportedPixelFormat(f"{path}: colour PPM frames are not supported")
    if magic != b"P5":
        raise UnsupportedPixelFormat(f"{path}: only binary PGM (P5) is supported, got {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise UnsupportedPixelFormat(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise UnsupportedPixelFormat(f"{path}: PGM maxval must be 255, got {maxval}")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + width * height]
    if len(body) != width * height:
        raise UnsupportedPixelFormat(f"{path}: PGM body is truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width)


def _read_png(path):
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise UnsupportedPixelFormat(f"{path}: not a PNG file")
            if img.mode != "L":
                raise UnsupportedPixelFormat(
                    f"{path}: PNG must be 8-bit grayscale, got mode {img.mode}"
                )
            return np.asarray(img, dtype=np.uint8).copy()
    except UnsupportedPixelFormat:
        raise
    except OSError as exc:
        raise UnsupportedPixelFormat(f"{path}: cannot decode PNG ({exc})") from None


def read_frame(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return _read_pgm(path)
    if suffix == ".png":
        return _read_png(path)
    raise UnsupportedPixelFormat(f"{path}: unsupported frame format {suffix!r}")


def frame_files(directory):
    """Return frame paths sorted by ordinal, validating the numbering."""
    directory = Path(directory)
    found = []
    for name in os.listdir(directory):
        m = _FRAME_RE.match(name)
        if m:
            found.append((int(m.group(1)), m.group(1), directory / name))
    if not found:
        raise NoFrames(f"{directory}: no frame_<ordinal> images found")
    found.sort()
    widths = {len(digits) for _, digits, _ in found}
    if len(widths) != 1:
        raise NonMonotonicOrdinals(f"{directory}: ordinals use mixed zero-padding widths")
    ordinals = [o for o, _, _ in found]
    for prev, cur in zip(ordinals, ordinals[1:]):
        if cur == prev:
            raise NonMonotonicOrdinals(f"{directory}: duplicate frame ordinal {cur}")
        if cur != prev + 1:
            raise NonMonotonicOrdinals(f"{directory}: gap in frame ordinals after {prev}")
    return [p for _, _, p in found]


def read_manifest(directory):
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise MissingManifest(f"{directory}: {MANIFEST_NAME} not found")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InvalidField(f"{path}: not valid UTF-8 JSON ({exc})") from None
    return validate_manifest(raw)


def load_stack(directory, threads=1):
    """Load a frame directory into a validated :class:`FrameStack`."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingManifest(f"{directory}: not a directory")
    manifest = read_manifest(directory)
    paths = frame_files(directory)
    frames = ordered_map(read_frame, paths, threads)
    shape = frames[0].shape
    for path, frame in zip(paths, frames):
        if frame.shape != shape:
            raise InconsistentDimensions(
                f"{path.name}: size {frame.shape[1]}x{frame.shape[0]} differs from "
                f"{shape[1]}x{shape[0]}"
            )
    return FrameStack.from_frames(np.stack(frames), manifest, source=str(directory))


def pgm_bytes(frame):
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + frame.tobytes()


def save_stack(stack, directory, first_ordinal=1, digits=6):
    """Write ``stack`` as a frame directory of canonical PGM files.

    Canonical headers are ``P5\\n<w> <h>\\n255\\n``, so PGM inputs written with
    that header round-trip byte for byte.
    """
    from .output import write_bytes_atomic, write_text_atomic

    directory = Path(directory)
    manifest = stack.manifest.to_dict()
    write_text_atomic(directory / MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for i, frame in enumerate(stack.frames):
        write_bytes_atomic(directory / f"frame_{first_ordinal + i:0{digits}d}.pgm", pgm_bytes(frame))
    return directory
