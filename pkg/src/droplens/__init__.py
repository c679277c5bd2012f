"""Analysis of slow-motion recordings of fluorescent oral-fluid droplets.

Brightness time series, droplet segmentation and tracking, Stokes
sedimentation radius estimates and mask-efficacy reports, plus a synthetic
scene generator with known ground truth for end-to-end checks.
"""

__version__ = "0.1.0"

from .errors import DropletError  # noqa: E402
from .ingest import FrameStack, Manifest, load_stack, save_stack, validate_manifest  # noqa: E402
from .physics import (  # noqa: E402
    WATER_IN_AIR,
    SedimentationModel,
    estimate_radius,
    min_detectable_radius,
    sedimentation_time,
    terminal_velocity,
)

__all__ = [
    "DropletError",
    "FrameStack",
    "Manifest",
    "SedimentationModel",
    "WATER_IN_AIR",
    "estimate_radius",
    "load_stack",
    "min_detectable_radius",
    "save_stack",
    "sedimentation_time",
    "terminal_velocity",
    "validate_manifest",
]
