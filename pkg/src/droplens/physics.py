"""Stokes sedimentation of small droplets in still air.

Units are micrometres, grams and seconds throughout. With the prefactor
``phi = 9 * eta / (2 * rho * g)`` (micrometre-seconds) a droplet of radius
``R`` falls height ``z`` in ``phi * z / R**2`` seconds at the terminal
velocity ``R**2 / phi``. Evaporation and slip correction are ignored, so
results below about 1 micrometre are outside the model's validity.
"""

import math
from dataclasses import dataclass

from .errors import NonPositiveInput, NonPositiveRadius


@dataclass(frozen=True)
class SedimentationModel:
    eta: float = 1.86e-8  # air at 25 C, g / (um s)
    rho: float = 1e-12  # water, g / um^3
    g: float = 9.8e6  # um / s^2

    def __post_init__(self):
        for name in ("eta", "rho", "g"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise NonPositiveInput(f"{name} must be positive, got {value!r}")

    @property
    def phi(self):
        return 9.0 * self.eta / (2.0 * self.rho * self.g)


WATER_IN_AIR = SedimentationModel()


def _check_radius(radius_um):
    if not radius_um > 0:
        raise NonPositiveRadius(f"radius must be positive, got {radius_um!r}")


def sedimentation_time(radius_um, height_um, model=WATER_IN_AIR):
    """Seconds for a droplet of ``radius_um`` to fall ``height_um``."""
    _check_radius(radius_um)
    if height_um < 0:
        raise NonPositiveInput(f"height must be non-negative, got {height_um!r}")
    return model.phi * height_um / radius_um**2


def terminal_velocity(radius_um, model=WATER_IN_AIR):
    """Settling speed in micrometres per second."""
    _check_radius(radius_um)
    return radius_um**2 / model.phi


def estimate_radius(fall_height_um, fall_time_s, model=WATER_IN_AIR):
    """Radius (um) of a droplet observed to fall ``fall_height_um`` in ``fall_time_s``."""
    if not (fall_height_um > 0 and fall_time_s > 0):
        raise NonPositiveInput(
            f"fall height and time must be positive, got {fall_height_um!r}, {fall_time_s!r}"
        )
    return math.sqrt(model.phi * fall_height_um / fall_time_s)


def min_detectable_radius(fall_height_um, max_track_time_s, model=WATER_IN_AIR):
    """Smallest radius that clears ``fall_height_um`` within the observation window.

    Slower (smaller) droplets are still in the field when the recording ends,
    so their fall time cannot be measured.
    """
    return estimate_radius(fall_height_um, max_track_time_s, model)


def sedimentation_table(radii_um, heights_um, model=WATER_IN_AIR):
    """Rows of ``(radius_um, height_um, time_s)`` over the cross product."""
    for r in radii_um:
        _check_radius(r)
    for z in heights_um:
        if not z > 0:
            raise NonPositiveInput(f"height must be positive, got {z!r}")
    return [(r, z, sedimentation_time(r, z, model)) for r in radii_um for z in heights_um]
