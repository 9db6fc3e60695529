"""Overpass geometry and transmission-window selection.

Angles are degrees at every public interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import WindowEfficiencies

EARTH_RADIUS_KM = 6371.0
# Standard gravitational parameter of the Earth, km^3 s^-2.
GM_EARTH = 398600.4418


class EmptyWindowError(ValueError):
    """No time slot survives the window and elevation cuts."""


@dataclass(frozen=True)
class OrbitGeometry:
    R_E: float = EARTH_RADIUS_KM
    h_sat: float = 500.0
    h_ogs: float = 0.0
    xi: float = 0.0  # degrees

    def __post_init__(self):
        if not self.R_E > 0:
            raise ValueError("R_E must be positive")
        if not self.h_sat > self.h_ogs >= 0:
            raise ValueError("need h_sat > h_ogs >= 0")
        if not 0.0 <= self.xi < 90.0:
            raise ValueError("xi must lie in [0, 90) degrees")

    @property
    def r_sat(self) -> float:
        return self.R_E + self.h_sat

    @property
    def r_ogs(self) -> float:
        return self.R_E + self.h_ogs


@dataclass(frozen=True)
class WindowSpec:
    dt: float
    theta_min: float = 10.0
    shift_elev0: float = 0.0

    def __post_init__(self):
        if self.dt < 0:
            raise ValueError("dt must be non-negative")
        if not 0.0 <= self.theta_min < 90.0:
            raise ValueError("theta_min must lie in [0, 90) degrees")


def slant_range(r_sat: float, r_ogs: float, central_angle: float) -> float:
    """Satellite-OGS distance for an Earth-centred angle ``central_angle`` (radians)."""
    return math.sqrt(r_sat**2 + r_ogs**2 - 2.0 * r_sat * r_ogs * math.cos(central_angle))


def elevation_from_central_angle(r_sat: float, r_ogs: float, central_angle: float) -> float:
    """Elevation (degrees) seen from the OGS; negative below the horizon."""
    d = slant_range(r_sat, r_ogs, central_angle)
    c = r_sat * math.sin(central_angle) / d
    if c > 1.0 + 1e-12 or c < -1.0 - 1e-12:
        raise ValueError(f"arccos argument {c} outside [-1, 1]")
    theta = math.degrees(math.acos(min(max(c, -1.0), 1.0)))
    # acos only resolves [0, 180]; below the horizon the line of sight dips
    # under the local tangent plane.
    if r_sat * math.cos(central_angle) < r_ogs:
        theta = -theta
    return theta


def max_elevation(geom: OrbitGeometry) -> float:
    """Peak elevation of a circular pass whose plane is rotated by ``xi`` from zenith."""
    xi = math.radians(geom.xi)
    if geom.r_sat * math.cos(xi) < geom.r_ogs:
        raise ValueError(f"a pass rotated by xi={geom.xi} deg never rises above the horizon")
    return elevation_from_central_angle(geom.r_sat, geom.r_ogs, xi)


def select_window(profile, spec: WindowSpec) -> WindowEfficiencies:
    """Efficiencies of the slots transmitted in, in time order.

    ``profile`` is anything with ``time``, ``elevation`` and ``efficiency``
    arrays (normally a :class:`satqkd.lossio.LossProfile`).
    """
    return WindowEfficiencies(profile.efficiency[window_mask(profile, spec)],
                              slot_duration=profile.slot_duration)


def window_centre(profile, shift_elev0: float = 0.0) -> int:
    elev = np.asarray(profile.elevation)
    if elev.size == 0:
        raise EmptyWindowError("empty loss profile")
    t0 = int(np.argmax(elev))  # first maximum on ties
    if shift_elev0 > 0:
        target = elev[t0] - shift_elev0
        after = np.abs(elev[t0:] - target)
        # Latest slot among equally close candidates.
        t0 += int(len(after) - 1 - np.argmin(after[::-1]))
    return t0


def window_mask(profile, spec: WindowSpec) -> np.ndarray:
    time = np.asarray(profile.time, dtype=float)
    elev = np.asarray(profile.elevation, dtype=float)
    t0 = window_centre(profile, spec.shift_elev0)
    # Uniform spacing lets slot offsets be compared on the time column directly;
    # the small slack absorbs representation error in non-integer times.
    tol = 1e-9 * max(1.0, abs(spec.dt))
    mask = np.abs(time - time[t0]) <= spec.dt + tol
    mask &= elev >= spec.theta_min
    if not mask.any():
        raise EmptyWindowError(
            f"no slot within dt={spec.dt} s of the centre at elevation >= {spec.theta_min} deg")
    return mask
