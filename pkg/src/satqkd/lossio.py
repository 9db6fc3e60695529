"""Loss-file input/output and a synthetic overpass generator.

A loss file is comma-separated with one row per time slot: time (s),
elevation (deg), then one or more link-efficiency columns. Lines starting
with ``#`` are comments; a single header line is allowed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import GM_EARTH, OrbitGeometry, elevation_from_central_angle, slant_range


class LossFileError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LossProfile:
    time: np.ndarray
    elevation: np.ndarray
    efficiency: np.ndarray
    source: str | None = None

    def __post_init__(self):
        arrays = {}
        for name in ("time", "elevation", "efficiency"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        if not (arrays["time"].shape == arrays["elevation"].shape == arrays["efficiency"].shape):
            raise LossFileError("time, elevation and efficiency must be equally long")
        if arrays["time"].ndim != 1 or arrays["time"].size == 0:
            raise LossFileError("a loss profile needs at least one row")
        _validate(arrays["time"], arrays["elevation"], arrays["efficiency"])

    def __len__(self) -> int:
        return len(self.time)

    @property
    def slot_duration(self) -> float:
        if len(self.time) < 2:
            return 1.0
        return float(self.time[1] - self.time[0])

    def same_as(self, other: "LossProfile") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("time", "elevation", "efficiency"))


def _validate(time, elev, eff, rows=None):
    def row(i):
        return rows[i] if rows is not None else i + 1

    for i, (e, n) in enumerate(zip(elev, eff)):
        if not 0.0 <= e <= 90.0:
            raise LossFileError(f"row {row(i)}: elevation {e} outside [0, 90]")
        if not 0.0 <= n <= 1.0:
            raise LossFileError(f"row {row(i)}: efficiency {n} outside [0, 1]")
    if len(time) > 1:
        step = np.diff(time)
        if np.any(step <= 0):
            i = int(np.argmax(step <= 0)) + 1
            raise LossFileError(f"row {row(i)}: time not strictly increasing")
        bad = np.abs(step - step[0]) > 1e-9 * abs(step[0])
        if np.any(bad):
            i = int(np.argmax(bad)) + 1
            raise LossFileError(f"row {row(i)}: non-uniform time spacing")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_loss_file(path, column: int = 3, in_db: bool = False) -> LossProfile:
    """Read a loss file; ``column`` counts from 1.

    With ``in_db`` the column holds loss in dB and is converted to
    transmittance.
    """
    if column < 3:
        raise ValueError("the efficiency column must come after time and elevation (column >= 3)")
    path = Path(path)
    time, elev, eff, rows = [], [], [], []
    seen_data = False
    with path.open(newline="") as fh:
        for lineno, fields in enumerate(csv.reader(fh), start=1):
            if not fields or not "".join(fields).strip() or fields[0].lstrip().startswith("#"):
                continue
            if not seen_data and not _is_number(fields[0]):
                seen_data = True  # header
                continue
            seen_data = True
            if len(fields) < column:
                raise LossFileError(f"{path}: row {lineno}: expected at least {column} columns, got {len(fields)}")
            try:
                t, e, v = float(fields[0]), float(fields[1]), float(fields[column - 1])
            except ValueError as exc:
                raise LossFileError(f"{path}: row {lineno}: {exc}") from None
            if in_db:
                v = 10.0 ** (-v / 10.0)
            time.append(t)
            elev.append(e)
            eff.append(v)
            rows.append(lineno)
    if not time:
        raise LossFileError(f"{path}: no data rows")
    try:
        _validate(time, elev, eff, rows)
    except LossFileError as exc:
        raise LossFileError(f"{path}: {exc}") from None
    return LossProfile(time, elev, eff, source=str(path))


def write_loss_file(profile: LossProfile, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "elevation", "efficiency"])
        for row in zip(profile.time, profile.elevation, profile.efficiency):
            w.writerow([repr(float(v)) for v in row])


def apply_excess_loss(profile: LossProfile, ls: float) -> LossProfile:
    if ls < 0:
        raise ValueError("excess loss must be non-negative")
    return replace(profile, efficiency=profile.efficiency * 10.0 ** (-ls / 10.0))


def system_loss_db(profile: LossProfile) -> float:
    """Best-case (highest-efficiency) channel loss of the profile, in dB."""
    best = float(np.max(profile.efficiency))
    return math.inf if best == 0.0 else -10.0 * math.log10(best)


def generate_synthetic_profile(geom: OrbitGeometry, zenith_loss_db: float,
                               slot_count: int, slot_duration: float = 1.0) -> LossProfile:
    """Symmetric circular pass centred on the slot of closest approach.

    Loss grows with the square of slant range relative to the closest
    approach. Raises ``ValueError`` if the pass would dip below the horizon.
    """
    if slot_count < 3 or slot_count % 2 == 0:
        raise ValueError("slot_count must be odd and at least 3")
    rs, ro = geom.r_sat, geom.r_ogs
    omega = math.sqrt(GM_EARTH / rs**3)
    xi = math.radians(geom.xi)
    half = slot_count // 2
    times = [slot_duration * (i - half) for i in range(slot_count)]
    d0 = slant_range(rs, ro, xi)
    elev, eff = [], []
    for t in times:
        # Central angle for an orbit plane tilted by xi (right spherical triangle).
        gam = math.acos(math.cos(xi) * math.cos(omega * t))
        theta = elevation_from_central_angle(rs, ro, gam)
        if theta < 0:
            raise ValueError(f"satellite below the horizon at t={t} s; reduce slot_count")
        loss = zenith_loss_db + 20.0 * math.log10(slant_range(rs, ro, gam) / d0)
        elev.append(theta)
        eff.append(10.0 ** (-loss / 10.0))
    return LossProfile(times, elev, eff, source="synthetic")
