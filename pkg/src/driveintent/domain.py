"""Shared vocabulary for the simulator: vehicle state, lanes, behavior modes,
and deterministic random-stream derivation.

Everything downstream (simulation, surrogate drivers, feature extraction,
evaluation) speaks in these types.  The module is deliberately dependency-light
so it can be imported from anywhere without cycles.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum

import numpy as np


class ModeLabel(IntEnum):
    """Behavior mode of the ego driver.

    The integer codes are part of the on-disk format (feature tables, model
    files) and of the tie-break rule used by the classifiers: whenever a vote
    or score ties, the lower code wins.
    """

    LANE_KEEP = 0
    PREPARE = 1
    LANE_CHANGE = 2

    @property
    def short(self) -> str:
        return _MODE_SHORT[self]


_MODE_SHORT = {
    ModeLabel.LANE_KEEP: "LK",
    ModeLabel.PREPARE: "PREP",
    ModeLabel.LANE_CHANGE: "LC",
}

MODE_NAMES = {m: m.name for m in ModeLabel}


def mode_from_name(name: str) -> ModeLabel:
    """Parse a mode from its enum name (``"LANE_KEEP"``) or code (``"0"``)."""
    try:
        return ModeLabel[name]
    except KeyError:
        pass
    try:
        return ModeLabel(int(name))
    except (ValueError, KeyError) as exc:
        raise ValueError(f"unknown mode label: {name!r}") from exc


class Lane(Enum):
    """One of the two travel lanes.

    The enum value doubles as the lane-indicator feature fed to the
    classifiers: -1 for the right lane, +1 for the left lane.
    """

    RIGHT = -1
    LEFT = 1

    @property
    def indicator(self) -> float:
        return float(self.value)

    @property
    def other(self) -> "Lane":
        return Lane.LEFT if self is Lane.RIGHT else Lane.RIGHT


@dataclass(frozen=True)
class LaneGeometry:
    """Two-lane, one-direction highway geometry.

    x runs along the road in the travel direction, y is lateral.  The right
    lane is centered at y=0 and the left lane sits one lane width above it.
    """

    lane_width: float = 3.5
    right_center_y: float = 0.0
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8

    @property
    def left_center_y(self) -> float:
        return self.right_center_y + self.lane_width

    @property
    def divider_y(self) -> float:
        return self.right_center_y + 0.5 * self.lane_width

    def center_of(self, lane: Lane) -> float:
        return self.right_center_y if lane is Lane.RIGHT else self.left_center_y


def lane_of(py: float, geometry: LaneGeometry) -> Lane:
    """Classify a lateral position into a lane.

    The divider itself belongs to the left lane so the mapping is total: a
    vehicle exactly on the boundary is already committed upward.
    """
    return Lane.RIGHT if py < geometry.divider_y else Lane.LEFT


@dataclass(slots=True)
class VehicleState:
    """Planar kinematic state of one vehicle.

    :param px: longitudinal position [m]
    :param py: lateral position [m]
    :param vx: longitudinal velocity [m/s]
    :param vy: lateral velocity [m/s]
    :param theta: heading relative to the road axis [rad]
    """

    px: float
    py: float
    vx: float
    vy: float
    theta: float = 0.0

    @property
    def speed(self) -> float:
        return float(np.hypot(self.vx, self.vy))

    def copy(self) -> "VehicleState":
        return VehicleState(self.px, self.py, self.vx, self.vy, self.theta)

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.px, self.py, self.vx, self.vy, self.theta)


def boxes_overlap(a: VehicleState, b: VehicleState, geometry: LaneGeometry) -> bool:
    """Axis-aligned bounding-box overlap test between two vehicles.

    Headings stay small on a straight highway, so the boxes are treated as
    axis-aligned; this errs slightly conservative during lane changes.
    """
    return (
        abs(a.px - b.px) < geometry.vehicle_length
        and abs(a.py - b.py) < geometry.vehicle_width
    )


# ---------------------------------------------------------------------------
# Deterministic random streams
# ---------------------------------------------------------------------------
#
# Every stochastic component derives its generator from (root seed, path),
# where the path names the consumer ("sense", "driver", episode index, tree
# index, ...).  Streams are therefore independent of evaluation order and of
# each other, which is what makes batch runs reproducible file-for-file.


def _path_key(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")
    return int(part) & 0xFFFFFFFFFFFFFFFF


def derive_rng(seed: int, *path: int | str) -> np.random.Generator:
    """Build a generator for stream ``path`` under root ``seed``.

    The same (seed, path) always yields the same stream; distinct paths give
    streams that do not collide in practice (64-bit hashed labels).
    """
    keys = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_path_key(p) for p in path]
    return np.random.default_rng(keys)


def format_float(x: float) -> str:
    """Canonical text form of a float: the shortest string that round-trips.

    Python's repr has guaranteed shortest round-trip behavior; routing every
    number we persist through here keeps serialized artifacts byte-stable.
    """
    return repr(float(x))


@dataclass
class RunningStats:
    """Streaming mean/std accumulator (population variance)."""

    n: int = 0
    _sum: float = 0.0
    _sumsq: float = 0.0
    values: list[float] = field(default_factory=list, repr=False)

    def add(self, x: float) -> None:
        self.n += 1
        self._sum += x
        self._sumsq += x * x
        self.values.append(x)

    @property
    def mean(self) -> float:
        return self._sum / self.n if self.n else float("nan")

    @property
    def std(self) -> float:
        if not self.n:
            return float("nan")
        var = max(self._sumsq / self.n - self.mean**2, 0.0)
        return var**0.5
