"""Sensor model and feature extraction.

Pipeline per tick: ``sense`` gates surrounding vehicles to a detection radius
and adds measurement noise; ``assign_slots`` orders the survivors into the
three-position relative grid (ahead-same-lane, opposite-ahead,
opposite-behind), mirrored when the ego drives in the left lane;
``featurize`` turns the grid into the fixed 22-entry vector of relative
states and time metrics consumed by the classifiers.

Control inputs are deliberately absent from every signature in this module:
features must describe the environment, never the ego's own actuation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import Lane, LaneGeometry, VehicleState, lane_of


@dataclass(frozen=True)
class SensorConfig:
    """Detection and noise parameters of the simulated forward/side sensor.

    :param detection_radius: range gate on true positions [m]
    :param pos_noise_std: additive Gaussian noise on relative positions [m]
    :param vel_noise_std: additive Gaussian noise on relative speed [m/s]
    :param time_metric_cap: saturation value for all four time metrics [s]
    :param denom_epsilon: below this, a divisor counts as zero [m/s or m]
    :param include_ego_heading: expose ego heading as a feature entry
    """

    detection_radius: float = 50.0
    pos_noise_std: float = 0.1
    vel_noise_std: float = 0.1
    time_metric_cap: float = 10.0
    denom_epsilon: float = 0.1
    include_ego_heading: bool = True


@dataclass(slots=True)
class Measurement:
    """Noisy relative observation of one surrounding vehicle.

    All quantities are other-minus-ego.  ``index`` carries the simulator's
    vehicle index for bookkeeping (trace files, debugging); it is not a
    feature and downstream extraction never reads it.
    """

    rel_x: float
    rel_y: float
    rel_vx: float
    index: int = -1


@dataclass
class SlotGrid:
    """The three-position relative ordering of surrounding vehicles.

    slot1: nearest vehicle ahead in the ego's lane.
    slot2: nearest vehicle ahead in the opposite lane.
    slot3: nearest vehicle behind (or abreast) in the opposite lane.

    "Opposite" resolves against the ego's lane, so the grid mirrors itself
    when the ego is in the left lane.  Same-lane vehicles behind the ego
    have no slot and are dropped.
    """

    slot1: Optional[Measurement] = None
    slot2: Optional[Measurement] = None
    slot3: Optional[Measurement] = None

    def as_tuple(self) -> tuple[Optional[Measurement], ...]:
        return (self.slot1, self.slot2, self.slot3)


def sense(
    ego: VehicleState,
    others: Sequence[VehicleState],
    cfg: SensorConfig,
    rng: np.random.Generator,
    indices: Optional[Sequence[int]] = None,
) -> list[Measurement]:
    """Observe surrounding vehicles: true-position range gate, then noise.

    The gate uses the true Euclidean offset so detection stays deterministic
    given ground truth; only the retained measurements are perturbed.  Noise
    draws happen in input order, three per retained vehicle (rel_x, rel_y,
    rel_vx), which pins the consumed rng stream.
    """
    out: list[Measurement] = []
    for i, other in enumerate(others):
        rel_x = other.px - ego.px
        rel_y = other.py - ego.py
        if rel_x * rel_x + rel_y * rel_y > cfg.detection_radius**2:
            continue
        rel_vx = other.vx - ego.vx
        if cfg.pos_noise_std > 0.0:
            rel_x += cfg.pos_noise_std * rng.standard_normal()
            rel_y += cfg.pos_noise_std * rng.standard_normal()
        if cfg.vel_noise_std > 0.0:
            rel_vx += cfg.vel_noise_std * rng.standard_normal()
        idx = indices[i] if indices is not None else i
        out.append(Measurement(float(rel_x), float(rel_y), float(rel_vx), idx))
    return out


def assign_slots(
    ego: VehicleState,
    ego_lane: Lane,
    measurements: Sequence[Measurement],
    geometry: LaneGeometry,
) -> SlotGrid:
    """Order measurements into the three-slot relative grid.

    Each measurement's lane comes from ego.py + rel_y against the divider.
    Nearest-wins per slot; ties keep the earliest measurement (stable).
    """
    slot1 = slot2 = slot3 = None
    for m in measurements:
        m_lane = lane_of(ego.py + m.rel_y, geometry)
        if m_lane is ego_lane:
            if m.rel_x > 0.0 and (slot1 is None or m.rel_x < slot1.rel_x):
                slot1 = m
            # same lane, behind: no slot exists for it
        else:
            if m.rel_x > 0.0:
                if slot2 is None or m.rel_x < slot2.rel_x:
                    slot2 = m
            elif slot3 is None or -m.rel_x < -slot3.rel_x:
                slot3 = m
    return SlotGrid(slot1, slot2, slot3)


def compute_time_metrics(
    d: float, v_e: float, v_i: float, cfg: SensorConfig
) -> tuple[float, float, float, float]:
    """The four time metrics of a slot occupant: TTC, THW, rTTC, rTHW.

    TTC  = d / v_e   time to reach the occupant at current ego speed [s]
    THW  = v_e / d   headway rate, the literal reciprocal [1/s]
    rTTC = d / v_i   time to contact at current closing speed [s]
    rTHW = v_i / d   closing rate per meter of gap [1/s]

    ``d`` and ``v_i`` are magnitudes (|rel_x|, |rel_vx|); sign information
    travels separately in the raw feature entries.  All four values are
    clamped to [0, time_metric_cap].  When the speed that defines a pair is
    effectively zero (< denom_epsilon), the pair degenerates to
    (cap, 0): no approach happening, no urgency.  A near-zero gap
    degenerates the distance-divided pair the opposite way, (0, cap).
    """
    cap = cfg.time_metric_cap
    eps = cfg.denom_epsilon

    if v_e < eps:
        ttc, thw = cap, 0.0
    elif d < eps:
        ttc, thw = 0.0, cap
    else:
        ttc = min(max(d / v_e, 0.0), cap)
        thw = min(max(v_e / d, 0.0), cap)

    if v_i < eps:
        rttc, rthw = cap, 0.0
    elif d < eps:
        rttc, rthw = 0.0, cap
    else:
        rttc = min(max(d / v_i, 0.0), cap)
        rthw = min(max(v_i / d, 0.0), cap)

    return ttc, thw, rttc, rthw


# Column order of the 22-entry feature vector.  This order is part of the
# on-disk feature-table schema; do not reorder.
FEATURE_NAMES: tuple[str, ...] = tuple(
    f"slot{s}_{name}"
    for s in (1, 2, 3)
    for name in ("rel_x", "rel_vx", "ttc", "thw", "rttc", "rthw")
) + ("ego_speed", "ego_lat_dev", "ego_heading", "ego_lane")

MASK_NAMES: tuple[str, ...] = ("slot1_present", "slot2_present", "slot3_present")

N_FEATURES = len(FEATURE_NAMES)  # 22

# Sign convention for the rel_x padding sentinel of an empty slot: slots 1
# and 2 look ahead (+radius), slot 3 looks behind (-radius).
_PAD_SIGN = (1.0, 1.0, -1.0)


@dataclass
class FeatureVector:
    """One tick's classifier input: 22 values plus the slot presence mask.

    ``values`` is raw (un-normalized); the mask is metadata, not a feature.
    """

    values: np.ndarray
    mask: tuple[bool, bool, bool]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (N_FEATURES,):
            raise ValueError(
                f"feature vector must have {N_FEATURES} entries, "
                f"got shape {self.values.shape}"
            )


def featurize(
    ego: VehicleState,
    ego_lane: Lane,
    slots: SlotGrid,
    cfg: SensorConfig,
    geometry: LaneGeometry,
) -> FeatureVector:
    """Assemble the raw 22-entry feature vector for one tick.

    Occupied slots contribute their signed relative state plus the four time
    metrics; empty slots contribute padding shaped like the most distant,
    least urgent real observation (rel_x at the detection radius, metrics at
    their saturation values).  The ego block carries speed, lateral deviation
    from the current lane center, heading magnitude (or 0 when disabled),
    and the lane indicator.

    The heading entry is |theta|: reflecting a scene about the divider flips
    the physical heading sign, and the vector must come out identical except
    for the lane indicator and the lateral-deviation sign.  Direction is
    still fully determined in a two-lane world by those two entries.
    """
    v_e = ego.speed
    vals = np.empty(N_FEATURES, dtype=float)
    mask = []
    for s, m in enumerate(slots.as_tuple()):
        base = 6 * s
        if m is None:
            vals[base] = _PAD_SIGN[s] * cfg.detection_radius
            vals[base + 1] = 0.0
            vals[base + 2] = cfg.time_metric_cap  # ttc
            vals[base + 3] = 0.0  # thw
            vals[base + 4] = cfg.time_metric_cap  # rttc
            vals[base + 5] = 0.0  # rthw
            mask.append(False)
        else:
            ttc, thw, rttc, rthw = compute_time_metrics(
                abs(m.rel_x), v_e, abs(m.rel_vx), cfg
            )
            vals[base] = m.rel_x
            vals[base + 1] = m.rel_vx
            vals[base + 2] = ttc
            vals[base + 3] = thw
            vals[base + 4] = rttc
            vals[base + 5] = rthw
            mask.append(True)
    vals[18] = v_e
    vals[19] = ego.py - geometry.center_of(ego_lane)
    vals[20] = abs(ego.theta) if cfg.include_ego_heading else 0.0
    vals[21] = ego_lane.indicator
    return FeatureVector(vals, (mask[0], mask[1], mask[2]))


@dataclass
class Normalizer:
    """Per-column z-score transform, statistics estimated on training rows."""

    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(
            mean=np.asarray(d["mean"], dtype=float),
            std=np.asarray(d["std"], dtype=float),
        )


def fit_normalizer(train_features: np.ndarray) -> Normalizer:
    """Estimate per-column mean and population std from training rows.

    Columns with (near-)zero variance get std forced to 1 so they normalize
    to exactly zero instead of exploding.
    """
    X = np.asarray(train_features, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_normalizer needs a non-empty 2-D matrix")
    mean = X.mean(axis=0)
    std = X.std(axis=0)  # population (ddof=0)
    std = np.where(std < 1e-9, 1.0, std)
    return Normalizer(mean=mean, std=std)


def apply_normalizer(normalizer: Normalizer, v: FeatureVector) -> FeatureVector:
    """Return a new FeatureVector with z-scored values (mask unchanged)."""
    return FeatureVector(normalizer.transform(v.values), v.mask)
