"""Persistent text formats: episode traces, split manifests, feature tables,
and serialized models.

Everything here is line-delimited text with canonical float formatting
(shortest round-trip repr), so writing the same objects twice produces
byte-identical files and a write→read→write cycle is lossless.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .classifiers import LabeledDataset, Model
from .domain import LaneGeometry, ModeLabel, VehicleState, derive_rng, format_float, lane_of
from .perception import (
    FEATURE_NAMES,
    MASK_NAMES,
    N_FEATURES,
    _PAD_SIGN,
    Measurement,
    Normalizer,
    SensorConfig,
    assign_slots,
    featurize,
    fit_normalizer,
)
from .simulation import ModeEvent, TimestepRecord, Trace, vehicles_in_range

TRACE_FORMAT = "driveintent-trace"
TRACE_VERSION = 1
MODEL_FORMAT = "driveintent-model"
MODEL_VERSION = 1
SPLIT_HEADER_PREFIX = "# driveintent-split v1"


class DatasetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Trace files (JSON lines: one header object, then one object per timestep)
# ---------------------------------------------------------------------------


def _round_trip_floats(obj):
    """Recursively cast numerics to Python float so json emits repr digits."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise DatasetError("cannot serialize non-finite float")
        return obj
    return obj


def _state_to_list(s: VehicleState) -> list[float]:
    return [float(s.px), float(s.py), float(s.vx), float(s.vy), float(s.theta)]


def _state_from_list(v: Sequence[float]) -> VehicleState:
    return VehicleState(float(v[0]), float(v[1]), float(v[2]), float(v[3]), float(v[4]))


def write_trace(trace: Trace, path: str) -> None:
    """Write one episode as JSON lines; overwrites any existing file."""
    header = {
        "format": TRACE_FORMAT,
        "version": TRACE_VERSION,
        "scenario_id": trace.scenario_id,
        "driver_id": trace.driver_id,
        "episode_id": trace.episode_id,
        "seed": int(trace.seed),
        "config_digest": trace.config_digest,
        "n_others": int(trace.n_others),
        "collided": bool(trace.collided),
        "incomplete": bool(trace.incomplete),
        "geometry": {
            "lane_width": float(trace.geometry.lane_width),
            "right_center_y": float(trace.geometry.right_center_y),
            "vehicle_length": float(trace.geometry.vehicle_length),
            "vehicle_width": float(trace.geometry.vehicle_width),
        },
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for rec in trace.records:
        row = {
            "t": float(rec.time),
            "ego": _state_to_list(rec.ego),
            "ctrl": [float(rec.ego_controls[0]), float(rec.ego_controls[1])],
            "true": [_state_to_list(s) for s in rec.others_true],
            "meas": [
                [int(m.index), float(m.rel_x), float(m.rel_y), float(m.rel_vx)]
                for m in rec.others_measured
            ],
            "mode": int(rec.mode),
            "event": rec.event,
        }
        lines.append(json.dumps(row, separators=(",", ":")))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trace(path: str) -> Trace:
    """Parse a trace file, rebuilding the mode-event list from the records."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError(f"{path}: empty trace file")

    def parse(line_no: int, text: str) -> dict:
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: malformed JSON on line {line_no}: {exc}") from exc
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}: line {line_no} is not an object")
        return obj

    header = parse(1, lines[0])
    if header.get("format") != TRACE_FORMAT:
        raise DatasetError(f"{path}: not a trace file (format={header.get('format')!r})")
    if header.get("version") != TRACE_VERSION:
        raise DatasetError(
            f"{path}: unsupported trace version {header.get('version')!r}"
        )
    geo = header["geometry"]
    geometry = LaneGeometry(
        lane_width=float(geo["lane_width"]),
        right_center_y=float(geo["right_center_y"]),
        vehicle_length=float(geo["vehicle_length"]),
        vehicle_width=float(geo["vehicle_width"]),
    )

    # Decode all record lines in one pass; fall back to per-line parsing so
    # a malformed line is still reported with its line number.
    try:
        rows = json.loads("[" + ",".join(lines[1:]) + "]")
        if not all(isinstance(r, dict) for r in rows):
            raise json.JSONDecodeError("record is not an object", "", 0)
    except json.JSONDecodeError:
        rows = [parse(i, text) for i, text in enumerate(lines[1:], start=2)]

    records: list[TimestepRecord] = []
    events: list[ModeEvent] = []
    prev_mode: Optional[ModeLabel] = None
    for i, row in enumerate(rows, start=2):
        try:
            mode = ModeLabel(int(row["mode"]))
            rec = TimestepRecord(
                time=float(row["t"]),
                ego=_state_from_list(row["ego"]),
                ego_controls=(float(row["ctrl"][0]), float(row["ctrl"][1])),
                others_true=[_state_from_list(v) for v in row["true"]],
                others_measured=[
                    Measurement(
                        rel_x=float(m[1]),
                        rel_y=float(m[2]),
                        rel_vx=float(m[3]),
                        index=int(m[0]),
                    )
                    for m in row["meas"]
                ],
                mode=mode,
                event=row.get("event"),
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed record on line {i}: {exc}") from exc
        if rec.event is not None:
            if prev_mode is None:
                raise DatasetError(f"{path}: line {i}: event on the first record")
            events.append(ModeEvent(time=rec.time, from_mode=prev_mode, to_mode=mode))
        records.append(rec)
        prev_mode = mode

    return Trace(
        scenario_id=str(header["scenario_id"]),
        driver_id=str(header["driver_id"]),
        episode_id=str(header["episode_id"]),
        seed=int(header["seed"]),
        config_digest=str(header["config_digest"]),
        geometry=geometry,
        n_others=int(header["n_others"]),
        records=records,
        mode_events=events,
        collided=bool(header["collided"]),
        incomplete=bool(header["incomplete"]),
    )


def trace_filename(trace: Trace) -> str:
    return f"{trace.episode_id}.jsonl"


# ---------------------------------------------------------------------------
# Train/test split manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitManifest:
    """Episode-level train/test assignment, reproducible from its header."""

    seed: int
    train_fraction: float
    assignment: dict  # episode_id -> "train" | "test"

    def episodes(self, part: str) -> list[str]:
        return sorted(e for e, p in self.assignment.items() if p == part)


def split_episodes(episode_ids: Sequence[str], train_fraction: float, seed: int) -> SplitManifest:
    """Deterministic episode-level split; both sides are always non-empty."""
    ids = sorted(set(str(e) for e in episode_ids))
    if len(ids) < 2:
        raise DatasetError("need at least two episodes to split")
    if not 0.0 < train_fraction < 1.0:
        raise DatasetError("train_fraction must lie strictly between 0 and 1")
    rng = derive_rng(seed, "split")
    order = rng.permutation(len(ids))
    n_train = int(round(len(ids) * train_fraction))
    n_train = min(max(n_train, 1), len(ids) - 1)
    assignment = {}
    for pos, j in enumerate(order):
        assignment[ids[int(j)]] = "train" if pos < n_train else "test"
    return SplitManifest(seed=seed, train_fraction=train_fraction, assignment=assignment)


def write_split(manifest: SplitManifest, path: str) -> None:
    lines = [
        f"{SPLIT_HEADER_PREFIX} seed={manifest.seed} "
        f"train_fraction={format_float(manifest.train_fraction)}"
    ]
    for episode in sorted(manifest.assignment):
        lines.append(f"{episode}\t{manifest.assignment[episode]}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_split(path: str) -> SplitManifest:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(SPLIT_HEADER_PREFIX):
        raise DatasetError(f"{path}: not a split manifest")
    fields = dict(part.split("=", 1) for part in lines[0][len(SPLIT_HEADER_PREFIX):].split())
    assignment = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("train", "test"):
            raise DatasetError(f"{path}: malformed split line {i}: {line!r}")
        assignment[parts[0]] = parts[1]
    return SplitManifest(
        seed=int(fields["seed"]),
        train_fraction=float(fields["train_fraction"]),
        assignment=assignment,
    )


# ---------------------------------------------------------------------------
# Dataset assembly (traces -> per-tick rows -> normalized feature matrices)
# ---------------------------------------------------------------------------


def extract_rows(
    trace: Trace,
    sensor: SensorConfig,
    geometry: LaneGeometry,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-tick (features, labels, vehicle counts, masks, times) for one trace.

    Features come from the recorded noisy measurements; the within-range
    vehicle count comes from the recorded true states.
    """
    n = len(trace.records)
    X = np.empty((n, len(FEATURE_NAMES)))
    y = np.empty(n, dtype=np.int8)
    vir = np.empty(n, dtype=np.int16)
    masks = np.empty((n, 3), dtype=np.uint8)
    times = np.empty(n)
    for i, rec in enumerate(trace.records):
        ego_lane = lane_of(rec.ego.py, geometry)
        slots = assign_slots(rec.ego, ego_lane, rec.others_measured, geometry)
        fv = featurize(rec.ego, ego_lane, slots, sensor, geometry)
        X[i] = fv.values
        masks[i] = fv.mask
        y[i] = int(rec.mode)
        vir[i] = vehicles_in_range(rec.ego, rec.others_true, sensor.detection_radius)
        times[i] = rec.time
    return X, y, vir, masks, times


@dataclass
class BuiltDataset:
    train: LabeledDataset
    test: LabeledDataset
    normalizer: Normalizer
    excluded_episodes: list  # (episode_id, reason) for collided/incomplete


def build_dataset(
    traces: Iterable[Trace],
    manifest: SplitManifest,
    sensor: SensorConfig,
    geometry: LaneGeometry,
) -> BuiltDataset:
    """Assemble normalized train/test matrices from traces.

    Collided or incomplete episodes are excluded (and reported); the
    normalizer is fit on training rows only and applied to both splits.
    """
    # Per-trace tuples keep only id strings plus numeric arrays, so a
    # streaming `traces` generator never has all records in memory at once.
    parts: dict[str, list] = {"train": [], "test": []}
    excluded = []
    seen = set()
    for trace in traces:
        seen.add(trace.episode_id)
        if trace.geometry != geometry:
            raise DatasetError(
                f"{trace.episode_id}: trace geometry differs from the configured geometry"
            )
        if trace.collided or trace.incomplete:
            reason = "collided" if trace.collided else "incomplete"
            excluded.append((trace.episode_id, reason))
            continue
        part = manifest.assignment.get(trace.episode_id)
        if part is None:
            raise DatasetError(f"episode {trace.episode_id} missing from split manifest")
        X, y, vir, masks, times = extract_rows(trace, sensor, geometry)
        parts[part].append((trace.episode_id, trace.driver_id, X, y, vir, masks, times))
    return _assemble_dataset(parts, excluded, seen, manifest)


def _assemble_dataset(
    parts: dict, excluded: list, seen: set, manifest: SplitManifest
) -> "BuiltDataset":
    """Shared tail of dataset assembly: completeness check, stack, normalize."""
    missing = set(manifest.assignment) - seen
    if missing:
        raise DatasetError(
            f"split manifest names episodes with no trace: {sorted(missing)[:5]}"
        )

    def stack(rows: list) -> LabeledDataset:
        if not rows:
            raise DatasetError("a split ended up empty after exclusions")
        rows = sorted(rows, key=lambda r: r[0])  # order-independent assembly
        X = np.concatenate([r[2] for r in rows])
        y = np.concatenate([r[3] for r in rows])
        vir = np.concatenate([r[4] for r in rows])
        masks = np.concatenate([r[5] for r in rows])
        times = np.concatenate([r[6] for r in rows])
        groups = np.concatenate([np.full(len(r[3]), r[0], dtype=object) for r in rows])
        drivers = np.concatenate([np.full(len(r[3]), r[1], dtype=object) for r in rows])
        return LabeledDataset(X, y, groups, drivers, vir, masks, times)

    train = stack(parts["train"])
    test = stack(parts["test"])
    normalizer = fit_normalizer(train.features)
    train.features = normalizer.transform(train.features)
    test.features = normalizer.transform(test.features)
    return BuiltDataset(train=train, test=test, normalizer=normalizer, excluded_episodes=excluded)


class _FastPathUnavailable(Exception):
    """Internal: this file needs the record-by-record reader."""


def _fast_trace_rows(
    rows: list, sensor: SensorConfig, geometry: LaneGeometry
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized equivalent of extract_rows over decoded record objects.

    Operates on the raw JSON row dicts, computing every column with the same
    arithmetic (and the same operation order) as the per-record path:
    lane from ego_y + rel_y against the divider, nearest-wins slot selection
    with earliest-measurement tie-breaking, the capped time-metric pairs with
    their zero-speed and zero-gap degeneracies, and the empty-slot padding.
    Raises _FastPathUnavailable on any shape surprise so the caller can fall
    back to the record-by-record reader, which reports precise line errors.
    """
    n = len(rows)
    if n == 0:
        raise _FastPathUnavailable
    try:
        times = np.array([r["t"] for r in rows], dtype=float)
        ego = np.array([r["ego"] for r in rows], dtype=float)
        y = np.array([r["mode"] for r in rows], dtype=np.int8)
        counts = np.fromiter((len(r["meas"]) for r in rows), dtype=np.intp, count=n)
        flat_meas = [m for r in rows for m in r["meas"]]
        true_lists = [r["true"] for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise _FastPathUnavailable from exc
    if ego.shape != (n, 5) or not np.isin(y, (0, 1, 2)).all():
        raise _FastPathUnavailable

    ego_px, ego_py = ego[:, 0], ego[:, 1]
    divider = geometry.divider_y
    radius = sensor.detection_radius
    cap = sensor.time_metric_cap
    eps = sensor.denom_epsilon

    # Surrounding-vehicle count from the true states (rectangular per trace).
    k_true = len(true_lists[0])
    if any(len(tl) != k_true for tl in true_lists):
        raise _FastPathUnavailable
    if k_true:
        true = np.array(true_lists, dtype=float)
        if true.shape != (n, k_true, 5):
            raise _FastPathUnavailable
        dx = true[:, :, 0] - ego_px[:, None]
        dy = true[:, :, 1] - ego_py[:, None]
        vir = (dx * dx + dy * dy <= radius * radius).sum(axis=1).astype(np.int16)
    else:
        vir = np.zeros(n, dtype=np.int16)

    # Measurements, padded rectangular with a presence mask.
    m_max = int(counts.max()) if n else 0
    mx = np.zeros((n, m_max))
    my = np.zeros((n, m_max))
    mv = np.zeros((n, m_max))
    if flat_meas:
        fm = np.array(flat_meas, dtype=float)
        if fm.ndim != 2 or fm.shape[1] != 4:
            raise _FastPathUnavailable
        row_idx = np.repeat(np.arange(n), counts)
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        col_idx = np.arange(fm.shape[0]) - np.repeat(starts, counts)
        mx[row_idx, col_idx] = fm[:, 1]
        my[row_idx, col_idx] = fm[:, 2]
        mv[row_idx, col_idx] = fm[:, 3]
    present = np.arange(m_max)[None, :] < counts[:, None]

    ego_left = ego_py >= divider
    meas_left = (ego_py[:, None] + my) >= divider
    same_lane = present & (meas_left == ego_left[:, None])
    other_lane = present & (meas_left != ego_left[:, None])
    ahead = mx > 0.0

    X = np.empty((n, N_FEATURES))
    masks = np.zeros((n, 3), dtype=np.uint8)
    v_e = np.hypot(ego[:, 2], ego[:, 3])

    slot_candidates = (
        same_lane & ahead,  # slot 1: nearest ahead, same lane
        other_lane & ahead,  # slot 2: nearest ahead, other lane
        other_lane & ~ahead,  # slot 3: nearest behind (or abreast), other lane
    )
    if m_max:
        rows_arange = np.arange(n)
        for s, cand in enumerate(slot_candidates):
            # Nearest wins; argmin takes the first minimum, which keeps the
            # earliest measurement on ties, matching the sequential scan.
            key = np.where(cand, -mx if s == 2 else mx, np.inf)
            j = np.argmin(key, axis=1)
            occupied = key[rows_arange, j] < np.inf
            rel_x = mx[rows_arange, j]
            rel_vx = mv[rows_arange, j]
            d = np.abs(rel_x)
            v_i = np.abs(rel_vx)
            with np.errstate(divide="ignore", invalid="ignore"):
                ttc = np.where(
                    v_e < eps,
                    cap,
                    np.where(d < eps, 0.0, np.minimum(np.maximum(d / v_e, 0.0), cap)),
                )
                thw = np.where(
                    v_e < eps,
                    0.0,
                    np.where(d < eps, cap, np.minimum(np.maximum(v_e / d, 0.0), cap)),
                )
                rttc = np.where(
                    v_i < eps,
                    cap,
                    np.where(d < eps, 0.0, np.minimum(np.maximum(d / v_i, 0.0), cap)),
                )
                rthw = np.where(
                    v_i < eps,
                    0.0,
                    np.where(d < eps, cap, np.minimum(np.maximum(v_i / d, 0.0), cap)),
                )
            base = 6 * s
            X[:, base] = np.where(occupied, rel_x, _PAD_SIGN[s] * radius)
            X[:, base + 1] = np.where(occupied, rel_vx, 0.0)
            X[:, base + 2] = np.where(occupied, ttc, cap)
            X[:, base + 3] = np.where(occupied, thw, 0.0)
            X[:, base + 4] = np.where(occupied, rttc, cap)
            X[:, base + 5] = np.where(occupied, rthw, 0.0)
            masks[:, s] = occupied
    else:
        for s in range(3):
            base = 6 * s
            X[:, base] = _PAD_SIGN[s] * radius
            X[:, base + 1] = 0.0
            X[:, base + 2] = cap
            X[:, base + 3] = 0.0
            X[:, base + 4] = cap
            X[:, base + 5] = 0.0

    X[:, 18] = v_e
    X[:, 19] = ego_py - np.where(
        ego_left, geometry.left_center_y, geometry.right_center_y
    )
    X[:, 20] = np.abs(ego[:, 4]) if sensor.include_ego_heading else 0.0
    X[:, 21] = np.where(ego_left, 1.0, -1.0)
    return X, y, vir, masks, times


def build_dataset_from_dir(
    directory: str,
    manifest: SplitManifest,
    sensor: SensorConfig,
    geometry: LaneGeometry,
) -> "BuiltDataset":
    """build_dataset over a trace directory, via the vectorized row reader.

    Decodes each file's records in one pass and computes feature rows with
    array arithmetic; collided and incomplete episodes are excluded from the
    header alone, without decoding their records.  Any file the vectorized
    reader cannot handle is routed through the record-by-record path, so the
    result is identical to build_dataset(iter_traces_dir(directory), ...).
    """
    names = sorted(f for f in os.listdir(directory) if f.endswith(".jsonl"))
    if not names:
        raise DatasetError(f"{directory}: no trace files found")

    parts: dict[str, list] = {"train": [], "test": []}
    excluded = []
    seen = set()
    for name in names:
        path = os.path.join(directory, name)
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines:
            raise DatasetError(f"{path}: empty trace file")
        try:
            header = json.loads(lines[0])
            if not isinstance(header, dict):
                raise json.JSONDecodeError("header is not an object", "", 0)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: malformed JSON on line 1: {exc}") from exc
        if header.get("format") != TRACE_FORMAT:
            raise DatasetError(f"{path}: not a trace file (format={header.get('format')!r})")
        if header.get("version") != TRACE_VERSION:
            raise DatasetError(
                f"{path}: unsupported trace version {header.get('version')!r}"
            )
        try:
            episode_id = str(header["episode_id"])
            driver_id = str(header["driver_id"])
            geo = header["geometry"]
            trace_geometry = LaneGeometry(
                lane_width=float(geo["lane_width"]),
                right_center_y=float(geo["right_center_y"]),
                vehicle_length=float(geo["vehicle_length"]),
                vehicle_width=float(geo["vehicle_width"]),
            )
            collided = bool(header["collided"])
            incomplete = bool(header["incomplete"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}: malformed trace header: {exc}") from exc
        seen.add(episode_id)
        if trace_geometry != geometry:
            raise DatasetError(
                f"{episode_id}: trace geometry differs from the configured geometry"
            )
        if collided or incomplete:
            excluded.append((episode_id, "collided" if collided else "incomplete"))
            continue
        part = manifest.assignment.get(episode_id)
        if part is None:
            raise DatasetError(f"episode {episode_id} missing from split manifest")
        try:
            rows = json.loads("[" + ",".join(lines[1:]) + "]")
            if not all(isinstance(r, dict) for r in rows):
                raise _FastPathUnavailable
            arrays = _fast_trace_rows(rows, sensor, geometry)
        except (json.JSONDecodeError, _FastPathUnavailable):
            arrays = extract_rows(read_trace(path), sensor, geometry)
        parts[part].append((episode_id, driver_id) + arrays)
    return _assemble_dataset(parts, excluded, seen, manifest)


# ---------------------------------------------------------------------------
# Feature tables (CSV, one row per tick)
# ---------------------------------------------------------------------------

_META_COLUMNS = ["episode_id", "driver_id", "time", "vehicles_in_range"]
TABLE_COLUMNS = _META_COLUMNS + list(FEATURE_NAMES) + list(MASK_NAMES) + ["label"]


def write_feature_table(data: LabeledDataset, path: str) -> None:
    """CSV with named feature columns, slot presence flags, and mode labels."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(TABLE_COLUMNS) + "\n")
        for i in range(len(data)):
            cells = [
                str(data.groups[i]),
                str(data.driver_ids[i]),
                format_float(data.times[i]),
                str(int(data.vehicles_in_range[i])),
            ]
            cells.extend(format_float(v) for v in data.features[i])
            cells.extend(str(int(v)) for v in data.masks[i])
            cells.append(str(int(data.labels[i])))
            fh.write(",".join(cells) + "\n")


def read_feature_table(path: str) -> LabeledDataset:
    """Parse a feature-table CSV back into parallel arrays.

    Uses the pandas C parser: tables run to millions of rows and its float
    parsing is correctly rounded, so values survive the round trip exactly.
    """
    import pandas as pd

    try:
        df = pd.read_csv(
            path,
            dtype={"episode_id": str, "driver_id": str},
            float_precision="round_trip",
        )
    except (ValueError, OSError) as exc:
        raise DatasetError(f"{path}: cannot parse feature table: {exc}") from exc
    if list(df.columns) != TABLE_COLUMNS:
        raise DatasetError(f"{path}: unexpected feature-table header")
    if len(df) == 0:
        raise DatasetError(f"{path}: feature table has no rows")
    if df.isna().any().any():
        raise DatasetError(f"{path}: feature table contains missing values")
    return LabeledDataset(
        features=df[list(FEATURE_NAMES)].to_numpy(dtype=float),
        labels=df["label"].to_numpy(dtype=np.int8),
        groups=df["episode_id"].to_numpy(dtype=object),
        driver_ids=df["driver_id"].to_numpy(dtype=object),
        vehicles_in_range=df["vehicles_in_range"].to_numpy(dtype=np.int16),
        masks=df[list(MASK_NAMES)].to_numpy(dtype=np.uint8),
        times=df["time"].to_numpy(dtype=float),
    )


def write_normalizer(normalizer: Normalizer, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(normalizer.to_dict(), fh, separators=(",", ":"))
        fh.write("\n")


def read_normalizer(path: str) -> Normalizer:
    with open(path, "r", encoding="utf-8") as fh:
        return Normalizer.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------


def save_model(model: Model, path: str) -> None:
    """Self-describing JSON model file; identical models produce identical bytes."""
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "meta": model.meta,
        "normalizer": model.normalizer.to_dict() if model.normalizer else None,
        "payload": model.payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> Model:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: malformed model file: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise DatasetError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise DatasetError(f"{path}: unsupported model version {doc.get('version')!r}")
    normalizer = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
    return Model(kind=doc["kind"], payload=doc["payload"], normalizer=normalizer, meta=doc["meta"])


def iter_traces_dir(directory: str):
    """Yield *.jsonl traces from a directory in filename order (streaming)."""
    names = sorted(n for n in os.listdir(directory) if n.endswith(".jsonl"))
    if not names:
        raise DatasetError(f"{directory}: no trace files found")
    for name in names:
        yield read_trace(os.path.join(directory, name))


def read_traces_dir(directory: str) -> list[Trace]:
    """All *.jsonl traces in a directory, sorted by filename."""
    return list(iter_traces_dir(directory))
