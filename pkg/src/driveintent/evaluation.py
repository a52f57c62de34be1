"""Batch analysis of recorded episodes: accuracy tables, row-normalized
confusion matrices, label-timing metrics against the lane-exit baseline,
lateral-deviation distributions with a two-sample KS test, transition-point
TTC/THW statistics, and per-tick probability traces.

All functions are pure; batch aggregation sorts its inputs first so results
never depend on traversal order.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .classifiers import LabeledDataset, Model, N_CLASSES, predict_proba
from .domain import LaneGeometry, ModeLabel, lane_of
from .perception import SensorConfig, assign_slots, compute_time_metrics, featurize
from .simulation import Trace

LATERAL_HIST_BIN = 0.05  # m
KS_MIN_SAMPLES = 8
KS_SERIES_TERMS = 100
# Below this argument the truncated alternating series is numerically
# meaningless; the distribution's limit there is 1.
_KS_LAMBDA_FLOOR = 0.1


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Lane-exit baseline and label timing
# ---------------------------------------------------------------------------


@dataclass
class BaselineResult:
    """Divider-crossing timestamps, one per executed lane change.

    span_crossings holds one entry per sigma2 span in event order (None when
    the box never crossed before the episode ended); times is the compacted
    list of actual crossings; no_crossing_count tallies the None entries.
    """

    span_crossings: list  # Optional[float] per sigma2 span
    no_crossing_count: int

    @property
    def times(self) -> list:
        return [t for t in self.span_crossings if t is not None]


def lane_exit_baseline(trace: Trace, geometry: LaneGeometry) -> BaselineResult:
    """First tick per lane change where the ego box pokes across the divider.

    Crossing means |py - divider_y| < vehicle_width/2 with py still moving
    toward the target lane; the timestamp is the (tick-quantized) record
    time of that first tick.
    """
    if trace.incomplete:
        raise EvaluationError(f"{trace.episode_id}: trace is incomplete")
    half_width = geometry.vehicle_width / 2.0
    divider = geometry.divider_y
    times = [r.time for r in trace.records]

    def index_of(t: float) -> int:
        i = int(round(t * 60.0))
        if i >= len(times):
            i = len(times) - 1
        return i

    crossings: list = []
    events = trace.mode_events
    for pos, ev in enumerate(events):
        if not (ev.from_mode is ModeLabel.PREPARE and ev.to_mode is ModeLabel.LANE_CHANGE):
            continue
        start = index_of(ev.time)
        end = len(trace.records) - 1
        for later in events[pos + 1 :]:
            if later.from_mode is ModeLabel.LANE_CHANGE:
                end = index_of(later.time)
                break
        source_lane = lane_of(trace.records[start].ego.py, geometry)
        direction = 1.0 if geometry.center_of(source_lane.other) > geometry.center_of(source_lane) else -1.0
        found = None
        for i in range(start, end + 1):
            rec = trace.records[i]
            if abs(rec.ego.py - divider) < half_width and rec.ego.vy * direction > 0.0:
                found = rec.time
                break
        crossings.append(found)
    return BaselineResult(
        span_crossings=crossings,
        no_crossing_count=sum(1 for c in crossings if c is None),
    )


@dataclass
class TimingSamples:
    """Per-event label-timing samples for one or more traces."""

    t_p: list = field(default_factory=list)  # time spent preparing [s]
    dt_p: list = field(default_factory=list)  # baseline - t(sigma1) [s]
    dt_lc: list = field(default_factory=list)  # baseline - t(sigma2) [s]
    t_p_aborted: list = field(default_factory=list)  # aborted prepare spans [s]
    no_crossing_count: int = 0
    orphan_sigma2_count: int = 0  # sigma2 with no preceding sigma1 in-trace

    def extend(self, other: "TimingSamples") -> None:
        self.t_p.extend(other.t_p)
        self.dt_p.extend(other.dt_p)
        self.dt_lc.extend(other.dt_lc)
        self.t_p_aborted.extend(other.t_p_aborted)
        self.no_crossing_count += other.no_crossing_count
        self.orphan_sigma2_count += other.orphan_sigma2_count


def timing_metrics(
    trace: Trace,
    baselines: Union[BaselineResult, Sequence[Optional[float]]],
) -> TimingSamples:
    """T_P / dT_P / dT_LC per completed lane change of one trace.

    T_P = t(sigma2) - t(sigma1); the two lead times subtract the event times
    from the per-change baseline crossing.  Aborted Prepare spans go to the
    separate t_p_aborted list; changes that never crossed the divider are
    counted but contribute no samples.
    """
    if isinstance(baselines, BaselineResult):
        crossings = list(baselines.span_crossings)
    else:
        crossings = list(baselines)
    n_spans = sum(
        1
        for ev in trace.mode_events
        if ev.from_mode is ModeLabel.PREPARE and ev.to_mode is ModeLabel.LANE_CHANGE
    )
    if len(crossings) != n_spans:
        raise EvaluationError(
            f"{trace.episode_id}: {n_spans} lane changes but {len(crossings)} baselines"
        )

    out = TimingSamples()
    t_sigma1: Optional[float] = None
    span = 0
    for ev in trace.mode_events:
        if ev.from_mode is ModeLabel.LANE_KEEP and ev.to_mode is ModeLabel.PREPARE:
            t_sigma1 = ev.time
        elif ev.from_mode is ModeLabel.PREPARE and ev.to_mode is ModeLabel.LANE_KEEP:
            if t_sigma1 is not None:
                out.t_p_aborted.append(ev.time - t_sigma1)
            t_sigma1 = None
        elif ev.from_mode is ModeLabel.PREPARE and ev.to_mode is ModeLabel.LANE_CHANGE:
            crossing = crossings[span]
            span += 1
            if t_sigma1 is None:
                out.orphan_sigma2_count += 1
            elif crossing is None:
                out.no_crossing_count += 1
            else:
                out.t_p.append(ev.time - t_sigma1)
                out.dt_p.append(crossing - t_sigma1)
                out.dt_lc.append(crossing - ev.time)
            t_sigma1 = None
    return out


def collect_timing(traces: Iterable[Trace], geometry: LaneGeometry) -> TimingSamples:
    """Timing samples pooled over many traces.

    Aggregation is order-independent: per-trace partials are keyed by
    episode id and merged in sorted key order, so any traversal order of the
    input (including a streaming generator) yields identical statistics.
    """
    partials: dict = {}
    for trace in traces:
        if trace.incomplete:
            continue
        partials[trace.episode_id] = timing_metrics(
            trace, lane_exit_baseline(trace, geometry)
        )
    total = TimingSamples()
    for episode_id in sorted(partials):
        total.extend(partials[episode_id])
    return total


# ---------------------------------------------------------------------------
# Accuracy and confusion
# ---------------------------------------------------------------------------


@dataclass
class AccuracyReport:
    overall_accuracy: float
    accuracy_by_scenario: dict  # vehicle count -> (accuracy, n_rows)
    confusion: np.ndarray  # (3, 3) row-normalized
    confusion_counts: np.ndarray  # (3, 3) raw counts
    per_class_recall: np.ndarray  # (3,)
    zero_support_modes: list  # mode codes with no true rows
    accuracy_by_driver: dict  # driver id -> (accuracy, n_rows)
    n_rows: int = 0


def accuracy_report(predictions: Sequence, data: LabeledDataset) -> AccuracyReport:
    """Overall + per-vehicle-count accuracy and the row-normalized confusion.

    Confusion entry (i, j) is the fraction of true-mode-i rows predicted as
    mode j; rows with zero support stay all-zero and are flagged.
    """
    preds = np.asarray(predictions, dtype=int)
    labels = np.asarray(data.labels, dtype=int)
    if len(preds) != len(labels):
        raise EvaluationError(
            f"got {len(preds)} predictions for {len(labels)} rows"
        )
    correct = preds == labels
    overall = float(np.mean(correct))

    by_scenario: dict = {}
    vir = np.asarray(data.vehicles_in_range, dtype=int)
    for count in sorted(set(int(v) for v in vir)):
        mask = vir == count
        by_scenario[count] = (float(np.mean(correct[mask])), int(mask.sum()))

    counts = np.zeros((N_CLASSES, N_CLASSES))
    np.add.at(counts, (labels, preds), 1.0)
    confusion = np.zeros_like(counts)
    zero_support = []
    for i in range(N_CLASSES):
        row_sum = counts[i].sum()
        if row_sum > 0:
            confusion[i] = counts[i] / row_sum
        else:
            zero_support.append(i)
    recall = np.diagonal(confusion).copy()

    by_driver: dict = {}
    drivers = np.asarray(data.driver_ids)
    for drv in sorted(set(str(d) for d in drivers)):
        mask = drivers == drv
        by_driver[drv] = (float(np.mean(correct[mask])), int(mask.sum()))

    return AccuracyReport(
        overall_accuracy=overall,
        accuracy_by_scenario=by_scenario,
        confusion=confusion,
        confusion_counts=counts,
        per_class_recall=recall,
        zero_support_modes=zero_support,
        accuracy_by_driver=by_driver,
        n_rows=len(labels),
    )


# ---------------------------------------------------------------------------
# Two-sample Kolmogorov-Smirnov test
# ---------------------------------------------------------------------------


def ks_two_sample(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample KS statistic with the asymptotic p-value.

    D is the supremum ECDF difference over the pooled points; the p-value
    uses the Kolmogorov limit distribution at effective sample size
    n_e = |a||b| / (|a|+|b|) with the standard small-sample correction
    lambda = (sqrt(n_e) + 0.12 + 0.11/sqrt(n_e)) * D, summing 100 series
    terms.  The result is clamped to (0, 1]; tiny lambda short-circuits to 1
    because the alternating series loses all precision there while the true
    limit is 1.
    """
    xa = np.sort(np.asarray(a, dtype=float))
    xb = np.sort(np.asarray(b, dtype=float))
    if len(xa) < KS_MIN_SAMPLES or len(xb) < KS_MIN_SAMPLES:
        raise EvaluationError(
            f"need at least {KS_MIN_SAMPLES} samples per side, got {len(xa)} and {len(xb)}"
        )
    pooled = np.concatenate([xa, xb])
    cdf_a = np.searchsorted(xa, pooled, side="right") / len(xa)
    cdf_b = np.searchsorted(xb, pooled, side="right") / len(xb)
    d = float(np.max(np.abs(cdf_a - cdf_b)))

    n_e = len(xa) * len(xb) / (len(xa) + len(xb))
    lam = (math.sqrt(n_e) + 0.12 + 0.11 / math.sqrt(n_e)) * d
    if lam < _KS_LAMBDA_FLOOR:
        return d, 1.0
    total = 0.0
    for k in range(1, KS_SERIES_TERMS + 1):
        total += (-1.0) ** (k - 1) * math.exp(-2.0 * k * k * lam * lam)
    p = 2.0 * total
    p = min(max(p, sys.float_info.min), 1.0)
    return d, p


# ---------------------------------------------------------------------------
# Mode-conditioned distributions
# ---------------------------------------------------------------------------


@dataclass
class ModeDistributions:
    """Lateral-deviation samples per mode and TTC/THW at transition instants.

    Left-lane lateral samples are sign-flipped before pooling so both lanes
    share the right-lane orientation (positive = toward the divider).
    """

    lateral: dict  # ModeLabel -> np.ndarray of deviations [m]
    transition: dict  # name in {TTC_P, THW_P, TTC_LC, THW_LC} -> list of floats
    transition_by_driver: dict  # same keys -> {driver_id: list}
    empty_slot1_events: int = 0

    def histogram(self, mode: ModeLabel) -> tuple[np.ndarray, np.ndarray]:
        """(bin_edges, counts) for one mode at the fixed 0.05 m bin width."""
        samples = self.lateral[mode]
        if len(samples) == 0:
            return np.array([0.0, LATERAL_HIST_BIN]), np.array([0])
        lo = math.floor(samples.min() / LATERAL_HIST_BIN) * LATERAL_HIST_BIN
        hi = math.ceil(samples.max() / LATERAL_HIST_BIN) * LATERAL_HIST_BIN
        n_bins = max(1, int(round((hi - lo) / LATERAL_HIST_BIN)))
        edges = lo + LATERAL_HIST_BIN * np.arange(n_bins + 1)
        counts, _ = np.histogram(samples, bins=edges)
        return edges, counts


_TRANSITION_KEYS = ("TTC_P", "THW_P", "TTC_LC", "THW_LC")


def _trace_distribution_partial(
    trace: Trace, geometry: LaneGeometry, sensor: SensorConfig
) -> tuple[dict, dict, int]:
    """One trace's lateral samples per mode and transition-instant metrics."""
    lateral: dict = {mode: [] for mode in ModeLabel}
    transition: dict = {k: [] for k in _TRANSITION_KEYS}
    skipped = 0
    rec_by_tick = trace.records
    for rec in rec_by_tick:
        lane = lane_of(rec.ego.py, geometry)
        dev = rec.ego.py - geometry.center_of(lane)
        if lane.indicator > 0:  # left lane: reflect into the right-lane frame
            dev = -dev
        lateral[rec.mode].append(dev)
    for ev in trace.mode_events:
        if ev.from_mode is ModeLabel.LANE_KEEP and ev.to_mode is ModeLabel.PREPARE:
            ttc_key, thw_key = "TTC_P", "THW_P"
        elif ev.from_mode is ModeLabel.PREPARE and ev.to_mode is ModeLabel.LANE_CHANGE:
            ttc_key, thw_key = "TTC_LC", "THW_LC"
        else:
            continue
        idx = int(round(ev.time * 60.0))
        if idx >= len(rec_by_tick):
            idx = len(rec_by_tick) - 1
        rec = rec_by_tick[idx]
        lane = lane_of(rec.ego.py, geometry)
        slots = assign_slots(rec.ego, lane, rec.others_measured, geometry)
        if slots.slot1 is None:
            skipped += 1
            continue
        ttc, thw, _, _ = compute_time_metrics(
            abs(slots.slot1.rel_x), rec.ego.speed, abs(slots.slot1.rel_vx), sensor
        )
        transition[ttc_key].append(ttc)
        transition[thw_key].append(thw)
    return lateral, transition, skipped


def mode_distributions(
    traces: Iterable[Trace],
    geometry: LaneGeometry,
    sensor: Optional[SensorConfig] = None,
) -> ModeDistributions:
    """Pool per-tick lateral deviations by mode and slot-1 metrics at events.

    At each sigma1 (resp. sigma2) instant the slot-1 TTC and THW are
    recomputed from that tick's recorded measurements; events whose slot 1
    is empty at the instant are counted and skipped.  Per-trace partials are
    merged in sorted episode order, so input order never matters.
    """
    sensor = sensor if sensor is not None else SensorConfig()
    partials: dict = {}
    drivers: dict = {}
    for trace in traces:
        partials[trace.episode_id] = _trace_distribution_partial(trace, geometry, sensor)
        drivers[trace.episode_id] = trace.driver_id
    if not partials:
        raise EvaluationError("no traces given")

    lateral: dict = {mode: [] for mode in ModeLabel}
    transition: dict = {k: [] for k in _TRANSITION_KEYS}
    by_driver: dict = {k: {} for k in _TRANSITION_KEYS}
    skipped = 0
    for episode_id in sorted(partials):
        lat, trans, skip = partials[episode_id]
        skipped += skip
        for mode in ModeLabel:
            lateral[mode].extend(lat[mode])
        for key in _TRANSITION_KEYS:
            transition[key].extend(trans[key])
            if trans[key]:
                by_driver[key].setdefault(drivers[episode_id], []).extend(trans[key])

    return ModeDistributions(
        lateral={m: np.asarray(v) for m, v in lateral.items()},
        transition=transition,
        transition_by_driver=by_driver,
        empty_slot1_events=skipped,
    )


# ---------------------------------------------------------------------------
# Per-tick probability traces
# ---------------------------------------------------------------------------


def probability_trace(
    model: Model,
    trace: Trace,
    normalizer,
    sensor: Optional[SensorConfig] = None,
    geometry: Optional[LaneGeometry] = None,
) -> np.ndarray:
    """(n_ticks, 5) array: time, p(LK), p(Prep), p(LC), true mode code."""
    sensor = sensor if sensor is not None else SensorConfig()
    geometry = geometry if geometry is not None else trace.geometry
    rows = np.empty((len(trace.records), 2 + N_CLASSES))
    feats = np.empty((len(trace.records), len(normalizer.mean)))
    for i, rec in enumerate(trace.records):
        lane = lane_of(rec.ego.py, geometry)
        slots = assign_slots(rec.ego, lane, rec.others_measured, geometry)
        feats[i] = featurize(rec.ego, lane, slots, sensor, geometry).values
        rows[i, 0] = rec.time
        rows[i, -1] = int(rec.mode)
    probs = predict_proba(model, normalizer.transform(feats))
    rows[:, 1 : 1 + N_CLASSES] = probs
    return rows


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------


def _mean_std(samples: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(samples, dtype=float)
    if len(arr) == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    """Everything the report path prints and plots for one trained model."""

    algo: str
    accuracy: AccuracyReport
    timing: TimingSamples
    distributions: ModeDistributions
    ks_result: tuple  # (D, p) on LaneKeep-vs-Prepare lateral deviations

    @property
    def overall_accuracy(self) -> float:
        return self.accuracy.overall_accuracy

    def timing_summary(self) -> dict:
        return {
            "T_P": (*_mean_std(self.timing.t_p), len(self.timing.t_p)),
            "dT_P": (*_mean_std(self.timing.dt_p), len(self.timing.dt_p)),
            "dT_LC": (*_mean_std(self.timing.dt_lc), len(self.timing.dt_lc)),
            "T_P_aborted": (
                *_mean_std(self.timing.t_p_aborted),
                len(self.timing.t_p_aborted),
            ),
        }

    def transition_summary(self) -> dict:
        """Per-metric (mean, std across events, std across driver means)."""
        out = {}
        for key in _TRANSITION_KEYS:
            mean, std_events = _mean_std(self.distributions.transition[key])
            per_driver_means = [
                float(np.mean(v))
                for _, v in sorted(self.distributions.transition_by_driver[key].items())
                if len(v) > 0
            ]
            std_profiles = (
                float(np.std(per_driver_means)) if per_driver_means else math.nan
            )
            out[key] = (mean, std_events, std_profiles)
        return out


def analyze_traces(
    traces: Iterable[Trace],
    geometry: LaneGeometry,
    sensor: Optional[SensorConfig] = None,
) -> tuple[TimingSamples, ModeDistributions]:
    """Single streaming pass producing both timing and distribution pools.

    Works on a generator of traces without materializing them; partials are
    merged in sorted episode order for order-independent results.
    """
    sensor = sensor if sensor is not None else SensorConfig()
    timing_partials: dict = {}
    dist_partials: dict = {}
    drivers: dict = {}
    for trace in traces:
        dist_partials[trace.episode_id] = _trace_distribution_partial(
            trace, geometry, sensor
        )
        drivers[trace.episode_id] = trace.driver_id
        if not trace.incomplete:
            timing_partials[trace.episode_id] = timing_metrics(
                trace, lane_exit_baseline(trace, geometry)
            )
    if not dist_partials:
        raise EvaluationError("no traces given")

    timing = TimingSamples()
    for episode_id in sorted(timing_partials):
        timing.extend(timing_partials[episode_id])

    lateral: dict = {mode: [] for mode in ModeLabel}
    transition: dict = {k: [] for k in _TRANSITION_KEYS}
    by_driver: dict = {k: {} for k in _TRANSITION_KEYS}
    skipped = 0
    for episode_id in sorted(dist_partials):
        lat, trans, skip = dist_partials[episode_id]
        skipped += skip
        for mode in ModeLabel:
            lateral[mode].extend(lat[mode])
        for key in _TRANSITION_KEYS:
            transition[key].extend(trans[key])
            if trans[key]:
                by_driver[key].setdefault(drivers[episode_id], []).extend(trans[key])
    dists = ModeDistributions(
        lateral={m: np.asarray(v) for m, v in lateral.items()},
        transition=transition,
        transition_by_driver=by_driver,
        empty_slot1_events=skipped,
    )
    return timing, dists


def report_from_parts(
    algo: str,
    predictions: Sequence,
    data: LabeledDataset,
    timing: TimingSamples,
    distributions: ModeDistributions,
) -> EvalReport:
    """Assemble an EvalReport from precomputed trace aggregates."""
    acc = accuracy_report(predictions, data)
    lk = distributions.lateral[ModeLabel.LANE_KEEP]
    prep = distributions.lateral[ModeLabel.PREPARE]
    if len(lk) >= KS_MIN_SAMPLES and len(prep) >= KS_MIN_SAMPLES:
        ks = ks_two_sample(lk, prep)
    else:
        ks = (math.nan, math.nan)
    return EvalReport(
        algo=algo, accuracy=acc, timing=timing, distributions=distributions, ks_result=ks
    )


def build_report(
    algo: str,
    predictions: Sequence,
    data: LabeledDataset,
    traces: Iterable[Trace],
    geometry: LaneGeometry,
    sensor: Optional[SensorConfig] = None,
) -> EvalReport:
    """Assemble the full evaluation from test predictions plus raw traces."""
    timing, dists = analyze_traces(traces, geometry, sensor)
    return report_from_parts(algo, predictions, data, timing, dists)


def render_text(report: EvalReport) -> str:
    """Human-readable multi-section summary of one EvalReport."""
    lines = [f"=== Evaluation: {report.algo} ==="]
    acc = report.accuracy
    lines.append(f"rows: {acc.n_rows}")
    lines.append(f"overall accuracy: {acc.overall_accuracy:.4f}")
    lines.append("accuracy by vehicles within detection radius:")
    for count, (a, n) in sorted(acc.accuracy_by_scenario.items()):
        lines.append(f"  {count} vehicle(s): {a:.4f}  (n={n})")
    lines.append("accuracy by driver profile:")
    for drv, (a, n) in sorted(acc.accuracy_by_driver.items()):
        lines.append(f"  {drv}: {a:.4f}  (n={n})")
    lines.append("confusion (rows = true mode, fractions):")
    for i, mode in enumerate(ModeLabel):
        row = " ".join(f"{v:.4f}" for v in acc.confusion[i])
        flag = "  [no support]" if i in acc.zero_support_modes else ""
        lines.append(f"  {mode.short:>4}: {row}{flag}")
    lines.append(
        "per-class recall: "
        + " ".join(f"{m.short}={r:.4f}" for m, r in zip(ModeLabel, acc.per_class_recall))
    )
    lines.append("label timing vs lane-exit baseline [s]:")
    for key, (mean, std, n) in report.timing_summary().items():
        lines.append(f"  {key:>11}: mean={mean:.3f} std={std:.3f} n={n}")
    lines.append(
        f"  diagnostics: no-crossing={report.timing.no_crossing_count} "
        f"orphan-sigma2={report.timing.orphan_sigma2_count}"
    )
    lines.append("slot-1 metrics at transition instants:")
    for key, (mean, std_ev, std_prof) in report.transition_summary().items():
        lines.append(
            f"  {key:>6}: mean={mean:.3f} std(events)={std_ev:.3f} "
            f"std(profiles)={std_prof:.3f}"
        )
    d, p = report.ks_result
    lines.append(f"KS LaneKeep-vs-Prepare lateral deviation: D={d:.4f} p={p:.3e}")
    lines.append(f"  empty-slot1 transition events skipped: {report.distributions.empty_slot1_events}")
    return "\n".join(lines) + "\n"
