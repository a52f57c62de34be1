"""Sensing, slot assignment, time metrics, feature assembly, normalization."""

import inspect

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driveintent.domain import Lane, LaneGeometry, VehicleState, derive_rng
from driveintent.perception import (
    FEATURE_NAMES,
    MASK_NAMES,
    N_FEATURES,
    FeatureVector,
    Measurement,
    Normalizer,
    SensorConfig,
    SlotGrid,
    apply_normalizer,
    assign_slots,
    compute_time_metrics,
    featurize,
    fit_normalizer,
    sense,
)

GEOM = LaneGeometry()
CFG = SensorConfig()
NOISELESS = SensorConfig(pos_noise_std=0.0, vel_noise_std=0.0)


def ego_at(lane: Lane, speed: float = 15.0) -> VehicleState:
    return VehicleState(px=0.0, py=GEOM.center_of(lane), vx=speed, vy=0.0, theta=0.0)


class TestComputeTimeMetrics:
    def test_basic_arithmetic(self):
        ttc, thw, rttc, rthw = compute_time_metrics(30.0, 15.0, 5.0, CFG)
        assert ttc == pytest.approx(2.0, abs=1e-9)
        assert thw == pytest.approx(0.5, abs=1e-9)
        assert rttc == pytest.approx(6.0, abs=1e-9)
        assert rthw == pytest.approx(5.0 / 30.0, abs=1e-9)

    def test_threshold_scale_distance(self):
        ttc, _, _, _ = compute_time_metrics(23.45, 17.5, 5.0, CFG)
        assert ttc == pytest.approx(1.34, abs=1e-9)

    def test_near_zero_relative_speed_hits_cap(self):
        _, _, rttc, rthw = compute_time_metrics(30.0, 15.0, 0.05, CFG)
        assert rttc == 10.0
        assert rthw == 0.0

    def test_near_zero_ego_speed_hits_cap(self):
        ttc, thw, _, _ = compute_time_metrics(30.0, 0.05, 5.0, CFG)
        assert ttc == 10.0
        assert thw == 0.0

    def test_near_zero_distance_floors_time_and_caps_rate(self):
        ttc, thw, rttc, rthw = compute_time_metrics(0.05, 15.0, 5.0, CFG)
        assert ttc == 0.0
        assert thw == 10.0
        assert rttc == 0.0
        assert rthw == 10.0

    def test_clamped_to_cap_when_very_distant(self):
        ttc, _, rttc, _ = compute_time_metrics(500.0, 15.0, 1.0, CFG)
        assert ttc == 10.0
        assert rttc == 10.0

    @given(
        d=st.floats(min_value=1.0, max_value=45.0),
        v_e=st.floats(min_value=5.0, max_value=25.0),
        v_i=st.floats(min_value=0.5, max_value=20.0),
    )
    @settings(max_examples=200)
    def test_reciprocal_pairs_in_unclamped_regime(self, d, v_e, v_i):
        ttc, thw, rttc, rthw = compute_time_metrics(d, v_e, v_i, CFG)
        if 0.0 < ttc < 10.0 and 0.0 < thw < 10.0:
            assert abs(ttc * thw - 1.0) < 1e-12
        if 0.0 < rttc < 10.0 and 0.0 < rthw < 10.0:
            assert abs(rttc * rthw - 1.0) < 1e-12


class TestSense:
    def test_range_gate_drops_distant_vehicles(self):
        ego = ego_at(Lane.RIGHT)
        other = VehicleState(px=60.0, py=0.0, vx=15.0, vy=0.0, theta=0.0)
        out = sense(ego, [other], NOISELESS, derive_rng(0, "s"))
        assert out == []

    def test_noiseless_pass_through(self):
        ego = ego_at(Lane.RIGHT, speed=15.0)
        other = VehicleState(px=30.0, py=0.0, vx=13.0, vy=0.0, theta=0.0)
        (m,) = sense(ego, [other], NOISELESS, derive_rng(0, "s"))
        assert (m.rel_x, m.rel_y, m.rel_vx) == (30.0, 0.0, -2.0)

    def test_gate_applies_to_true_position_before_noise(self):
        # A vehicle just inside the radius stays present for every noise draw.
        ego = ego_at(Lane.RIGHT)
        other = VehicleState(px=49.9, py=0.0, vx=15.0, vy=0.0, theta=0.0)
        noisy = SensorConfig(pos_noise_std=5.0, vel_noise_std=0.0)
        for k in range(20):
            out = sense(ego, [other], noisy, derive_rng(k, "s"))
            assert len(out) == 1

    def test_noise_statistics_match_configuration(self):
        ego = ego_at(Lane.RIGHT)
        other = VehicleState(px=30.0, py=0.0, vx=13.0, vy=0.0, theta=0.0)
        rng = derive_rng(7, "noise")
        n = 10_000
        xs = np.array([sense(ego, [other], CFG, rng)[0].rel_x for _ in range(n)])
        # sample mean within 3 sigma/sqrt(n) of the true relative position
        assert abs(xs.mean() - 30.0) < 3.0 * CFG.pos_noise_std / np.sqrt(n)
        assert xs.std() == pytest.approx(CFG.pos_noise_std, rel=0.1)


class TestAssignSlots:
    def test_single_same_lane_ahead_fills_slot1(self):
        ego = ego_at(Lane.RIGHT)
        slots = assign_slots(ego, Lane.RIGHT, [Measurement(25.0, 0.0, -3.0)], GEOM)
        assert slots.slot1 is not None and slots.slot1.rel_x == 25.0
        assert slots.slot2 is None and slots.slot3 is None

    def test_nearest_wins_in_opposite_lane_ahead(self):
        ego = ego_at(Lane.RIGHT)
        ms = [Measurement(18.0, 3.5, 0.0), Measurement(7.0, 3.5, 0.0)]
        slots = assign_slots(ego, Lane.RIGHT, ms, GEOM)
        assert slots.slot2 is not None and slots.slot2.rel_x == 7.0

    def test_left_lane_mirroring_right_lane_vehicle_behind(self):
        ego = ego_at(Lane.LEFT)
        # ego in left lane: a right-lane vehicle 10 m behind sits in slot 3
        slots = assign_slots(ego, Lane.LEFT, [Measurement(-10.0, -3.5, 0.0)], GEOM)
        assert slots.slot3 is not None and slots.slot3.rel_x == -10.0
        assert slots.slot1 is None and slots.slot2 is None

    def test_same_lane_behind_is_discarded(self):
        ego = ego_at(Lane.RIGHT)
        slots = assign_slots(ego, Lane.RIGHT, [Measurement(-12.0, 0.0, 1.0)], GEOM)
        assert slots.as_tuple() == (None, None, None)

    def test_slot_sign_conventions(self):
        ego = ego_at(Lane.RIGHT)
        ms = [
            Measurement(20.0, 0.0, -1.0),
            Measurement(15.0, 3.5, 2.0),
            Measurement(-8.0, 3.5, 3.0),
        ]
        slots = assign_slots(ego, Lane.RIGHT, ms, GEOM)
        assert slots.slot1.rel_x > 0
        assert slots.slot2.rel_x > 0
        assert slots.slot3.rel_x <= 0

    @given(st.data())
    @settings(max_examples=100)
    def test_each_slot_holds_nearest_candidate(self, data):
        # Brute-force re-derivation: classify every measurement by lane and
        # longitudinal sign, then check the minimum-|rel_x| candidate holds
        # each slot.
        ego_lane = data.draw(st.sampled_from([Lane.RIGHT, Lane.LEFT]))
        ego = ego_at(ego_lane)
        n = data.draw(st.integers(min_value=0, max_value=6))
        ms = []
        for i in range(n):
            rel_x = data.draw(
                st.floats(min_value=-45.0, max_value=45.0).filter(lambda v: abs(v) > 1e-6),
                label=f"rel_x_{i}",
            )
            same_lane = data.draw(st.booleans(), label=f"same_{i}")
            rel_y = 0.0 if same_lane else (3.5 if ego_lane is Lane.RIGHT else -3.5)
            ms.append(Measurement(rel_x, rel_y, 0.0))
        slots = assign_slots(ego, ego_lane, ms, GEOM)

        same = [m for m in ms if abs(m.rel_y) < 1.75]
        opp = [m for m in ms if abs(m.rel_y) >= 1.75]
        want1 = min((m for m in same if m.rel_x > 0), key=lambda m: m.rel_x, default=None)
        want2 = min((m for m in opp if m.rel_x > 0), key=lambda m: m.rel_x, default=None)
        want3 = min((m for m in opp if m.rel_x <= 0), key=lambda m: abs(m.rel_x), default=None)
        for got, want in zip(slots.as_tuple(), (want1, want2, want3)):
            if want is None:
                assert got is None
            else:
                assert got is not None and got.rel_x == want.rel_x


class TestFeaturize:
    def test_full_padding_vector(self):
        ego = ego_at(Lane.RIGHT, speed=15.0)
        fv = featurize(ego, Lane.RIGHT, SlotGrid(None, None, None), CFG, GEOM)
        expected = [
            50.0, 0.0, 10.0, 0.0, 10.0, 0.0,
            50.0, 0.0, 10.0, 0.0, 10.0, 0.0,
            -50.0, 0.0, 10.0, 0.0, 10.0, 0.0,
            15.0, 0.0, 0.0, -1.0,
        ]
        assert list(fv.values) == expected
        assert list(fv.mask) == [0, 0, 0]

    def test_occupied_slot1_block(self):
        ego = ego_at(Lane.RIGHT, speed=15.0)
        slots = SlotGrid(Measurement(30.0, 0.0, -2.0), None, None)
        fv = featurize(ego, Lane.RIGHT, slots, CFG, GEOM)
        # rel speed 2 m/s: the relative time quotient 30/2 = 15 exceeds the
        # 10 s cap, so the clamped value is emitted.
        assert list(fv.values[:6]) == [30.0, -2.0, 2.0, 0.5, 10.0, pytest.approx(2.0 / 30.0, abs=1e-12)]
        assert list(fv.mask) == [1, 0, 0]

    def test_heading_flag_off_zeroes_heading_only(self):
        ego = VehicleState(px=0.0, py=0.2, vx=15.0, vy=0.5, theta=0.04)
        slots = SlotGrid(Measurement(30.0, 0.0, -2.0), None, None)
        on = featurize(ego, Lane.RIGHT, slots, CFG, GEOM)
        off_cfg = SensorConfig(include_ego_heading=False)
        off = featurize(ego, Lane.RIGHT, slots, off_cfg, GEOM)
        assert on.values[20] == 0.04
        assert off.values[20] == 0.0
        keep = [i for i in range(N_FEATURES) if i != 20]
        assert np.array_equal(np.asarray(on.values)[keep], np.asarray(off.values)[keep])

    def test_lane_indicator_and_lateral_deviation(self):
        ego = VehicleState(px=0.0, py=3.7, vx=16.0, vy=0.0, theta=0.0)
        fv = featurize(ego, Lane.LEFT, SlotGrid(None, None, None), CFG, GEOM)
        assert fv.values[21] == 1.0
        assert fv.values[19] == pytest.approx(3.7 - 3.5, abs=1e-12)

    def test_vector_length_is_enforced(self):
        with pytest.raises(ValueError):
            FeatureVector(values=np.zeros(21), mask=np.zeros(3))

    def test_feature_names_schema(self):
        assert N_FEATURES == 22
        assert len(FEATURE_NAMES) == 22
        assert len(MASK_NAMES) == 3
        assert FEATURE_NAMES[0].startswith("slot1")
        assert FEATURE_NAMES[18] == "ego_speed"

    @given(st.data())
    @settings(max_examples=60)
    def test_mirroring_symmetry(self, data):
        # Reflecting the whole scene about the divider and flipping the ego
        # lane must reproduce the identical feature vector except for the
        # lane indicator and the sign of the lateral-deviation entry.
        n = data.draw(st.integers(min_value=0, max_value=4))
        ego_off = data.draw(st.floats(min_value=-1.0, max_value=1.0))
        ego_r = VehicleState(px=0.0, py=0.0 + ego_off, vx=16.0, vy=0.0, theta=0.0)
        ego_l = VehicleState(px=0.0, py=3.5 - ego_off, vx=16.0, vy=0.0, theta=0.0)
        ms_r, ms_l = [], []
        for i in range(n):
            rel_x = data.draw(
                st.floats(min_value=-45.0, max_value=45.0).filter(lambda v: abs(v) > 1e-6),
                label=f"rx{i}",
            )
            rel_vx = data.draw(st.floats(min_value=-8.0, max_value=8.0), label=f"rv{i}")
            same = data.draw(st.booleans(), label=f"same{i}")
            y_r = 0.0 if same else 3.5
            ms_r.append(Measurement(rel_x, y_r - ego_r.py, rel_vx))
            y_l = 3.5 if same else 0.0
            ms_l.append(Measurement(rel_x, y_l - ego_l.py, rel_vx))
        fv_r = featurize(
            ego_r, Lane.RIGHT, assign_slots(ego_r, Lane.RIGHT, ms_r, GEOM), CFG, GEOM
        )
        fv_l = featurize(
            ego_l, Lane.LEFT, assign_slots(ego_l, Lane.LEFT, ms_l, GEOM), CFG, GEOM
        )
        vr, vl = np.asarray(fv_r.values), np.asarray(fv_l.values)
        assert np.allclose(vr[:19], vl[:19], atol=1e-9)  # slot blocks + speed
        assert vl[19] == pytest.approx(-vr[19], abs=1e-9)  # lateral deviation sign
        assert vr[21] == -1.0 and vl[21] == 1.0  # lane indicator
        assert np.array_equal(fv_r.mask, fv_l.mask)


class TestNormalizer:
    def test_zero_variance_column_maps_to_zero(self):
        X = np.array([[3.0, 1.0], [3.0, 2.0], [3.0, 3.0]])
        nz = fit_normalizer(X)
        out = nz.transform(X)
        assert np.all(out[:, 0] == 0.0)

    def test_two_point_column(self):
        X = np.array([[0.0], [2.0]])
        nz = fit_normalizer(X)
        assert nz.mean[0] == 1.0
        assert nz.std[0] == 1.0  # population standard deviation
        assert np.array_equal(nz.transform(X).ravel(), [-1.0, 1.0])

    def test_fit_then_apply_recovers_standard_moments(self):
        rng = np.random.default_rng(3)
        X = rng.normal(5.0, 2.5, size=(400, 6))
        nz = fit_normalizer(X)
        out = nz.transform(X)
        assert np.all(np.abs(out.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(out.std(axis=0) - 1.0) < 1e-9)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            fit_normalizer(np.zeros((0, 22)))

    def test_apply_normalizer_wraps_feature_vectors(self):
        ego = ego_at(Lane.RIGHT)
        fv = featurize(ego, Lane.RIGHT, SlotGrid(None, None, None), CFG, GEOM)
        X = np.vstack([np.asarray(fv.values), np.asarray(fv.values) + 1.0])
        nz = fit_normalizer(X)
        out = apply_normalizer(nz, fv)
        assert isinstance(out, FeatureVector)
        assert np.allclose(np.asarray(out.values), nz.transform(np.asarray(fv.values)[None, :])[0])

    def test_round_trip_dict(self):
        nz = fit_normalizer(np.random.default_rng(0).normal(size=(50, 4)))
        back = Normalizer.from_dict(nz.to_dict())
        assert np.array_equal(nz.mean, back.mean)
        assert np.array_equal(nz.std, back.std)


class TestControlExclusion:
    def test_no_perception_operation_accepts_controls(self):
        # Features must be computable from environment measurements alone;
        # no operation in the module takes a control-input argument.
        for fn in (sense, assign_slots, compute_time_metrics, featurize, fit_normalizer):
            params = inspect.signature(fn).parameters
            assert not any("control" in p or "accel" in p for p in params), fn.__name__
