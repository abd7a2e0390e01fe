import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armplan import arm
from oracles import PANDA_DH_ROWS, fk_chain_reference

GEOM = arm.load_arm()
LIM = GEOM.limits

# Oracle rows for the packaged arm: fixed pedestal + published joint rows.
ORACLE_ROWS = [(0.0, 0.12, 0.0, 0.0, False)] + PANDA_DH_ROWS

# Frozen from the elementary-transform chain oracle (tests/oracles.py).
EE_AT_ZERO = np.array([0.088, -1.310372075087668e-17, 1.046])
EE_AT_READY = np.array([0.30689056659294117, 0.0, 0.7102820523028393])
EE_AT_SAMPLE = np.array([0.2663544887811174, 0.25999072816646585, 0.9425879003752516])


class TestNormalize:
    def test_lower_bound_maps_to_minus_one(self):
        np.testing.assert_allclose(arm.normalize(LIM.lower, LIM), -np.ones(7))

    def test_upper_bound_maps_to_plus_one(self):
        np.testing.assert_allclose(arm.normalize(LIM.upper, LIM), np.ones(7))

    def test_midpoint_maps_to_zero(self):
        np.testing.assert_allclose(arm.normalize(LIM.midpoint, LIM), np.zeros(7), atol=1e-15)

    def test_out_of_limits_raises(self):
        c = LIM.upper.copy()
        c[2] += 1e-6
        with pytest.raises(arm.OutOfLimits):
            arm.normalize(c, LIM)

    def test_denormalize_midpoint(self):
        np.testing.assert_allclose(arm.denormalize(np.zeros(7), LIM), LIM.midpoint)

    def test_denormalize_upper(self):
        np.testing.assert_allclose(arm.denormalize(np.ones(7), LIM), LIM.upper)

    def test_denormalize_out_of_range_raises(self):
        s = np.zeros(7)
        s[0] = 1.0 + 1e-9
        with pytest.raises(arm.OutOfRange):
            arm.denormalize(s, LIM)

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        s = rng.uniform(-1.0, 1.0, size=(1000, 7))
        worst = 0.0
        for row in s:
            back = arm.normalize(arm.denormalize(row, LIM), LIM)
            worst = max(worst, float(np.abs(back - row).max()))
        assert worst < 1e-12

    @given(st.lists(st.floats(-1.0, 1.0), min_size=7, max_size=7))
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, vals):
        s = np.array(vals)
        back = arm.normalize(arm.denormalize(s, LIM), LIM)
        assert np.abs(back - s).max() < 1e-12


class TestClipAction:
    def test_oversized_action_scaled_to_bound(self):
        delta = np.full(7, 0.06 / np.sqrt(7))
        out = arm.clip_action(delta, 0.03)
        assert np.linalg.norm(out) == pytest.approx(0.03, abs=1e-15)
        # direction preserved
        cos = np.dot(out, delta) / (np.linalg.norm(out) * np.linalg.norm(delta))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_zero_unchanged(self):
        np.testing.assert_array_equal(arm.clip_action(np.zeros(7), 0.03), np.zeros(7))

    def test_inside_ball_unchanged(self):
        delta = np.full(7, 0.01 / np.sqrt(7))
        np.testing.assert_array_equal(arm.clip_action(delta, 0.03), delta)

    def test_idempotent_and_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            d = rng.normal(scale=0.1, size=7)
            once = arm.clip_action(d, 0.03)
            twice = arm.clip_action(once, 0.03)
            assert np.linalg.norm(once) <= 0.03 + 1e-12
            np.testing.assert_allclose(twice, once, rtol=1e-12, atol=0)

    def test_bad_bound_raises(self):
        with pytest.raises(ValueError):
            arm.clip_action(np.zeros(7), 0.0)


class TestForwardKinematics:
    def test_zero_configuration_matches_oracle(self):
        _, ee = arm.forward_kinematics(np.zeros(7), GEOM)
        np.testing.assert_allclose(ee, EE_AT_ZERO, atol=1e-12)

    def test_ready_pose_matches_oracle(self):
        _, ee = arm.forward_kinematics(GEOM.home, GEOM)
        np.testing.assert_allclose(ee, EE_AT_READY, atol=1e-12)

    def test_sample_configuration_matches_oracle(self):
        q = np.array([0.3, -0.6, 0.25, -1.8, 0.4, 1.9, 0.5])
        _, ee = arm.forward_kinematics(q, GEOM)
        np.testing.assert_allclose(ee, EE_AT_SAMPLE, atol=1e-12)

    def test_random_configurations_match_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            q = rng.uniform(LIM.lower, LIM.upper)
            _, ee = arm.forward_kinematics(q, GEOM)
            _, ee_ref = fk_chain_reference(q, ORACLE_ROWS)
            np.testing.assert_allclose(ee, ee_ref, atol=1e-12)

    def test_base_rotation_preserves_height(self):
        # joint 1 spins about the vertical axis
        q = GEOM.home.copy()
        _, ee0 = arm.forward_kinematics(q, GEOM)
        q[0] += np.pi / 2
        _, ee1 = arm.forward_kinematics(q, GEOM)
        assert ee1[2] == pytest.approx(ee0[2], abs=1e-12)
        assert np.linalg.norm(ee1[:2]) == pytest.approx(np.linalg.norm(ee0[:2]), abs=1e-12)

    def test_deterministic(self):
        q = np.array([0.1, -0.5, 0.2, -2.0, 0.3, 1.2, -0.4])
        poses_a, ee_a = arm.forward_kinematics(q, GEOM)
        poses_b, ee_b = arm.forward_kinematics(q, GEOM)
        assert (ee_a == ee_b).all()
        for pa, pb in zip(poses_a, poses_b):
            assert (pa == pb).all()

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        qs = rng.uniform(LIM.lower, LIM.upper, size=(20, 7))
        batch = arm.ee_position_batch(qs, GEOM)
        for q, ee in zip(qs, batch):
            np.testing.assert_allclose(arm.forward_kinematics(q, GEOM)[1], ee, atol=1e-13)

    def test_ee_lipschitz_smoke(self):
        # finite-difference per-joint sensitivity stays below the reach bound
        rng = np.random.default_rng(9)
        eps = 1e-6
        reach = 1.5  # generous bound on any lever arm, meters
        for _ in range(20):
            q = rng.uniform(LIM.lower, LIM.upper)
            _, ee = arm.forward_kinematics(q, GEOM)
            for i in range(7):
                qp = q.copy()
                qp[i] += eps
                _, eep = arm.forward_kinematics(qp, GEOM)
                assert np.linalg.norm(eep - ee) <= reach * eps


class TestArmFile:
    def test_limits_well_formed(self):
        assert (LIM.lower < LIM.upper).all()
        assert np.isfinite(LIM.lower).all() and np.isfinite(LIM.upper).all()

    def test_capsule_radii_positive(self):
        assert all(c.radius > 0 for c in GEOM.capsules)

    def test_self_pairs_not_adjacent(self):
        assert all(abs(i - j) >= 2 for i, j in GEOM.self_pairs)

    def test_seven_actuated_joints(self):
        assert GEOM.dh.shape == (7, 3)

    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "arm.txt"
        bad.write_text("schema_version 1\nwibble 3\n")
        with pytest.raises(arm.ArmFileError, match="wibble"):
            arm.load_arm(str(bad))

    def test_bad_schema_version_rejected(self, tmp_path):
        bad = tmp_path / "arm.txt"
        bad.write_text("schema_version 99\nname x\n")
        with pytest.raises(arm.ArmFileError, match="schema_version"):
            arm.load_arm(str(bad))
