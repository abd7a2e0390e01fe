"""Client test suite: wire equivalence against the in-process engine.

These tests need the simulator package (armplan) installed from the repo
root; the server runs in-thread on an ephemeral port.
"""

import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from armplan import arm as arm_mod
from armplan import server as srv
from armplan_client import ConnectionLost, ProtocolError, RemoteEnv, connect

GEOM = arm_mod.load_arm()


@pytest.fixture(scope="module")
def address():
    server = srv.EnvServer(address=("127.0.0.1", 0), max_sessions=8)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server.server_address
    server.shutdown()
    server.server_close()


class TestSessionLifecycle:
    def test_spec_cached(self, address):
        with connect(address) as env:
            spec = env.spec()
            assert spec["action_bound"] == 0.03
            assert env.spec() is spec

    def test_step_before_reset_raises(self, address):
        with connect(address) as env:
            env.make("no_obstacles", 0)
            with pytest.raises(ProtocolError) as err:
                env.step([0.0] * 7)
            assert err.value.code == "NOT_RESET"

    def test_unknown_task(self, address):
        with connect(address) as env:
            with pytest.raises(ProtocolError) as err:
                env.make("warp_drive", 0)
            assert err.value.code == "UNKNOWN_TASK"

    def test_connect_refused(self):
        with pytest.raises(ConnectionLost):
            RemoteEnv(("127.0.0.1", 1), timeout=0.5)

    def test_full_episode_under_two_seconds(self, address):
        with connect(address) as env:
            env.make("no_obstacles", 3)
            env.reset()
            t0 = time.perf_counter()
            done = False
            steps = 0
            while not done and steps < 400:
                out = env.step([0.0] * 7)
                done = out["done"]
                steps = out["t"]
            elapsed = time.perf_counter() - t0
        assert steps == 400
        assert elapsed < 2.0


class TestWireEquivalence:
    def test_rollout_matches_in_process_bitwise(self, address):
        seed = 20260810
        local = srv.EnvSession()
        local.make("random_boxes_easy", seed)
        with connect(address) as env:
            env.make("random_boxes_easy", seed)
            assert env.reset() == local.reset()["state"]
            rng = np.random.default_rng(1)
            for _ in range(50):
                action = rng.normal(scale=0.04, size=7).tolist()
                wire = env.step(action)
                assert wire == local.step(action)
                if wire["done"]:
                    break

    def test_hundred_query_go_to_goal_equivalence(self, address):
        # success-by-success equality between the wire and in-process runs
        seed = 424242
        outcomes_wire = []
        outcomes_local = []

        def rollout(step_fn, reset_fn):
            state = reset_fn()
            done = state["done"]
            while not done:
                target = np.asarray(state["goal"]["config_target"])
                action = (target - np.asarray(state["s"])).tolist()
                out = step_fn(action)
                state = out["state"]
                done = out["done"]
            return state["success"]

        local = srv.EnvSession()
        local.make("no_obstacles", seed)
        with connect(address) as env:
            env.make("no_obstacles", seed)
            for _ in range(100):
                outcomes_wire.append(rollout(env.step, env.reset))
                outcomes_local.append(
                    rollout(local.step, lambda: local.reset()["state"])
                )
        assert outcomes_wire == outcomes_local
        assert 0.9 <= np.mean(outcomes_wire) <= 1.0


class TestNumericRoundTrip:
    @given(
        st.lists(st.floats(-1.0, 1.0, allow_nan=False), min_size=7, max_size=7),
    )
    @settings(max_examples=30, deadline=None)
    def test_configuration_round_trips_at_full_precision(self, address, unit):
        lim = GEOM.limits
        config = (lim.lower + (np.asarray(unit) + 1.0) / 2.0 * (lim.upper - lim.lower)).tolist()
        local = srv.EnvSession()
        local.make("no_obstacles", 0)
        expected = local.reset_specific(config)["state"]
        with connect(address) as env:
            env.make("no_obstacles", 0)
            got = env.reset_specific(config)
        assert got == expected
        # decoded doubles are the server's values bit for bit
        assert got["config"] == expected["config"]
        assert got["s"] == expected["s"]
        assert got["ee"] == expected["ee"]

    def test_action_floats_round_trip(self, address):
        rng = np.random.default_rng(7)
        local = srv.EnvSession()
        local.make("no_obstacles", 5)
        local.reset()
        with connect(address) as env:
            env.make("no_obstacles", 5)
            env.reset()
            for _ in range(20):
                action = rng.normal(scale=0.03, size=7).tolist()
                assert env.step(action) == local.step(action)


class TestExampleLoop:
    def test_example_training_loop_runs(self, address, tmp_path):
        from armplan import planner, tasks
        from armplan_client import example_train

        task = tasks.get_task("no_obstacles")
        demos, _ = planner.collect_demos(task, 3, np.random.default_rng(0))
        demo_file = tmp_path / "demos.txt"
        planner.save_demos(demo_file, demos, task)

        stats = example_train.run(
            task="no_obstacles",
            address=address,
            demos_path=str(demo_file),
            episodes=3,
            p_her=1.0,
            p_inject=1.0,
            seed=0,
        )
        assert stats["episodes"] == 3
        assert stats["buffer_size"] > 0
        assert stats["relabeled"] >= 1
        assert stats["train_batches"] > 0
