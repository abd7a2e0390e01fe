import json
import socket
import threading

import numpy as np
import pytest

from armplan import server as srv
from armplan.engine import GoalSpec
from armplan.learn import go_to_goal


@pytest.fixture(scope="module")
def live_server():
    s = srv.EnvServer(address=("127.0.0.1", 0), max_sessions=4)
    thread = threading.Thread(target=s.serve_forever, daemon=True)
    thread.start()
    yield s.server_address
    s.shutdown()
    s.server_close()


class WireClient:
    """Raw line-protocol client used only by these tests."""

    def __init__(self, address):
        self.sock = socket.create_connection(address)
        self.file = self.sock.makefile("rwb")

    def call(self, **request):
        self.file.write(json.dumps(request).encode() + b"\n")
        self.file.flush()
        reply = json.loads(self.file.readline())
        return reply

    def result(self, **request):
        reply = self.call(**request)
        assert reply["ok"], reply
        return reply["result"]

    def close(self):
        self.sock.close()


class TestEnvSession:
    def test_spec_contents(self):
        sess = srv.EnvSession()
        spec = sess.spec()
        assert spec["action_bound"] == 0.03
        assert spec["horizon"] == 400
        names = {t["name"] for t in spec["tasks"]}
        assert "no_obstacles" in names and "random_boxes_hard" in names
        assert spec["default_goal"]["ee_tolerance"] == 0.02
        assert spec["default_goal"]["config_tolerance"] == 0.05

    def test_reset_before_make_rejected(self):
        sess = srv.EnvSession()
        with pytest.raises(srv.ProtocolError) as err:
            sess.reset()
        assert err.value.code == "NO_SESSION"

    def test_step_before_reset_rejected(self):
        sess = srv.EnvSession()
        sess.make("no_obstacles", 0)
        with pytest.raises(srv.ProtocolError) as err:
            sess.step([0] * 7)
        assert err.value.code == "NOT_RESET"

    def test_bad_action_dimension(self):
        sess = srv.EnvSession()
        sess.make("no_obstacles", 0)
        sess.reset()
        with pytest.raises(srv.ProtocolError) as err:
            sess.step([0] * 6)
        assert err.value.code == "BAD_DIM"

    def test_unknown_task(self):
        sess = srv.EnvSession()
        with pytest.raises(srv.ProtocolError) as err:
            sess.make("flying_carpet", 0)
        assert err.value.code == "UNKNOWN_TASK"

    def test_reset_deterministic_per_seed(self):
        a = srv.EnvSession()
        a.make("random_boxes_easy", 123)
        b = srv.EnvSession()
        b.make("random_boxes_easy", 123)
        assert a.reset() == b.reset()

    def test_reset_specific_and_goal(self):
        sess = srv.EnvSession()
        sess.make("no_obstacles", 0)
        home = sess.arm.home.tolist()
        state = sess.reset_specific(home, goal_config=home)["state"]
        assert state["done"] and state["success"]  # at its own goal

    def test_reset_specific_out_of_limits(self):
        sess = srv.EnvSession()
        sess.make("no_obstacles", 0)
        bad = sess.arm.limits.upper.copy()
        bad[0] += 0.1
        with pytest.raises(srv.ProtocolError) as err:
            sess.reset_specific(bad.tolist())
        assert err.value.code == "OUT_OF_LIMITS"

    def test_sense_returns_labeled_points(self):
        sess = srv.EnvSession()
        sess.make("boxes", 0, rays_per_sensor=200)
        sess.reset()
        cloud = sess.sense()
        assert len(cloud["points"]) == len(cloud["labels"]) == len(cloud["sensors"])
        assert set(cloud["labels"]) <= {"robot", "static", "varying"}


class TestWireProtocol:
    def test_sequence_numbers_monotonic(self, live_server):
        c = WireClient(live_server)
        seqs = [c.call(op="spec")["seq"] for _ in range(3)]
        assert seqs == [1, 2, 3]
        c.close()

    def test_malformed_json_keeps_session_alive(self, live_server):
        c = WireClient(live_server)
        c.file.write(b"this is not json\n")
        c.file.flush()
        reply = json.loads(c.file.readline())
        assert not reply["ok"] and reply["error"]["code"] == "BAD_JSON"
        assert c.call(op="spec")["ok"]
        c.close()

    def test_bad_dim_error_session_alive(self, live_server):
        c = WireClient(live_server)
        c.result(op="make", task="no_obstacles", seed=5)
        c.result(op="reset")
        reply = c.call(op="step", action=[0.0] * 6)
        assert not reply["ok"] and reply["error"]["code"] == "BAD_DIM"
        out = c.result(op="step", action=[0.0] * 7, mode="relative")
        assert out["t"] == 1
        c.close()

    def test_wire_equivalence_with_in_process(self, live_server):
        seed = 77
        sess = srv.EnvSession()
        sess.make("no_obstacles", seed)
        local_state = sess.reset()["state"]

        c = WireClient(live_server)
        c.result(op="make", task="no_obstacles", seed=seed)
        wire_state = c.result(op="reset")["state"]
        assert wire_state == local_state  # field-for-field, full precision

        rng = np.random.default_rng(3)
        for _ in range(30):
            action = rng.normal(scale=0.05, size=7).tolist()
            local = sess.step(action)
            wire = c.result(op="step", action=action)
            assert wire == local
            if local["done"]:
                break
        c.close()

    def test_crash_isolation_between_sessions(self, live_server):
        a = WireClient(live_server)
        b = WireClient(live_server)
        a.result(op="make", task="no_obstacles", seed=1)
        b.result(op="make", task="no_obstacles", seed=2)
        a.result(op="reset")
        b.result(op="reset")
        bad = a.call(op="step", action="garbage")
        assert not bad["ok"]
        out = b.result(op="step", action=[0.0] * 7)
        assert out["t"] == 1
        a.close()
        b.close()

    def test_goal_conditioned_rollout_over_wire(self, live_server):
        # drive to the goal with the straight-line policy entirely over the wire
        c = WireClient(live_server)
        c.result(op="make", task="no_obstacles", seed=11)
        state = c.result(op="reset")["state"]
        target = state["goal"]["config_target"]
        assert target is not None
        done = state["done"]
        t = 0
        while not done and t < 400:
            s = np.array(state["s"])
            action = (np.array(target) - s).tolist()
            out = c.result(op="step", action=action)
            state = out["state"]
            done = out["done"]
            t = out["t"]
        assert done
        c.close()
