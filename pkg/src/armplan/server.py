"""Line-delimited JSON protocol exposing episodes to external processes.

One connection owns one session (one episode engine); sessions share only
the immutable task registry and arm model.  Every request gets exactly one
response carrying a per-session monotonically increasing sequence number.
Numbers are serialized by Python's json module, whose float formatting is
the shortest round-trip representation, so decoded values equal the
in-process ones bit for bit.

The same semantics are available in-process through EnvSession, which the
wire layer wraps 1:1; equivalence between the two is part of the test
suite.
"""

from __future__ import annotations

import json
import logging
import socketserver
import threading

import numpy as np

from .arm import ACTION_BOUND, OutOfLimits, load_arm, normalize
from .engine import DEFAULT_HORIZON, Engine, EpisodeFinished, GoalSpec, GoalValue, InfeasibleQuery
from .sensors import LABEL_NAMES, SensorRig, default_rig, sense
from .tasks import (
    FIXED_TASKS,
    SAMPLER_TASKS,
    Infeasible,
    UnknownTask,
    get_task,
    realize_scene,
    sample_query,
    task_names,
)

log = logging.getLogger(__name__)

DEFAULT_ADDRESS = ("127.0.0.1", 7641)

PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def _vec(value, n, name) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ProtocolError("BAD_REQUEST", f"{name} must be a number list") from None
    if arr.shape != (n,):
        raise ProtocolError("BAD_DIM", f"{name} must have {n} elements, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ProtocolError("BAD_REQUEST", f"{name} must be finite")
    return arr


class EnvSession:
    """Protocol semantics as an in-process object.

    Methods take and return plain JSON-able dicts; the TCP layer only adds
    the envelope.  make() binds a task and a session RNG; each reset()
    starts a fresh episode (sampler tasks draw a fresh scene).
    """

    def __init__(self, arm=None):
        self.arm = arm or load_arm()
        self.task = None
        self.rng = None
        self.engine: Engine | None = None
        self.scene = None
        self.rig: SensorRig = default_rig()
        self.closed = False

    # -- request handlers ---------------------------------------------------

    def spec(self) -> dict:
        return {
            "protocol_version": PROTOCOL_VERSION,
            "action_bound": ACTION_BOUND,
            "horizon": DEFAULT_HORIZON,
            "goal_representations": ["ee", "config", "combined"],
            "default_goal": {
                "representation": GoalSpec().representation,
                "ee_tolerance": GoalSpec().ee_tolerance,
                "config_tolerance": GoalSpec().config_tolerance,
            },
            "tasks": [
                {"name": name, "kind": "fixed" if name in FIXED_TASKS else "sampler"}
                for name in task_names()
            ],
        }

    def make(self, task: str, seed: int, goal_representation: str | None = None,
             rays_per_sensor: int | None = None) -> dict:
        goal_spec = GoalSpec(representation=goal_representation) if goal_representation else None
        try:
            self.task = get_task(str(task), goal_spec=goal_spec)
        except UnknownTask:
            raise ProtocolError("UNKNOWN_TASK", f"no task named {task!r}") from None
        except ValueError as exc:
            raise ProtocolError("BAD_REQUEST", str(exc)) from None
        self.rng = np.random.default_rng(int(seed))
        self.engine = None
        self.scene = None
        if rays_per_sensor is not None:
            self.rig = default_rig(rays_per_sensor=int(rays_per_sensor))
        return {"task": self.task.name, "seed": int(seed)}

    def _require_task(self):
        if self.task is None:
            raise ProtocolError("NO_SESSION", "call make before reset/step")

    def _require_engine(self) -> Engine:
        self._require_task()
        if self.engine is None:
            raise ProtocolError("NOT_RESET", "call reset before step/sense")
        return self.engine

    def reset(self) -> dict:
        self._require_task()
        self.scene = realize_scene(self.task, self.rng, arm=self.arm)
        try:
            query = sample_query(self.scene, self.rng, margin=self.task.collision_margin)
        except Infeasible as exc:
            raise ProtocolError("INFEASIBLE", str(exc)) from None
        self.engine = Engine(self.scene, self.task)
        self.engine.reset(query)
        return self._state_dict()

    def reset_specific(self, config, goal_config=None, goal_ee=None) -> dict:
        self._require_task()
        c = _vec(config, 7, "config")
        if self.scene is None:
            self.scene = realize_scene(self.task, self.rng, arm=self.arm)
            self.engine = Engine(self.scene, self.task)
        goal = None
        if goal_config is not None or goal_ee is not None:
            goal = GoalValue(
                config_target=(
                    normalize(_vec(goal_config, 7, "goal_config"), self.arm.limits)
                    if goal_config is not None
                    else None
                ),
                ee_target=_vec(goal_ee, 3, "goal_ee") if goal_ee is not None else None,
            )
        try:
            self.engine.reset_specific(c, goal=goal)
        except OutOfLimits as exc:
            raise ProtocolError("OUT_OF_LIMITS", str(exc)) from None
        return self._state_dict()

    def step(self, action, mode: str = "relative") -> dict:
        engine = self._require_engine()
        act = _vec(action, 7, "action")
        if mode not in (Engine.RELATIVE, Engine.SUBGOAL):
            raise ProtocolError("BAD_REQUEST", f"unknown step mode {mode!r}")
        try:
            tr = engine.step(act, mode=mode)
        except EpisodeFinished as exc:
            raise ProtocolError("EPISODE_FINISHED", str(exc)) from None
        return {
            "state": self._state_dict()["state"],
            "cost": tr.cost,
            "done": tr.done,
            "success": tr.success,
            "collided": tr.collided,
            "t": tr.t,
        }

    def sense(self) -> dict:
        engine = self._require_engine()
        from .arm import denormalize

        c = denormalize(engine.state.s, self.arm.limits)
        cloud = sense(self.scene, c, self.rig)
        return {
            "points": cloud.points.tolist(),
            "labels": [LABEL_NAMES[k] for k in cloud.labels],
            "sensors": cloud.sensors.tolist(),
        }

    def close(self) -> dict:
        self.closed = True
        return {"closed": True}

    # -- helpers --------------------------------------------------------------

    def _state_dict(self) -> dict:
        engine = self.engine
        st = engine.state
        goal = engine.goal
        from .arm import denormalize

        return {
            "state": {
                "s": st.s.tolist(),
                "config": denormalize(st.s, self.arm.limits).tolist(),
                "ee": st.ee.tolist(),
                "velocity_proxy": st.velocity_proxy.tolist(),
                "absorbed": st.absorbed,
                "t": engine.t,
                "done": engine.done,
                "success": engine.success,
                "goal": {
                    "config_target": None if goal is None or goal.config_target is None
                    else goal.config_target.tolist(),
                    "ee_target": None if goal is None or goal.ee_target is None
                    else goal.ee_target.tolist(),
                },
            }
        }

    # -- dispatch ---------------------------------------------------------------

    HANDLERS = {
        "spec": "spec",
        "make": "make",
        "reset": "reset",
        "reset_specific": "reset_specific",
        "step": "step",
        "sense": "sense",
        "close": "close",
    }

    def handle(self, request: dict) -> dict:
        if not isinstance(request, dict) or "op" not in request:
            raise ProtocolError("BAD_REQUEST", "request must be an object with an 'op' field")
        op = request["op"]
        if op not in self.HANDLERS:
            raise ProtocolError("BAD_REQUEST", f"unknown op {op!r}")
        kwargs = {k: v for k, v in request.items() if k != "op"}
        try:
            return getattr(self, self.HANDLERS[op])(**kwargs)
        except ProtocolError:
            raise
        except TypeError as exc:
            raise ProtocolError("BAD_REQUEST", str(exc)) from None
        except InfeasibleQuery as exc:
            raise ProtocolError("INFEASIBLE", str(exc)) from None


class _SessionHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: EnvServer = self.server  # type: ignore[assignment]
        if not server.session_slots.acquire(blocking=False):
            self._send(0, error=ProtocolError("BUSY", "session limit reached"))
            return
        try:
            session = EnvSession(arm=server.arm)
            seq = 0
            for raw in self.rfile:
                seq += 1
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    seq -= 1
                    continue
                try:
                    request = json.loads(line)
                except json.JSONDecodeError as exc:
                    self._send(seq, error=ProtocolError("BAD_JSON", str(exc)))
                    continue
                try:
                    result = session.handle(request)
                except ProtocolError as exc:
                    self._send(seq, error=exc)
                    continue
                except Exception as exc:  # session survives internal errors
                    log.exception("internal error handling %r", request.get("op"))
                    self._send(seq, error=ProtocolError("INTERNAL", repr(exc)))
                    continue
                self._send(seq, result=result)
                if session.closed:
                    break
        finally:
            server.session_slots.release()

    def _send(self, seq: int, result=None, error: ProtocolError | None = None):
        if error is not None:
            payload = {"seq": seq, "ok": False, "error": {"code": error.code, "message": error.message}}
        else:
            payload = {"seq": seq, "ok": True, "result": result}
        try:
            self.wfile.write(json.dumps(payload).encode("utf-8") + b"\n")
        except (BrokenPipeError, ConnectionResetError):
            pass


class EnvServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address=DEFAULT_ADDRESS, max_sessions: int = 32, arm=None):
        self.arm = arm or load_arm()
        self.session_slots = threading.Semaphore(max_sessions)
        super().__init__(tuple(address), _SessionHandler)


def serve(address=DEFAULT_ADDRESS, max_sessions: int = 32) -> None:
    """Serve sessions until interrupted."""
    with EnvServer(address=address, max_sessions=max_sessions) as server:
        host, port = server.server_address
        log.info("serving on %s:%d", host, port)
        server.serve_forever()
