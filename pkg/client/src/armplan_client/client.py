"""Thin episodic-environment client for the armplan line protocol.

Speaks newline-delimited JSON over a TCP socket (see PROTOCOL.md in the
simulator repository).  Values decode to exactly the server's doubles: both
ends rely on shortest-round-trip float formatting.  One client per
connection; instances are not thread-safe.
"""

from __future__ import annotations

import json
import socket

DEFAULT_ADDRESS = ("127.0.0.1", 7641)


class ProtocolError(RuntimeError):
    """Server answered with an error envelope."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ConnectionLost(ConnectionError):
    """Socket closed or broke mid-exchange."""


class RemoteEnv:
    """Remote episode session with reset/step semantics.

    Life cycle: connect -> make(task, seed) -> reset() -> step()... ->
    close().  Methods raise ProtocolError when the server rejects a request
    and ConnectionLost when the transport dies.
    """

    def __init__(self, address=DEFAULT_ADDRESS, timeout: float = 60.0):
        try:
            self._sock = socket.create_connection(tuple(address), timeout=timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot connect to {address}: {exc}") from None
        self._file = self._sock.makefile("rwb")
        self._seq = 0
        self._spec_cache = None
        self.last_state = None

    # -- plumbing -------------------------------------------------------------

    def _call(self, op: str, **fields):
        request = {"op": op, **fields}
        try:
            self._file.write(json.dumps(request).encode("utf-8") + b"\n")
            self._file.flush()
            line = self._file.readline()
        except OSError as exc:
            raise ConnectionLost(str(exc)) from None
        if not line:
            raise ConnectionLost("server closed the connection")
        reply = json.loads(line)
        self._seq += 1
        if reply.get("seq") != self._seq:
            raise ProtocolError("BAD_SEQ", f"expected seq {self._seq}, got {reply.get('seq')}")
        if not reply.get("ok"):
            err = reply.get("error", {})
            raise ProtocolError(err.get("code", "UNKNOWN"), err.get("message", ""))
        return reply["result"]

    # -- protocol operations ----------------------------------------------------

    def spec(self) -> dict:
        if self._spec_cache is None:
            self._spec_cache = self._call("spec")
        return self._spec_cache

    def make(self, task: str, seed: int, goal_representation: str | None = None,
             rays_per_sensor: int | None = None) -> dict:
        fields = {"task": task, "seed": seed}
        if goal_representation is not None:
            fields["goal_representation"] = goal_representation
        if rays_per_sensor is not None:
            fields["rays_per_sensor"] = rays_per_sensor
        return self._call("make", **fields)

    def reset(self) -> dict:
        result = self._call("reset")
        self.last_state = result["state"]
        return result["state"]

    def reset_specific(self, config, goal_config=None, goal_ee=None) -> dict:
        fields = {"config": list(config)}
        if goal_config is not None:
            fields["goal_config"] = list(goal_config)
        if goal_ee is not None:
            fields["goal_ee"] = list(goal_ee)
        result = self._call("reset_specific", **fields)
        self.last_state = result["state"]
        return result["state"]

    def step(self, action, mode: str = "relative") -> dict:
        result = self._call("step", action=list(action), mode=mode)
        self.last_state = result["state"]
        return result

    def sense(self) -> dict:
        return self._call("sense")

    def close(self) -> None:
        try:
            self._call("close")
        except (ProtocolError, ConnectionLost):
            pass
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect(address=DEFAULT_ADDRESS, timeout: float = 60.0) -> RemoteEnv:
    return RemoteEnv(address=address, timeout=timeout)
