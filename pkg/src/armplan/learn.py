"""Replay machinery, behavioral cloning, and the go-to-goal baseline.

The replay buffer ingests transitions from three sources (environment
rollouts, hindsight relabels, injected planner demonstrations) and keeps
per-source counters.  The BC trainer is a self-contained numpy MLP trained
with momentum SGD on mean squared action error; its analytic gradients are
checked against finite differences in the test suite.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .arm import ACTION_BOUND, clip_action, denormalize_batch, ee_position_batch, load_arm
from .engine import (
    COMBINED,
    CONFIG,
    EE,
    GoalSpec,
    GoalValue,
    MissingGoalField,
    State,
    Transition,
    goal_reached,
)
from .planner import Demonstration

log = logging.getLogger(__name__)

POLICY_SCHEMA_VERSION = 1

ENV = "env"
HINDSIGHT = "hindsight"
DEMO = "demo"
SOURCES = (ENV, HINDSIGHT, DEMO)


class EmptyEpisode(ValueError):
    pass


class MissingConfigGoal(ValueError):
    """go-to-goal requires the goal configuration, as in its defining paper use."""


class DimensionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# Replay buffer
# ---------------------------------------------------------------------------

class ReplayBuffer:
    """Ring buffer of transitions with per-source bookkeeping.

    Thread-safe for concurrent appenders; sampling serializes briefly on the
    same lock.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._sources: list[str] = []
        self._next = 0
        self._counts = {s: 0 for s in SOURCES}
        self._lock = threading.Lock()

    def add(self, transition: Transition, source: str = ENV) -> None:
        if source not in SOURCES:
            raise ValueError(f"unknown source {source!r}")
        with self._lock:
            if len(self._items) < self.capacity:
                self._items.append(transition)
                self._sources.append(source)
            else:
                self._counts[self._sources[self._next]] -= 1
                self._items[self._next] = transition
                self._sources[self._next] = source
                self._next = (self._next + 1) % self.capacity
            self._counts[source] += 1

    def extend(self, transitions, source: str = ENV) -> int:
        n = 0
        for tr in transitions:
            self.add(tr, source)
            n += 1
        return n

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        with self._lock:
            if not self._items:
                raise EmptyEpisode("buffer is empty")
            idx = rng.integers(0, len(self._items), size=batch_size)
            return [self._items[i] for i in idx]

    @property
    def counts(self) -> dict:
        with self._lock:
            return dict(self._counts)

    def __len__(self) -> int:
        with self._lock:
            return len(self._items)


# ---------------------------------------------------------------------------
# Hindsight relabeling
# ---------------------------------------------------------------------------

def her_relabel(
    episode,
    p_her: float,
    goal_spec: GoalSpec,
    rng: np.random.Generator,
    strategy: str = "final",
    keep_original: bool = True,
):
    """Original transitions plus, with probability p_her, a relabeled copy.

    The imagined goal is the one achieved by the episode's final state, so
    the final transition becomes the single zero-cost terminal and every
    earlier transition keeps cost -1.  (Re-running the goal predicate per
    transition would mark several zero costs: with the action bound below
    the goal tolerance the penultimate state always sits inside the imagined
    goal ball.)
    """
    if strategy != "final":
        raise ValueError(f"unsupported hindsight strategy {strategy!r}")
    episode = list(episode)
    if not episode:
        raise EmptyEpisode("cannot relabel an empty episode")
    out = episode.copy() if keep_original else []
    if rng.random() >= p_her:
        return out
    imagined = GoalValue.from_state(episode[-1].next_state, goal_spec)
    assert goal_reached(episode[-1].next_state, imagined, goal_spec)
    last = len(episode) - 1
    for k, tr in enumerate(episode):
        terminal = k == last
        out.append(
            replace(
                tr,
                goal=imagined,
                cost=0.0 if terminal else -1.0,
                done=terminal,
                success=terminal,
            )
        )
    return out


# ---------------------------------------------------------------------------
# Demonstration injection
# ---------------------------------------------------------------------------

def demo_to_transitions(demo: Demonstration, goal_spec: GoalSpec, arm=None) -> list[Transition]:
    """Expand a verified demonstration into sparse-cost transitions."""
    arm = arm or load_arm()
    states_s = np.stack(demo.states)
    configs = denormalize_batch(states_s, arm.limits)
    ees = ee_position_batch(configs, arm)
    goal = GoalValue.from_query(demo.query, goal_spec, arm.limits)
    states = []
    for k in range(len(demo.states)):
        vel = demo.actions[k - 1] if k > 0 else np.zeros(7)
        states.append(State(s=states_s[k], velocity_proxy=np.asarray(vel), ee=ees[k]))
    n = len(demo.actions)
    out = []
    for k in range(n):
        last = k == n - 1
        out.append(
            Transition(
                state=states[k],
                action=np.asarray(demo.actions[k]),
                next_state=states[k + 1],
                cost=0.0 if last else -1.0,
                done=last,
                goal=goal,
                success=last,
                collided=False,
                t=k + 1,
            )
        )
    return out


class DemoIndex:
    """Maps queries to pre-collected demonstrations.

    Exact query matches are preferred; otherwise the demo with the nearest
    start in normalized space is used (precomputing demos for every possible
    start is not feasible verbatim).
    """

    def __init__(self, demos, arm=None):
        self.arm = arm or load_arm()
        self.demos = list(demos)
        self._exact = {}
        starts = []
        for i, d in enumerate(self.demos):
            key = (d.query.start.tobytes(), d.query.goal_config.tobytes())
            self._exact[key] = i
            starts.append(d.states[0])
        self._starts = np.stack(starts) if starts else np.zeros((0, 7))

    def __len__(self):
        return len(self.demos)

    def lookup(self, query) -> Demonstration | None:
        if not self.demos:
            return None
        key = (
            np.asarray(query.start, dtype=float).tobytes(),
            np.asarray(query.goal_config, dtype=float).tobytes(),
        )
        if key in self._exact:
            return self.demos[self._exact[key]]
        from .arm import normalize

        s = normalize(np.asarray(query.start, dtype=float), self.arm.limits)
        diff = self._starts - s
        return self.demos[int(np.argmin(np.einsum("ij,ij->i", diff, diff)))]


def inject_demo(
    buffer: ReplayBuffer,
    failed_query,
    p: float,
    demo_index: DemoIndex,
    goal_spec: GoalSpec,
    rng: np.random.Generator,
) -> int:
    """On failure, append a matched demonstration with probability p.

    Returns the number of transitions appended (0 when the draw says no or
    no demonstration is available; the latter is logged, not fatal).
    """
    if rng.random() >= p:
        return 0
    demo = demo_index.lookup(failed_query)
    if demo is None:
        log.warning("no demonstration available for injection")
        return 0
    return buffer.extend(demo_to_transitions(demo, goal_spec, arm=demo_index.arm), source=DEMO)


# ---------------------------------------------------------------------------
# Goal-representation inputs
# ---------------------------------------------------------------------------

def goal_input(state: State, goal: GoalValue, spec: GoalSpec) -> np.ndarray:
    """Flattened (state, goal) vector for the active goal representation."""
    if spec.representation == CONFIG:
        if goal.config_target is None:
            raise MissingGoalField("config representation needs config_target")
        return np.concatenate([state.s, goal.config_target])
    if spec.representation == EE:
        if goal.ee_target is None:
            raise MissingGoalField("ee representation needs ee_target")
        return np.concatenate([state.s, state.ee, goal.ee_target])
    if goal.config_target is None or goal.ee_target is None:
        raise MissingGoalField("combined representation needs both goal fields")
    return np.concatenate([state.s, state.ee, goal.config_target, goal.ee_target])


def goal_input_dim(spec: GoalSpec) -> int:
    return {CONFIG: 14, EE: 13, COMBINED: 20}[spec.representation]


# ---------------------------------------------------------------------------
# MLP policy
# ---------------------------------------------------------------------------

class MlpPolicy:
    """Feed-forward policy: tanh hidden layers, tanh output scaled to the
    action bound.  All math in float64 numpy."""

    def __init__(self, goal_spec: GoalSpec, hidden=(256, 256), action_bound: float = ACTION_BOUND, seed: int = 0):
        self.goal_spec = goal_spec
        self.widths = [goal_input_dim(goal_spec), *hidden, 7]
        self.action_bound = float(action_bound)
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- forward / gradients --------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.widths[0]:
            raise DimensionMismatch(f"input dim {x.shape[1]} != {self.widths[0]}")
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
        return self.action_bound * np.tanh(h @ self.weights[-1] + self.biases[-1])

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean squared action error and its gradients w.r.t. all parameters."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        n = x.shape[0]
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ w + b)
            acts.append(h)
        out_t = np.tanh(acts[-1] @ self.weights[-1] + self.biases[-1])
        pred = self.action_bound * out_t
        diff = pred - y
        loss = float((diff * diff).mean())
        # d loss / d pred, flattened mean over batch and the 7 action dims
        g = (2.0 / diff.size) * diff
        delta = g * self.action_bound * (1.0 - out_t * out_t)
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = acts[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * (1.0 - acts[layer] * acts[layer])
        return loss, grads_w, grads_b

    # -- parameter vector helpers ---------------------------------------------

    def get_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        k = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[k : k + w.size].reshape(w.shape).copy()
            k += w.size
            self.biases[i] = flat[k : k + b.size].copy()
            k += b.size
        if k != flat.size:
            raise DimensionMismatch(f"flat vector has {flat.size} values, expected {k}")

    # -- acting ----------------------------------------------------------------

    def act(self, state: State, goal: GoalValue) -> np.ndarray:
        x = goal_input(state, goal, self.goal_spec)
        return self.forward(x[None, :])[0]

    __call__ = act

    # -- checkpoints -------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        lines = [
            "# armplan policy checkpoint",
            f"schema_version {POLICY_SCHEMA_VERSION}",
            f"goal_representation {self.goal_spec.representation}",
            f"ee_tolerance {self.goal_spec.ee_tolerance!r}",
            f"config_tolerance {self.goal_spec.config_tolerance!r}",
            f"action_bound {self.action_bound!r}",
            "widths " + " ".join(str(w) for w in self.widths),
        ]
        for key, val in (metadata or {}).items():
            lines.append(f"meta {key} {val}")
        flat = self.get_flat()
        lines.append(f"params {flat.size}")
        for chunk in np.array_split(flat, max(1, flat.size // 512)):
            lines.append("p " + " ".join(repr(float(v)) for v in chunk))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MlpPolicy":
        meta: dict = {}
        values: list[float] = []
        widths = None
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, *tok = line.split()
            if key == "p":
                values.extend(float(t) for t in tok)
            elif key == "widths":
                widths = [int(t) for t in tok]
            elif key == "schema_version":
                if int(tok[0]) != POLICY_SCHEMA_VERSION:
                    raise ValueError(f"unsupported policy schema_version {tok[0]}")
            elif key == "meta":
                meta[tok[0]] = " ".join(tok[1:])
            else:
                meta[key] = tok[0]
        spec = GoalSpec(
            representation=meta["goal_representation"],
            ee_tolerance=float(meta["ee_tolerance"]),
            config_tolerance=float(meta["config_tolerance"]),
        )
        policy = cls(spec, hidden=tuple(widths[1:-1]), action_bound=float(meta["action_bound"]))
        policy.set_flat(np.array(values))
        return policy


# ---------------------------------------------------------------------------
# Behavioral cloning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BcHyper:
    batch_size: int = 256
    steps: int = 20_000
    learning_rate: float = 20.0
    momentum: float = 0.9
    seed: int = 0


@dataclass
class TrainResult:
    policy: MlpPolicy
    losses: np.ndarray
    wall_time_s: float = 0.0

    def smoothed(self, window: int = 10) -> np.ndarray:
        kernel = np.ones(window) / window
        return np.convolve(self.losses, kernel, mode="valid")


def demos_to_dataset(demos, goal_spec: GoalSpec, arm=None):
    """(inputs, targets) arrays over every demonstrated step."""
    arm = arm or load_arm()
    xs, ys = [], []
    for demo in demos:
        goal = GoalValue.from_query(demo.query, goal_spec, arm.limits)
        states_s = np.stack(demo.states[:-1])
        if goal_spec.representation == CONFIG:
            g = np.tile(goal.config_target, (len(states_s), 1))
            xs.append(np.hstack([states_s, g]))
        else:
            configs = denormalize_batch(states_s, arm.limits)
            ees = ee_position_batch(configs, arm)
            cols = [states_s, ees]
            if goal_spec.representation == COMBINED:
                cols.append(np.tile(goal.config_target, (len(states_s), 1)))
            cols.append(np.tile(goal.ee_target, (len(states_s), 1)))
            xs.append(np.hstack(cols))
        ys.append(np.stack(demo.actions))
    if not xs:
        raise EmptyEpisode("no demonstrations to train on")
    return np.vstack(xs), np.vstack(ys)


def bc_train(
    demos,
    goal_spec: GoalSpec,
    net: MlpPolicy | None = None,
    hyper: BcHyper = BcHyper(),
    arm=None,
) -> TrainResult:
    """Momentum SGD on mean squared action error; deterministic given seed.

    The learning rate is halved at each third of training.
    """
    x, y = demos_to_dataset(demos, goal_spec, arm=arm)
    net = net or MlpPolicy(goal_spec, seed=hyper.seed)
    if x.shape[1] != net.widths[0]:
        raise DimensionMismatch(f"dataset dim {x.shape[1]} != policy input {net.widths[0]}")
    rng = np.random.default_rng(hyper.seed)
    vel_w = [np.zeros_like(w) for w in net.weights]
    vel_b = [np.zeros_like(b) for b in net.biases]
    losses = np.empty(hyper.steps)
    t0 = time.perf_counter()
    third = max(1, hyper.steps // 3)
    for step in range(hyper.steps):
        lr = hyper.learning_rate * (0.5 ** (step // third))
        idx = rng.integers(0, x.shape[0], size=hyper.batch_size)
        loss, gw, gb = net.loss_and_grads(x[idx], y[idx])
        for i in range(len(net.weights)):
            vel_w[i] = hyper.momentum * vel_w[i] - lr * gw[i]
            vel_b[i] = hyper.momentum * vel_b[i] - lr * gb[i]
            net.weights[i] += vel_w[i]
            net.biases[i] += vel_b[i]
        losses[step] = loss
    return TrainResult(policy=net, losses=losses, wall_time_s=time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Go-to-goal baseline
# ---------------------------------------------------------------------------

def go_to_goal(state: State, goal: GoalValue, a_max: float = ACTION_BOUND) -> np.ndarray:
    """Straight toward the goal configuration, ignoring obstacles."""
    if goal is None or goal.config_target is None:
        raise MissingConfigGoal("go-to-goal requires a config goal")
    return clip_action(goal.config_target - state.s, a_max)
