"""Goal-conditioned episode engine.

One engine instance owns one episode at a time and is mutated only by its
own reset/step calls; any number of engines may share an immutable Scene.

Step semantics: the commanded displacement is clipped to the action bound,
the target clamped into [-1, 1]^7, and the arm teleports there only if the
swept edge is collision-free at the engine's check resolution.  A blocked
step leaves the arm in place (the kinematic stand-in for a position
controller pressing against contact) and is flagged in the transition.
Cost is 0 on the step that first reaches the goal and -1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arm import (
    ACTION_BOUND,
    OutOfLimits,
    clip_action,
    denormalize,
    ee_position,
    normalize,
)
from .geometry import DEFAULT_EDGE_STEP, Scene, edge_collision_free, is_collision

EE = "ee"
CONFIG = "config"
COMBINED = "combined"

REPRESENTATIONS = (EE, CONFIG, COMBINED)

DEFAULT_HORIZON = 400


class InfeasibleQuery(RuntimeError):
    """Episode reset with a start state in collision."""


class EpisodeFinished(RuntimeError):
    """step() called on a finished episode without absorbing mode."""


class MissingGoalField(ValueError):
    """GoalValue lacks the field its representation requires."""


@dataclass(frozen=True)
class GoalSpec:
    """Which goal representation is active, plus reaching tolerances."""

    representation: str = CONFIG
    ee_tolerance: float = 0.02  # meters
    config_tolerance: float = 0.05  # normalized L2

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"unknown goal representation {self.representation!r}")
        if self.ee_tolerance <= 0.0 or self.config_tolerance <= 0.0:
            raise ValueError("goal tolerances must be positive")


@dataclass(frozen=True)
class GoalValue:
    """Goal fields populated exactly as the active representation demands."""

    ee_target: np.ndarray | None = None
    config_target: np.ndarray | None = None

    @classmethod
    def from_query(cls, query, spec: GoalSpec, limits) -> "GoalValue":
        g_s = normalize(np.asarray(query.goal_config, dtype=float), limits)
        g_ee = np.asarray(query.goal_ee, dtype=float)
        if spec.representation == CONFIG:
            return cls(config_target=g_s)
        if spec.representation == EE:
            return cls(ee_target=g_ee)
        return cls(ee_target=g_ee, config_target=g_s)

    @classmethod
    def from_state(cls, state: "State", spec: GoalSpec) -> "GoalValue":
        """Imagined goal achieved by a state (hindsight relabeling)."""
        if spec.representation == CONFIG:
            return cls(config_target=state.s.copy())
        if spec.representation == EE:
            return cls(ee_target=state.ee.copy())
        return cls(ee_target=state.ee.copy(), config_target=state.s.copy())


@dataclass(frozen=True)
class State:
    s: np.ndarray  # normalized configuration
    velocity_proxy: np.ndarray  # last realized displacement, zero at reset
    ee: np.ndarray  # end-effector position, meters
    absorbed: bool = False


@dataclass(frozen=True)
class Transition:
    state: State
    action: np.ndarray  # commanded action as issued to step()
    next_state: State
    cost: float
    done: bool
    goal: GoalValue
    success: bool = False
    collided: bool = False  # swept edge of this step touched an obstacle
    t: int = 0  # step count after this transition


def goal_reached(state: State, goal: GoalValue, spec: GoalSpec) -> bool:
    """Goal predicate: EE ball, normalized config ball, or (combined) EE ball."""
    if spec.representation == CONFIG:
        if goal.config_target is None:
            raise MissingGoalField("config goal representation needs config_target")
        return float(np.linalg.norm(goal.config_target - state.s)) <= spec.config_tolerance
    if goal.ee_target is None:
        raise MissingGoalField(f"{spec.representation} goal representation needs ee_target")
    return float(np.linalg.norm(state.ee - goal.ee_target)) <= spec.ee_tolerance


class Engine:
    """Episode engine for one scene and task configuration.

    ``task`` provides goal_spec, horizon, stop_on_collision, and
    collision_margin (any object with those attributes works).
    """

    RELATIVE = "relative"
    SUBGOAL = "subgoal"

    def __init__(
        self,
        scene: Scene,
        task,
        action_bound: float = ACTION_BOUND,
        absorbing: bool = False,
        edge_step: float = DEFAULT_EDGE_STEP,
    ):
        self.scene = scene
        self.task = task
        self.action_bound = float(action_bound)
        self.absorbing = bool(absorbing)
        self.edge_step = float(edge_step)
        self._state: State | None = None
        self._goal: GoalValue | None = None
        self._t = 0
        self._done = True
        self._success = False

    # -- properties ---------------------------------------------------------

    @property
    def state(self) -> State:
        if self._state is None:
            raise EpisodeFinished("engine has not been reset")
        return self._state

    @property
    def goal(self) -> GoalValue | None:
        return self._goal

    @property
    def t(self) -> int:
        return self._t

    @property
    def done(self) -> bool:
        return self._done

    @property
    def success(self) -> bool:
        return self._success

    # -- episode control ----------------------------------------------------

    def _limits(self):
        return self.scene.arm.limits

    def _make_state(self, s: np.ndarray, velocity_proxy: np.ndarray) -> State:
        c = denormalize(s, self._limits())
        return State(s=s, velocity_proxy=velocity_proxy, ee=ee_position(c, self.scene.arm))

    def reset(self, query) -> State:
        """Start an episode at query.start with the query's goal."""
        start = np.asarray(query.start, dtype=float)
        c_goal = np.asarray(query.goal_config, dtype=float)
        lim = self._limits()
        if not lim.contains(start) or not lim.contains(c_goal):
            raise InfeasibleQuery("query endpoints outside joint limits")
        if is_collision(self.scene, start, self.task.collision_margin):
            raise InfeasibleQuery("query start is in collision")
        self._goal = GoalValue.from_query(query, self.task.goal_spec, lim)
        return self._begin(normalize(start, lim))

    def reset_specific(self, c: np.ndarray, goal: GoalValue | None = None) -> State:
        """Start at an exact configuration; goal optional (no goal = never done)."""
        c = np.asarray(c, dtype=float)
        lim = self._limits()
        if not lim.contains(c):
            raise OutOfLimits(f"configuration {c} outside joint limits")
        self._goal = goal
        return self._begin(normalize(c, lim))

    def _begin(self, s: np.ndarray) -> State:
        self._state = self._make_state(s, np.zeros(7))
        self._t = 0
        self._success = (
            self._goal is not None
            and goal_reached(self._state, self._goal, self.task.goal_spec)
        )
        self._done = self._success
        return self._state

    def step(self, action: np.ndarray, mode: str = RELATIVE) -> Transition:
        if self._state is None:
            raise EpisodeFinished("engine has not been reset")
        if self._done:
            if not self.absorbing:
                raise EpisodeFinished("episode is finished")
            absorbed = replace(self._state, absorbed=True, velocity_proxy=np.zeros(7))
            self._state = absorbed
            return Transition(
                state=absorbed,
                action=np.asarray(action, dtype=float).copy(),
                next_state=absorbed,
                cost=0.0,
                done=True,
                goal=self._goal,
                success=self._success,
                collided=False,
                t=self._t,
            )
        action = np.asarray(action, dtype=float)
        if action.shape != (7,):
            raise ValueError(f"action must be a 7-vector, got shape {action.shape}")
        if mode == self.RELATIVE:
            delta = clip_action(action, self.action_bound)
        elif mode == self.SUBGOAL:
            delta = clip_action(action - self._state.s, self.action_bound)
        else:
            raise ValueError(f"unknown step mode {mode!r}")
        target = np.clip(self._state.s + delta, -1.0, 1.0)
        free = edge_collision_free(
            self.scene, self._state.s, target, self.edge_step, self.task.collision_margin
        )
        prev = self._state
        s_next = target if free else prev.s
        nxt = self._make_state(s_next, s_next - prev.s)
        self._t += 1
        reached = self._goal is not None and goal_reached(nxt, self._goal, self.task.goal_spec)
        collided = not free
        if reached:
            cost, done = 0.0, True
            self._success = True
        else:
            cost = -1.0
            done = (collided and self.task.stop_on_collision) or self._t >= self.task.horizon
        self._state = nxt
        self._done = done
        return Transition(
            state=prev,
            action=action.copy(),
            next_state=nxt,
            cost=cost,
            done=done,
            goal=self._goal,
            success=reached,
            collided=collided,
            t=self._t,
        )
