"""Success-rate evaluation over query sets, timing measurement, reports.

A policy is any callable (state, goal) -> 7-vector action.  Evaluation is a
pure fold over (query, seed) episodes: query order never changes the rates.
Policy wall-clock time is measured around the policy call only, matching the
action-prediction/simulation split used for reported inference times.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import Engine
from .tasks import TaskSpec, build_fixed_task, realize_scene, sample_query


@dataclass
class EpisodeResult:
    success: bool
    steps: int
    path_cost: float  # sum of realized step norms, normalized space
    collided: bool  # any step's swept edge touched an obstacle
    policy_seconds: float
    policy_calls: int


@dataclass
class EvalReport:
    task: str
    policy_id: str
    n_queries: int
    seeds: tuple
    success_rate: float
    success_std: float
    per_seed_rates: tuple
    mean_episode_length: float  # successes only
    mean_path_cost: float  # successes only
    collision_rate: float
    avg_step_seconds: float
    avg_trajectory_seconds: float
    wall_time_s: float = 0.0

    def lines(self) -> list[str]:
        return [
            f"task               {self.task}",
            f"policy             {self.policy_id}",
            f"queries            {self.n_queries}",
            f"seeds              {len(self.seeds)}",
            f"success_rate       {self.success_rate:.4f}",
            f"success_std        {self.success_std:.4f}",
            f"per_seed_rates     {' '.join(f'{r:.4f}' for r in self.per_seed_rates)}",
            f"mean_episode_len   {self.mean_episode_length:.2f}",
            f"mean_path_cost     {self.mean_path_cost:.4f}",
            f"collision_rate     {self.collision_rate:.4f}",
            f"avg_step_seconds   {self.avg_step_seconds:.3e}",
            f"avg_traj_seconds   {self.avg_trajectory_seconds:.3e}",
        ]

    def save(self, path) -> None:
        header = ["# armplan evaluation report", "schema_version 1"]
        Path(path).write_text("\n".join(header + self.lines()) + "\n")


def run_episode(engine: Engine, policy, query) -> EpisodeResult:
    """Roll one episode; records path cost, collisions, and policy time."""
    state = engine.reset(query)
    cost = 0.0
    collided = False
    pol_t = 0.0
    calls = 0
    while not engine.done:
        t0 = time.perf_counter()
        action = policy(state, engine.goal)
        pol_t += time.perf_counter() - t0
        calls += 1
        tr = engine.step(action)
        cost += float(np.linalg.norm(tr.next_state.s - tr.state.s))
        collided = collided or tr.collided
        state = tr.next_state
    return EpisodeResult(
        success=engine.success,
        steps=engine.t,
        path_cost=cost,
        collided=collided,
        policy_seconds=pol_t,
        policy_calls=calls,
    )


def _policy_id(policy) -> str:
    return getattr(policy, "policy_id", type(policy).__name__)


def evaluate(
    policy,
    task: TaskSpec,
    queries=None,
    seeds=(0,),
    n_queries: int = 1000,
    query_seed: int = 0,
    arm=None,
) -> EvalReport:
    """Success rate of a policy on a task, mean +/- std over seeds.

    For fixed tasks, ``queries`` may be a pre-sampled list; otherwise
    n_queries are sampled with query_seed.  Sampler tasks draw a fresh scene
    per query.  If the policy has a ``reset_seed`` method it is called with
    each seed (deterministic policies simply repeat).
    """
    t_start = time.perf_counter()
    episodes = []
    if task.scene_kind == "fixed":
        scene = build_fixed_task(task.name, arm=arm)
        if queries is None:
            rng = np.random.default_rng(query_seed)
            queries = [sample_query(scene, rng, margin=task.collision_margin) for _ in range(n_queries)]
        episodes = [(scene, q) for q in queries]
    else:
        if queries is not None:
            raise ValueError("sampler tasks draw their own (scene, query) pairs")
        rng = np.random.default_rng(query_seed)
        for _ in range(n_queries):
            scene = realize_scene(task, rng, arm=arm)
            episodes.append((scene, sample_query(scene, rng, margin=task.collision_margin)))

    per_seed = []
    lengths, costs = [], []
    n_collided = 0
    pol_seconds = 0.0
    pol_calls = 0
    traj_seconds = []
    for seed in seeds:
        if hasattr(policy, "reset_seed"):
            policy.reset_seed(seed)
        wins = 0
        for scene, query in episodes:
            res = run_episode(Engine(scene, task), policy, query)
            wins += res.success
            n_collided += res.collided
            pol_seconds += res.policy_seconds
            pol_calls += res.policy_calls
            traj_seconds.append(res.policy_seconds)
            if res.success:
                lengths.append(res.steps)
                costs.append(res.path_cost)
        per_seed.append(wins / len(episodes))
    rates = np.array(per_seed)
    return EvalReport(
        task=task.name,
        policy_id=_policy_id(policy),
        n_queries=len(episodes),
        seeds=tuple(seeds),
        success_rate=float(rates.mean()),
        success_std=float(rates.std(ddof=1)) if len(rates) > 1 else 0.0,
        per_seed_rates=tuple(float(r) for r in rates),
        mean_episode_length=float(np.mean(lengths)) if lengths else float("nan"),
        mean_path_cost=float(np.mean(costs)) if costs else float("nan"),
        collision_rate=n_collided / (len(episodes) * len(seeds)),
        avg_step_seconds=pol_seconds / max(1, pol_calls),
        avg_trajectory_seconds=float(np.mean(traj_seconds)) if traj_seconds else 0.0,
        wall_time_s=time.perf_counter() - t_start,
    )


def measure_timing(policy, task: TaskSpec, n_episodes: int = 1000, query_seed: int = 0, arm=None):
    """(avg per-step policy seconds, avg per-trajectory policy seconds).

    Only the policy forward calls are timed; environment stepping is
    excluded from both figures.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(query_seed)
    step_time = 0.0
    calls = 0
    traj_times = []
    for _ in range(n_episodes):
        scene = (
            build_fixed_task(task.name, arm=arm)
            if task.scene_kind == "fixed"
            else realize_scene(task, rng, arm=arm)
        )
        query = sample_query(scene, rng, margin=task.collision_margin)
        res = run_episode(Engine(scene, task), policy, query)
        step_time += res.policy_seconds
        calls += res.policy_calls
        traj_times.append(res.policy_seconds)
    return step_time / max(1, calls), float(np.mean(traj_times))


class GoToGoalPolicy:
    """Callable wrapper for the straight-to-goal baseline."""

    policy_id = "go_to_goal"

    def __init__(self, a_max=None):
        from .arm import ACTION_BOUND

        self.a_max = ACTION_BOUND if a_max is None else a_max

    def __call__(self, state, goal):
        from .learn import go_to_goal

        return go_to_goal(state, goal, self.a_max)
