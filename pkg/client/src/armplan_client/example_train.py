"""Example: off-policy training loop against a remote episode server.

Demonstrates the full data pipeline an RL trainer consumes: episodic
rollouts over the wire, hindsight relabeling of failed episodes, and
demonstration injection on failure from a dataset produced by
``armplan generate-demos``.  The trainer itself is a stub that just counts
batches; swap in a SAC/TD3 implementation by replacing ``TrainerStub``.

Run (with ``armplan serve`` listening):

    python -m armplan_client.example_train --task no_obstacles \
        --demos demos.txt --episodes 20 --p-inject 0.5
"""

from __future__ import annotations

import argparse
import random

import numpy as np

from .client import RemoteEnv, connect


# -- minimal client-side replay machinery -------------------------------------

def goal_reached(state: dict, goal: dict, spec: dict) -> bool:
    rep = spec["representation"]
    if rep == "config":
        g = np.asarray(goal["config_target"])
        return float(np.linalg.norm(g - np.asarray(state["s"]))) <= spec["config_tolerance"]
    g = np.asarray(goal["ee_target"])
    return float(np.linalg.norm(np.asarray(state["ee"]) - g)) <= spec["ee_tolerance"]


def her_relabel_final(episode: list[dict], goal_spec: dict) -> list[dict]:
    """Relabel a failed episode with the goal its final state achieved."""
    final = episode[-1]["next_state"]
    imagined = {"config_target": final["s"], "ee_target": final["ee"]}
    out = []
    for k, tr in enumerate(episode):
        terminal = k == len(episode) - 1
        out.append({**tr, "goal": imagined, "cost": 0.0 if terminal else -1.0, "done": terminal})
    return out


def load_demo_dataset(path: str) -> list[dict]:
    """Parse the documented demo file format into per-demo dicts."""
    demos = []
    lines = open(path).read().splitlines()
    i = 0
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] != "demo":
            continue
        steps = int(tok[4])
        q = [float(v) for v in lines[i].split()[1:]]
        i += 1
        states = [[float(v) for v in lines[i + k].split()[1:]] for k in range(steps + 1)]
        i += steps + 1
        actions = [[float(v) for v in lines[i + k].split()[1:]] for k in range(steps)]
        i += steps
        demos.append({"start": q[0:7], "goal_config": q[7:14], "states": states, "actions": actions})
    return demos


def demo_transitions(demo: dict, goal: dict) -> list[dict]:
    out = []
    n = len(demo["actions"])
    for k in range(n):
        out.append(
            {
                "state": {"s": demo["states"][k]},
                "action": demo["actions"][k],
                "next_state": {"s": demo["states"][k + 1]},
                "cost": 0.0 if k == n - 1 else -1.0,
                "done": k == n - 1,
                "goal": goal,
            }
        )
    return out


def nearest_demo(demos: list[dict], start: list[float]) -> dict:
    s = np.asarray(start)
    dists = [float(np.linalg.norm(np.asarray(d["states"][0]) - s)) for d in demos]
    return demos[int(np.argmin(dists))]


class TrainerStub:
    """Stand-in for an off-policy learner (SAC/TD3): consumes batches."""

    def __init__(self):
        self.batches = 0

    def train_on(self, batch: list[dict]) -> None:
        self.batches += 1


def explore_action(state: dict, goal: dict, rng: np.random.Generator, noise: float) -> list:
    direction = np.asarray(goal["config_target"]) - np.asarray(state["s"])
    return (direction + rng.normal(scale=noise, size=7)).tolist()


def run(task: str, address, demos_path: str | None, episodes: int, p_her: float,
        p_inject: float, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    sampler = random.Random(seed)
    env = connect(address)
    spec = env.spec()
    goal_spec = dict(spec["default_goal"])
    env.make(task, seed)
    demos = load_demo_dataset(demos_path) if demos_path else []
    buffer: list[dict] = []
    trainer = TrainerStub()
    stats = {"episodes": 0, "successes": 0, "relabeled": 0, "injected": 0}

    for _ in range(episodes):
        state = env.reset()
        episode = []
        done = state["done"]
        while not done:
            action = explore_action(state, state["goal"], rng, noise=0.02)
            out = env.step(action)
            episode.append(
                {
                    "state": state,
                    "action": action,
                    "next_state": out["state"],
                    "cost": out["cost"],
                    "done": out["done"],
                    "goal": state["goal"],
                }
            )
            state = out["state"]
            done = out["done"]
        success = state["success"]
        stats["episodes"] += 1
        stats["successes"] += success
        buffer.extend(episode)
        if episode and rng.random() < p_her:
            buffer.extend(her_relabel_final(episode, goal_spec))
            stats["relabeled"] += 1
        if not success and demos and rng.random() < p_inject:
            demo = nearest_demo(demos, state["s"])
            goal = {"config_target": demo["goal_config"], "ee_target": None}
            injected = demo_transitions(demo, goal)
            buffer.extend(injected)
            stats["injected"] += len(injected)
        # hand minibatches to the external trainer
        for _ in range(4):
            if len(buffer) >= 64:
                trainer.train_on(sampler.sample(buffer, 64))
    env.close()
    stats["buffer_size"] = len(buffer)
    stats["train_batches"] = trainer.batches
    return stats


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--task", default="no_obstacles")
    parser.add_argument("--addr", default="127.0.0.1:7641")
    parser.add_argument("--demos", help="demo dataset from 'armplan generate-demos'")
    parser.add_argument("--episodes", type=int, default=10)
    parser.add_argument("--p-her", type=float, default=0.8)
    parser.add_argument("--p-inject", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    host, _, port = args.addr.rpartition(":")
    stats = run(
        args.task, (host or "127.0.0.1", int(port)), args.demos,
        args.episodes, args.p_her, args.p_inject, args.seed,
    )
    for key, val in stats.items():
        print(f"{key:14s} {val}")


if __name__ == "__main__":
    main()
