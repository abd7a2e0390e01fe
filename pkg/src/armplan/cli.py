"""Command-line entry points.

Subcommands cover the artifact workflows: sampling query sets, collecting
and verifying demonstrations, training BC policies, evaluating policies,
dumping sensor clouds, and serving episodes to external trainers.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import evaluate as ev
from . import learn, planner, sensors, tasks
from .engine import GoalSpec
from .server import DEFAULT_ADDRESS, serve


def _add_goal_rep(p):
    p.add_argument(
        "--goal-rep",
        choices=["ee", "config", "combined"],
        default="config",
        help="goal representation (default: config)",
    )


def cmd_sample_queries(args):
    task = tasks.get_task(args.task)
    rng = np.random.default_rng(args.seed)
    scene = tasks.realize_scene(task, rng)
    queries = [
        tasks.sample_query(scene, rng, margin=task.collision_margin) for _ in range(args.n)
    ]
    tasks.save_queries(args.out, queries, args.task, seed=args.seed)
    print(f"wrote {len(queries)} queries for {args.task} to {args.out}")
    if task.scene_kind == "sampler" and args.scene_out:
        tasks.save_scene(args.scene_out, scene)
        print(f"wrote scene to {args.scene_out}")


def cmd_generate_demos(args):
    task = tasks.get_task(args.task, goal_spec=GoalSpec(representation=args.goal_rep))
    rng = np.random.default_rng(args.seed)
    demos, report = planner.collect_demos(task, args.n, rng)
    planner.save_demos(args.out, demos, task)
    print(
        f"collected {report.collected} demos for {args.task} "
        f"(queries tried {report.queries_tried}, reject rate {report.reject_rate:.3f}, "
        f"plan failures {report.plan_failures}, verify failures {report.verify_failures}, "
        f"{report.wall_time_s:.1f}s)"
    )


def cmd_verify_demos(args):
    demos, task = planner.load_demos(args.file, verify=True)
    print(f"{len(demos)} demos for task {task.name}: all replay to success")


def cmd_train_bc(args):
    demos, task = planner.load_demos(args.demos)
    goal_spec = GoalSpec(representation=args.goal_rep)
    hyper = learn.BcHyper(
        batch_size=args.batch, steps=args.steps, learning_rate=args.lr, seed=args.seed
    )
    result = learn.bc_train(demos, goal_spec, hyper=hyper)
    result.policy.save(
        args.out,
        metadata={
            "task": task.name,
            "demos": len(demos),
            "steps": hyper.steps,
            "final_loss": f"{result.losses[-100:].mean():.6e}",
            "seed": hyper.seed,
        },
    )
    print(
        f"trained on {len(demos)} demos ({args.steps} batches, {result.wall_time_s:.1f}s); "
        f"final loss {result.losses[-100:].mean():.3e}; saved to {args.out}"
    )


def _load_policy(spec: str):
    if spec == "go_to_goal":
        return ev.GoToGoalPolicy()
    policy = learn.MlpPolicy.load(spec)
    policy.policy_id = os.path.basename(spec)
    return policy


def cmd_evaluate(args):
    policy = _load_policy(args.policy)
    goal_spec = GoalSpec(representation=args.goal_rep)
    task = tasks.get_task(args.task, goal_spec=goal_spec)
    queries = None
    if args.queries:
        queries, qtask, _ = tasks.load_queries(args.queries)
        if qtask != args.task:
            print(f"warning: query file is for task {qtask!r}", file=sys.stderr)
    report = ev.evaluate(
        policy,
        task,
        queries=queries,
        seeds=tuple(range(args.seeds)),
        n_queries=args.n,
        query_seed=args.query_seed,
    )
    for line in report.lines():
        print(line)
    if args.out:
        report.save(args.out)
        print(f"report written to {args.out}")


def cmd_measure_timing(args):
    policy = _load_policy(args.policy)
    task = tasks.get_task(args.task)
    step_s, traj_s = ev.measure_timing(policy, task, n_episodes=args.n)
    print(f"avg_step_seconds {step_s:.3e}")
    print(f"avg_trajectory_seconds {traj_s:.3e}")


def cmd_sense_dump(args):
    task = tasks.get_task(args.task)
    rng = np.random.default_rng(args.seed)
    scene = tasks.realize_scene(task, rng)
    query = tasks.sample_query(scene, rng)
    rig = sensors.default_rig(rays_per_sensor=args.rays)
    cloud = sensors.sense(scene, query.start, rig)
    sensors.save_cloud(args.out, cloud)
    print(f"wrote {len(cloud)} labeled points to {args.out}")


def cmd_serve(args):
    host, _, port = args.addr.rpartition(":")
    address = (host or DEFAULT_ADDRESS[0], int(port))
    print(f"serving on {address[0]}:{address[1]} (max {args.max_sessions} sessions)")
    serve(address=address, max_sessions=args.max_sessions)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="armplan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample-queries", help="sample feasible (start, goal) queries")
    p.add_argument("--task", required=True, choices=tasks.task_names())
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--scene-out", help="also save the sampled scene (sampler tasks)")
    p.set_defaults(func=cmd_sample_queries)

    p = sub.add_parser("generate-demos", help="plan, verify, and save demonstrations")
    p.add_argument("--task", required=True, choices=tasks.task_names())
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_goal_rep(p)
    p.set_defaults(func=cmd_generate_demos)

    p = sub.add_parser("verify-demos", help="replay a demo dataset open-loop")
    p.add_argument("file")
    p.set_defaults(func=cmd_verify_demos)

    p = sub.add_parser("train-bc", help="behavioral cloning from a demo dataset")
    p.add_argument("--demos", required=True)
    _add_goal_rep(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=learn.BcHyper().learning_rate)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("evaluate", help="success-rate evaluation of a policy")
    p.add_argument("--policy", required=True, help="'go_to_goal' or a checkpoint path")
    p.add_argument("--task", required=True, choices=tasks.task_names())
    p.add_argument("--queries", help="query file (fixed tasks)")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--query-seed", type=int, default=0)
    _add_goal_rep(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("measure-timing", help="policy inference timing")
    p.add_argument("--policy", required=True)
    p.add_argument("--task", required=True, choices=tasks.task_names())
    p.add_argument("--n", type=int, default=1000)
    p.set_defaults(func=cmd_measure_timing)

    p = sub.add_parser("sense-dump", help="dump a labeled point cloud")
    p.add_argument("--task", required=True, choices=tasks.task_names())
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rays", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sense_dump)

    p = sub.add_parser("serve", help="serve episodes over the line protocol")
    p.add_argument(
        "--addr",
        default=os.environ.get(
            "ARMPLAN_ADDR", f"{DEFAULT_ADDRESS[0]}:{DEFAULT_ADDRESS[1]}"
        ),
        help="host:port (env ARMPLAN_ADDR)",
    )
    p.add_argument(
        "--max-sessions",
        type=int,
        default=int(os.environ.get("ARMPLAN_MAX_SESSIONS", "32")),
    )
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
