"""Analytic 7-DoF arm motion-planning environment.

Deterministic physics-free simulator with a goal-conditioned episode engine,
an RRT-Connect demonstration pipeline, hindsight/demo-injection replay
machinery, a behavioral-cloning trainer, and an evaluation harness.
"""

from .arm import (
    ACTION_BOUND,
    ArmGeometry,
    JointLimits,
    OutOfLimits,
    OutOfRange,
    clip_action,
    denormalize,
    forward_kinematics,
    load_arm,
    normalize,
)
from .engine import (
    Engine,
    EpisodeFinished,
    GoalSpec,
    GoalValue,
    InfeasibleQuery,
    MissingGoalField,
    State,
    Transition,
    goal_reached,
)
from .geometry import (
    Box,
    Capsule,
    Plane,
    Scene,
    capsule_box_distance,
    capsule_capsule_distance,
    edge_collision_free,
    is_collision,
)
from .learn import (
    BcHyper,
    DemoIndex,
    MlpPolicy,
    ReplayBuffer,
    bc_train,
    demo_to_transitions,
    go_to_goal,
    goal_input,
    her_relabel,
    inject_demo,
)
from .planner import (
    Demonstration,
    Failure,
    PlannerParams,
    VerificationFailed,
    collect_demos,
    load_demos,
    path_to_actions,
    replay_demo,
    rrt_connect,
    save_demos,
    verify_plan,
)
from .tasks import (
    Infeasible,
    ParseError,
    Query,
    TaskSpec,
    UnknownTask,
    build_fixed_task,
    get_task,
    load_queries,
    load_scene,
    realize_scene,
    sample_query,
    sample_random_boxes,
    save_queries,
    save_scene,
    task_names,
)

__version__ = "0.1.0"
