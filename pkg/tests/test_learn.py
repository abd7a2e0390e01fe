import numpy as np
import pytest

from armplan import arm, engine, learn, planner, tasks
from oracles import central_difference_gradient

GEOM = arm.load_arm()
LIM = GEOM.limits
EMPTY = tasks.build_fixed_task("no_obstacles")
CONFIG_SPEC = engine.GoalSpec(representation="config")


def rollout(seed, horizon=8, task=None):
    """Random-action episode on the empty scene."""
    task = task or tasks.get_task("no_obstacles", horizon=horizon)
    eng = engine.Engine(EMPTY, task)
    rng = np.random.default_rng(seed)
    eng.reset(tasks.sample_query(EMPTY, rng))
    episode = []
    while not eng.done:
        episode.append(eng.step(rng.normal(scale=0.05, size=7)))
    return episode


class TestReplayBuffer:
    def test_counters_sum_to_size(self):
        buf = learn.ReplayBuffer(capacity=50)
        episode = rollout(0)
        for i, tr in enumerate(episode):
            buf.add(tr, source=learn.SOURCES[i % 3])
        counts = buf.counts
        assert sum(counts.values()) == len(buf) == len(episode)

    def test_eviction_keeps_counters_consistent(self):
        buf = learn.ReplayBuffer(capacity=5)
        episode = rollout(1, horizon=20)
        for i, tr in enumerate(episode):
            buf.add(tr, source=learn.DEMO if i % 2 else learn.ENV)
            assert sum(buf.counts.values()) == len(buf) <= 5
        assert len(buf) == 5

    def test_sample_returns_stored_transitions(self):
        buf = learn.ReplayBuffer(capacity=100)
        episode = rollout(2)
        buf.extend(episode)
        batch = buf.sample(4, np.random.default_rng(0))
        assert len(batch) == 4
        assert all(isinstance(tr, engine.Transition) for tr in batch)

    def test_empty_sample_raises(self):
        with pytest.raises(learn.EmptyEpisode):
            learn.ReplayBuffer(10).sample(1, np.random.default_rng(0))


class TestHerRelabel:
    def test_failed_episode_relabels_to_success(self):
        episode = rollout(3, horizon=3)
        assert all(tr.cost == -1.0 for tr in episode)
        out = learn.her_relabel(episode, 1.0, CONFIG_SPEC, np.random.default_rng(0))
        relabeled = out[len(episode):]
        assert [tr.cost for tr in relabeled] == [-1.0, -1.0, 0.0]
        assert relabeled[-1].done and relabeled[-1].success
        assert not relabeled[0].done and not relabeled[1].done
        final = episode[-1].next_state
        np.testing.assert_array_equal(relabeled[-1].goal.config_target, final.s)

    def test_p_zero_is_identity(self):
        episode = rollout(4, horizon=5)
        out = learn.her_relabel(episode, 0.0, CONFIG_SPEC, np.random.default_rng(0))
        assert out == episode

    def test_keep_original_false_yields_only_copy(self):
        episode = rollout(5, horizon=4)
        out = learn.her_relabel(
            episode, 1.0, CONFIG_SPEC, np.random.default_rng(0), keep_original=False
        )
        assert len(out) <= len(episode)
        assert out[-1].cost == 0.0

    def test_exactly_one_zero_cost_terminal(self):
        rng = np.random.default_rng(6)
        for seed in range(20):
            episode = rollout(100 + seed, horizon=12)
            out = learn.her_relabel(episode, 1.0, CONFIG_SPEC, rng, keep_original=False)
            zero_costs = [tr for tr in out if tr.cost == 0.0]
            assert len(zero_costs) == 1
            assert out[-1] is zero_costs[0]
            assert out[-1].done

    def test_ee_representation_uses_final_ee(self):
        spec = engine.GoalSpec(representation="ee")
        episode = rollout(7, horizon=3)
        out = learn.her_relabel(episode, 1.0, spec, np.random.default_rng(0), keep_original=False)
        np.testing.assert_array_equal(out[-1].goal.ee_target, episode[-1].next_state.ee)

    def test_empty_episode_rejected(self):
        with pytest.raises(learn.EmptyEpisode):
            learn.her_relabel([], 0.5, CONFIG_SPEC, np.random.default_rng(0))

    def test_probability_respected(self):
        episode = rollout(8, horizon=3)
        rng = np.random.default_rng(9)
        grew = sum(
            len(learn.her_relabel(episode, 0.8, CONFIG_SPEC, rng)) > len(episode)
            for _ in range(2000)
        )
        assert grew / 2000 == pytest.approx(0.8, abs=0.03)


class TestDemoInjection:
    @pytest.fixture(scope="class")
    def demo_set(self):
        task = tasks.get_task("no_obstacles")
        demos, _ = planner.collect_demos(task, 6, np.random.default_rng(10))
        return demos, task

    def test_inject_p_one_appends_full_demo(self, demo_set):
        demos, task = demo_set
        index = learn.DemoIndex(demos)
        buf = learn.ReplayBuffer(100_000)
        n = learn.inject_demo(
            buf, demos[0].query, 1.0, index, task.goal_spec, np.random.default_rng(0)
        )
        assert n == len(demos[0].actions)
        assert buf.counts[learn.DEMO] == n
        items = buf.sample(n, np.random.default_rng(0))
        assert all(tr.cost in (-1.0, 0.0) for tr in items)

    def test_inject_p_zero_appends_nothing(self, demo_set):
        demos, task = demo_set
        index = learn.DemoIndex(demos)
        buf = learn.ReplayBuffer(1000)
        assert learn.inject_demo(buf, demos[0].query, 0.0, index, task.goal_spec, np.random.default_rng(0)) == 0
        assert len(buf) == 0

    def test_exact_query_match_preferred(self, demo_set):
        demos, _ = demo_set
        index = learn.DemoIndex(demos)
        assert index.lookup(demos[3].query) is demos[3]

    def test_nearest_start_fallback(self, demo_set):
        demos, _ = demo_set
        index = learn.DemoIndex(demos)
        q = demos[2].query
        nudged = tasks.Query(
            start=q.start + 1e-4, goal_config=q.goal_config, goal_ee=q.goal_ee
        )
        assert index.lookup(nudged) is demos[2]

    def test_empty_index_nonfatal(self, demo_set):
        _, task = demo_set
        index = learn.DemoIndex([])
        buf = learn.ReplayBuffer(10)
        q = tasks.sample_query(EMPTY, np.random.default_rng(0))
        assert learn.inject_demo(buf, q, 1.0, index, task.goal_spec, np.random.default_rng(0)) == 0

    def test_injection_rate(self, demo_set):
        demos, task = demo_set
        index = learn.DemoIndex(demos)
        rng = np.random.default_rng(11)
        q = demos[0].query
        injections = 0
        trials = 2000
        for _ in range(trials):
            buf = learn.ReplayBuffer(10_000)
            if learn.inject_demo(buf, q, 0.5, index, task.goal_spec, rng) > 0:
                injections += 1
        assert injections / trials == pytest.approx(0.5, abs=0.03)

    def test_injected_transitions_sparse_costs(self, demo_set):
        demos, task = demo_set
        trs = learn.demo_to_transitions(demos[1], task.goal_spec)
        assert [tr.cost for tr in trs] == [-1.0] * (len(trs) - 1) + [0.0]
        assert trs[-1].done and trs[-1].success
        # replayable: states chain exactly
        for tr in trs:
            np.testing.assert_array_equal(tr.state.s + tr.action, tr.next_state.s)


class TestGoalInput:
    def state(self):
        c = GEOM.home
        return engine.State(
            s=arm.normalize(c, LIM), velocity_proxy=np.zeros(7), ee=arm.ee_position(c, GEOM)
        )

    def test_dimensions(self):
        st = self.state()
        g = engine.GoalValue(config_target=np.zeros(7), ee_target=np.zeros(3))
        assert learn.goal_input(st, g, engine.GoalSpec("config")).shape == (14,)
        assert learn.goal_input(st, g, engine.GoalSpec("ee")).shape == (13,)
        assert learn.goal_input(st, g, engine.GoalSpec("combined")).shape == (20,)

    def test_missing_fields_raise(self):
        st = self.state()
        with pytest.raises(engine.MissingGoalField):
            learn.goal_input(st, engine.GoalValue(ee_target=np.zeros(3)), engine.GoalSpec("config"))
        with pytest.raises(engine.MissingGoalField):
            learn.goal_input(st, engine.GoalValue(config_target=np.zeros(7)), engine.GoalSpec("combined"))


class TestMlpPolicy:
    def test_output_components_bounded(self):
        net = learn.MlpPolicy(CONFIG_SPEC, hidden=(16, 16), seed=0)
        x = np.random.default_rng(0).uniform(-1, 1, (50, 14))
        out = net.forward(x)
        assert (np.abs(out) <= learn.ACTION_BOUND).all()

    def test_dimension_mismatch(self):
        net = learn.MlpPolicy(CONFIG_SPEC, hidden=(8,), seed=0)
        with pytest.raises(learn.DimensionMismatch):
            net.forward(np.zeros((1, 13)))

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(12)
        for rep, dim in (("config", 14), ("ee", 13)):
            spec = engine.GoalSpec(representation=rep)
            net = learn.MlpPolicy(spec, hidden=(8, 8), seed=3)
            x = rng.uniform(-1, 1, (20, dim))
            y = rng.uniform(-0.03, 0.03, (20, 7)) / np.sqrt(7)
            _, gw, gb = net.loss_and_grads(x, y)
            analytic = np.concatenate(
                [np.concatenate([w.ravel(), b.ravel()]) for w, b in zip(gw, gb)]
            )
            flat0 = net.get_flat()

            def loss_at(flat):
                net.set_flat(flat)
                val = net.loss_and_grads(x, y)[0]
                net.set_flat(flat0)
                return val

            numeric = central_difference_gradient(loss_at, flat0, eps=1e-5)
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
            assert rel.max() < 1e-4

    def test_checkpoint_round_trip(self, tmp_path):
        net = learn.MlpPolicy(CONFIG_SPEC, hidden=(16, 16), seed=5)
        path = tmp_path / "policy.txt"
        net.save(path, metadata={"note": "test"})
        loaded = learn.MlpPolicy.load(path)
        assert loaded.widths == net.widths
        x = np.random.default_rng(1).uniform(-1, 1, (10, 14))
        np.testing.assert_array_equal(loaded.forward(x), net.forward(x))


class TestBcTrain:
    def test_memorizes_single_pair(self):
        task = tasks.get_task("no_obstacles")
        demos, _ = planner.collect_demos(task, 1, np.random.default_rng(13))
        demo = demos[0]
        # single repeated step: trivial dataset
        tiny = planner.Demonstration(
            scene_name=demo.scene_name,
            scene_seed=demo.scene_seed,
            query=demo.query,
            states=demo.states[:2],
            actions=demo.actions[:1],
            verified=True,
        )
        hyper = learn.BcHyper(batch_size=8, steps=2500, learning_rate=5.0, seed=0)
        net = learn.MlpPolicy(CONFIG_SPEC, hidden=(32, 32), seed=0)
        result = learn.bc_train([tiny], CONFIG_SPEC, net=net, hyper=hyper)
        x, y = learn.demos_to_dataset([tiny], CONFIG_SPEC)
        pred = result.policy.forward(x)
        assert result.losses[-1] < 1e-8
        assert np.abs(pred - y).max() < 1e-3

    def test_smoothed_loss_non_increasing_on_memorization(self):
        task = tasks.get_task("no_obstacles")
        demos, _ = planner.collect_demos(task, 1, np.random.default_rng(14))
        tiny = planner.Demonstration(
            scene_name=demos[0].scene_name,
            scene_seed=demos[0].scene_seed,
            query=demos[0].query,
            states=demos[0].states[:2],
            actions=demos[0].actions[:1],
            verified=True,
        )
        hyper = learn.BcHyper(batch_size=8, steps=600, learning_rate=2.0, seed=0)
        result = learn.bc_train([tiny], CONFIG_SPEC, hyper=hyper)
        # per-epoch means, then smoothing window 10
        epochs = result.losses.reshape(-1, 10).mean(axis=1)
        smooth = np.convolve(epochs, np.ones(10) / 10, mode="valid")
        assert (np.diff(smooth) <= 1e-12).all()

    def test_deterministic_given_seed(self):
        task = tasks.get_task("no_obstacles")
        demos, _ = planner.collect_demos(task, 2, np.random.default_rng(15))
        hyper = learn.BcHyper(batch_size=16, steps=50, learning_rate=1.0, seed=7)
        r1 = learn.bc_train(demos, CONFIG_SPEC, hyper=hyper)
        r2 = learn.bc_train(demos, CONFIG_SPEC, hyper=hyper)
        np.testing.assert_array_equal(r1.losses, r2.losses)
        np.testing.assert_array_equal(r1.policy.get_flat(), r2.policy.get_flat())


class TestGoToGoal:
    def test_forced_two_step_reach(self):
        g = np.zeros(7)
        g[0] = 0.06
        goal = engine.GoalValue(config_target=g)
        st = engine.State(s=np.zeros(7), velocity_proxy=np.zeros(7), ee=np.zeros(3))
        a = learn.go_to_goal(st, goal)
        np.testing.assert_allclose(a, np.array([0.03, 0, 0, 0, 0, 0, 0]), atol=1e-15)

    def test_zero_at_goal(self):
        goal = engine.GoalValue(config_target=np.full(7, 0.2))
        st = engine.State(s=np.full(7, 0.2), velocity_proxy=np.zeros(7), ee=np.zeros(3))
        np.testing.assert_array_equal(learn.go_to_goal(st, goal), np.zeros(7))

    def test_missing_config_goal(self):
        st = engine.State(s=np.zeros(7), velocity_proxy=np.zeros(7), ee=np.zeros(3))
        with pytest.raises(learn.MissingConfigGoal):
            learn.go_to_goal(st, engine.GoalValue(ee_target=np.zeros(3)))

    def test_trajectory_is_straight_line(self):
        task = tasks.get_task("no_obstacles")
        eng = engine.Engine(EMPTY, task)
        rng = np.random.default_rng(16)
        for _ in range(10):
            q = tasks.sample_query(EMPTY, rng)
            eng.reset(q)
            s0 = eng.state.s.copy()
            g = eng.goal.config_target
            direction = g - s0
            norm2 = float(direction @ direction)
            collided = False
            while not eng.done:
                tr = eng.step(learn.go_to_goal(eng.state, eng.goal))
                collided = collided or tr.collided
                if collided:
                    break
                # every visited state is a convex combination of start and goal
                t = float((tr.next_state.s - s0) @ direction) / norm2
                residual = tr.next_state.s - (s0 + t * direction)
                assert np.linalg.norm(residual) < 1e-9
                assert -1e-12 <= t <= 1.0 + 1e-12
