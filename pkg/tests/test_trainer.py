import numpy as np
import pytest

from dcil import trainer as trainer_mod
from dcil.env import CarState, DubinsMazeEnv, EnvConfig, GoalXY, MazeMap, Zone, builtin_maze, \
    step, zone_of
from dcil.rrt import Trajectory, rrt_plan
from dcil.sac import SacAgent, SacConfig
from dcil.skills import Skill, SkillChain, extract_skills
from dcil.trainer import METRICS_SCHEMA, TrainConfig, evaluate_chain, train

ENV = EnvConfig()
SMALL = SacConfig(hidden=(16, 16), batch_size=32)


def bend_maze():
    return MazeMap((0.0, 0.0, 2.0, 2.5), (), (Zone(0, 0, 2, 1), Zone(0, 1, 2, 2.5)),
                   CarState(0.3, 0.3, 0.0), GoalXY(1.0, 2.0), "bend")


def bend_demo():
    """A left turn followed by a straight run: two skills of equal arc length."""
    maze = bend_maze()
    s = maze.start
    states = [s]
    for k in range(40):
        s, _ = step(s, 0.8 if k < 20 else 0.0, ENV, maze)
        states.append(s)
    return maze, Trajectory(np.array(states))


def bend_chain():
    maze, demo = bend_demo()
    return maze, extract_skills(demo, demo.arc_length() / 2)


@pytest.fixture(scope="module")
def canonical():
    maze = builtin_maze()
    demo = rrt_plan(maze, maze.start, maze.exit, ENV, 0)
    return maze, demo, extract_skills(demo)


class TestTrainBasics:
    def test_budget_zero(self):
        maze, chain = bend_chain()
        rep = train(TrainConfig(budget=0, sac=SMALL), chain, maze)
        assert rep.evals == [] and rep.env_steps == 0 and rep.episodes == 0
        assert rep.first_solve_step is None

    def test_trivial_skill(self):
        maze = bend_maze()
        chain = SkillChain((Skill(0, CarState(0.5, 0.5, 0.0), GoalXY(0.55, 0.5), 5),), 0.05, 1.25)
        rep = train(TrainConfig(budget=100, sac=SMALL), chain, maze)
        assert rep.env_steps == 0
        assert rep.stats.trials.tolist() == [1] and rep.stats.successes.tolist() == [1]
        assert rep.first_solve_step == 0

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(budget=-1)
        with pytest.raises(ValueError):
            TrainConfig(eval_period=0)

    @pytest.mark.parametrize("overshoot_off", [False, True])
    def test_step_accounting_and_resets(self, monkeypatch, overshoot_off):
        resets = []

        class CountingEnv(DubinsMazeEnv):
            def reset(self, s0):
                resets.append(tuple(s0))
                return super().reset(s0)

        monkeypatch.setattr(trainer_mod, "DubinsMazeEnv", CountingEnv)
        maze, chain = bend_chain()
        cfg = TrainConfig(budget=1_700, eval_period=400, warmup=200, sac=SMALL, seed=3,
                          disable_overshoot=overshoot_off)
        rep = train(cfg, chain, maze)
        assert rep.env_steps == 1_700
        steps = [e.step for e in rep.evals]
        assert steps == [0, 400, 800, 1200, 1600, 1700]
        n_eval = len(rep.evals)
        # the training env resets once per episode, never inside an overshoot chain
        assert len(resets) - n_eval == rep.episodes
        trials = int(rep.stats.trials.sum())
        if overshoot_off:
            # the last episode may be cut by the budget before its outcome is known
            assert trials in (rep.episodes, rep.episodes - 1)
        else:
            assert trials >= rep.episodes - 1
        assert np.all(rep.stats.successes <= rep.stats.trials)

    def test_deterministic(self):
        maze, chain = bend_chain()
        cfg = TrainConfig(budget=1_500, eval_period=500, warmup=300, sac=SMALL, seed=7)
        a = train(cfg, chain, maze)
        b = train(cfg, chain, maze)
        assert a.metrics_csv() == b.metrics_csv()
        assert a.summary() == b.summary()

    def test_evaluation_does_not_perturb_training(self):
        maze, chain = bend_chain()
        agents = []
        for period in (300, 1_200):
            cfg = TrainConfig(budget=1_200, eval_period=period, warmup=300, sac=SMALL, seed=2)
            captured = {}
            rep = train(cfg, chain, maze,
                        on_eval=lambda p, ag: captured.__setitem__(p.step, ag.snapshot()))
            agents.append((rep.summary()["trials"], rep.summary()["successes"],
                           captured[1_200].actor.params.copy()))
        assert agents[0][0] == agents[1][0] and agents[0][1] == agents[1][1]
        assert np.array_equal(agents[0][2], agents[1][2])

    def test_metrics_csv(self):
        maze, chain = bend_chain()
        rep = train(TrainConfig(budget=600, eval_period=300, warmup=100, sac=SMALL), chain, maze)
        lines = rep.metrics_csv().splitlines()
        assert lines[0] == METRICS_SCHEMA
        assert lines[1] == "step,skill_success_ratio_0,skill_success_ratio_1,chain_solved,max_zone"
        assert [int(r.split(",")[0]) for r in lines[2:]] == [0, 300, 600]

    def test_divergence_becomes_report(self):
        maze, chain = bend_chain()
        sac = SacConfig(hidden=(16, 16), batch_size=32, lr=1.0, divergence_threshold=1e-3)
        rep = train(TrainConfig(budget=3_000, eval_period=1_000, warmup=50, sac=sac), chain, maze)
        assert rep.diverged and "diverg" in rep.divergence_message.lower()
        assert rep.env_steps < 3_000


class TestEvaluate:
    def test_zero_init_agent(self, canonical):
        maze, demo, chain = canonical
        agent = SacAgent(SacConfig(hidden=(8,)), maze.bounds, zero_init=True)
        res = evaluate_chain(agent, chain, maze, ENV)
        assert not res.solved and res.skills_completed == 0
        assert res.max_zone <= 2
        assert len(res.trajectory) == chain[0].t_max + 1

    def test_demo_replay_solves(self, canonical):
        maze, demo, chain = canonical
        controls = iter(demo.controls(ENV))
        res = evaluate_chain(None, chain, maze, ENV, policy=lambda s, g, i, t: next(controls))
        assert res.solved and res.max_zone == 22 and res.skills_completed == len(chain)
        assert np.allclose(res.trajectory, demo.states[:len(res.trajectory)])

    def test_skill_zero_only(self, canonical):
        maze, demo, chain = canonical
        controls = demo.controls(ENV)
        used = []

        def stub(s, g, i, t):
            if i == 0:
                used.append(t)
                return controls[len(used) - 1]
            return 0.0

        res = evaluate_chain(None, chain, maze, ENV, policy=stub)
        assert not res.solved and res.skills_completed >= 1
        k = len(used)
        skill0_zone = max(zone_of(demo.state(j), maze) for j in range(k + 1))
        # oracle: the demo prefix, then a straight drive that freezes on contact
        s = demo.state(k)
        zones = [skill0_zone]
        for _ in range(chain[1].t_max if res.skills_completed == 1 else 0):
            s, _ = step(s, 0.0, ENV, maze)
            zones.append(zone_of(s, maze) or 0)
        if res.skills_completed == 1:
            assert res.max_zone == max(zones)
        assert res.max_zone >= skill0_zone


@pytest.mark.slow
def test_two_skill_toy_learns():
    maze, chain = bend_chain()
    solved = 0
    for seed in range(5):
        cfg = TrainConfig(budget=20_000, eval_period=500, seed=seed, stop_on_solve=True,
                          sac=SacConfig(hidden=(64, 64), batch_size=128))
        rep = train(cfg, chain, maze)
        solved += rep.first_solve_step is not None
    assert solved >= 4
