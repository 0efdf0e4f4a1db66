import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from dcil.env import CarState, GoalXY, project_goal
from dcil.rrt import Trajectory
from dcil.skills import (DEFAULT_N_SKILLS, Skill, SkillChain, SkillStats, budget,
                         extract_skills, format_skills, load_skills, next_skill, parse_skills,
                         save_skills, select_skill)


def straight(n_states, step=0.05):
    xs = np.arange(n_states) * step
    return Trajectory(np.stack([xs, np.zeros(n_states), np.zeros(n_states)], axis=1))


def wiggly(seed, n=200):
    rng = np.random.default_rng(seed)
    th = np.cumsum(rng.uniform(-0.1, 0.1, n))
    x = np.concatenate([[0], np.cumsum(0.05 * np.cos(th[1:]))])
    y = np.concatenate([[0], np.cumsum(0.05 * np.sin(th[1:]))])
    return Trajectory(np.stack([x, y, th], axis=1))


def arc(traj, a, b):
    g = traj.goals[a:b + 1]
    return float(np.sum(np.hypot(*np.diff(g, axis=0).T)))


class TestExtract:
    def test_straight_example(self):
        # 41 states at 0.05 spacing span arc length 2.0
        chain = extract_skills(straight(41), 0.5, 1.25)
        assert len(chain) == 4
        assert [s.length for s in chain] == [10] * 4
        assert [s.t_max for s in chain] == [13] * 4
        assert chain.epsilon_dist == 0.5 and chain.beta == 1.25

    def test_budget_is_exact_ceiling(self):
        assert budget(1.25, 10) == 13
        assert budget(1.25, 8) == 10
        assert budget(1.1, 10) == 11
        for n in range(1, 500):
            assert budget(1.25, n) == math.ceil(1.25 * n)

    def test_two_state_fallback(self):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            chain = extract_skills(straight(2), 1.0, 1.25)
        assert len(chain) == 1
        assert chain[0].start_index == 0 and chain[0].end_index == 1
        assert any("single" in str(w.message) for w in caught)

    def test_default_epsilon(self):
        t = wiggly(0)
        chain = extract_skills(t)
        assert chain.epsilon_dist == pytest.approx(t.arc_length() / DEFAULT_N_SKILLS)
        assert len(chain) in (DEFAULT_N_SKILLS, DEFAULT_N_SKILLS + 1)

    @pytest.mark.parametrize("kw", [{"epsilon_dist": 0.0}, {"epsilon_dist": -1.0},
                                    {"beta": 1.0}, {"beta": 0.5}])
    def test_bad_arguments(self, kw):
        with pytest.raises(ValueError):
            extract_skills(straight(10), **{"epsilon_dist": 0.1, **kw})

    def test_single_state(self):
        with pytest.raises(ValueError):
            extract_skills(straight(1), 0.1)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 3.0), st.floats(1.01, 3.0))
    def test_properties(self, seed, eps, beta):
        t = wiggly(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            chain = extract_skills(t, eps, beta)
        step = 0.05
        for i, s in enumerate(chain):
            assert s.index == i
            assert s.s0 == t.state(s.start_index)
            assert s.goal == project_goal(t.state(s.end_index))
            assert s.t_max == math.ceil(round(beta * s.length, 9)) and s.t_max > s.length
            if i + 1 < len(chain):
                nxt = next_skill(chain, i)
                assert s.goal == project_goal(nxt.s0)
                assert abs(arc(t, s.start_index, s.end_index) - eps) <= step + 1e-9
        assert chain[0].start_index == 0 and chain[-1].end_index == len(t) - 1


class TestNextSkill:
    def test_lookup(self):
        chain = extract_skills(straight(41), 0.5)
        assert next_skill(chain, 1) is chain[2]
        assert next_skill(chain, 3) is None
        with pytest.raises(IndexError):
            next_skill(chain, 4)


class TestSelection:
    def test_untried_uniform(self):
        p = SkillStats.empty(5).selection_probabilities()
        assert np.allclose(p, 0.2)

    def test_probabilities_formula(self):
        stats = SkillStats(np.array([9, 9]), np.array([9, 4]))
        assert np.allclose(stats.selection_probabilities(), [1 / 3, 2 / 3])

    def test_frequencies(self):
        stats = SkillStats(np.array([9, 9]), np.array([9, 4]))
        rng = np.random.default_rng(0)
        draws = np.array([select_skill(stats, rng) for _ in range(100_000)])
        assert abs(np.mean(draws == 1) - 2 / 3) < 0.01

    def test_single_skill(self):
        rng = np.random.default_rng(0)
        assert all(select_skill(SkillStats.empty(1), rng) == 0 for _ in range(100))

    def test_chi_square(self):
        stats = SkillStats(np.array([3, 10, 0, 7]), np.array([1, 9, 0, 2]))
        p = stats.selection_probabilities()
        rng = np.random.default_rng(1)
        n = 100_000
        counts = np.bincount([select_skill(stats, rng) for _ in range(n)], minlength=4)
        assert sps.chisquare(counts, p * n).pvalue > 0.001

    def test_deterministic_given_rng(self):
        stats = SkillStats(np.array([3, 10, 1]), np.array([1, 9, 0]))
        a = [select_skill(stats, np.random.default_rng(4)) for _ in range(5)]
        b = [select_skill(stats, np.random.default_rng(4)) for _ in range(5)]
        assert a == b

    def test_stats_invariant(self):
        with pytest.raises(ValueError):
            SkillStats(np.array([1]), np.array([2]))

    @given(st.lists(st.tuples(st.integers(0, 3), st.booleans()), max_size=200))
    def test_record_keeps_invariant(self, events):
        stats = SkillStats.empty(4)
        for i, ok in events:
            stats.record(i, ok)
        assert np.all(stats.successes <= stats.trials)
        assert stats.trials.sum() == len(events)
        p = stats.selection_probabilities()
        assert p.sum() == pytest.approx(1.0) and np.all(p > 0)


class TestSkillFile:
    def test_round_trip(self, tmp_path):
        chain = extract_skills(wiggly(3), 0.7)
        path = tmp_path / "skills.txt"
        save_skills(chain, path)
        assert load_skills(path) == chain

    def test_errors(self):
        good = format_skills(extract_skills(straight(41), 0.5))
        with pytest.raises(ValueError, match="expected 9 fields"):
            parse_skills(good.replace(" 13 ", " ", 1))
        with pytest.raises(ValueError, match="missing"):
            parse_skills("")
        lines = good.splitlines()
        lines[4], lines[5] = lines[5], lines[4]
        with pytest.raises(ValueError, match="out of order"):
            parse_skills("\n".join(lines))


def test_skill_chain_goals():
    chain = SkillChain((Skill(0, CarState(0, 0, 0), GoalXY(1, 2), 5),
                        Skill(1, CarState(1, 2, 0), GoalXY(3, 4), 5)), 1.0, 1.25)
    assert chain.goals.tolist() == [[1, 2], [3, 4]]
