"""The divide-and-conquer training loop and full-chain evaluation."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from dcil.env import CarState, DubinsMazeEnv, EnvConfig, MazeMap, is_success, zone_of
from dcil.replay import ReplayBuffer, Transition, finalize_batch
from dcil.sac import SacAgent, SacConfig, SacDivergence
from dcil.skills import SkillChain, SkillStats, select_skill

log = logging.getLogger(__name__)

METRICS_SCHEMA = "# dcil-metrics 1"

# (state, goal, skill index, step within the skill) -> action
Policy = Callable[[CarState, tuple, int, int], float]


@dataclass(frozen=True)
class TrainConfig:
    budget: int = 150_000
    eval_period: int = 2_000
    seed: int = 0
    warmup: int = 1_000
    buffer_capacity: int = 1_000_000
    disable_bonus: bool = False
    disable_overshoot: bool = False
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SacConfig = field(default_factory=SacConfig)
    stop_on_solve: bool = False

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.eval_period < 1 or self.warmup < 0:
            raise ValueError("eval_period must be positive and warmup >= 0")


@dataclass
class EvalPoint:
    step: int
    skill_success_ratios: list[float]
    chain_solved: bool
    max_zone: int
    skills_completed: int


@dataclass
class TrainReport:
    n_skills: int
    evals: list[EvalPoint] = field(default_factory=list)
    env_steps: int = 0
    episodes: int = 0
    first_solve_step: int | None = None
    diverged: bool = False
    divergence_message: str = ""
    stats: SkillStats | None = None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        buf.write(METRICS_SCHEMA + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", *(f"skill_success_ratio_{i}" for i in range(self.n_skills)),
                    "chain_solved", "max_zone"])
        for e in self.evals:
            w.writerow([e.step, *(f"{r:.6f}" for r in e.skill_success_ratios),
                        int(e.chain_solved), e.max_zone])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "n_skills": self.n_skills,
            "env_steps": self.env_steps,
            "episodes": self.episodes,
            "first_solve_step": self.first_solve_step,
            "solved_at_end": bool(self.evals and self.evals[-1].chain_solved),
            "max_zone": max((e.max_zone for e in self.evals), default=-1),
            "diverged": self.diverged,
            "divergence_message": self.divergence_message,
            "trials": [] if self.stats is None else self.stats.trials.tolist(),
            "successes": [] if self.stats is None else self.stats.successes.tolist(),
        }


@dataclass
class EvalResult:
    solved: bool
    max_zone: int
    trajectory: np.ndarray
    skills_completed: int


def agent_policy(agent: SacAgent) -> Policy:
    def act(s, g, i, t):
        return agent.sample_action(s, g, deterministic=True)[0]
    return act


def evaluate_chain(agent: SacAgent | None, chain: SkillChain, maze: MazeMap,
                   env_cfg: EnvConfig, policy: Policy | None = None) -> EvalResult:
    """Chain every skill from the demonstration's first state with a deterministic policy.

    Each skill gets its own step budget; the goal switches to the next
    skill as soon as the current one is reached.
    """
    if policy is None:
        policy = agent_policy(agent)
    env = DubinsMazeEnv(maze, env_cfg)
    s = env.reset(chain[0].s0)
    states = [s]
    max_zone = -1
    z = zone_of(s, maze)
    if z is not None:
        max_zone = z
    completed = 0
    for skill in chain:
        t = 0
        while not is_success(s, skill.goal, env_cfg):
            if t >= skill.t_max:
                return EvalResult(False, max_zone, np.array(states), completed)
            s, _ = env.step(policy(s, skill.goal, skill.index, t))
            t += 1
            states.append(s)
            z = zone_of(s, maze)
            if z is not None and z > max_zone:
                max_zone = z
        completed += 1
    return EvalResult(True, max_zone, np.array(states), completed)


def train(cfg: TrainConfig, chain: SkillChain, maze: MazeMap,
          on_eval: Callable[[EvalPoint, SacAgent], None] | None = None) -> TrainReport:
    """Run the skill-selection / rollout / overshoot loop for ``cfg.budget`` env steps.

    Every stored transition triggers one batch finalisation and one SAC
    gradient step once the buffer holds ``cfg.warmup`` transitions.
    Evaluations run on a snapshot of the agent every ``cfg.eval_period``
    steps (and at step 0) and are not counted in the budget.
    """
    seq = np.random.SeedSequence(cfg.seed)
    init_rng, actor_rng, batch_rng, select_rng, update_rng = (
        np.random.default_rng(s) for s in seq.spawn(5))
    agent = SacAgent(cfg.sac, maze.bounds, rng=init_rng)
    buf = ReplayBuffer(cfg.buffer_capacity)
    stats = SkillStats.empty(len(chain))
    env = DubinsMazeEnv(maze, cfg.env)
    report = TrainReport(n_skills=len(chain), stats=stats)
    n_skills = len(chain)

    def run_eval(step: int) -> bool:
        res = evaluate_chain(agent.snapshot(), chain, maze, cfg.env)
        point = EvalPoint(step, stats.ratios().tolist(), res.solved, res.max_zone,
                          res.skills_completed)
        report.evals.append(point)
        if res.solved and report.first_solve_step is None:
            report.first_solve_step = step
        if on_eval is not None:
            on_eval(point, agent)
        log.info("step %d: solved=%s max_zone=%d skills=%d/%d ratios=%s", step, res.solved,
                 res.max_zone, res.skills_completed, n_skills,
                 np.array2string(stats.ratios(), precision=2))
        return res.solved

    if cfg.budget == 0:
        return report
    solved = run_eval(0)

    steps = 0
    episode = 0
    # a chain whose every skill is reached from its own start cannot consume steps
    trivial = all(is_success(sk.s0, sk.goal, cfg.env) for sk in chain)
    try:
        while steps < cfg.budget and not (solved and cfg.stop_on_solve):
            if trivial and episode > 0:
                break
            i = select_skill(stats, select_rng)
            s = env.reset(chain[i].s0)
            t = 0
            k = 0
            while True:
                skill = chain[i]
                g = skill.goal
                if is_success(s, g, cfg.env):
                    success = True
                else:
                    a, _ = agent.sample_action(s, g, actor_rng)
                    s_next, _ = env.step(a)
                    steps += 1
                    t += 1
                    success = is_success(s_next, g, cfg.env)
                    done = success or t >= skill.t_max
                    buf.push(Transition(s, a, s_next, g, i, done, success, episode, k))
                    k += 1
                    s = s_next
                    if len(buf) >= cfg.warmup:
                        batch = finalize_batch(buf, agent, chain, cfg.sac.batch_size, cfg.env,
                                               batch_rng, use_bonus=not cfg.disable_bonus)
                        agent.update(batch, update_rng)
                    if steps % cfg.eval_period == 0:
                        solved = run_eval(steps) or solved
                    if not done:
                        if steps >= cfg.budget:
                            break
                        continue
                stats.record(i, success)
                if success and not cfg.disable_overshoot and i + 1 < n_skills:
                    # overshoot: keep going from here towards the next skill-goal
                    i += 1
                    t = 0
                    if steps >= cfg.budget:
                        break
                    continue
                break
            episode += 1
    except SacDivergence as exc:
        log.error("%s", exc)
        report.diverged = True
        report.divergence_message = str(exc)
    report.env_steps = steps
    report.episodes = episode
    if not report.diverged and steps % cfg.eval_period != 0:
        run_eval(steps)
    assert env.n_steps == steps
    return report
