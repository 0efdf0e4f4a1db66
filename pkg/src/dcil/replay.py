"""Replay buffer, hindsight relabelling and chaining-bonus reward finalisation.

Transitions are stored with reward 0.  Rewards are decided when a batch is
drawn: half of the batch keeps its commanded goal and gets the chaining
bonus on success, the other half is relabelled with a goal achieved later
in the same episode and gets the plain sparse reward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dcil.env import CarState, EnvConfig, GoalXY
from dcil.sac import Batch, SacAgent
from dcil.skills import SkillChain


@dataclass(frozen=True)
class Transition:
    s: CarState
    a: float
    s_next: CarState
    g: GoalXY
    skill_index: int
    done: bool
    success: bool
    episode_id: int
    step_in_episode: int
    r: float = 0.0


class ReplayBuffer:
    """FIFO ring buffer with a per-episode index for future-goal relabelling.

    Episodes are pushed contiguously; positions are tracked as absolute
    insertion counters so the episode index survives wrap-around.
    """

    def __init__(self, capacity: int = 1_000_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        cap = self.capacity
        self.s = np.zeros((cap, 3))
        self.a = np.zeros(cap)
        self.s_next = np.zeros((cap, 3))
        self.g = np.zeros((cap, 2))
        self.skill = np.zeros(cap, dtype=np.int64)
        self.done = np.zeros(cap, dtype=bool)
        self.success = np.zeros(cap, dtype=bool)
        self.episode = np.zeros(cap, dtype=np.int64)
        self.step_in_episode = np.zeros(cap, dtype=np.int64)
        self.total = 0              # transitions ever pushed
        # episode id -> [first absolute index still stored, last absolute index]
        self.episodes: dict[int, list[int]] = {}

    def __len__(self) -> int:
        return min(self.total, self.capacity)

    @property
    def oldest(self) -> int:
        return max(0, self.total - self.capacity)

    def push(self, t: Transition) -> None:
        pos = self.total % self.capacity
        if self.total >= self.capacity:
            self._evict(pos)
        self.s[pos] = t.s
        self.a[pos] = t.a
        self.s_next[pos] = t.s_next
        self.g[pos] = t.g
        self.skill[pos] = t.skill_index
        self.done[pos] = t.done
        self.success[pos] = t.success
        self.episode[pos] = t.episode_id
        self.step_in_episode[pos] = t.step_in_episode
        span = self.episodes.get(t.episode_id)
        if span is None:
            self.episodes[t.episode_id] = [self.total, self.total]
        else:
            if span[1] != self.total - 1:
                raise ValueError(f"episode {t.episode_id} is not contiguous in the buffer")
            span[1] = self.total
        self.total += 1

    def _evict(self, pos: int) -> None:
        ep = int(self.episode[pos])
        span = self.episodes[ep]
        span[0] += 1
        if span[0] > span[1]:
            del self.episodes[ep]

    def transition(self, abs_index: int) -> Transition:
        if not self.oldest <= abs_index < self.total:
            raise IndexError(f"transition {abs_index} is not stored")
        p = abs_index % self.capacity
        return Transition(CarState(*map(float, self.s[p])), float(self.a[p]),
                          CarState(*map(float, self.s_next[p])), GoalXY(*map(float, self.g[p])),
                          int(self.skill[p]), bool(self.done[p]), bool(self.success[p]),
                          int(self.episode[p]), int(self.step_in_episode[p]))

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform absolute indices of stored transitions."""
        if self.total == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.oldest + rng.integers(0, len(self), size=n)

    def future_indices(self, abs_idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """For each index, a uniform pick among itself and later steps of its episode."""
        ep = self.episode[abs_idx % self.capacity]
        last = np.fromiter((self.episodes[int(e)][1] for e in ep), dtype=np.int64, count=len(ep))
        span = last - abs_idx + 1
        return abs_idx + np.floor(rng.random(len(abs_idx)) * span).astype(np.int64)


def relabel_her(t_index: int, buf: ReplayBuffer, cfg: EnvConfig,
                rng: np.random.Generator) -> Transition:
    """Hindsight copy of stored transition ``t_index`` with a future achieved goal."""
    t = buf.transition(t_index)
    future = int(buf.future_indices(np.array([t_index]), rng)[0])
    p = future % buf.capacity
    g_new = GoalXY(float(buf.s_next[p, 0]), float(buf.s_next[p, 1]))
    success = bool(np.hypot(t.s_next.x - g_new.x, t.s_next.y - g_new.y) <= cfg.epsilon_success)
    return Transition(t.s, t.a, t.s_next, g_new, t.skill_index, success, success,
                      t.episode_id, t.step_in_episode, 1.0 if success else 0.0)


def finalize_batch(buf: ReplayBuffer, agent: SacAgent | None, chain: SkillChain,
                   batch_size: int, env_cfg: EnvConfig, rng: np.random.Generator,
                   use_bonus: bool = True) -> Batch:
    """Draw ``batch_size`` transitions and settle their rewards.

    The first ``batch_size - batch_size // 2`` keep their goal: a success is
    worth ``1 + clamp(Qbar(s', pi(s', g'), g'), 0, 1 / (1 - gamma))`` where
    ``g'`` is the next skill's goal (just 1 for the last skill or when the
    bonus is disabled).  The rest are relabelled with future achieved goals
    and rewarded 1 exactly when ``s'`` lies within the success radius.
    """
    idx = buf.sample_indices(batch_size, rng)
    n_her = batch_size // 2
    n_keep = batch_size - n_her
    keep = idx[:n_keep]
    her = idx[n_keep:]
    cap = buf.capacity

    pos = idx % cap
    s = buf.s[pos]
    a = buf.a[pos]
    s_next = buf.s_next[pos]
    g = buf.g[pos].copy()
    success = buf.success[pos].copy()
    r = np.zeros(batch_size)
    bonus = np.zeros(batch_size, dtype=bool)

    # commanded goals: sparse success reward plus next-skill value
    kp = pos[:n_keep]
    succ_keep = buf.success[kp]
    r[:n_keep] = succ_keep.astype(np.float64)
    if use_bonus and agent is not None and succ_keep.any():
        rows = np.flatnonzero(succ_keep & (buf.skill[kp] + 1 < len(chain)))
        if rows.size:
            g_next = chain.goals[buf.skill[kp[rows]] + 1]
            v = agent.target_value(buf.s_next[kp[rows]], g_next)
            r[rows] += np.clip(v, 0.0, 1.0 / (1.0 - agent.cfg.gamma))
            bonus[rows] = True

    # hindsight half: future strategy within the episode
    if n_her:
        fut = buf.future_indices(her, rng) % cap
        g[n_keep:] = buf.s_next[fut, :2]
        d = np.hypot(s_next[n_keep:, 0] - g[n_keep:, 0], s_next[n_keep:, 1] - g[n_keep:, 1])
        hit = d <= env_cfg.epsilon_success
        success[n_keep:] = hit
        r[n_keep:] = hit.astype(np.float64)

    her_flag = np.zeros(batch_size, dtype=bool)
    her_flag[n_keep:] = True
    return Batch(s=s, a=a, s_next=s_next, r=r, g=g, done=success, her=her_flag, bonus=bonus)
