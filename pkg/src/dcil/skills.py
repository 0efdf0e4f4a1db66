"""Skill extraction from one demonstration, skill statistics and selection."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dcil.env import CarState, GoalXY, project_goal
from dcil.rrt import Trajectory

SKILLS_FORMAT = "dcil-skills"
SKILLS_VERSION = 1
# pieces cut from a demonstration when no epsilon_dist is given
DEFAULT_N_SKILLS = 20


@dataclass(frozen=True)
class Skill:
    index: int
    s0: CarState
    goal: GoalXY
    t_max: int
    # demonstration indices spanned by the sub-trajectory
    start_index: int = 0
    end_index: int = 0

    @property
    def length(self) -> int:
        return self.end_index - self.start_index


@dataclass(frozen=True)
class SkillChain:
    skills: tuple[Skill, ...]
    epsilon_dist: float
    beta: float

    def __len__(self) -> int:
        return len(self.skills)

    def __getitem__(self, i: int) -> Skill:
        return self.skills[i]

    def __iter__(self):
        return iter(self.skills)

    @property
    def goals(self) -> np.ndarray:
        return np.array([s.goal for s in self.skills], dtype=float).reshape(-1, 2)


def budget(beta: float, n_steps: int) -> int:
    # round first so that e.g. 1.1 * 10 does not become 12
    return max(1, math.ceil(round(beta * n_steps, 9)))


def extract_skills(traj: Trajectory, epsilon_dist: float | None = None,
                   beta: float = 1.25) -> SkillChain:
    """Cut the goal-space projection of ``traj`` into pieces of arc length ``epsilon_dist``.

    Skill ``i`` starts from the demonstrated state opening piece ``i`` and
    must reach the goal that opens piece ``i + 1`` within
    ``ceil(beta * steps_in_piece)`` steps.  With ``epsilon_dist=None`` the
    demonstration is cut into ``DEFAULT_N_SKILLS`` pieces.
    """
    n = len(traj)
    if n < 2:
        raise ValueError("a demonstration needs at least two states")
    if beta <= 1:
        raise ValueError(f"beta must be > 1, got {beta}")
    seg = np.hypot(*np.diff(traj.goals, axis=0).T)
    total = float(seg.sum())
    if epsilon_dist is None:
        epsilon_dist = total / DEFAULT_N_SKILLS
    if not epsilon_dist > 0:
        raise ValueError(f"epsilon_dist must be > 0, got {epsilon_dist}")

    tol = 1e-9 * epsilon_dist
    cuts = [0]
    acc = 0.0
    for i, d in enumerate(seg, start=1):
        acc += d
        if acc >= epsilon_dist - tol:
            cuts.append(i)
            acc = 0.0
    if cuts[-1] != n - 1:
        if len(cuts) == 1:
            warnings.warn(f"demonstration arc length {total:.4g} is below epsilon_dist "
                          f"{epsilon_dist:.4g}; using a single whole-trajectory skill",
                          stacklevel=2)
        cuts.append(n - 1)

    skills = []
    for k, (a, b) in enumerate(zip(cuts[:-1], cuts[1:])):
        skills.append(Skill(index=k, s0=traj.state(a), goal=project_goal(traj.state(b)),
                            t_max=budget(beta, b - a), start_index=a, end_index=b))
    return SkillChain(tuple(skills), float(epsilon_dist), float(beta))


def next_skill(chain: SkillChain, i: int) -> Skill | None:
    if not 0 <= i < len(chain):
        raise IndexError(f"skill index {i} out of range")
    return chain.skills[i + 1] if i + 1 < len(chain) else None


@dataclass
class SkillStats:
    trials: np.ndarray
    successes: np.ndarray = field(default=None)

    def __post_init__(self):
        self.trials = np.asarray(self.trials, dtype=np.int64)
        if self.successes is None:
            self.successes = np.zeros_like(self.trials)
        self.successes = np.asarray(self.successes, dtype=np.int64)
        if np.any(self.successes > self.trials):
            raise ValueError("successes cannot exceed trials")

    @classmethod
    def empty(cls, n_skills: int) -> SkillStats:
        return cls(np.zeros(n_skills, dtype=np.int64))

    def record(self, i: int, success: bool) -> None:
        self.trials[i] += 1
        if success:
            self.successes[i] += 1

    def ratios(self) -> np.ndarray:
        """Raw success ratios (0 for untried skills)."""
        return np.divide(self.successes, self.trials, out=np.zeros(len(self.trials)),
                         where=self.trials > 0)

    def selection_probabilities(self) -> np.ndarray:
        ratio = (self.successes + 1.0) / (self.trials + 1.0)
        fitness = 1.0 / ratio
        return fitness / fitness.sum()


def select_skill(stats: SkillStats, rng: np.random.Generator) -> int:
    """Fitness-proportionate draw; fitness is the inverse Laplace-smoothed success ratio."""
    p = stats.selection_probabilities()
    if len(p) == 1:
        return 0
    i = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(i, len(p) - 1)


# --------------------------------------------------------------------------
# skill file


def format_skills(chain: SkillChain) -> str:
    lines = [f"# {SKILLS_FORMAT} {SKILLS_VERSION}",
             f"# epsilon_dist {chain.epsilon_dist!r}",
             f"# beta {chain.beta!r}",
             "# columns index s0_x s0_y s0_theta goal_x goal_y t_max start_index end_index"]
    for s in chain.skills:
        lines.append(f"{s.index} {s.s0.x:.17g} {s.s0.y:.17g} {s.s0.theta:.17g} "
                     f"{s.goal.x:.17g} {s.goal.y:.17g} {s.t_max} {s.start_index} {s.end_index}")
    return "\n".join(lines) + "\n"


def parse_skills(text: str) -> SkillChain:
    eps = beta = None
    skills = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            if key == "epsilon_dist":
                eps = float(value)
            elif key == "beta":
                beta = float(value)
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ValueError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        try:
            idx, x, y, th, gx, gy = int(parts[0]), *map(float, parts[1:6])
            t_max, a, b = (int(p) for p in parts[6:])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if idx != len(skills):
            raise ValueError(f"line {lineno}: skill index {idx} out of order")
        skills.append(Skill(idx, CarState(x, y, th), GoalXY(gx, gy), t_max, a, b))
    if eps is None or beta is None or not skills:
        raise ValueError("skill file is missing its header or records")
    return SkillChain(tuple(skills), eps, beta)


def save_skills(chain: SkillChain, path: str | Path) -> None:
    Path(path).write_text(format_skills(chain))


def load_skills(path: str | Path) -> SkillChain:
    return parse_skills(Path(path).read_text())
