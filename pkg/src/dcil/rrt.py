"""Kinodynamic RRT demonstrations and the trajectory file format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dcil import kernels
from dcil.env import CarState, EnvConfig, GoalXY, MazeMap, is_success

TRAJ_FORMAT = "dcil-trajectory"
TRAJ_VERSION = 1


class PlannerFailure(RuntimeError):
    """The tree ran out of nodes before reaching the exit goal."""

    def __init__(self, message: str, n_nodes: int):
        super().__init__(message)
        self.n_nodes = n_nodes


class TrajectoryParseError(ValueError):
    def __init__(self, message: str, record: int | None = None, line: int | None = None):
        self.record = record
        self.line = line
        super().__init__(message)


@dataclass
class Trajectory:
    states: np.ndarray  # (n, 3) rows of x, y, theta
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return self.states.shape[0]

    def state(self, i: int) -> CarState:
        return CarState(*map(float, self.states[i]))

    @property
    def goals(self) -> np.ndarray:
        return self.states[:, :2]

    def arc_length(self) -> float:
        """Polyline length of the goal-space projection."""
        if len(self) < 2:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(self.goals, axis=0).T)))

    def controls(self, cfg: EnvConfig) -> np.ndarray:
        """Recover the per-step actions from consecutive headings."""
        dtheta = np.diff(self.states[:, 2])
        dtheta = (dtheta + math.pi) % (2 * math.pi) - math.pi
        return dtheta / (cfg.u_max * cfg.dt)


@dataclass(frozen=True)
class RrtLimits:
    max_nodes: int = 50_000
    goal_bias: float = 0.1
    expand_steps: int = 10

    def __post_init__(self):
        if self.max_nodes < 1 or self.expand_steps < 1:
            raise ValueError("max_nodes and expand_steps must be positive")
        if not 0.0 <= self.goal_bias <= 1.0:
            raise ValueError("goal_bias must lie in [0, 1]")


def rrt_plan(maze: MazeMap, start: CarState, exit_goal: GoalXY, cfg: EnvConfig,
             rng_seed: int, limits: RrtLimits = RrtLimits()) -> Trajectory:
    """Grow a tree of constant-control arcs from ``start`` until one ends in the exit disk.

    Each expansion samples a goal-space point (the exit with probability
    ``goal_bias``), picks the tree node nearest to it in x-y, and integrates
    a uniformly drawn action for ``expand_steps`` steps.  Arcs that collide
    are dropped whole.  The returned trajectory is the raw branch, no smoothing.
    """
    start = CarState(*map(float, start))
    if kernels.point_blocked(start.x, start.y, maze.wall_rects, maze.bounds_arr):
        raise ValueError("start state is in collision")
    meta = {
        "maze": maze.name,
        "rng_seed": int(rng_seed),
        "env": {"speed": cfg.speed, "dt": cfg.dt, "u_max": cfg.u_max,
                "epsilon_success": cfg.epsilon_success},
        "rrt": {"max_nodes": limits.max_nodes, "goal_bias": limits.goal_bias,
                "expand_steps": limits.expand_steps},
        "exit": [exit_goal[0], exit_goal[1]],
    }
    if is_success(start, exit_goal, cfg):
        meta["n_nodes"] = 1
        return Trajectory(np.array([start]), meta)

    rng = np.random.default_rng(rng_seed)
    n_max = limits.max_nodes
    nodes = np.empty((n_max, 3))
    parents = np.empty(n_max, dtype=np.int64)
    arcs: list[np.ndarray] = [np.empty((0, 3))]
    nodes[0] = start
    parents[0] = -1
    n = 1
    xmin, ymin, xmax, ymax = maze.bounds
    gx, gy = float(exit_goal[0]), float(exit_goal[1])
    attempts = 0
    max_attempts = 20 * n_max
    while n < n_max and attempts < max_attempts:
        attempts += 1
        if rng.random() < limits.goal_bias:
            qx, qy = gx, gy
        else:
            qx = xmin + (xmax - xmin) * rng.random()
            qy = ymin + (ymax - ymin) * rng.random()
        near = kernels.nearest_index(nodes, n, qx, qy)
        action = 2.0 * rng.random() - 1.0
        arc, status = kernels.propagate(
            nodes[near, 0], nodes[near, 1], nodes[near, 2], action, limits.expand_steps,
            cfg.speed, cfg.dt, cfg.u_max, maze.wall_rects, maze.bounds_arr,
            gx, gy, cfg.epsilon_success)
        if status < 0:
            continue
        nodes[n] = arc[-1]
        parents[n] = near
        arcs.append(np.array(arc))
        n += 1
        if status < limits.expand_steps or is_success(arc[-1], exit_goal, cfg):
            meta["n_nodes"] = n
            return Trajectory(_branch(n - 1, parents, arcs, start), meta)
    raise PlannerFailure(f"no path to exit after {n} nodes ({attempts} expansions)", n)


def _branch(leaf: int, parents: np.ndarray, arcs: list[np.ndarray], start: CarState) -> np.ndarray:
    pieces = []
    i = leaf
    while i > 0:
        pieces.append(arcs[i])
        i = parents[i]
    pieces.append(np.array([start], dtype=float))
    return np.concatenate(pieces[::-1], axis=0)


# --------------------------------------------------------------------------
# file format


def format_trajectory(t: Trajectory) -> str:
    lines = [f"# {TRAJ_FORMAT} {TRAJ_VERSION}",
             f"# meta {json.dumps(t.meta, sort_keys=True)}",
             f"# n_states {len(t)}",
             "# columns x y theta"]
    lines += [f"{x:.17g} {y:.17g} {th:.17g}" for x, y, th in t.states.tolist()]
    return "\n".join(lines) + "\n"


def parse_trajectory(text: str) -> Trajectory:
    meta: dict[str, Any] = {}
    expected = None
    rows: list[tuple[float, float, float]] = []
    header_ok = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(" ")
            if key == TRAJ_FORMAT:
                if value.strip() != str(TRAJ_VERSION):
                    raise TrajectoryParseError(f"unsupported version {value!r}", line=lineno)
                header_ok = True
            elif key == "meta":
                try:
                    meta = json.loads(value)
                except json.JSONDecodeError as exc:
                    raise TrajectoryParseError(f"bad meta header: {exc}", line=lineno) from None
            elif key == "n_states":
                expected = int(value)
            continue
        if not header_ok:
            raise TrajectoryParseError(f"missing '# {TRAJ_FORMAT} {TRAJ_VERSION}' header",
                                       line=lineno)
        record = len(rows)
        last = f"last valid record is {record - 1}" if record else "no valid records"
        parts = line.split()
        if len(parts) != 3:
            raise TrajectoryParseError(
                f"record {record} (line {lineno}): expected 3 fields, got {len(parts)}; {last}",
                record=record, line=lineno)
        try:
            x, y, th = (float(p) for p in parts)
        except ValueError:
            raise TrajectoryParseError(
                f"record {record} (line {lineno}): not a number; {last}",
                record=record, line=lineno) from None
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(th)):
            raise TrajectoryParseError(
                f"record {record} (line {lineno}): non-finite coordinate",
                record=record, line=lineno)
        rows.append((x, y, th))
    if not header_ok:
        raise TrajectoryParseError("empty or headerless trajectory file")
    if not rows:
        raise TrajectoryParseError("trajectory has no records")
    if expected is not None and len(rows) != expected:
        raise TrajectoryParseError(
            f"truncated: expected {expected} records, got {len(rows)}; "
            f"last valid record is {len(rows) - 1}", record=len(rows))
    return Trajectory(np.array(rows), meta)


def save_trajectory(t: Trajectory, path: str | Path) -> None:
    Path(path).write_text(format_trajectory(t))


def load_trajectory(path: str | Path) -> Trajectory:
    return parse_trajectory(Path(path).read_text())
