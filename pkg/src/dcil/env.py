"""Dubins-car maze simulator.

The car moves at constant speed and only controls its heading rate.  Goals
live in the x-y plane, so the heading is part of the state but not of the
goal.  A step whose motion segment touches a wall or leaves the arena keeps
the old position (the heading still turns) and reports a collision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from dcil import kernels

MAP_FORMAT = "dcil-maze"
MAP_VERSION = 1


class CarState(NamedTuple):
    x: float
    y: float
    theta: float


class GoalXY(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class EnvConfig:
    speed: float = 0.5
    dt: float = 0.1
    u_max: float = 1.0
    epsilon_success: float = 0.2

    def __post_init__(self):
        for name in ("speed", "dt", "u_max", "epsilon_success"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"EnvConfig.{name} must be finite and > 0, got {value!r}")

    @property
    def step_length(self) -> float:
        return self.speed * self.dt


@dataclass(frozen=True)
class Wall:
    x0: float
    y0: float
    x1: float
    y1: float
    thickness: float

    def rect(self) -> tuple[float, float, float, float]:
        h = 0.5 * self.thickness
        return (min(self.x0, self.x1) - h, min(self.y0, self.y1) - h,
                max(self.x0, self.x1) + h, max(self.y0, self.y1) + h)


@dataclass(frozen=True)
class Zone:
    """Half-open box ``[xmin, xmax) x [ymin, ymax)``."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x < self.xmax and self.ymin <= y < self.ymax


class MapError(ValueError):
    """A maze file failed to parse or validate."""

    def __init__(self, message: str, line: int | None = None, source: str = "<map>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


@dataclass(frozen=True, eq=False)
class MazeMap:
    bounds: tuple[float, float, float, float]
    walls: tuple[Wall, ...]
    zones: tuple[Zone, ...]
    start: CarState
    exit: GoalXY
    name: str = "maze"
    wall_rects: np.ndarray = field(init=False, repr=False)
    bounds_arr: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rects = np.array([w.rect() for w in self.walls], dtype=float).reshape(-1, 4)
        object.__setattr__(self, "wall_rects", rects)
        object.__setattr__(self, "bounds_arr", np.array(self.bounds, dtype=float))

    @property
    def n_zones(self) -> int:
        return len(self.zones)


def project_goal(s: Sequence[float]) -> GoalXY:
    return GoalXY(s[0], s[1])


def goal_distance(s: Sequence[float], g: Sequence[float]) -> float:
    return math.hypot(s[0] - g[0], s[1] - g[1])


def is_success(s: Sequence[float], g: Sequence[float], cfg: EnvConfig) -> bool:
    return goal_distance(s, g) <= cfg.epsilon_success


def in_collision(x: float, y: float, maze: MazeMap) -> bool:
    """Point test against walls and the arena boundary."""
    return kernels.point_blocked(x, y, maze.wall_rects, maze.bounds_arr)


def step(s: CarState, a: float, cfg: EnvConfig, maze: MazeMap) -> tuple[CarState, bool]:
    """Advance the car one time step under heading-rate command ``a`` in [-1, 1]."""
    a = float(a)
    if not math.isfinite(a):
        raise ValueError(f"non-finite action {a!r}")
    a = min(1.0, max(-1.0, a))
    x, y, theta, collided = kernels.dubins_step(
        s[0], s[1], s[2], a, cfg.speed, cfg.dt, cfg.u_max,
        maze.wall_rects, maze.bounds_arr)
    return CarState(x, y, theta), collided


def reset_to(s0: Sequence[float], maze: MazeMap) -> CarState:
    s0 = CarState(float(s0[0]), float(s0[1]), float(s0[2]))
    if not all(math.isfinite(v) for v in s0):
        raise ValueError(f"non-finite reset state {s0!r}")
    if in_collision(s0.x, s0.y, maze):
        raise ValueError(f"reset state {s0!r} is inside a wall or outside the arena")
    if not -math.pi < s0.theta <= math.pi:
        s0 = CarState(s0.x, s0.y, kernels.wrap_angle(s0.theta))
    return s0


def zone_of(s: Sequence[float], maze: MazeMap) -> int | None:
    for i, zone in enumerate(maze.zones):
        if zone.contains(s[0], s[1]):
            return i
    return None


class DubinsMazeEnv:
    """Stateful wrapper used by rollouts: owns the current state only."""

    def __init__(self, maze: MazeMap, cfg: EnvConfig | None = None):
        self.maze = maze
        self.cfg = cfg or EnvConfig()
        self.state: CarState | None = None
        self.n_steps = 0

    def reset(self, s0: Sequence[float]) -> CarState:
        self.state = reset_to(s0, self.maze)
        return self.state

    def step(self, a: float) -> tuple[CarState, bool]:
        if self.state is None:
            raise RuntimeError("step() before reset()")
        self.state, collided = step(self.state, a, self.cfg, self.maze)
        self.n_steps += 1
        return self.state, collided


# --------------------------------------------------------------------------
# map files


def _floats(tokens: list[str], n: int, line: int, source: str) -> list[float]:
    if len(tokens) != n:
        raise MapError(f"expected {n} numbers, got {len(tokens)}", line, source)
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise MapError(f"bad number: {exc}", line, source) from None
    if not all(math.isfinite(v) for v in values):
        raise MapError("non-finite number", line, source)
    return values


def parse_maze(text: str, source: str = "<map>") -> MazeMap:
    """Parse the line-oriented maze format.

    ::

        dcil-maze 1
        name canonical
        bounds xmin ymin xmax ymax
        wall x0 y0 x1 y1 thickness      # axis-aligned, repeated
        zone xmin ymin xmax ymax        # ordered, repeated
        start x y theta
        exit x y
    """
    bounds = start = exit_ = None
    name = Path(source).stem
    walls: list[Wall] = []
    zones: list[Zone] = []
    zone_lines: list[int] = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if not header_seen:
            if key != MAP_FORMAT or rest != [str(MAP_VERSION)]:
                raise MapError(f"expected header '{MAP_FORMAT} {MAP_VERSION}'", lineno, source)
            header_seen = True
            continue
        if key == "name":
            name = " ".join(rest)
        elif key == "bounds":
            b = _floats(rest, 4, lineno, source)
            if not (b[0] < b[2] and b[1] < b[3]):
                raise MapError("bounds must satisfy xmin < xmax and ymin < ymax", lineno, source)
            bounds = tuple(b)
        elif key == "wall":
            x0, y0, x1, y1, th = _floats(rest, 5, lineno, source)
            if x0 != x1 and y0 != y1:
                raise MapError("wall is not axis-aligned", lineno, source)
            if th <= 0:
                raise MapError("wall thickness must be > 0", lineno, source)
            walls.append(Wall(x0, y0, x1, y1, th))
        elif key == "zone":
            z = _floats(rest, 4, lineno, source)
            if not (z[0] < z[2] and z[1] < z[3]):
                raise MapError("empty zone", lineno, source)
            zones.append(Zone(*z))
            zone_lines.append(lineno)
        elif key == "start":
            start = CarState(*_floats(rest, 3, lineno, source))
        elif key == "exit":
            exit_ = GoalXY(*_floats(rest, 2, lineno, source))
        else:
            raise MapError(f"unknown field {key!r}", lineno, source)
    if not header_seen:
        raise MapError("empty map file", None, source)
    for label, value in (("bounds", bounds), ("start", start), ("exit", exit_)):
        if value is None:
            raise MapError(f"missing '{label}' line", None, source)
    if not zones:
        raise MapError("at least one zone is required", None, source)
    for i in range(len(zones)):
        for j in range(i):
            a, b = zones[i], zones[j]
            if a.xmin < b.xmax and b.xmin < a.xmax and a.ymin < b.ymax and b.ymin < a.ymax:
                raise MapError(f"zone {i} overlaps zone {j}", zone_lines[i], source)
    maze = MazeMap(bounds=bounds, walls=tuple(walls), zones=tuple(zones),
                   start=CarState(start.x, start.y, kernels.wrap_angle(start.theta)),
                   exit=exit_, name=name)
    if in_collision(start.x, start.y, maze):
        raise MapError("start lies inside a wall or outside bounds", None, source)
    if in_collision(exit_.x, exit_.y, maze):
        raise MapError("exit lies inside a wall or outside bounds", None, source)
    if zone_of(start, maze) != 0:
        raise MapError("zone 0 must contain the start", None, source)
    if zone_of(exit_, maze) != len(zones) - 1:
        raise MapError("the last zone must contain the exit", None, source)
    return maze


def format_maze(maze: MazeMap) -> str:
    lines = [f"{MAP_FORMAT} {MAP_VERSION}", f"name {maze.name}",
             "bounds " + " ".join(repr(v) for v in maze.bounds)]
    lines += [f"wall {w.x0!r} {w.y0!r} {w.x1!r} {w.y1!r} {w.thickness!r}" for w in maze.walls]
    lines += [f"zone {z.xmin!r} {z.ymin!r} {z.xmax!r} {z.ymax!r}" for z in maze.zones]
    lines.append(f"start {maze.start.x!r} {maze.start.y!r} {maze.start.theta!r}")
    lines.append(f"exit {maze.exit.x!r} {maze.exit.y!r}")
    return "\n".join(lines) + "\n"


def load_maze(path: str | Path) -> MazeMap:
    path = Path(path)
    return parse_maze(path.read_text(), source=str(path))


def builtin_maze(name: str = "canonical") -> MazeMap:
    """Load one of the maps shipped in ``dcil/maps`` (``canonical``, ``two_skill``)."""
    ref = resources.files("dcil.maps").joinpath(f"{name}.maze")
    return parse_maze(ref.read_text(), source=f"{name}.maze")


def resolve_maze(spec: str | Path | None) -> MazeMap:
    """A builtin map name or a path to a map file."""
    if spec is None:
        return builtin_maze("canonical")
    path = Path(spec)
    if path.exists():
        return load_maze(path)
    if path.parent == Path(".") and path.stem in builtin_maze_names():
        return builtin_maze(path.stem)
    raise FileNotFoundError(f"no maze file or builtin map named {str(spec)!r}")


def builtin_maze_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("dcil.maps").iterdir()
                  if p.name.endswith(".maze"))
