"""Particle World - a 2-D navigation task with four axis-aligned proximity sensors."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .policy import ActionChoice, DimensionMismatchError, Network, forward, choose

logger = logging.getLogger(__name__)

# Direction indices shared by sensors, outputs and properties.
RIGHT, LEFT, UP, DOWN = 0, 1, 2, 3
DIRECTION_NAMES = ("Right", "Left", "Up", "Down")
# Unit displacement (dx, dy) per direction; Up is +y.
DIRECTION_DELTAS: tuple[tuple[int, int], ...] = ((1, 0), (-1, 0), (0, 1), (0, -1))

STEP_SCALE = 0.055
GOAL_RADIUS = 0.05
MAX_STEPS = 100
MIN_START_TARGET_DISTANCE = 0.3

REWARD_TARGET = 5.0
REWARD_COLLISION = -1.0

MAP_IDS: tuple[int, ...] = (0, 1, 2, 3, 4)


class MapFormatError(ValueError):
    """Raised when a map file is malformed or places obstacles outside the unit square."""


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned obstacle `[xmin, xmax] x [ymin, ymax]`."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax


@dataclass(frozen=True)
class WorldMap:
    id: int
    obstacles: tuple[Rect, ...] = ()

    def __post_init__(self) -> None:
        for rect in self.obstacles:
            if not (
                0.0 <= rect.xmin <= rect.xmax <= 1.0
                and 0.0 <= rect.ymin <= rect.ymax <= 1.0
            ):
                raise MapFormatError(f"map {self.id}: obstacle {rect} leaves the unit square")

    def blocked(self, x: float, y: float) -> bool:
        """True when (x, y) lies in a closed obstacle."""
        return any(rect.contains(x, y) for rect in self.obstacles)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorldMap":
        try:
            obstacles = tuple(
                Rect(float(o["xmin"]), float(o["xmax"]), float(o["ymin"]), float(o["ymax"]))
                for o in data.get("obstacles", [])
            )
            return cls(id=int(data["id"]), obstacles=obstacles)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, MapFormatError):
                raise
            raise MapFormatError(f"malformed map: {e}") from e

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "obstacles": [
                {"xmin": r.xmin, "xmax": r.xmax, "ymin": r.ymin, "ymax": r.ymax}
                for r in self.obstacles
            ],
        }


@dataclass(frozen=True)
class EnvState:
    agent: tuple[float, float]
    target: tuple[float, float]
    map: WorldMap


@dataclass(frozen=True)
class Observation:
    """Sensor readings (Right, Left, Up, Down) followed by agent and target positions."""

    sensors: tuple[float, float, float, float]
    agent_pos: tuple[float, float]
    target_pos: tuple[float, float]

    def vector(self) -> np.ndarray:
        return np.array([*self.sensors, *self.agent_pos, *self.target_pos], dtype=np.float64)


class Terminal(str, Enum):
    NONE = "none"
    TARGET_REACHED = "target_reached"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class StepOutcome:
    next: EnvState
    reward: float
    terminal: Terminal


@dataclass(frozen=True)
class EnvConfig:
    """Episode settings; `map_dir` overrides the bundled fixture maps."""

    max_steps: int = MAX_STEPS
    goal_radius: float = GOAL_RADIUS
    min_start_target_distance: float = MIN_START_TARGET_DISTANCE
    map_dir: str | None = None


@dataclass
class EpisodeMetrics:
    """Per-episode counters; interventions <= shield_invocations <= steps."""

    steps: int = 0
    shield_invocations: int = 0
    interventions: int = 0
    collisions: int = 0
    success: bool = False
    wall_time_ns: int = 0
    unshielded_baseline_time_ns: int | None = None
    reward: float = 0.0
    terminal: Terminal = Terminal.NONE
    map_id: int = 0
    seed: int = 0
    mode: str = "noshield"
    trace: list[tuple[float, float]] | None = field(default=None, repr=False)


# A hook sees the observation and the proposed action and returns the action to play.
StepHook = Callable[[Observation, ActionChoice, np.ndarray], ActionChoice]


# === Maps ===

_map_cache: dict[tuple[str | None, int], WorldMap] = {}


def load_map(map_id: int, map_dir: str | Path | None = None) -> WorldMap:
    """Load fixture map `map_id` from `map_dir` or the bundled data directory."""
    key = (str(map_dir) if map_dir is not None else None, map_id)
    if key in _map_cache:
        return _map_cache[key]

    name = f"map{map_id}.json"
    try:
        if map_dir is not None:
            text = (Path(map_dir) / name).read_text(encoding="utf-8")
        else:
            text = resources.files("guided_shield").joinpath("data", "maps", name).read_text(
                encoding="utf-8"
            )
    except FileNotFoundError as e:
        raise MapFormatError(f"map {map_id} not found") from e
    try:
        world = WorldMap.from_dict(json.loads(text))
    except json.JSONDecodeError as e:
        raise MapFormatError(f"{name}: invalid JSON ({e})") from e
    _map_cache[key] = world
    return world


# === Sensors ===

def _contact(world: WorldMap, x: float, y: float, direction: int) -> float:
    """Coordinate along the ray axis where the first wall or obstacle face is met."""
    if direction == RIGHT:
        face = 1.0
        for r in world.obstacles:
            if r.ymin <= y <= r.ymax and r.xmin >= x:
                face = min(face, r.xmin)
        return face
    if direction == LEFT:
        face = 0.0
        for r in world.obstacles:
            if r.ymin <= y <= r.ymax and r.xmax <= x:
                face = max(face, r.xmax)
        return face
    if direction == UP:
        face = 1.0
        for r in world.obstacles:
            if r.xmin <= x <= r.xmax and r.ymin >= y:
                face = min(face, r.ymin)
        return face
    face = 0.0
    for r in world.obstacles:
        if r.xmin <= x <= r.xmax and r.ymax <= y:
            face = max(face, r.ymax)
    return face


def _sensor(world: WorldMap, x: float, y: float, direction: int) -> float:
    face = _contact(world, x, y, direction)
    along = x if direction in (RIGHT, LEFT) else y
    return float(np.clip(abs(face - along), 0.0, 1.0))


def observe(state: EnvState) -> Observation:
    x, y = state.agent
    sensors = tuple(_sensor(state.map, x, y, d) for d in range(4))
    return Observation(
        sensors=sensors,  # type: ignore[arg-type]
        agent_pos=(float(x), float(y)),
        target_pos=(float(state.target[0]), float(state.target[1])),
    )


# === Dynamics ===

def displacement(action: ActionChoice) -> float:
    return float(np.clip(action.magnitude, 0.0, 1.0)) * STEP_SCALE


def is_collision(sensors: tuple[float, ...] | np.ndarray, action: ActionChoice) -> bool:
    """A move collides iff its displacement strictly exceeds the sensor reading."""
    return displacement(action) > sensors[action.direction]


def step(
    state: EnvState,
    action: ActionChoice,
    goal_radius: float = GOAL_RADIUS,
) -> StepOutcome:
    if not 0 <= action.direction < 4:
        raise DimensionMismatchError(f"direction {action.direction} outside 0..3")

    x, y = state.agent
    d = action.direction
    disp = displacement(action)
    sensor = _sensor(state.map, x, y, d)
    if disp > sensor:
        return StepOutcome(next=state, reward=REWARD_COLLISION, terminal=Terminal.COLLISION)

    # Never step past the contact face when the displacement equals the reading.
    face = _contact(state.map, x, y, d)
    dx, dy = DIRECTION_DELTAS[d]
    if dx > 0:
        x = min(x + disp, face)
    elif dx < 0:
        x = max(x - disp, face)
    elif dy > 0:
        y = min(y + disp, face)
    else:
        y = max(y - disp, face)

    moved = EnvState(agent=(x, y), target=state.target, map=state.map)
    if np.hypot(x - state.target[0], y - state.target[1]) <= goal_radius:
        return StepOutcome(next=moved, reward=REWARD_TARGET, terminal=Terminal.TARGET_REACHED)
    return StepOutcome(next=moved, reward=0.0, terminal=Terminal.NONE)


def reset(world: WorldMap, rng: np.random.Generator, config: EnvConfig | None = None) -> EnvState:
    """Sample start and target uniformly over free space, at least the minimum distance apart."""
    cfg = config or EnvConfig()

    def free_point() -> tuple[float, float]:
        while True:
            x, y = rng.random(2)
            if not world.blocked(float(x), float(y)):
                return float(x), float(y)

    while True:
        agent = free_point()
        target = free_point()
        if np.hypot(agent[0] - target[0], agent[1] - target[1]) >= cfg.min_start_target_distance:
            return EnvState(agent=agent, target=target, map=world)


# === Episodes ===

def run_episode(
    net: Network,
    map_id: int,
    seed: int,
    step_hook: StepHook | None = None,
    config: EnvConfig | None = None,
    record_trace: bool = False,
) -> EpisodeMetrics:
    """Play one episode; `step_hook` may replace each proposed action before it is applied."""
    if net.input_dim != 8 or net.output_dim != 4:
        raise DimensionMismatchError(
            f"Particle World needs an 8-input, 4-output network, got "
            f"{net.input_dim}-input, {net.output_dim}-output"
        )
    cfg = config or EnvConfig()
    world = load_map(map_id, cfg.map_dir)
    rng = np.random.default_rng(seed)
    state = reset(world, rng, cfg)

    metrics = EpisodeMetrics(map_id=map_id, seed=seed)
    if record_trace:
        metrics.trace = [state.agent]

    start = time.perf_counter_ns()
    terminal = Terminal.TIMEOUT
    for _ in range(cfg.max_steps):
        obs = observe(state)
        outputs = forward(net, obs.vector())
        action = choose(outputs)
        if step_hook is not None:
            action = step_hook(obs, action, outputs)

        outcome = step(state, action, cfg.goal_radius)
        metrics.steps += 1
        metrics.reward += outcome.reward
        state = outcome.next
        if record_trace:
            metrics.trace.append(state.agent)  # type: ignore[union-attr]

        if outcome.terminal is not Terminal.NONE:
            terminal = outcome.terminal
            break
    metrics.wall_time_ns = time.perf_counter_ns() - start

    metrics.terminal = terminal
    metrics.success = terminal is Terminal.TARGET_REACHED
    metrics.collisions = int(terminal is Terminal.COLLISION)
    return metrics
