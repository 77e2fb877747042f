"""Runtime shield for step-wise safety properties and the verification-guided executor."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import Sequence

import numpy as np

from .compress import RegionIndex, contains
from .env import (
    STEP_SCALE,
    EnvConfig,
    EpisodeMetrics,
    Observation,
    run_episode,
)
from .policy import ActionChoice, DimensionMismatchError, Network, choose, forward
from .property import SafetyProperty, holds

__all__ = [
    "DEFAULT_SAFETY_GAP",
    "Mode",
    "RunReport",
    "ShieldDecision",
    "ShieldSpec",
    "action_vector",
    "enforce",
    "format_one_decimal",
    "gain_pct",
    "report",
    "run_guided",
]

logger = logging.getLogger(__name__)

DEFAULT_SAFETY_GAP = 1e-4


class Mode(str, Enum):
    NOSHIELD = "noshield"
    FULL = "full"
    GUIDED = "guided"


@dataclass(frozen=True)
class ShieldSpec:
    """Properties read as "never violate"; each check is evaluated `formula_multiplier` times.

    Properties are stored with margin 0: a margin widens only what the
    verifier and splitter treat as unsafe, while the runtime check decides on
    the action the environment will execute.
    """

    properties: tuple[SafetyProperty, ...]
    formula_multiplier: int = 1
    safety_gap: float = DEFAULT_SAFETY_GAP

    def __post_init__(self) -> None:
        if self.formula_multiplier < 1:
            raise ValueError("formula_multiplier must be >= 1")
        if self.safety_gap < 0:
            raise ValueError("safety_gap must be >= 0")
        object.__setattr__(
            self,
            "properties",
            tuple(p if p.margin == 0.0 else p.with_margin(0.0) for p in self.properties),
        )


@dataclass(frozen=True)
class ShieldDecision:
    original: ActionChoice
    final: ActionChoice
    overridden: bool


def action_vector(choice: ActionChoice, output_dim: int = 4) -> np.ndarray:
    """Output vector whose argmax is `choice`.

    The chosen component carries the magnitude; every other component sits
    1 below it, so margin-0 selectors evaluate as for the raw output.
    """
    y = np.full(output_dim, choice.magnitude - 1.0, dtype=np.float64)
    y[choice.direction] = choice.magnitude
    return y


def _violates(spec: ShieldSpec, x: np.ndarray, y: np.ndarray) -> bool:
    violated = False
    for _ in range(spec.formula_multiplier):
        violated = any(holds(p, x, y) for p in spec.properties)
    return violated


def enforce(
    spec: ShieldSpec,
    net: Network,
    obs: Observation,
    proposed: ActionChoice,
    outputs: np.ndarray | None = None,
) -> ShieldDecision:
    """Pass a safe action through unchanged, otherwise replace it with a safe one.

    Replacement order: the remaining directions by descending policy value
    (positive values only, magnitude clipped to [0, 1]); then the proposed
    direction shortened to `sensor - safety_gap`; then standing still.
    """
    x = obs.vector()
    if outputs is None:
        outputs = forward(net, x)
    if outputs.shape != (net.output_dim,):
        raise DimensionMismatchError(f"outputs have shape {outputs.shape}")

    n_out = net.output_dim
    raw = choose(outputs)
    y = outputs if proposed == raw else action_vector(proposed, n_out)
    if not _violates(spec, x, y):
        return ShieldDecision(proposed, proposed, overridden=False)

    order = sorted(range(n_out), key=lambda d: (-outputs[d], d))
    for d in order:
        if outputs[d] <= 0 or d == proposed.direction:
            continue
        candidate = ActionChoice(d, float(np.clip(outputs[d], 0.0, 1.0)))
        if not _violates(spec, x, action_vector(candidate, n_out)):
            return ShieldDecision(proposed, candidate, overridden=True)

    sensor = obs.sensors[proposed.direction]
    shortened = ActionChoice(
        proposed.direction,
        float(np.clip((sensor - spec.safety_gap) / STEP_SCALE, 0.0, 1.0)),
    )
    if not _violates(spec, x, action_vector(shortened, n_out)):
        return ShieldDecision(proposed, shortened, overridden=True)

    return ShieldDecision(proposed, ActionChoice(proposed.direction, 0.0), overridden=True)


def run_guided(
    net: Network,
    spec: ShieldSpec,
    index: RegionIndex | None,
    map_id: int,
    seed: int,
    mode: Mode | str,
    config: EnvConfig | None = None,
    record_trace: bool = False,
) -> EpisodeMetrics:
    """One episode with the shield off, always on, or on only inside unsafe regions."""
    mode = Mode(mode)
    if mode is Mode.GUIDED and index is None:
        raise ValueError("guided mode needs a region index")

    counters = {"invocations": 0, "interventions": 0}

    def shielded(obs: Observation, action: ActionChoice, outputs: np.ndarray) -> ActionChoice:
        counters["invocations"] += 1
        decision = enforce(spec, net, obs, action, outputs)
        if decision.overridden:
            counters["interventions"] += 1
        return decision.final

    def guided(obs: Observation, action: ActionChoice, outputs: np.ndarray) -> ActionChoice:
        if contains(index, obs.vector()):  # type: ignore[arg-type]
            return shielded(obs, action, outputs)
        return action

    hook = {Mode.NOSHIELD: None, Mode.FULL: shielded, Mode.GUIDED: guided}[mode]
    metrics = run_episode(net, map_id, seed, step_hook=hook, config=config, record_trace=record_trace)
    metrics.shield_invocations = counters["invocations"]
    metrics.interventions = counters["interventions"]
    metrics.mode = mode.value
    return metrics


# === Reporting ===

@dataclass(frozen=True)
class RunReport:
    mode: str
    episodes: int
    active_time_pct: float
    interventions_pct: float
    collisions_pct: float
    success_pct: float
    overhead: float
    gain_pct: float | None = None
    seed: int | None = None


def gain_pct(overhead_full: float, overhead_guided: float) -> float:
    """Relative overhead reduction of guided over full shielding, in percent."""
    full = Decimal(repr(float(overhead_full)))
    guided = Decimal(repr(float(overhead_guided)))
    if full == 0:
        return 0.0
    return float((full - guided) / full * 100)


def format_one_decimal(value: float) -> str:
    return str(Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def _mean_time(runs: Sequence[EpisodeMetrics]) -> float:
    return float(np.mean([m.wall_time_ns for m in runs]))


def report(
    runs: Sequence[EpisodeMetrics],
    baseline: Sequence[EpisodeMetrics],
    full_runs: Sequence[EpisodeMetrics] | None = None,
    seed: int | None = None,
) -> RunReport:
    """Aggregate one mode's episodes against a no-shield baseline on the same seeds."""
    if not runs or not baseline:
        raise ValueError("report needs non-empty run and baseline lists")

    steps = sum(m.steps for m in runs)
    base_time = _mean_time(baseline)
    overhead = _mean_time(runs) / base_time if base_time > 0 else float("nan")

    gain = None
    if full_runs:
        overhead_full = _mean_time(full_runs) / base_time if base_time > 0 else float("nan")
        gain = gain_pct(overhead_full, overhead)

    return RunReport(
        mode=runs[0].mode,
        episodes=len(runs),
        active_time_pct=100.0 * sum(m.shield_invocations for m in runs) / steps if steps else 0.0,
        interventions_pct=100.0 * sum(m.interventions for m in runs) / steps if steps else 0.0,
        collisions_pct=100.0 * sum(m.collisions for m in runs) / len(runs),
        success_pct=100.0 * sum(int(m.success) for m in runs) / len(runs),
        overhead=overhead,
        gain_pct=gain,
        seed=seed,
    )
