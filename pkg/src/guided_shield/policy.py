"""Policy networks - feed-forward ReLU MLPs, action selection and a desk-scale trainer."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Literal, Sequence

import numpy as np

if TYPE_CHECKING:
    from .env import EnvConfig

logger = logging.getLogger(__name__)

Activation = Literal["relu", "identity"]
ACTIVATIONS: tuple[str, ...] = ("relu", "identity")

# Particle World topology: 8 inputs, two hidden layers of 16, 4 directions.
TOPOLOGY: tuple[int, ...] = (8, 16, 16, 4)


class NetworkFormatError(ValueError):
    """Raised when a weight file or layer list does not describe a valid network."""


class DimensionMismatchError(ValueError):
    """Raised when a vector does not match the dimension it is evaluated against."""


class TrainingBudgetExceeded(RuntimeError):
    """Raised when the trainer runs out of iterations below its success floor."""


@dataclass(frozen=True)
class Layer:
    """One dense layer: `activation(weights @ x + bias)`."""

    weights: np.ndarray  # (out, in), weights[i][j] multiplies input j into output i
    bias: np.ndarray  # (out,)
    activation: Activation

    @property
    def in_dim(self) -> int:
        return int(self.weights.shape[1])

    @property
    def out_dim(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class Network:
    """An immutable, validated ReLU MLP."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        _validate_layers(self.layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.layers[:-1])

    @classmethod
    def from_arrays(
        cls,
        weights: Sequence[Any],
        biases: Sequence[Any],
    ) -> "Network":
        """Build a network with relu hidden layers and an identity output layer."""
        if len(weights) != len(biases):
            raise NetworkFormatError("weights and biases differ in layer count")
        layers = []
        for k, (w, b) in enumerate(zip(weights, biases)):
            activation: Activation = "identity" if k == len(weights) - 1 else "relu"
            layers.append(_make_layer(w, b, activation, k))
        return cls(tuple(layers))

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "layers": [
                {
                    "weights": layer.weights.tolist(),
                    "bias": layer.bias.tolist(),
                    "activation": layer.activation,
                }
                for layer in self.layers
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Network":
        if not isinstance(data, dict) or "layers" not in data:
            raise NetworkFormatError("weight file must be an object with a 'layers' list")
        raw_layers = data["layers"]
        if not isinstance(raw_layers, list) or not raw_layers:
            raise NetworkFormatError("weight file has an empty layer list")

        layers = []
        for k, raw in enumerate(raw_layers):
            try:
                layers.append(
                    _make_layer(raw["weights"], raw["bias"], raw["activation"], k)
                )
            except (KeyError, TypeError) as e:
                raise NetworkFormatError(f"layer {k}: missing or malformed field {e}") from e

        input_dim = data.get("input_dim")
        if input_dim is not None and int(input_dim) != layers[0].in_dim:
            raise NetworkFormatError(
                f"dimension mismatch: input_dim {input_dim} but layer 0 takes {layers[0].in_dim}"
            )
        return cls(tuple(layers))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Network) or len(self.layers) != len(other.layers):
            return False
        return all(
            a.activation == b.activation
            and np.array_equal(a.weights, b.weights)
            and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ActionChoice:
    """A chosen direction and the raw network output that selected it."""

    direction: int
    magnitude: float


def _make_layer(weights: Any, bias: Any, activation: Any, index: int) -> Layer:
    if activation not in ACTIVATIONS:
        raise NetworkFormatError(f"layer {index}: unknown activation {activation!r}")
    try:
        w = np.array(weights, dtype=np.float64)
        b = np.array(bias, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise NetworkFormatError(f"layer {index}: non-numeric values ({e})") from e
    if w.ndim != 2 or w.shape[0] == 0 or w.shape[1] == 0:
        raise NetworkFormatError(f"layer {index}: weights must be a non-empty matrix")
    if b.shape != (w.shape[0],):
        raise NetworkFormatError(
            f"layer {index}: dimension mismatch, bias has shape {b.shape} for {w.shape[0]} outputs"
        )
    w.setflags(write=False)
    b.setflags(write=False)
    return Layer(w, b, activation)


def _validate_layers(layers: tuple[Layer, ...]) -> None:
    if not layers:
        raise NetworkFormatError("network has no layers")
    for k, layer in enumerate(layers):
        if not (np.all(np.isfinite(layer.weights)) and np.all(np.isfinite(layer.bias))):
            raise NetworkFormatError(f"layer {k}: non-finite weight or bias")
        expected = "identity" if k == len(layers) - 1 else "relu"
        if layer.activation != expected:
            raise NetworkFormatError(
                f"layer {k}: activation must be {expected!r}, got {layer.activation!r}"
            )
        if k > 0 and layers[k - 1].out_dim != layer.in_dim:
            raise NetworkFormatError(
                f"dimension mismatch: layer {k - 1} outputs {layers[k - 1].out_dim} "
                f"but layer {k} takes {layer.in_dim}"
            )


# === Persistence ===

def load_network(path: str | Path) -> Network:
    """Load and validate a JSON weight file."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path}: invalid JSON ({e})") from e
    return Network.from_dict(data)


def save_network(net: Network, path: str | Path) -> None:
    """Write `net` in the weight-file format; floats round-trip exactly."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(net.to_dict(), f, indent=2)


# === Evaluation ===

def forward(net: Network, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Exact feed-forward pass for a single input vector."""
    h = np.asarray(x, dtype=np.float64)
    if h.shape != (net.input_dim,):
        raise DimensionMismatchError(
            f"input has shape {h.shape}, network expects ({net.input_dim},)"
        )
    for layer in net.layers:
        h = layer.weights @ h + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def forward_batch(net: Network, xs: np.ndarray) -> np.ndarray:
    """Feed-forward pass for a (n, input_dim) batch."""
    h = np.asarray(xs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.input_dim:
        raise DimensionMismatchError(
            f"batch has shape {h.shape}, network expects (n, {net.input_dim})"
        )
    for layer in net.layers:
        h = h @ layer.weights.T + layer.bias
        if layer.activation == "relu":
            h = np.maximum(h, 0.0)
    return h


def choose(outputs: np.ndarray) -> ActionChoice:
    """Argmax over outputs; numpy's argmax already breaks ties by lowest index."""
    direction = int(np.argmax(outputs))
    return ActionChoice(direction=direction, magnitude=float(outputs[direction]))


def select_action(net: Network, x: Sequence[float] | np.ndarray) -> ActionChoice:
    return choose(forward(net, x))


# === Warm start ===

def heuristic_network(
    avoid_obstacles: bool = True,
    gain: float = 10.0,
    penalty: float = 400.0,
    sidestep: float = 100.0,
    reach: float = 0.06,
) -> Network:
    """Hand-built 8-16-16-4 controller that heads for the target.

    Layer 1 computes `relu(gain * offset)` toward the target for each direction
    and, when avoiding obstacles, `relu(reach - sensor)` for each sensor.
    Layer 2 forms `a` and `relu(a - 1)` so the output `a - relu(a - 1)` is capped
    at 1, adds a side-step bias when the perpendicular sensors are close, and
    passes the proximity terms through. The output subtracts `penalty` times
    proximity, which pushes a blocked direction below zero.
    """
    n_in, n_h1, n_h2, n_out = TOPOLOGY
    w1 = np.zeros((n_h1, n_in))
    b1 = np.zeros(n_h1)
    w2 = np.zeros((n_h2, n_h1))
    b2 = np.zeros(n_h2)
    w3 = np.zeros((n_out, n_h2))
    b3 = np.zeros(n_out)

    # Inputs: 0..3 sensors (R, L, U, D), 4..5 agent (x, y), 6..7 target (x, y).
    offsets = [(6, 4), (4, 6), (7, 5), (5, 7)]  # (plus, minus) per direction
    for d, (plus, minus) in enumerate(offsets):
        w1[d, plus] = gain
        w1[d, minus] = -gain
    if avoid_obstacles:
        for d in range(4):
            w1[4 + d, d] = -1.0
            b1[4 + d] = reach

    for d in range(4):
        w2[d, d] = 1.0
        w2[4 + d, d] = 1.0
        b2[4 + d] = -1.0
        w2[8 + d, 4 + d] = 1.0
    if avoid_obstacles:
        # blocked vertically -> drift Right; blocked horizontally -> drift Up
        for row in (0, 4):
            w2[row, 6] = sidestep
            w2[row, 7] = sidestep
        for row in (2, 6):
            w2[row, 4] = sidestep
            w2[row, 5] = sidestep

    for d in range(4):
        w3[d, d] = 1.0
        w3[d, 4 + d] = -1.0
        if avoid_obstacles:
            w3[d, 8 + d] = -penalty

    return Network.from_arrays([w1, w2, w3], [b1, b2, b3])


# === Training ===

@dataclass(frozen=True)
class TrainerConfig:
    """Elitist evolution-strategy settings."""

    success_floor: float = 0.80
    max_iterations: int = 500
    population: int = 8
    sigma: float = 0.02
    episodes_per_eval: int = 20
    eval_episodes: int = 50
    maps: tuple[int, ...] = field(default=(0, 1, 2, 3, 4))

    def __post_init__(self) -> None:
        if self.success_floor < 0:
            raise ValueError("success_floor must be >= 0")
        if self.max_iterations < 1 or self.population < 1:
            raise ValueError("max_iterations and population must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.episodes_per_eval < 1 or self.eval_episodes < 1:
            raise ValueError("episode counts must be >= 1")
        if not self.maps:
            raise ValueError("at least one training map is required")


def _flatten(net: Network) -> np.ndarray:
    return np.concatenate(
        [np.concatenate([layer.weights.ravel(), layer.bias]) for layer in net.layers]
    )


def _unflatten(params: np.ndarray, like: Network) -> Network:
    weights, biases = [], []
    offset = 0
    for layer in like.layers:
        size = layer.weights.size
        weights.append(params[offset:offset + size].reshape(layer.weights.shape))
        offset += size
        biases.append(params[offset:offset + layer.out_dim])
        offset += layer.out_dim
    return Network.from_arrays(weights, biases)


def _episode_returns(
    net: Network,
    episode_seeds: np.ndarray,
    maps: tuple[int, ...],
    env_config: "EnvConfig",
) -> tuple[float, float]:
    """Mean return and success rate over a fixed set of episodes."""
    from .env import run_episode

    total = 0.0
    successes = 0
    for k, seed in enumerate(episode_seeds):
        metrics = run_episode(net, maps[k % len(maps)], int(seed), config=env_config)
        total += metrics.reward
        successes += int(metrics.success)
    return total / len(episode_seeds), successes / len(episode_seeds)


def train_policy(
    env_config: "EnvConfig",
    trainer_config: TrainerConfig,
    seed: int,
) -> Network:
    """Evolve a Particle World policy until its success rate reaches the floor.

    Mutations perturb only the non-zero parameters of the warm start, keeping
    the controller's structure (and hence its verification cost) intact.
    Offspring share common episode seeds within an iteration; the parent
    survives unless an offspring strictly beats it.
    """
    rng = np.random.default_rng(seed)
    template = heuristic_network(avoid_obstacles=True)
    params = _flatten(template)
    mask = params != 0.0
    maps = trainer_config.maps
    eval_seeds = rng.integers(0, 2**31 - 1, size=trainer_config.eval_episodes)

    for iteration in range(1, trainer_config.max_iterations + 1):
        episode_seeds = rng.integers(0, 2**31 - 1, size=trainer_config.episodes_per_eval)
        parent = _unflatten(params, template)
        best_fitness, _ = _episode_returns(parent, episode_seeds, maps, env_config)
        best_params = params

        for _ in range(trainer_config.population):
            noise = rng.standard_normal(params.shape) * mask
            candidate = params + trainer_config.sigma * noise
            fitness, _ = _episode_returns(
                _unflatten(candidate, template), episode_seeds, maps, env_config
            )
            if fitness > best_fitness:
                best_fitness, best_params = fitness, candidate

        params = best_params
        net = _unflatten(params, template)
        _, success = _episode_returns(net, eval_seeds, maps, env_config)
        logger.info(
            "iteration %d: best fitness %.3f, success rate %.3f",
            iteration, best_fitness, success,
        )
        if success >= trainer_config.success_floor:
            return net

    raise TrainingBudgetExceeded(
        f"success floor {trainer_config.success_floor} not reached "
        f"after {trainer_config.max_iterations} iterations"
    )
