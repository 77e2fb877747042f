"""Safety properties: an input box plus an unsafe-output postcondition."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .box import Box, RegionFileError
from .env import STEP_SCALE
from .policy import DimensionMismatchError

logger = logging.getLogger(__name__)

PARTICLE_WORLD_INPUTS = 8
PARTICLE_WORLD_OUTPUTS = 4
MAPLESS_INPUTS = 9
MAPLESS_OUTPUTS = 2


class PropertyFormatError(ValueError):
    """Raised when a property file cannot be parsed into safety properties."""


class Relation(str, Enum):
    GT = ">"
    LT = "<"
    GE = ">="
    LE = "<="

    @property
    def strict(self) -> bool:
        return self in (Relation.GT, Relation.LT)


@dataclass(frozen=True)
class LinearTerm:
    """`coeff_out . Y + coeff_in . X + constant <relation> 0`."""

    coeff_out: tuple[float, ...]
    coeff_in: tuple[float, ...]
    constant: float
    relation: Relation

    def to_dict(self) -> dict[str, Any]:
        return {
            "coeff_out": list(self.coeff_out),
            "coeff_in": list(self.coeff_in),
            "constant": self.constant,
            "relation": self.relation.value,
        }


@dataclass(frozen=True)
class SafetyProperty:
    """An unsafe condition: `holds` is true exactly when the behaviour is a violation."""

    name: str
    input_box: Box
    argmax_selector: int | None
    linear_terms: tuple[LinearTerm, ...]
    output_dim: int
    margin: float = 0.0

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise PropertyFormatError(f"{self.name}: margin must be >= 0")
        if self.argmax_selector is not None and not 0 <= self.argmax_selector < self.output_dim:
            raise PropertyFormatError(
                f"{self.name}: selector {self.argmax_selector} outside 0..{self.output_dim - 1}"
            )
        for term in self.linear_terms:
            if len(term.coeff_out) != self.output_dim or len(term.coeff_in) != self.input_dim:
                raise PropertyFormatError(
                    f"{self.name}: dimension inconsistency, term has "
                    f"{len(term.coeff_in)} input / {len(term.coeff_out)} output coefficients, "
                    f"expected {self.input_dim} / {self.output_dim}"
                )

    @property
    def input_dim(self) -> int:
        return self.input_box.dim

    def with_margin(self, margin: float) -> "SafetyProperty":
        return SafetyProperty(
            self.name, self.input_box, self.argmax_selector, self.linear_terms,
            self.output_dim, margin,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_box": self.input_box.to_dict(),
            "argmax_selector": self.argmax_selector,
            "linear_terms": [t.to_dict() for t in self.linear_terms],
            "output_dim": self.output_dim,
            "margin": self.margin,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SafetyProperty":
        try:
            name = str(data["name"])
            box = Box.from_dict(data["input_box"])
            output_dim = int(data["output_dim"])
            selector = data.get("argmax_selector")
            terms = tuple(
                LinearTerm(
                    coeff_out=tuple(float(v) for v in t["coeff_out"]),
                    coeff_in=tuple(float(v) for v in t["coeff_in"]),
                    constant=float(t.get("constant", 0.0)),
                    relation=Relation(t["relation"]),
                )
                for t in data.get("linear_terms", [])
            )
            return cls(
                name=name,
                input_box=box,
                argmax_selector=None if selector is None else int(selector),
                linear_terms=terms,
                output_dim=output_dim,
                margin=float(data.get("margin", 0.0)),
            )
        except PropertyFormatError:
            raise
        except (KeyError, TypeError, ValueError, RegionFileError) as e:
            raise PropertyFormatError(f"malformed property: {e}") from e


@dataclass(frozen=True)
class Violation:
    """A concrete counterexample: `holds(property, input, output)` is true."""

    input: tuple[float, ...]
    output: tuple[float, ...]
    property_name: str

    def to_dict(self) -> dict[str, Any]:
        return {"input": list(self.input), "output": list(self.output), "property": self.property_name}


@dataclass(frozen=True)
class Constraint:
    """Normalized row `cy . Y + cx . X + d > 0` (strict) or `>= 0`."""

    cy: np.ndarray = field(repr=False)
    cx: np.ndarray = field(repr=False)
    d: float = 0.0
    strict: bool = False


# === Semantics ===

def _check_dims(p: SafetyProperty, xs: np.ndarray, ys: np.ndarray) -> None:
    if xs.shape[-1] != p.input_dim or ys.shape[-1] != p.output_dim:
        raise DimensionMismatchError(
            f"{p.name}: expects {p.input_dim} inputs / {p.output_dim} outputs, "
            f"got {xs.shape[-1]} / {ys.shape[-1]}"
        )


def _term_values(term: LinearTerm, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return ys @ np.asarray(term.coeff_out) + xs @ np.asarray(term.coeff_in) + term.constant


def _term_holds(term: LinearTerm, values: np.ndarray) -> np.ndarray:
    match term.relation:
        case Relation.GT:
            return values > 0
        case Relation.LT:
            return values < 0
        case Relation.GE:
            return values >= 0
        case Relation.LE:
            return values <= 0


def violations(p: SafetyProperty, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise `holds` over (n, input_dim) inputs and (n, output_dim) outputs."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    _check_dims(p, xs, ys)

    mask = np.all((p.input_box.lo <= xs) & (xs <= p.input_box.hi), axis=1)

    if p.argmax_selector is not None:
        i = p.argmax_selector
        mask &= np.argmax(ys, axis=1) == i
        others = np.delete(ys, i, axis=1)
        if others.shape[1]:
            mask &= np.all(ys[:, [i]] >= others + p.margin, axis=1)

    for term in p.linear_terms:
        mask &= _term_holds(term, _term_values(term, xs, ys))
    return mask


def holds(p: SafetyProperty, x: Sequence[float] | np.ndarray, y: Sequence[float] | np.ndarray) -> bool:
    """True iff (x, y) meets the property's unsafe condition."""
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    if xs.ndim != 1 or ys.ndim != 1:
        raise DimensionMismatchError("holds expects single input and output vectors")
    return bool(violations(p, xs[None, :], ys[None, :])[0])


def any_violation(props: Sequence[SafetyProperty], xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise OR of `violations` over `props`."""
    mask = np.zeros(len(xs), dtype=bool)
    for p in props:
        mask |= violations(p, xs, ys)
    return mask


def normalized_constraints(p: SafetyProperty) -> list[Constraint]:
    """The postcondition as a conjunction of `>= 0` / `> 0` rows.

    With margin 0 the selector beats lower indices strictly and higher ones
    weakly, which is the lowest-index tie-break of `holds`.
    """
    rows: list[Constraint] = []
    n_in, n_out = p.input_dim, p.output_dim

    if p.argmax_selector is not None:
        i = p.argmax_selector
        for j in range(n_out):
            if j == i:
                continue
            cy = np.zeros(n_out)
            cy[i], cy[j] = 1.0, -1.0
            strict = p.margin == 0.0 and j < i
            rows.append(Constraint(cy, np.zeros(n_in), -p.margin, strict))

    for term in p.linear_terms:
        sign = 1.0 if term.relation in (Relation.GT, Relation.GE) else -1.0
        rows.append(
            Constraint(
                sign * np.asarray(term.coeff_out, dtype=np.float64),
                sign * np.asarray(term.coeff_in, dtype=np.float64),
                sign * term.constant,
                term.relation.strict,
            )
        )
    return rows


# === Fixtures ===

def particle_world_properties(margin: float = 0.0) -> list[SafetyProperty]:
    """G1-G4: moving in direction i by more than sensor i is unsafe.

    The terms read the raw output, while `env.step` clamps the magnitude to
    [0, 1]. For outputs above 1 a G property can hold although the clamped
    step stops short of the obstacle, so the set flags every collision but
    not only collisions.
    """
    props = []
    for i in range(PARTICLE_WORLD_OUTPUTS):
        coeff_out = [0.0] * PARTICLE_WORLD_OUTPUTS
        coeff_out[i] = STEP_SCALE
        coeff_in = [0.0] * PARTICLE_WORLD_INPUTS
        coeff_in[i] = -1.0
        props.append(
            SafetyProperty(
                name=f"G{i + 1}",
                input_box=Box.unit(PARTICLE_WORLD_INPUTS),
                argmax_selector=i,
                linear_terms=(
                    LinearTerm(tuple(coeff_out), tuple(coeff_in), 0.0, Relation.GT),
                ),
                output_dim=PARTICLE_WORLD_OUTPUTS,
                margin=margin,
            )
        )
    return props


def _mapless_term(
    out: dict[int, float], inp: dict[int, float], constant: float, relation: Relation
) -> LinearTerm:
    coeff_out = [0.0] * MAPLESS_OUTPUTS
    coeff_in = [0.0] * MAPLESS_INPUTS
    for k, v in out.items():
        coeff_out[k] = v
    for k, v in inp.items():
        coeff_in[k] = v
    return LinearTerm(tuple(coeff_out), tuple(coeff_in), constant, relation)


def mapless_navigation_properties() -> list[SafetyProperty]:
    """M1-M5 over the 9 lidar/target inputs and (linear, angular) velocity outputs."""
    # (name, lidar index, angular velocity bound term or None)
    specs: list[tuple[str, int, LinearTerm | None]] = [
        ("M1", 3, None),
        ("M2", 1, _mapless_term({1: 1.0}, {}, 0.2, Relation.LT)),
        ("M3", 2, _mapless_term({1: 1.0}, {}, 0.15, Relation.LT)),
        ("M4", 5, _mapless_term({1: 1.0}, {}, -0.2, Relation.GT)),
        ("M5", 4, _mapless_term({1: 1.0}, {}, -0.15, Relation.GT)),
    ]
    props = []
    for name, lidar, turn in specs:
        close = _mapless_term({0: -0.015}, {lidar: 1.0}, -0.17, Relation.LT)
        terms = (close,) if turn is None else (close, turn)
        props.append(
            SafetyProperty(
                name=name,
                input_box=Box.unit(MAPLESS_INPUTS),
                argmax_selector=None,
                linear_terms=terms,
                output_dim=MAPLESS_OUTPUTS,
            )
        )
    return props


# === Persistence ===

def load_properties(path: str | Path) -> list[SafetyProperty]:
    """Parse a property file: `{"properties": [...]}` or a bare list."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise PropertyFormatError(f"{path}: invalid JSON ({e})") from e

    raw = data.get("properties") if isinstance(data, dict) else data
    if not isinstance(raw, list):
        raise PropertyFormatError(f"{path}: expected a list of properties")
    props = [SafetyProperty.from_dict(item) for item in raw]

    dims = {(p.input_dim, p.output_dim) for p in props}
    if len(dims) > 1:
        raise PropertyFormatError(f"{path}: dimension inconsistency across properties {sorted(dims)}")
    logger.debug("loaded %d properties from %s", len(props), path)
    return props


def save_properties(props: Sequence[SafetyProperty], path: str | Path) -> None:
    data = {
        "version": "1.0",
        "last_updated": datetime.now().isoformat(),
        "properties": [p.to_dict() for p in props],
    }
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
