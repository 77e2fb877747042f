"""Axis-aligned boxes over a policy's input domain."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np


class RegionFileError(ValueError):
    """Raised when a box or region-set document is malformed."""


@dataclass(frozen=True)
class Box:
    """Closed hyperrectangle `[lower, upper]`; an empty box has some lower > upper."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper):
            raise RegionFileError(
                f"Box bounds differ in length: {len(self.lower)} != {len(self.upper)}"
            )

    @classmethod
    def from_arrays(cls, lower: Sequence[float], upper: Sequence[float]) -> "Box":
        return cls(
            tuple(float(v) for v in lower),
            tuple(float(v) for v in upper),
        )

    @classmethod
    def unit(cls, dim: int) -> "Box":
        """The normalized domain [0, 1]^dim."""
        return cls((0.0,) * dim, (1.0,) * dim)

    @classmethod
    def point(cls, x: Sequence[float]) -> "Box":
        return cls.from_arrays(x, x)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.float64)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=np.float64)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def is_empty(self) -> bool:
        return any(l > u for l, u in zip(self.lower, self.upper))

    def volume(self) -> float:
        if self.is_empty():
            return 0.0
        return float(np.prod(self.widths))

    def contains(self, x: Sequence[float]) -> bool:
        """Closed-box membership."""
        point = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lo <= point) and np.all(point <= self.hi))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= c for a, c in zip(self.lower, other.lower)) and all(
            d <= b for b, d in zip(self.upper, other.upper)
        )

    def intersect(self, other: "Box") -> "Box":
        """Intersection; may be empty."""
        return Box(
            tuple(max(a, b) for a, b in zip(self.lower, other.lower)),
            tuple(min(a, b) for a, b in zip(self.upper, other.upper)),
        )

    def hull(self, other: "Box") -> "Box":
        """Smallest box containing both."""
        return Box(
            tuple(min(a, b) for a, b in zip(self.lower, other.lower)),
            tuple(max(a, b) for a, b in zip(self.upper, other.upper)),
        )

    def widest_dim(self, scale: Sequence[float] | None = None) -> int:
        """Index of the widest dimension, optionally normalized by `scale`; lowest index wins ties."""
        widths = self.widths
        if scale is not None:
            scale_arr = np.asarray(scale, dtype=np.float64)
            widths = np.divide(
                widths, scale_arr, out=np.zeros_like(widths), where=scale_arr > 0
            )
        return int(np.argmax(widths))

    def split(self, dim: int) -> tuple["Box", "Box"]:
        """Bisect along `dim`; both halves share the midpoint face."""
        mid = (self.lower[dim] + self.upper[dim]) / 2.0
        left_upper = list(self.upper)
        left_upper[dim] = mid
        right_lower = list(self.lower)
        right_lower[dim] = mid
        return Box(self.lower, tuple(left_upper)), Box(tuple(right_lower), self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """`n` uniform points, shape (n, dim)."""
        return self.lo + self.widths * rng.random((n, self.dim))

    def sort_key(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        return self.lower, self.upper

    def to_dict(self) -> dict[str, Any]:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Box":
        try:
            box = cls.from_arrays(data["lower"], data["upper"])
        except (KeyError, TypeError, ValueError) as e:
            raise RegionFileError(f"Malformed box: {e}") from e
        if box.is_empty():
            raise RegionFileError(f"Box has lower > upper: {data}")
        return box


def stack_boxes(boxes: Sequence[Box]) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper corners of `boxes` as (n, dim) arrays."""
    if not boxes:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return (
        np.array([b.lower for b in boxes], dtype=np.float64),
        np.array([b.upper for b in boxes], dtype=np.float64),
    )
