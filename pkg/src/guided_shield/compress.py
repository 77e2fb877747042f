"""Compression of the unsafe set: box clustering, simplification, SMT-LIB emission and a grid index."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from decimal import Decimal
from itertools import chain
from typing import Sequence

import numpy as np

from .box import Box, stack_boxes

logger = logging.getLogger(__name__)

WASTE_EPS = 1e-12


# === Clustering ===

@dataclass(frozen=True)
class ClusterConfig:
    """Stop merging at `target_count` boxes or when the cheapest merge wastes too much."""

    target_count: int = 50
    max_waste: float = 0.2

    def __post_init__(self) -> None:
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if self.max_waste < 0:
            raise ValueError("max_waste must be >= 0")


def _merge_costs(i: int, lo: np.ndarray, hi: np.ndarray, vol: np.ndarray, alive: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Added volume and hull volume of merging box `i` with every other box."""
    hull = np.prod(np.maximum(hi, hi[i]) - np.minimum(lo, lo[i]), axis=1)
    added = hull - vol - vol[i]
    added[~alive] = np.inf
    added[i] = np.inf
    return added, hull


def cluster(unsafe: Sequence[Box], cfg: ClusterConfig) -> list[Box]:
    """Greedy agglomeration: repeatedly replace the pair whose hull adds least volume by that hull.

    The waste ratio of a merge is its added volume over the hull volume, so
    `max_waste=1.0` never blocks a merge and `0.0` allows only lossless ones.
    """
    n = len(unsafe)
    if n <= 1:
        return sorted(unsafe, key=Box.sort_key)

    lo, hi = stack_boxes(unsafe)
    lo, hi = lo.copy(), hi.copy()
    vol = np.prod(hi - lo, axis=1)
    alive = np.ones(n, dtype=bool)

    best_cost = np.full(n, np.inf)
    best_partner = np.full(n, -1)

    def refresh(i: int) -> None:
        added, _ = _merge_costs(i, lo, hi, vol, alive)
        j = int(np.argmin(added))
        best_cost[i], best_partner[i] = added[j], j

    for i in range(n):
        refresh(i)

    count = n
    while count > cfg.target_count:
        candidates = np.where(alive, best_cost, np.inf)
        i = int(np.argmin(candidates))
        j = int(best_partner[i])
        if j < 0 or not np.isfinite(candidates[i]):
            break

        added, hull = _merge_costs(i, lo, hi, vol, alive)
        ratio = added[j] / hull[j] if hull[j] > 0 else 0.0
        if ratio > cfg.max_waste + WASTE_EPS:
            logger.debug("cheapest merge wastes %.3f > %.3f, stopping", ratio, cfg.max_waste)
            break

        lo[i] = np.minimum(lo[i], lo[j])
        hi[i] = np.maximum(hi[i], hi[j])
        vol[i] = hull[j]
        alive[j] = False
        best_cost[j] = np.inf
        count -= 1

        refresh(i)
        added_i, _ = _merge_costs(i, lo, hi, vol, alive)
        for k in np.flatnonzero(alive):
            if k == i:
                continue
            if best_partner[k] in (i, j):
                refresh(int(k))
            elif added_i[k] < best_cost[k]:
                best_cost[k], best_partner[k] = added_i[k], i

    result = [Box.from_arrays(lo[k], hi[k]) for k in np.flatnonzero(alive)]
    logger.info("clustering: %d -> %d boxes", n, len(result))
    return sorted(result, key=Box.sort_key)


# === Simplification ===

def _coalesce(a: Box, b: Box) -> Box | None:
    """Union of `a` and `b` when they differ in one dimension only and touch or overlap there."""
    differing = [k for k in range(a.dim) if (a.lower[k], a.upper[k]) != (b.lower[k], b.upper[k])]
    if len(differing) != 1:
        return None
    k = differing[0]
    if a.lower[k] <= b.upper[k] and b.lower[k] <= a.upper[k]:
        return a.hull(b)
    return None


def simplify_boxes(boxes: Sequence[Box]) -> list[Box]:
    """Same point set, fewer boxes: drop subsumed boxes and coalesce one-axis neighbours."""
    current = sorted(set(boxes), key=Box.sort_key)
    changed = True
    while changed:
        changed = False

        kept: list[Box] = []
        for i, box in enumerate(current):
            if any(j != i and other.contains_box(box) for j, other in enumerate(current)):
                changed = True
                continue
            kept.append(box)
        current = kept

        merged: list[Box] = []
        used = [False] * len(current)
        for i, box in enumerate(current):
            if used[i]:
                continue
            for j in range(i + 1, len(current)):
                if used[j]:
                    continue
                union = _coalesce(box, current[j])
                if union is not None:
                    box = union
                    used[j] = True
                    changed = True
            merged.append(box)
        current = sorted(set(merged), key=Box.sort_key)
    return current


# === SMT-LIB ===

class SmtScript:
    """Declarations, assertions and trailing directives of an SMT-LIB2 script."""

    def __init__(self, logic: str = "QF_LRA"):
        self.declarations: list[str] = [f"(set-logic {logic})"]
        self.lines: list[str] = []
        self.directives: list[str] = []

    def __str__(self) -> str:
        return "\n".join(chain(self.declarations, self.lines, self.directives)) + "\n"

    def declare_real(self, name: str) -> None:
        self.declarations.append(f"(declare-const {name} Real)")

    def assert_(self, term: str) -> None:
        self.lines.append(f"(assert {term})")

    def check_sat(self) -> None:
        self.directives.append("(check-sat)")


def smt_number(value: float) -> str:
    """SMT-LIB real literal; negatives use unary minus."""
    if not math.isfinite(value):
        raise ValueError(f"cannot encode {value} as an SMT-LIB literal")
    if value < 0:
        return f"(- {smt_number(-value)})"
    if value.is_integer():
        return str(int(value))
    return format(Decimal(repr(value)), "f")


def _box_term(
    box: Box,
    names: Sequence[str],
    open_upper: Sequence[bool] | None = None,
) -> str:
    parts = []
    for k, name in enumerate(names):
        upper_op = "<" if open_upper is not None and open_upper[k] else "<="
        parts.append(f"(<= {smt_number(box.lower[k])} {name})")
        parts.append(f"({upper_op} {name} {smt_number(box.upper[k])})")
    return f"(and {' '.join(parts)})"


def emit_smt(
    boxes: Sequence[Box],
    names: Sequence[str],
    open_upper: Sequence[Sequence[bool]] | None = None,
) -> str:
    """SMT-LIB2 text asserting that the variables lie in some box.

    `open_upper[b][k]` renders the upper bound of box `b` in dimension `k` as strict.
    """
    for box in boxes:
        if box.dim != len(names):
            raise ValueError(f"box has {box.dim} dims but {len(names)} variable names were given")
    if open_upper is not None and len(open_upper) != len(boxes):
        raise ValueError("open_upper needs one entry per box")

    script = SmtScript()
    for name in names:
        script.declare_real(name)

    terms = [
        _box_term(box, names, open_upper[b] if open_upper is not None else None)
        for b, box in enumerate(boxes)
    ]
    if not terms:
        script.assert_("false")
    elif len(terms) == 1:
        script.assert_(terms[0])
    else:
        script.assert_(f"(or {' '.join(terms)})")
    script.check_sat()
    return str(script)


# === Membership index ===

@dataclass
class IndexStats:
    queries: int = 0
    inspected: int = 0
    out_of_domain: int = 0

    @property
    def mean_inspected(self) -> float:
        return self.inspected / self.queries if self.queries else 0.0


@dataclass
class RegionIndex:
    """Uniform bucket grid over at most two input dimensions; cells list the boxes they touch."""

    boxes: list[Box]
    domain: Box
    dims: tuple[int, ...]
    resolution: int
    cells: dict[tuple[int, ...], np.ndarray]
    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)
    stats: IndexStats = field(default_factory=IndexStats)

    def _cell_coord(self, values: np.ndarray) -> np.ndarray:
        d_lo = self.domain.lo[list(self.dims)]
        width = self.domain.widths[list(self.dims)]
        scaled = np.divide(
            values - d_lo, width, out=np.zeros_like(values), where=width > 0
        )
        return np.clip(np.floor(scaled * self.resolution), 0, self.resolution - 1).astype(int)

    def candidates(self, x: np.ndarray) -> np.ndarray:
        coord = tuple(int(c) for c in self._cell_coord(x[list(self.dims)]))
        return self.cells.get(coord, _EMPTY)


_EMPTY = np.zeros(0, dtype=int)


def _pick_dims(boxes: Sequence[Box], domain: Box, max_dims: int) -> tuple[int, ...]:
    """Dimensions along which boxes are narrowest relative to the domain."""
    lo, hi = stack_boxes(boxes)
    width = domain.widths
    relative = np.divide(hi - lo, width, out=np.ones_like(hi), where=width > 0)
    order = np.argsort(relative.mean(axis=0), kind="stable")
    return tuple(sorted(int(d) for d in order[: min(max_dims, domain.dim)]))


def build_index(
    boxes: Sequence[Box],
    domain: Box,
    resolution: int = 32,
    max_dims: int = 2,
) -> RegionIndex:
    if resolution < 1:
        raise ValueError("resolution must be >= 1")
    if not 1 <= max_dims <= 2:
        raise ValueError("max_dims must be 1 or 2")

    ordered = sorted(boxes, key=Box.sort_key)
    if not ordered:
        return RegionIndex(
            boxes=[], domain=domain, dims=(0,), resolution=resolution, cells={},
            lo=np.zeros((0, domain.dim)), hi=np.zeros((0, domain.dim)),
        )

    dims = _pick_dims(ordered, domain, max_dims)
    lo, hi = stack_boxes(ordered)
    index = RegionIndex(
        boxes=ordered, domain=domain, dims=dims, resolution=resolution, cells={}, lo=lo, hi=hi
    )

    buckets: dict[tuple[int, ...], list[int]] = {}
    first = index._cell_coord(lo[:, list(dims)])
    last = index._cell_coord(hi[:, list(dims)])
    for b in range(len(ordered)):
        ranges = [range(int(first[b, k]), int(last[b, k]) + 1) for k in range(len(dims))]
        for coord in np.ndindex(*(len(r) for r in ranges)):
            cell = tuple(r[c] for r, c in zip(ranges, coord))
            buckets.setdefault(cell, []).append(b)
    index.cells = {cell: np.array(ids, dtype=int) for cell, ids in buckets.items()}
    logger.debug(
        "index over dims %s: %d boxes in %d cells", dims, len(ordered), len(index.cells)
    )
    return index


def contains(idx: RegionIndex, x: Sequence[float] | np.ndarray) -> bool:
    """Closed-box membership; points outside the domain count as unsafe."""
    point = np.asarray(x, dtype=np.float64)
    idx.stats.queries += 1
    if not idx.domain.contains(point):
        idx.stats.out_of_domain += 1
        return True
    if not idx.boxes:
        return False
    ids = idx.candidates(point)
    idx.stats.inspected += len(ids)
    if len(ids) == 0:
        return False
    inside = np.all((idx.lo[ids] <= point) & (point <= idx.hi[ids]), axis=1)
    return bool(np.any(inside))
