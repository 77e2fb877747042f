"""Input-domain partitioning into safe and unsafe boxes: sampling-based splitting, then formal refinement."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from functools import partial
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .box import Box, RegionFileError, stack_boxes
from .parallel import parallel_map
from .policy import Network, forward_batch
from .property import SafetyProperty, any_violation
from .verifier import (
    Verdict,
    VerdictKind,
    VerificationQuery,
    VerifierBudget,
    verify,
)

logger = logging.getLogger(__name__)


class Provenance(str, Enum):
    SAMPLED_SAFE = "sampled_safe"
    SAMPLED_UNSAFE = "sampled_unsafe"
    VERIFIED_SAFE = "verified_safe"
    VERIFIED_UNSAT_TO_SAT = "verified_unsat_to_sat"
    CLUSTERED = "clustered"


@dataclass(frozen=True)
class LabeledBox:
    box: Box
    provenance: Provenance


@dataclass
class LabeledRegionSet:
    """Safe and unsafe boxes over `domain`; canonical order is by lower then upper corner."""

    domain: Box
    safe: list[LabeledBox] = field(default_factory=list)
    unsafe: list[LabeledBox] = field(default_factory=list)
    refined: bool = False

    def __post_init__(self) -> None:
        self.safe.sort(key=lambda lb: lb.box.sort_key())
        self.unsafe.sort(key=lambda lb: lb.box.sort_key())

    @property
    def safe_boxes(self) -> list[Box]:
        return [lb.box for lb in self.safe]

    @property
    def unsafe_boxes(self) -> list[Box]:
        return [lb.box for lb in self.unsafe]

    def provenance_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for lb in [*self.safe, *self.unsafe]:
            counts[lb.provenance.value] = counts.get(lb.provenance.value, 0) + 1
        return counts

    def to_dict(self) -> dict[str, Any]:
        return {
            "version": "1.0",
            "last_updated": datetime.now().isoformat(),
            "domain": self.domain.to_dict(),
            "refined": self.refined,
            "safe": [lb.box.to_dict() for lb in self.safe],
            "unsafe": [lb.box.to_dict() for lb in self.unsafe],
            "provenance": [lb.provenance.value for lb in [*self.safe, *self.unsafe]],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LabeledRegionSet":
        try:
            domain = Box.from_dict(data["domain"])
            safe = [Box.from_dict(b) for b in data.get("safe", [])]
            unsafe = [Box.from_dict(b) for b in data.get("unsafe", [])]
            tags = [Provenance(t) for t in data.get("provenance", [])]
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, RegionFileError):
                raise
            raise RegionFileError(f"Malformed region set: {e}") from e

        if len(tags) != len(safe) + len(unsafe):
            raise RegionFileError(
                f"provenance has {len(tags)} tags for {len(safe) + len(unsafe)} boxes"
            )
        for b in [*safe, *unsafe]:
            if b.dim != domain.dim:
                raise RegionFileError(f"box of dim {b.dim} in a {domain.dim}-dim domain")
        return cls(
            domain=domain,
            safe=[LabeledBox(b, t) for b, t in zip(safe, tags[: len(safe)])],
            unsafe=[LabeledBox(b, t) for b, t in zip(unsafe, tags[len(safe):])],
            refined=bool(data.get("refined", False)),
        )


def save_regions(regions: LabeledRegionSet, path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(regions.to_dict(), f, indent=2)
    logger.info("wrote %d safe / %d unsafe boxes to %s", len(regions.safe), len(regions.unsafe), target)


def load_regions(path: str | Path) -> LabeledRegionSet:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise RegionFileError(f"{path}: invalid JSON ({e})") from e
    return LabeledRegionSet.from_dict(data)


# === Tiling ===

def tiling_volume_error(regions: LabeledRegionSet) -> float:
    """Relative gap between the summed box volumes and the domain volume."""
    total = sum(b.volume() for b in [*regions.safe_boxes, *regions.unsafe_boxes])
    domain_volume = regions.domain.volume()
    if domain_volume == 0:
        return abs(total)
    return abs(total - domain_volume) / domain_volume


def _interiors_overlap(boxes: Sequence[Box]) -> bool:
    """Sweep along dimension 0; only boxes whose x0-extents overlap are compared."""
    if len(boxes) < 2:
        return False
    lo, hi = stack_boxes(boxes)
    order = np.argsort(lo[:, 0], kind="stable")
    lo, hi = lo[order], hi[order]
    for i in range(len(boxes) - 1):
        end = int(np.searchsorted(lo[:, 0], hi[i, 0], side="left"))
        if end <= i + 1:
            continue
        overlap = np.all(
            np.maximum(lo[i + 1:end], lo[i]) < np.minimum(hi[i + 1:end], hi[i]), axis=1
        )
        if np.any(overlap):
            return True
    return False


def is_tiling(regions: LabeledRegionSet, rel_tol: float = 1e-9) -> bool:
    """Boxes lie in the domain, have disjoint interiors and their volumes add up to the domain's."""
    boxes = [*regions.safe_boxes, *regions.unsafe_boxes]
    if not boxes:
        return regions.domain.volume() == 0
    if not all(regions.domain.contains_box(b) for b in boxes):
        return False
    if tiling_volume_error(regions) > rel_tol:
        return False
    return not _interiors_overlap(boxes)


# === Splitting ===

@dataclass(frozen=True)
class SplitterConfig:
    samples_per_region: int = 354
    violation_fraction_threshold: float = 0.3
    max_depth: int = 14
    epsilon: float = 0.01
    delta: float = 0.03
    seed: int = 0
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 <= self.violation_fraction_threshold <= 1.0:
            raise ValueError("violation_fraction_threshold must be in [0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not (0.0 < self.epsilon < 1.0 and 0.0 < self.delta < 1.0):
            raise ValueError("epsilon and delta must be in (0, 1)")
        if self.samples_per_region < self.min_samples:
            raise ValueError(
                f"samples_per_region {self.samples_per_region} is below "
                f"ln(1/delta)/epsilon = {self.min_samples}"
            )
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    @property
    def min_samples(self) -> int:
        return math.ceil(math.log(1.0 / self.delta) / self.epsilon)


@dataclass(frozen=True)
class _Node:
    box: Box
    path: tuple[int, ...]


def _violation_fraction(
    node: _Node,
    net: Network,
    props: Sequence[SafetyProperty],
    cfg: SplitterConfig,
) -> float:
    """Fraction of uniform samples in the node's box that violate some property."""
    seq = np.random.SeedSequence(cfg.seed, spawn_key=node.path)
    rng = np.random.default_rng(seq)
    xs = node.box.sample(rng, cfg.samples_per_region)
    ys = forward_batch(net, xs)
    return float(np.mean(any_violation(props, xs, ys)))


def split_domain(
    net: Network,
    props: Sequence[SafetyProperty],
    cfg: SplitterConfig,
    domain: Box | None = None,
) -> LabeledRegionSet:
    """Split the domain until each leaf samples clean, is mostly violating, or hits max depth.

    Each node draws from its own seed stream keyed by its path in the split
    tree, so the result does not depend on worker scheduling.
    """
    domain = domain or Box.unit(net.input_dim)
    scale = domain.widths
    safe: list[LabeledBox] = []
    unsafe: list[LabeledBox] = []

    frontier = [_Node(domain, ())]
    depth = 0
    while frontier:
        fractions = parallel_map(
            partial(_violation_fraction, net=net, props=props, cfg=cfg),
            frontier,
            workers=cfg.workers,
        )
        next_frontier: list[_Node] = []
        for node, fraction in zip(frontier, fractions):
            if fraction == 0.0:
                safe.append(LabeledBox(node.box, Provenance.SAMPLED_SAFE))
            elif fraction >= cfg.violation_fraction_threshold or depth >= cfg.max_depth:
                unsafe.append(LabeledBox(node.box, Provenance.SAMPLED_UNSAFE))
            else:
                left, right = node.box.split(node.box.widest_dim(scale))
                next_frontier.append(_Node(left, node.path + (0,)))
                next_frontier.append(_Node(right, node.path + (1,)))
        logger.debug(
            "depth %d: %d nodes, %d safe / %d unsafe leaves so far",
            depth, len(frontier), len(safe), len(unsafe),
        )
        frontier = next_frontier
        depth += 1

    logger.info("splitting finished: %d safe, %d unsafe boxes", len(safe), len(unsafe))
    return LabeledRegionSet(domain=domain, safe=safe, unsafe=unsafe)


# === Refinement ===

@dataclass
class Refinement:
    regions: LabeledRegionSet
    verified: int = 0
    relabelled: int = 0
    inconclusive: int = 0
    wall_time_s: float = 0.0


def _verify_box(
    box: Box,
    net: Network,
    props: Sequence[SafetyProperty],
    budget: VerifierBudget,
) -> Verdict | None:
    """First non-UNSAT verdict for `box`, or None when every property is UNSAT."""
    for prop in props:
        verdict = verify(VerificationQuery(net, box, prop), budget)
        if verdict.kind is not VerdictKind.UNSAT:
            return verdict
    return None


def refine_regions(
    net: Network,
    props: Sequence[SafetyProperty],
    approx: LabeledRegionSet,
    budget: VerifierBudget | None = None,
    workers: int = 1,
) -> Refinement:
    """Formally verify every sampled-safe box; boxes that fail move to the unsafe side."""
    budget = budget or VerifierBudget()
    started = time.perf_counter()
    outcomes = parallel_map(
        partial(_verify_box, net=net, props=props, budget=budget),
        approx.safe_boxes,
        workers=workers,
    )

    safe: list[LabeledBox] = []
    unsafe = list(approx.unsafe)
    result = Refinement(regions=approx)
    for box, verdict in zip(approx.safe_boxes, outcomes):
        if verdict is None:
            safe.append(LabeledBox(box, Provenance.VERIFIED_SAFE))
            result.verified += 1
            continue
        unsafe.append(LabeledBox(box, Provenance.VERIFIED_UNSAT_TO_SAT))
        result.relabelled += 1
        if verdict.kind is VerdictKind.UNKNOWN:
            result.inconclusive += 1
            logger.warning("box %s inconclusive (%s); kept as unsafe", box.lower, verdict.reason)
        else:
            logger.info(
                "box %s relabelled unsafe: %s witness %s",
                box.lower, verdict.witness.property_name, verdict.witness.input,
            )

    result.regions = LabeledRegionSet(
        domain=approx.domain, safe=safe, unsafe=unsafe, refined=True
    )
    result.wall_time_s = time.perf_counter() - started
    logger.info(
        "refinement: %d verified safe, %d relabelled (%d inconclusive) in %.2fs",
        result.verified, result.relabelled, result.inconclusive, result.wall_time_s,
    )
    return result


def refine(
    net: Network,
    props: Sequence[SafetyProperty],
    approx: LabeledRegionSet,
    budget: VerifierBudget | None = None,
    workers: int = 1,
) -> LabeledRegionSet:
    return refine_regions(net, props, approx, budget, workers).regions
