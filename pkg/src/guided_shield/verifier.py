"""Complete verification of box-constrained ReLU networks by branch-and-bound.

Input boxes are bisected along their widest dimension and pruned with
interval and back-substituted linear bounds. Once a box has few enough
unstable neurons, a depth-first search over ReLU phases solves one linear
program per node with HiGHS; a fully fixed phase pattern makes the program
exact. SAT is only reported with a concrete, re-evaluated counterexample.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog

from .box import Box
from .parallel import parallel_map
from .policy import DimensionMismatchError, Network, forward
from .property import Constraint, SafetyProperty, Violation, holds, normalized_constraints

logger = logging.getLogger(__name__)

# Strict relations are verified as `>= TAU`.
TAU = 1e-9

# Boxes narrower than this go straight to the phase search.
MIN_SPLIT_WIDTH = 1e-9


class VerdictKind(str, Enum):
    SAT = "SAT"
    UNSAT = "UNSAT"
    UNKNOWN = "UNKNOWN"


@dataclass(frozen=True)
class VerifierBudget:
    max_branches: int = 1_000_000
    time_limit_s: float = 60.0
    relu_split_limit: int = 16

    def __post_init__(self) -> None:
        if self.max_branches < 1:
            raise ValueError("max_branches must be >= 1")
        if self.time_limit_s <= 0:
            raise ValueError("time_limit_s must be > 0")
        if self.relu_split_limit < 0:
            raise ValueError("relu_split_limit must be >= 0")


@dataclass(frozen=True)
class VerificationQuery:
    net: Network
    region: Box
    property: SafetyProperty


@dataclass
class VerificationStats:
    branches: int = 0
    lp_calls: int = 0
    pruned: int = 0
    wall_time_s: float = 0.0


@dataclass
class Verdict:
    """SAT carries a witness; UNKNOWN carries the reason the search stopped."""

    kind: VerdictKind
    witness: Violation | None = None
    stats: VerificationStats = field(default_factory=VerificationStats)
    reason: str | None = None

    @property
    def is_safe(self) -> bool:
        """Only UNSAT certifies safety; UNKNOWN counts as unsafe."""
        return self.kind is VerdictKind.UNSAT

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "witness": self.witness.to_dict() if self.witness else None,
            "reason": self.reason,
            "branches": self.stats.branches,
            "lp_calls": self.stats.lp_calls,
            "wall_time_s": self.stats.wall_time_s,
        }


class _BudgetExhausted(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


# === Bound propagation ===

def bound_outputs(net: Network, region: Box) -> tuple[np.ndarray, np.ndarray]:
    """Interval bounds on every output over `region`; exact for a single point."""
    if region.dim != net.input_dim:
        raise DimensionMismatchError(
            f"region has {region.dim} dims, network expects {net.input_dim}"
        )
    if region.lower == region.upper:
        y = forward(net, region.lo)
        return y.copy(), y.copy()

    lo, hi = region.lo, region.hi
    for layer in net.layers:
        w_pos = np.maximum(layer.weights, 0.0)
        w_neg = np.minimum(layer.weights, 0.0)
        lo, hi = (
            w_pos @ lo + w_neg @ hi + layer.bias,
            w_pos @ hi + w_neg @ lo + layer.bias,
        )
        if layer.activation == "relu":
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
    return lo, hi


def _relaxations(
    lower: np.ndarray, upper: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Upper slope, upper intercept and lower slope of the ReLU relaxation."""
    active = lower >= 0
    unstable = (lower < 0) & (upper > 0)
    denom = np.where(unstable, upper - lower, 1.0)

    up_slope = np.where(active, 1.0, np.where(unstable, upper / denom, 0.0))
    up_int = np.where(unstable, -lower * up_slope, 0.0)
    lo_slope = np.where(active, 1.0, np.where(unstable & (upper > -lower), 1.0, 0.0))
    return up_slope, up_int, lo_slope


def _back_substitute(
    net: Network,
    pre_bounds: list[tuple[np.ndarray, np.ndarray]],
    coeffs: np.ndarray,
    const: np.ndarray,
    layer_index: int,
    upper: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate `coeffs . z_k + const` back to a linear bound in the input.

    Returns input coefficients and constant, valid as an upper bound when
    `upper` is set and as a lower bound otherwise.
    """
    a = coeffs
    c = const.copy()
    for k in range(layer_index, -1, -1):
        layer = net.layers[k]
        c = c + a @ layer.bias
        a = a @ layer.weights
        if k == 0:
            break
        l, u = pre_bounds[k - 1]
        up_slope, up_int, lo_slope = _relaxations(l, u)
        a_pos = np.maximum(a, 0.0)
        a_neg = np.minimum(a, 0.0)
        if upper:
            c = c + a_pos @ up_int
            a = a_pos * up_slope + a_neg * lo_slope
        else:
            c = c + a_neg @ up_int
            a = a_pos * lo_slope + a_neg * up_slope
    return a, c


def _concretize(
    a: np.ndarray, c: np.ndarray, lo: np.ndarray, hi: np.ndarray, upper: bool
) -> np.ndarray:
    a_pos = np.maximum(a, 0.0)
    a_neg = np.minimum(a, 0.0)
    if upper:
        return a_pos @ hi + a_neg @ lo + c
    return a_pos @ lo + a_neg @ hi + c


def hidden_bounds(net: Network, region: Box) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pre-activation bounds of every hidden layer (interval met with linear bounds)."""
    lo, hi = region.lo, region.hi
    bounds: list[tuple[np.ndarray, np.ndarray]] = []
    post_lo, post_hi = lo, hi
    for k, layer in enumerate(net.layers[:-1]):
        w_pos = np.maximum(layer.weights, 0.0)
        w_neg = np.minimum(layer.weights, 0.0)
        l = w_pos @ post_lo + w_neg @ post_hi + layer.bias
        u = w_pos @ post_hi + w_neg @ post_lo + layer.bias
        if k > 0:
            eye = np.eye(layer.out_dim)
            zero = np.zeros(layer.out_dim)
            a_u, c_u = _back_substitute(net, bounds, eye, zero, k, upper=True)
            a_l, c_l = _back_substitute(net, bounds, eye, zero, k, upper=False)
            u = np.minimum(u, _concretize(a_u, c_u, lo, hi, upper=True))
            l = np.maximum(l, _concretize(a_l, c_l, lo, hi, upper=False))
        bounds.append((l, u))
        post_lo, post_hi = np.maximum(l, 0.0), np.maximum(u, 0.0)
    return bounds


def _constraint_upper_bound(
    net: Network,
    pre_bounds: list[tuple[np.ndarray, np.ndarray]],
    row: Constraint,
    region: Box,
    out_lo: np.ndarray,
    out_hi: np.ndarray,
) -> float:
    """Upper bound of `cy . N(x) + cx . x + d` over `region`."""
    a, c = _back_substitute(
        net, pre_bounds, row.cy[None, :], np.array([row.d]), len(net.layers) - 1, upper=True
    )
    linear = _concretize(a[0] + row.cx, c, region.lo, region.hi, upper=True)[0]

    cy_pos = np.maximum(row.cy, 0.0)
    cy_neg = np.minimum(row.cy, 0.0)
    cx_pos = np.maximum(row.cx, 0.0)
    cx_neg = np.minimum(row.cx, 0.0)
    interval = (
        cy_pos @ out_hi + cy_neg @ out_lo + cx_pos @ region.hi + cx_neg @ region.lo + row.d
    )
    return float(min(linear, interval))


def _required(row: Constraint) -> float:
    return TAU if row.strict else 0.0


# === Search ===

class _Search:
    """State of one query: budgets, counters and the phase LP."""

    def __init__(self, query: VerificationQuery, budget: VerifierBudget):
        self.net = query.net
        self.prop = query.property
        self.rows = normalized_constraints(query.property)
        self.budget = budget
        self.stats = VerificationStats()
        self.started = time.perf_counter()
        self.unconfirmed = False

    def tick(self) -> None:
        self.stats.branches += 1
        if self.stats.branches > self.budget.max_branches:
            raise _BudgetExhausted("branch_limit")
        if time.perf_counter() - self.started > self.budget.time_limit_s:
            raise _BudgetExhausted("time_limit")

    def check(self, x: np.ndarray, region: Box) -> Violation | None:
        point = np.clip(x, region.lo, region.hi)
        y = forward(self.net, point)
        if holds(self.prop, point, y):
            return Violation(tuple(point.tolist()), tuple(y.tolist()), self.prop.name)
        return None

    def run(self, region: Box) -> Violation | None:
        stack = [region]
        while stack:
            box = stack.pop()
            self.tick()

            pre_bounds = hidden_bounds(self.net, box)
            out_lo, out_hi = bound_outputs(self.net, box)
            if any(
                _constraint_upper_bound(self.net, pre_bounds, row, box, out_lo, out_hi)
                < _required(row)
                for row in self.rows
            ):
                self.stats.pruned += 1
                continue

            for candidate in (box.center, box.lo, box.hi):
                witness = self.check(candidate, box)
                if witness is not None:
                    return witness

            unstable = sum(int(np.sum((l < 0) & (u > 0))) for l, u in pre_bounds)
            if unstable <= self.budget.relu_split_limit or float(np.max(box.widths)) <= MIN_SPLIT_WIDTH:
                witness = self.phase_search(box, pre_bounds)
                if witness is not None:
                    return witness
                continue

            left, right = box.split(box.widest_dim())
            stack.append(right)
            stack.append(left)
        return None

    # --- phase search ---

    def phase_search(
        self, box: Box, pre_bounds: list[tuple[np.ndarray, np.ndarray]]
    ) -> Violation | None:
        stack: list[dict[tuple[int, int], bool]] = [{}]
        while stack:
            fixed = stack.pop()
            self.tick()
            solution = self.solve(box, pre_bounds, fixed)
            if solution is None:
                continue
            x, hidden = solution

            witness = self.check(x, box)
            if witness is not None:
                return witness

            neuron = self._pick_neuron(box, pre_bounds, fixed, x, hidden)
            if neuron is None:
                self.unconfirmed = True
                logger.debug("%s: relaxation feasible but no concrete witness", self.prop.name)
                continue
            stack.append({**fixed, neuron: False})
            stack.append({**fixed, neuron: True})
        return None

    def _pick_neuron(
        self,
        box: Box,
        pre_bounds: list[tuple[np.ndarray, np.ndarray]],
        fixed: dict[tuple[int, int], bool],
        x: np.ndarray,
        hidden: list[np.ndarray],
    ) -> tuple[int, int] | None:
        """The free unstable neuron whose relaxation is most violated at the LP point."""
        best: tuple[int, int] | None = None
        best_score = -1.0
        prev = x
        for k, (l, u) in enumerate(pre_bounds):
            layer = self.net.layers[k]
            z = layer.weights @ prev + layer.bias
            gap = np.abs(hidden[k] - np.maximum(z, 0.0))
            for i in np.flatnonzero((l < 0) & (u > 0)):
                if (k, int(i)) in fixed:
                    continue
                # Prefer relaxation error, fall back to bound width.
                score = float(gap[i]) * 1e6 + float(u[i] - l[i])
                if score > best_score:
                    best, best_score = (k, int(i)), score
            prev = hidden[k]
        return best

    def solve(
        self,
        box: Box,
        pre_bounds: list[tuple[np.ndarray, np.ndarray]],
        fixed: dict[tuple[int, int], bool],
    ) -> tuple[np.ndarray, list[np.ndarray]] | None:
        """Maximize the worst constraint slack over the relaxation for a phase pattern."""
        self.stats.lp_calls += 1
        net = self.net
        n_in = net.input_dim
        sizes = [layer.out_dim for layer in net.layers[:-1]]
        offsets = np.cumsum([n_in, *sizes])
        n_vars = int(offsets[-1]) + 1  # + slack
        t_index = n_vars - 1

        a_ub: list[np.ndarray] = []
        b_ub: list[float] = []
        a_eq: list[np.ndarray] = []
        b_eq: list[float] = []
        var_bounds: list[tuple[float | None, float | None]] = [
            (float(lo), float(hi)) for lo, hi in zip(box.lower, box.upper)
        ]

        prev_start, prev_end = 0, n_in
        for k, (l, u) in enumerate(pre_bounds):
            layer = net.layers[k]
            start = int(offsets[k])
            for i in range(layer.out_dim):
                w_row = np.zeros(n_vars)
                w_row[prev_start:prev_end] = layer.weights[i]
                b = float(layer.bias[i])
                a_var = start + i

                phase = fixed.get((k, i))
                if phase is None and l[i] >= 0:
                    phase = True
                elif phase is None and u[i] <= 0:
                    phase = False

                if phase is True:
                    row = -w_row
                    row[a_var] += 1.0
                    a_eq.append(row)
                    b_eq.append(b)
                    a_ub.append(-w_row)
                    b_ub.append(b)
                    var_bounds.append((0.0, max(float(u[i]), 0.0)))
                elif phase is False:
                    a_ub.append(w_row)
                    b_ub.append(-b)
                    var_bounds.append((0.0, 0.0))
                else:
                    row = w_row.copy()
                    row[a_var] -= 1.0
                    a_ub.append(row)
                    b_ub.append(-b)
                    slope = float(u[i] / (u[i] - l[i]))
                    row = -slope * w_row
                    row[a_var] += 1.0
                    a_ub.append(row)
                    b_ub.append(slope * (b - float(l[i])))
                    var_bounds.append((0.0, float(u[i])))
            prev_start, prev_end = start, start + layer.out_dim

        last = net.layers[-1]
        for constraint in self.rows:
            row = np.zeros(n_vars)
            row[prev_start:prev_end] = -(constraint.cy @ last.weights)
            row[:n_in] -= constraint.cx
            row[t_index] = 1.0
            a_ub.append(row)
            b_ub.append(float(constraint.cy @ last.bias) + constraint.d - _required(constraint))
        var_bounds.append((None, 1.0))

        objective = np.zeros(n_vars)
        objective[t_index] = -1.0
        result = linprog(
            objective,
            A_ub=np.array(a_ub) if a_ub else None,
            b_ub=np.array(b_ub) if b_ub else None,
            A_eq=np.array(a_eq) if a_eq else None,
            b_eq=np.array(b_eq) if b_eq else None,
            bounds=var_bounds,
            method="highs",
        )
        if result.status == 2:
            return None
        if result.status != 0:
            logger.debug("%s: LP status %d (%s)", self.prop.name, result.status, result.message)
            self.unconfirmed = True
            return None
        if result.x[t_index] < 0:
            return None
        x = result.x[:n_in]
        hidden = [result.x[int(offsets[k]):int(offsets[k + 1])] for k in range(len(sizes))]
        return x, hidden


def verify(query: VerificationQuery, budget: VerifierBudget | None = None) -> Verdict:
    """Decide whether some input of `query.region` meets the property's unsafe condition."""
    budget = budget or VerifierBudget()
    net, prop = query.net, query.property
    if query.region.dim != net.input_dim or prop.input_dim != net.input_dim:
        raise DimensionMismatchError(
            f"query dims (region {query.region.dim}, property {prop.input_dim}) "
            f"do not match network input {net.input_dim}"
        )
    if prop.output_dim != net.output_dim:
        raise DimensionMismatchError(
            f"property {prop.name} has {prop.output_dim} outputs, network has {net.output_dim}"
        )

    search = _Search(query, budget)
    region = query.region.intersect(prop.input_box)
    if region.is_empty():
        search.stats.wall_time_s = time.perf_counter() - search.started
        return Verdict(VerdictKind.UNSAT, stats=search.stats)

    try:
        witness = search.run(region)
    except _BudgetExhausted as e:
        search.stats.wall_time_s = time.perf_counter() - search.started
        logger.warning(
            "%s: verification budget exhausted (%s) after %d branches",
            prop.name, e.reason, search.stats.branches,
        )
        return Verdict(VerdictKind.UNKNOWN, stats=search.stats, reason=e.reason)

    search.stats.wall_time_s = time.perf_counter() - search.started
    if witness is not None:
        return Verdict(VerdictKind.SAT, witness=witness, stats=search.stats)
    if search.unconfirmed:
        return Verdict(VerdictKind.UNKNOWN, stats=search.stats, reason="unconfirmed_witness")
    return Verdict(VerdictKind.UNSAT, stats=search.stats)


def verify_many(
    queries: Sequence[VerificationQuery],
    budget: VerifierBudget | None = None,
    workers: int = 1,
) -> list[Verdict]:
    """Verify independent queries; verdicts come back in query order."""
    return parallel_map(partial(verify, budget=budget), queries, workers=workers)
