import numpy as np
import pytest

from guided_shield.box import Box
from guided_shield.compress import (
    ClusterConfig,
    build_index,
    cluster,
    contains,
    emit_smt,
    simplify_boxes,
    smt_number,
)


def _random_boxes(rng: np.random.Generator, n: int, dim: int, max_width: float = 0.1) -> list[Box]:
    lo = rng.random((n, dim)) * (1.0 - max_width)
    widths = rng.random((n, dim)) * max_width
    return [Box.from_arrays(a, a + w) for a, w in zip(lo, widths)]


def _grid_boxes(rng: np.random.Generator, n: int) -> list[Box]:
    """Boxes aligned to a 0.25 grid in 2-D, so coalescing has something to do."""
    boxes = []
    for _ in range(n):
        x0, y0 = rng.integers(0, 4, 2) * 0.25
        w, h = rng.integers(1, 3, 2) * 0.25
        boxes.append(Box((x0, y0), (min(1.0, x0 + w), min(1.0, y0 + h))))
    return boxes


def _diagonal_boxes(n: int) -> list[Box]:
    """Small squares along the diagonal; any merge wastes most of its hull."""
    return [Box((k / n, k / n), (k / n + 0.01, k / n + 0.01)) for k in range(n)]


def _active_fraction(boxes: list[Box], points: np.ndarray) -> float:
    idx = build_index(boxes, Box.unit(2))
    return sum(contains(idx, x) for x in points) / len(points)


class TestCluster:
    def test_adjacent_boxes_merge_without_waste(self):
        boxes = [Box((0.0, 0.0), (0.1, 0.1)), Box((0.1, 0.0), (0.2, 0.1))]
        assert cluster(boxes, ClusterConfig(target_count=1)) == [Box((0.0, 0.0), (0.2, 0.1))]

    def test_waste_cap_stops_merging(self):
        boxes = [Box((0.0, 0.0), (0.1, 0.1)), Box((0.8, 0.8), (0.9, 0.9))]
        result = cluster(boxes, ClusterConfig(target_count=1, max_waste=0.0))
        assert result == sorted(boxes, key=Box.sort_key)

    def test_no_merge_needed(self):
        boxes = [Box((0.5,), (0.6,)), Box((0.0,), (0.1,))]
        assert cluster(boxes, ClusterConfig(target_count=5)) == sorted(boxes, key=Box.sort_key)

    def test_empty_input(self):
        assert cluster([], ClusterConfig()) == []

    def test_many_boxes_reach_the_target_and_cover_the_input(self):
        rng = np.random.default_rng(31)
        boxes = _random_boxes(rng, 400, 8)
        result = cluster(boxes, ClusterConfig(target_count=50, max_waste=1.0))
        assert len(result) == 50
        for b in boxes:
            assert any(c.contains_box(b) for c in result)

    def test_cheapest_pair_goes_first(self):
        near = [Box((0.0,), (0.1,)), Box((0.15,), (0.25,))]
        far = Box((0.9,), (1.0,))
        result = cluster([*near, far], ClusterConfig(target_count=2, max_waste=0.5))
        assert result == [Box((0.0,), (0.25,)), far]

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            ClusterConfig(target_count=0)
        with pytest.raises(ValueError):
            ClusterConfig(max_waste=-0.1)

    def test_default_waste_keeps_the_active_fraction(self):
        boxes = _diagonal_boxes(60)
        rng = np.random.default_rng(36)
        points = rng.random((50_000, 2))
        raw = _active_fraction(boxes, points)

        kept = cluster(boxes, ClusterConfig())
        assert kept == sorted(boxes, key=Box.sort_key)
        assert _active_fraction(kept, points) == raw

        loose = cluster(boxes, ClusterConfig(max_waste=1.0))
        assert len(loose) == 50
        assert _active_fraction(loose, points) > 1.4 * raw

    def test_default_waste_bound_is_tight(self):
        assert 0.1 <= ClusterConfig().max_waste <= 0.25


class TestSimplify:
    def test_subsumed_box_is_dropped(self):
        outer = Box.unit(2)
        assert simplify_boxes([Box((0.2, 0.2), (0.3, 0.3)), outer]) == [outer]

    def test_neighbours_coalesce(self):
        left, right = Box.unit(2).split(0)
        assert simplify_boxes([right, left]) == [Box.unit(2)]

    def test_diagonal_neighbours_stay_apart(self):
        boxes = [Box((0.0, 0.0), (0.5, 0.5)), Box((0.5, 0.5), (1.0, 1.0))]
        assert simplify_boxes(boxes) == boxes

    def test_duplicates_collapse(self):
        b = Box((0.1,), (0.2,))
        assert simplify_boxes([b, b, b]) == [b]

    def test_point_set_is_preserved(self):
        rng = np.random.default_rng(32)
        boxes = _grid_boxes(rng, 12)
        simplified = simplify_boxes(boxes)
        assert len(simplified) <= len(set(boxes))
        for p in rng.random((5000, 2)):
            assert any(b.contains(p) for b in boxes) == any(b.contains(p) for b in simplified)

    def test_idempotent(self):
        boxes = _grid_boxes(np.random.default_rng(33), 12)
        once = simplify_boxes(boxes)
        assert simplify_boxes(once) == once


class TestSmt:
    def test_single_box_script(self):
        text = emit_smt([Box((0.0, 0.0), (1.0, 2.0))], ["x1", "x2"])
        assert text == (
            "(set-logic QF_LRA)\n"
            "(declare-const x1 Real)\n"
            "(declare-const x2 Real)\n"
            "(assert (and (<= 0 x1) (<= x1 1) (<= 0 x2) (<= x2 2)))\n"
            "(check-sat)\n"
        )

    def test_several_boxes_are_a_disjunction(self):
        text = emit_smt([Box((0.0,), (0.5,)), Box((0.75,), (1.0,))], ["x"])
        assert "(assert (or (and (<= 0 x) (<= x 0.5)) (and (<= 0.75 x) (<= x 1))))" in text

    def test_no_boxes_is_unsatisfiable(self):
        text = emit_smt([], ["x1"])
        assert "(assert false)" in text
        assert text.rstrip().endswith("(check-sat)")

    def test_open_upper_bound(self):
        text = emit_smt([Box((0.0,), (1.0,))], ["x1"], open_upper=[[True]])
        assert "(< x1 1)" in text
        assert "(<= x1 1)" not in text

    def test_numbers(self):
        assert smt_number(-0.25) == "(- 0.25)"
        assert smt_number(3.0) == "3"
        assert smt_number(1e-05) == "0.00001"
        with pytest.raises(ValueError):
            smt_number(float("inf"))

    def test_name_count_must_match(self):
        with pytest.raises(ValueError):
            emit_smt([Box.unit(2)], ["x1"])


class TestIndex:
    def test_membership(self):
        idx = build_index([Box.from_arrays([0.0] * 8, [0.1] * 8)], Box.unit(8))
        assert contains(idx, [0.05] * 8)
        assert not contains(idx, [0.5] * 8)
        assert contains(idx, [0.1] * 8)

    def test_out_of_domain_counts_as_unsafe(self):
        idx = build_index([], Box.unit(2))
        assert not contains(idx, [0.5, 0.5])
        assert contains(idx, [1.5, 0.5])
        assert idx.stats.out_of_domain == 1
        assert idx.stats.queries == 2

    def test_agrees_with_linear_scan(self):
        rng = np.random.default_rng(34)
        boxes = _random_boxes(rng, 200, 8, max_width=0.3)
        idx = build_index(boxes, Box.unit(8), resolution=16)
        for x in rng.random((3000, 8)):
            assert contains(idx, x) == any(b.contains(x) for b in boxes)

    def test_inspects_fewer_boxes_than_a_scan(self):
        rng = np.random.default_rng(35)
        boxes = _random_boxes(rng, 300, 8, max_width=0.05)
        idx = build_index(boxes, Box.unit(8))
        for x in rng.random((1000, 8)):
            contains(idx, x)
        assert idx.stats.queries == 1000
        assert idx.stats.mean_inspected < len(boxes) / 4

    def test_one_dimensional_grid(self):
        boxes = [Box((0.0, 0.0), (0.2, 1.0)), Box((0.7, 0.0), (1.0, 1.0))]
        idx = build_index(boxes, Box.unit(2), resolution=4, max_dims=1)
        assert len(idx.dims) == 1
        assert contains(idx, [0.1, 0.9])
        assert not contains(idx, [0.5, 0.5])

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_index([], Box.unit(2), resolution=0)
        with pytest.raises(ValueError):
            build_index([], Box.unit(2), max_dims=3)
