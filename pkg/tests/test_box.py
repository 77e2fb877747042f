import numpy as np
import pytest

from guided_shield.box import Box, RegionFileError, stack_boxes


class TestBox:
    def test_unit_box(self):
        box = Box.unit(3)
        assert box.dim == 3
        assert box.volume() == 1.0
        assert np.array_equal(box.center, [0.5, 0.5, 0.5])

    def test_membership_is_closed(self):
        box = Box((0.0, 0.0), (0.1, 0.1))
        assert box.contains([0.1, 0.0])
        assert box.contains([0.05, 0.05])
        assert not box.contains([0.1000001, 0.05])

    def test_split_shares_midpoint_face(self):
        left, right = Box((0.0, 0.0), (1.0, 2.0)).split(1)
        assert left == Box((0.0, 0.0), (1.0, 1.0))
        assert right == Box((0.0, 1.0), (1.0, 2.0))
        assert left.volume() + right.volume() == 2.0

    def test_widest_dim_prefers_lowest_index_on_ties(self):
        assert Box.unit(4).widest_dim() == 0
        assert Box((0.0, 0.0), (0.5, 1.0)).widest_dim() == 1
        # normalized by a domain that is twice as tall
        assert Box((0.0, 0.0), (0.5, 1.0)).widest_dim(scale=[0.5, 2.0]) == 0

    def test_intersect_and_hull(self):
        a = Box((0.0, 0.0), (0.5, 0.5))
        b = Box((0.25, 0.25), (1.0, 1.0))
        assert a.intersect(b) == Box((0.25, 0.25), (0.5, 0.5))
        assert a.hull(b) == Box((0.0, 0.0), (1.0, 1.0))
        far = Box((0.6, 0.6), (0.7, 0.7))
        assert a.intersect(far).is_empty()
        assert a.intersect(far).volume() == 0.0

    def test_contains_box(self):
        assert Box.unit(2).contains_box(Box((0.2, 0.2), (0.5, 0.5)))
        assert not Box((0.2, 0.2), (0.5, 0.5)).contains_box(Box.unit(2))

    def test_samples_stay_inside(self):
        box = Box((0.2, -1.0), (0.4, 1.0))
        xs = box.sample(np.random.default_rng(0), 500)
        assert xs.shape == (500, 2)
        assert np.all(xs >= box.lo) and np.all(xs <= box.hi)

    def test_from_dict_rejects_inverted_bounds(self):
        with pytest.raises(RegionFileError):
            Box.from_dict({"lower": [0.5], "upper": [0.1]})

    def test_from_dict_rejects_missing_keys(self):
        with pytest.raises(RegionFileError):
            Box.from_dict({"lower": [0.5]})

    def test_mismatched_lengths(self):
        with pytest.raises(RegionFileError):
            Box((0.0,), (1.0, 1.0))

    def test_stack_boxes(self):
        lo, hi = stack_boxes([Box.unit(2), Box((0.2, 0.3), (0.4, 0.5))])
        assert lo.shape == (2, 2)
        assert np.array_equal(hi[1], [0.4, 0.5])
