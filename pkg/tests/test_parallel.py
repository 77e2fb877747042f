from functools import partial

from guided_shield.parallel import parallel_map


def _scaled(x: int, factor: int) -> int:
    return x * factor


class TestParallelMap:
    def test_in_process(self):
        assert parallel_map(lambda x: x + 1, [3, 1, 2]) == [4, 2, 3]

    def test_pool_keeps_input_order(self):
        items = list(range(40))
        assert parallel_map(partial(_scaled, factor=3), items, workers=3) == [3 * x for x in items]

    def test_single_item_skips_the_pool(self):
        assert parallel_map(lambda x: -x, [5], workers=8) == [-5]

    def test_empty(self):
        assert parallel_map(abs, [], workers=2) == []
