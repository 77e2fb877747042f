import json

import numpy as np
import pytest

from conftest import constant_network, toy_network
from guided_shield.env import (
    DOWN,
    LEFT,
    MAP_IDS,
    REWARD_COLLISION,
    REWARD_TARGET,
    RIGHT,
    STEP_SCALE,
    UP,
    EnvConfig,
    EnvState,
    MapFormatError,
    Rect,
    Terminal,
    WorldMap,
    is_collision,
    load_map,
    observe,
    reset,
    run_episode,
    step,
)
from guided_shield.policy import ActionChoice, DimensionMismatchError


def _state(world, agent, target=(0.05, 0.05)):
    return EnvState(agent=agent, target=target, map=world)


def _brute_force_sensors(world: WorldMap, x: float, y: float) -> list[float]:
    """Ray distances by scanning every wall and obstacle face."""
    right, left, up, down = 1.0 - x, x, 1.0 - y, y
    for r in world.obstacles:
        if r.ymin <= y <= r.ymax:
            if r.xmin >= x:
                right = min(right, r.xmin - x)
            if r.xmax <= x:
                left = min(left, x - r.xmax)
        if r.xmin <= x <= r.xmax:
            if r.ymin >= y:
                up = min(up, r.ymin - y)
            if r.ymax <= y:
                down = min(down, y - r.ymax)
    return [right, left, up, down]


class TestMaps:
    def test_bundled_maps_load(self):
        for map_id in MAP_IDS:
            world = load_map(map_id)
            assert world.id == map_id
            assert world.obstacles

    def test_unknown_map(self):
        with pytest.raises(MapFormatError):
            load_map(99)

    def test_obstacle_outside_unit_square(self):
        with pytest.raises(MapFormatError):
            WorldMap(id=1, obstacles=(Rect(0.9, 1.2, 0.0, 0.1),))

    def test_map_dir_override(self, tmp_path):
        (tmp_path / "map3.json").write_text(json.dumps({"id": 3, "obstacles": []}))
        assert load_map(3, tmp_path).obstacles == ()

    def test_malformed_map(self, tmp_path):
        (tmp_path / "map2.json").write_text(json.dumps({"id": 2, "obstacles": [{"xmin": 0.1}]}))
        with pytest.raises(MapFormatError):
            load_map(2, tmp_path)


class TestObserve:
    def test_centre_of_empty_map(self, empty_world):
        obs = observe(_state(empty_world, (0.5, 0.5)))
        assert obs.sensors == (0.5, 0.5, 0.5, 0.5)

    def test_wall_distances(self, empty_world):
        obs = observe(_state(empty_world, (0.1, 0.5)))
        assert obs.sensors[LEFT] == pytest.approx(0.1)
        assert obs.sensors[RIGHT] == pytest.approx(0.9)

    def test_obstacle_on_the_right(self):
        world = WorldMap(id=0, obstacles=(Rect(0.6, 0.7, 0.4, 0.6),))
        obs = observe(_state(world, (0.5, 0.5)))
        assert obs.sensors[RIGHT] == pytest.approx(0.1)
        assert obs.sensors[LEFT] == pytest.approx(0.5)

    def test_vector_layout(self, empty_world):
        obs = observe(_state(empty_world, (0.2, 0.3), target=(0.7, 0.9)))
        v = obs.vector()
        assert v.shape == (8,)
        assert np.array_equal(v[4:], [0.2, 0.3, 0.7, 0.9])

    def test_matches_brute_force_on_bundled_maps(self):
        rng = np.random.default_rng(11)
        for map_id in MAP_IDS:
            world = load_map(map_id)
            for x, y in rng.random((2000, 2)):
                if world.blocked(x, y):
                    continue
                sensors = observe(_state(world, (float(x), float(y)))).sensors
                assert np.allclose(sensors, _brute_force_sensors(world, x, y), rtol=0, atol=1e-12)
                assert all(0.0 <= s <= 1.0 for s in sensors)


class TestStep:
    def test_displacement_scales_magnitude(self, empty_world):
        outcome = step(_state(empty_world, (0.5, 0.5)), ActionChoice(UP, 0.8))
        assert outcome.next.agent[0] == 0.5
        assert outcome.next.agent[1] == pytest.approx(0.5 + 0.8 * STEP_SCALE)
        assert outcome.reward == 0.0
        assert outcome.terminal is Terminal.NONE

    def test_step_longer_than_sensor_collides(self, empty_world):
        state = _state(empty_world, (0.5, 0.97))
        outcome = step(state, ActionChoice(UP, 0.8))
        assert outcome.terminal is Terminal.COLLISION
        assert outcome.reward == REWARD_COLLISION
        assert outcome.next.agent == state.agent

    def test_zero_magnitude_stays_put(self, empty_world):
        outcome = step(_state(empty_world, (0.5, 0.5)), ActionChoice(DOWN, 0.0))
        assert outcome.next.agent == (0.5, 0.5)
        assert outcome.reward == 0.0

    def test_magnitude_is_clipped(self, empty_world):
        outcome = step(_state(empty_world, (0.5, 0.5)), ActionChoice(RIGHT, 7.0))
        assert outcome.next.agent[0] == pytest.approx(0.5 + STEP_SCALE)

    def test_reaching_the_target(self, empty_world):
        outcome = step(_state(empty_world, (0.5, 0.5), target=(0.5, 0.56)), ActionChoice(UP, 1.0))
        assert outcome.terminal is Terminal.TARGET_REACHED
        assert outcome.reward == REWARD_TARGET

    def test_equal_step_and_distance_is_not_a_collision(self):
        assert not is_collision((STEP_SCALE, 1.0, 1.0, 1.0), ActionChoice(RIGHT, 1.0))
        assert is_collision((STEP_SCALE * 0.99, 1.0, 1.0, 1.0), ActionChoice(RIGHT, 1.0))

    def test_never_leaves_the_unit_square_silently(self):
        rng = np.random.default_rng(12)
        world = load_map(1)
        for _ in range(3000):
            state = reset(world, rng)
            action = ActionChoice(int(rng.integers(4)), float(rng.uniform(-0.5, 1.5)))
            outcome = step(state, action)
            x, y = outcome.next.agent
            assert 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0
            if outcome.terminal is Terminal.COLLISION:
                assert outcome.next.agent == state.agent

    def test_bad_direction(self, empty_world):
        with pytest.raises(DimensionMismatchError):
            step(_state(empty_world, (0.5, 0.5)), ActionChoice(4, 1.0))


class TestReset:
    def test_start_and_target_are_free_and_apart(self):
        rng = np.random.default_rng(13)
        for map_id in MAP_IDS:
            world = load_map(map_id)
            for _ in range(50):
                state = reset(world, rng)
                assert not world.blocked(*state.agent)
                assert not world.blocked(*state.target)
                assert np.hypot(
                    state.agent[0] - state.target[0], state.agent[1] - state.target[1]
                ) >= 0.3


class TestRunEpisode:
    def test_constant_move_ends_against_a_wall(self):
        always_right = constant_network([1.0, 0.0, 0.0, 0.0])
        results = [run_episode(always_right, 0, seed) for seed in range(10)]
        assert all(m.terminal is not Terminal.TIMEOUT for m in results)
        assert any(m.terminal is Terminal.COLLISION for m in results)
        for m in results:
            assert m.collisions == int(m.terminal is Terminal.COLLISION)
            assert m.success == (m.terminal is Terminal.TARGET_REACHED)

    def test_zero_magnitude_hook_times_out(self, greedy_policy):
        def stand_still(obs, action, outputs):
            return ActionChoice(action.direction, 0.0)

        m = run_episode(greedy_policy, 2, 5, step_hook=stand_still, config=EnvConfig(max_steps=30))
        assert m.terminal is Terminal.TIMEOUT
        assert m.steps == 30
        assert not m.success

    def test_hook_sees_the_raw_outputs(self, greedy_policy):
        seen = []

        def spy(obs, action, outputs):
            seen.append((action.direction, int(np.argmax(outputs))))
            return action

        run_episode(greedy_policy, 0, 1, step_hook=spy)
        assert seen and all(a == b for a, b in seen)

    def test_reproducible(self, safe_policy):
        a = run_episode(safe_policy, 3, 42, record_trace=True)
        b = run_episode(safe_policy, 3, 42, record_trace=True)
        assert a.trace == b.trace
        assert (a.steps, a.terminal, a.reward) == (b.steps, b.terminal, b.reward)

    def test_trace_has_one_position_per_step(self, safe_policy):
        m = run_episode(safe_policy, 4, 8, record_trace=True)
        assert len(m.trace) == m.steps + 1

    def test_heuristic_warm_start_never_collides(self, safe_policy):
        results = [run_episode(safe_policy, seed % 5, seed) for seed in range(100)]
        assert sum(m.collisions for m in results) == 0
        assert sum(m.success for m in results) >= 65

    @pytest.mark.slow
    def test_trained_policy_mostly_succeeds(self, trained_policies):
        results = [run_episode(trained_policies[12], seed % 5, seed) for seed in range(100)]
        success = sum(m.success for m in results) / len(results)
        assert 0.8 <= success <= 1.0
        assert sum(m.collisions for m in results) == 0

    def test_wrong_network_shape(self):
        with pytest.raises(DimensionMismatchError):
            run_episode(toy_network(), 0, 0)
