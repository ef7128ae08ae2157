import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefnav.catalog import CONCRETE, GRASS, MARBLE_ROCKS, TERRAINS
from prefnav.errors import ConfigError, PlanningError
from prefnav.metrics import aligned_percentage
from prefnav.planner import (
    LOG_COLUMNS, PlannerConfig, UtilityMap, cost_goal, cost_preference, evaluate, plan,
    planner_from_dict, run_episode, sample_candidates, write_episode_csv,
)
from prefnav.scenarios import two_corridor_world
from prefnav.world import Limits, RobotState, Trajectory, WorldMap, step

from oracles import unicycle_closed_form


class ConstantModel:
    """Stands in for a bundle: the same utility for every patch."""

    def __init__(self, u=0.0):
        self.u = u
        self.calls = 0

    def patch_utilities(self, patches):
        self.calls += len(patches)
        return np.full(len(patches), self.u)

    def proprio_utilities(self, features):
        return np.full(len(features), self.u)


class ColorModel(ConstantModel):
    """Utility from the mean green channel, so grass beats concrete."""

    def patch_utilities(self, patches):
        return 10.0 * np.asarray(patches)[..., 1].mean(axis=(1, 2))


def uniform_world(tid=CONCRETE, size=20):
    return WorldMap({tid: TERRAINS[tid]}, np.full((size, size), tid), 1.0,
                    RobotState(0.1 * size, 0.1 * size, 0.0), (0.75 * size, 0.1 * size))


def test_single_candidate_is_straight_line():
    cfg = PlannerConfig(v_samples=1, omega_samples=1, horizon=12)
    cands = sample_candidates(RobotState(1.0, 2.0, 0.0), cfg)
    assert len(cands) == 1
    assert len(cands[0]) == 12
    assert np.allclose(cands[0].poses[:, 1], 2.0)
    assert cands[0].action == (cfg.limits.v_max, 0.0)


def test_candidate_count_is_grid_size():
    cfg = PlannerConfig(v_samples=4, omega_samples=9)
    assert len(sample_candidates(RobotState(0, 0, 0), cfg)) == 36


def test_candidate_endpoints_match_closed_form():
    cfg = PlannerConfig()
    s = RobotState(1.0, -2.0, 0.7)
    for traj in sample_candidates(s, cfg):
        v, w = traj.action
        x, y, th = unicycle_closed_form(s.x, s.y, s.theta, v, w, cfg.horizon * cfg.dt)
        assert traj.poses[-1, 0] == pytest.approx(x, abs=1e-9)
        assert traj.poses[-1, 1] == pytest.approx(y, abs=1e-9)
        assert math.cos(traj.poses[-1, 2] - th) == pytest.approx(1.0, abs=1e-9)


def test_candidates_consistent_with_step():
    cfg = PlannerConfig(horizon=8)
    s0 = RobotState(3.0, 3.0, -1.0)
    for traj in sample_candidates(s0, cfg)[::7]:
        s = s0
        for pose in traj.poses:
            s = step(s, traj.action, cfg.dt, cfg.limits)
            assert np.allclose([s.x, s.y], pose[:2], atol=1e-9)


def test_cost_goal_cases():
    at_goal = Trajectory(np.array([[0, 0, 0], [3.0, 4.0, 0]]))
    assert cost_goal(at_goal, (3.0, 4.0), 1.0) == 0.0
    assert cost_goal(at_goal, (3.0, 6.0), 1.0) == 2.0


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 50), st.floats(-10, 10), st.floats(-10, 10))
def test_cost_goal_linear_in_weight(c, gx, gy):
    traj = Trajectory(np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 0.0]]))
    assert cost_goal(traj, (gx, gy), c) == pytest.approx(c * cost_goal(traj, (gx, gy), 1.0))


def test_zero_utility_gives_horizon_cost():
    w = uniform_world()
    traj = sample_candidates(RobotState(5, 5, 0), PlannerConfig(v_samples=1, omega_samples=1))[0]
    assert cost_preference(traj, ConstantModel(0.0), w) == pytest.approx(20.0)


def test_large_utility_cost_vanishes():
    w = uniform_world()
    traj = sample_candidates(RobotState(5, 5, 0), PlannerConfig(v_samples=1, omega_samples=1))[0]
    assert cost_preference(traj, ConstantModel(50.0), w) < 1e-15


def test_out_of_bounds_candidate_is_infinite():
    w = uniform_world(size=4)
    traj = sample_candidates(RobotState(3.5, 2, 0), PlannerConfig(v_samples=1, omega_samples=1))[0]
    assert cost_preference(traj, ConstantModel(), w) == math.inf


def test_all_candidates_out_of_bounds_raises():
    w = uniform_world(size=1)
    cfg = PlannerConfig(v_samples=1, omega_samples=1)
    with pytest.raises(PlanningError):
        plan(RobotState(0.9, 0.5, 0.0), (0.5, 0.5), ConstantModel(), w, cfg)


def test_uniform_world_plan_minimizes_goal_cost_only():
    w = uniform_world()
    cfg = PlannerConfig()
    s = RobotState(5.0, 5.0, 0.3)
    goal = (12.0, 9.0)
    best = plan(s, goal, ConstantModel(1.0), w, cfg)
    acts, poses, jg, jp = evaluate(s, goal, ConstantModel(1.0), w, cfg)
    assert np.allclose(jp[np.isfinite(jp)], jp[np.isfinite(jp)][0])
    assert best.action == tuple(acts[int(np.argmin(jg))])


def test_single_candidate_returned_regardless_of_cost():
    w = uniform_world()
    cfg = PlannerConfig(v_samples=1, omega_samples=1)
    best = plan(RobotState(5, 5, 0), (15, 5), ConstantModel(-20.0), w, cfg)
    assert best.action == (cfg.limits.v_max, 0.0)


def test_ties_go_to_first_candidate():
    w = uniform_world()
    cfg = PlannerConfig(v_samples=1, omega_samples=3, goal_weight=0.0)
    best = plan(RobotState(10, 10, 0), (0, 0), ConstantModel(1.0), w, cfg)
    assert best.action == tuple(cfg.actions()[0])


def test_constant_offset_keeps_argmin_without_goal_term():
    w = two_corridor_world(CONCRETE, GRASS)
    cfg = PlannerConfig(goal_weight=0.0)
    s = RobotState(7.9, 5.0, math.pi / 2)

    class Shifted(ColorModel):
        def patch_utilities(self, patches):
            return super().patch_utilities(patches) + 3.0

    a = plan(s, w.goal, ColorModel(), w, cfg)
    b = plan(s, w.goal, Shifted(), w, cfg)
    assert a.action == b.action


def test_raising_utilities_never_increases_cost():
    w = two_corridor_world(CONCRETE, GRASS)
    traj = sample_candidates(RobotState(7.0, 3.0, 0.5), PlannerConfig())[40]
    assert cost_preference(traj, ConstantModel(1.0), w) >= cost_preference(traj, ConstantModel(1.5), w)


def test_utility_map_renders_each_cell_once():
    w = uniform_world()
    model = ConstantModel()
    umap = UtilityMap(model, w, seed=1)
    xy = np.array([[1.2, 1.3], [1.7, 1.9], [5.5, 5.5]])
    umap.at(xy)
    umap.at(xy)
    assert model.calls == 2


def test_utility_map_is_seed_deterministic(minus_model):
    w = two_corridor_world(CONCRETE, GRASS)
    xy = np.array([[3.3, 4.1], [12.2, 9.9]])
    a = UtilityMap(minus_model, w, 4).at(xy)
    b = UtilityMap(minus_model, w, 4).at(xy)
    assert np.array_equal(a, b)


def test_trained_model_prefers_higher_utility_terrain(minus_model):
    grid = np.full((10, 20), MARBLE_ROCKS)
    grid[5:] = CONCRETE
    w = WorldMap({CONCRETE: TERRAINS[CONCRETE], MARBLE_ROCKS: TERRAINS[MARBLE_ROCKS]}, grid, 1.0,
                 RobotState(1, 1), (19, 9))
    cfg = PlannerConfig(v_samples=1, omega_samples=1)
    on_rocks = sample_candidates(RobotState(1.0, 2.5, 0.0), cfg)[0]
    on_concrete = sample_candidates(RobotState(1.0, 7.5, 0.0), cfg)[0]
    assert cost_preference(on_concrete, minus_model, w) < cost_preference(on_rocks, minus_model, w)


def test_two_corridor_plan_stays_on_preferred_side(minus_model):
    w = two_corridor_world(CONCRETE, GRASS)
    result = run_episode(w, minus_model, PlannerConfig(), seed=0, observe=False)
    on_left = np.mean(result.trajectory.xy[:, 0] < 8.0)
    assert on_left >= 0.9
    assert result.goal_reached
    assert aligned_percentage(result.trajectory, w, {CONCRETE}) == 100.0


def test_episode_starting_at_goal_is_immediate():
    w = uniform_world()
    res = run_episode(w, ConstantModel(), PlannerConfig(), start=RobotState(15.0, 2.0), observe=False)
    assert res.goal_reached
    assert len(res.trajectory) == 1


def test_uniform_world_episode_reaches_goal():
    w = uniform_world()
    cfg = PlannerConfig()
    res = run_episode(w, ConstantModel(1.0), cfg, seed=2, observe=False)
    assert res.goal_reached
    assert res.final_distance <= cfg.goal_tolerance


def test_episode_states_follow_step():
    w = uniform_world()
    cfg = PlannerConfig()
    res = run_episode(w, ConstantModel(1.0), cfg, seed=2, observe=False)
    states = res.trajectory.states
    for prev, nxt, act in zip(states[:-1], states[1:], res.actions[1:]):
        s = step(prev, act, cfg.dt, cfg.limits)
        assert abs(s.x - nxt.x) < 1e-9 and abs(s.y - nxt.y) < 1e-9


def test_step_budget_exhaustion_returns_trajectory():
    w = uniform_world()
    cfg = PlannerConfig(max_steps=7)
    res = run_episode(w, ConstantModel(1.0), cfg, observe=False)
    assert not res.goal_reached
    assert len(res.trajectory) == 8


def test_episode_is_deterministic(minus_model):
    w = two_corridor_world(CONCRETE, GRASS)
    cfg = PlannerConfig(max_steps=30)
    a = run_episode(w, minus_model, cfg, seed=5)
    b = run_episode(w, minus_model, cfg, seed=5)
    assert np.array_equal(a.trajectory.poses, b.trajectory.poses)
    assert np.array_equal(a.u_pro, b.u_pro)


def test_episode_log_schema(tmp_path, minus_model):
    w = two_corridor_world(CONCRETE, GRASS)
    res = run_episode(w, minus_model, PlannerConfig(max_steps=10), seed=1)
    path = tmp_path / "ep.csv"
    write_episode_csv(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(LOG_COLUMNS)
    assert len(lines) == len(res.trajectory) + 1
    first = lines[1].split(",")
    assert float(first[-1]) == pytest.approx(math.exp(-float(first[-2])), rel=1e-5)


def test_plan_cycle_is_fast(minus_model):
    w = two_corridor_world(CONCRETE, GRASS)
    cfg = PlannerConfig()
    umap = UtilityMap(minus_model, w)
    umap.lookup(*np.indices(w.grid.shape).reshape(2, -1))
    t = time.perf_counter()
    for _ in range(10):
        plan(RobotState(7.0, 5.0, 1.5), w.goal, minus_model, w, cfg, umap)
    assert (time.perf_counter() - t) / 10 < 0.1


def test_config_validation():
    with pytest.raises(ConfigError):
        PlannerConfig(horizon=0)
    with pytest.raises(ConfigError):
        PlannerConfig(dt=0.0)
    with pytest.raises(ConfigError):
        planner_from_dict({"bogus": 1})
    cfg = planner_from_dict({"goal_weight": 1.0, "limits": {"v_max": 1.0}})
    assert cfg.limits == Limits(v_max=1.0)
    assert cfg.velocities().max() == 1.0
