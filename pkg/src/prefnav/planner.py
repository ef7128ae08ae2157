"""Sampling-based local planner with an exponential terrain-preference cost.

Candidates are constant-(v, omega) arcs over a fixed horizon. Each is scored
``J = w_G * |Gamma_N - goal| + sum_s exp(-u_vis(f_vis(patch(s))))`` and the
cheapest one wins; ties go to the lower candidate index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, PlanningError
from .features import featurize
from .world import (
    Limits, RobotState, Trajectory, WorldMap, generate_patch, generate_proprio, rollout, terrain_at,
)

LOG_COLUMNS = ("step", "x", "y", "theta", "v", "omega", "terrain_id", "u_vis", "cost")


@dataclass(frozen=True)
class PlannerConfig:
    v_samples: int = 7
    omega_samples: int = 11
    horizon: int = 20
    dt: float = 0.1
    replan_period: int = 5
    goal_tolerance: float = 0.5
    goal_weight: float = 2.0
    max_steps: int = 600
    limits: Limits = field(default_factory=Limits)

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0 or self.replan_period < 1:
            raise ConfigError("horizon, dt and replan_period must be positive")
        if self.v_samples < 1 or self.omega_samples < 1:
            raise ConfigError("need at least one sample per axis")
        if self.goal_tolerance < 0 or self.goal_weight < 0 or self.max_steps < 0:
            raise ConfigError("goal_tolerance, goal_weight and max_steps must be non-negative")

    def velocities(self) -> np.ndarray:
        if self.v_samples == 1:
            return np.array([self.limits.v_max])
        return np.linspace(0.0, self.limits.v_max, self.v_samples)

    def turn_rates(self) -> np.ndarray:
        if self.omega_samples == 1:
            return np.array([0.0])
        return np.linspace(-self.limits.omega_max, self.limits.omega_max, self.omega_samples)

    def actions(self) -> np.ndarray:
        """(K, 2) grid of (v, omega), v-major."""
        v, w = np.meshgrid(self.velocities(), self.turn_rates(), indexing="ij")
        return np.stack([v.ravel(), w.ravel()], axis=1)


def planner_from_dict(d) -> PlannerConfig:
    d = dict(d or {})
    limits = Limits(**d.pop("limits", {}))
    names = set(PlannerConfig.__dataclass_fields__)
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown planner keys: {sorted(unknown)}")
    return PlannerConfig(limits=limits, **d)


class UtilityMap:
    """Lazily evaluated ``u_vis`` per grid cell.

    A cell's patch is rendered at the cell centre with seed
    ``(seed, row, col)``, so its utility is fixed for a given world, model
    and seed; caching it for a whole episode gives the same numbers as
    caching per planning cycle.
    """

    def __init__(self, model, world: WorldMap, seed=0):
        self.model = model
        self.world = world
        self.seed = [int(s) for s in np.atleast_1d(seed)]
        self.values = np.full((world.height, world.width), np.nan)

    def cells(self, xy: np.ndarray):
        cs = self.world.cell_size
        rows = np.minimum((xy[..., 1] // cs).astype(int), self.world.height - 1)
        cols = np.minimum((xy[..., 0] // cs).astype(int), self.world.width - 1)
        return rows, cols

    def lookup(self, rows, cols) -> np.ndarray:
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        missing = np.isnan(self.values[rows, cols])
        if missing.any():
            todo = sorted(set(zip(rows[missing].tolist(), cols[missing].tolist())))
            patches = []
            for r, c in todo:
                x, y = self.world.cell_center(r, c)
                patches.append(generate_patch(self.world, RobotState(x, y), [*self.seed, r, c]).pixels)
            u = self.model.patch_utilities(np.stack(patches))
            for (r, c), val in zip(todo, u):
                self.values[r, c] = val
        return self.values[rows, cols]

    def at(self, xy) -> np.ndarray:
        return self.lookup(*self.cells(np.asarray(xy, dtype=float)))


# --------------------------------------------------------------------------
# Candidates and costs
# --------------------------------------------------------------------------

def candidate_poses(state: RobotState, config: PlannerConfig):
    acts = config.actions()
    poses = rollout(state.x, state.y, state.theta, acts[:, 0], acts[:, 1], config.dt, config.horizon)
    return acts, poses


def sample_candidates(state: RobotState, config: PlannerConfig) -> list[Trajectory]:
    """One rolled-out arc per (v, omega) grid point, in v-major order."""
    acts, poses = candidate_poses(state, config)
    return [Trajectory(p, action=tuple(a)) for a, p in zip(acts, poses)]


def cost_goal(traj, goal, weight=1.0) -> float:
    xy = traj.xy if isinstance(traj, Trajectory) else np.asarray(traj)[..., :2]
    return float(weight * math.dist(xy[-1], goal))


def cost_preference(traj, model, world: WorldMap, umap: UtilityMap | None = None, seed=0) -> float:
    """``sum_s exp(-u_vis)`` over the states; infinite if any state is out of bounds."""
    xy = traj.xy if isinstance(traj, Trajectory) else np.asarray(traj)[..., :2]
    if not all(world.in_bounds(x, y) for x, y in xy):
        return math.inf
    umap = umap or UtilityMap(model, world, seed)
    return float(np.exp(-umap.at(xy)).sum())


def _in_bounds(world: WorldMap, xy: np.ndarray) -> np.ndarray:
    w, h = world.extent
    return ((xy[..., 0] >= 0) & (xy[..., 0] <= w) & (xy[..., 1] >= 0) & (xy[..., 1] <= h)).all(axis=-1)


def evaluate(state: RobotState, goal, model, world: WorldMap, config: PlannerConfig,
             umap: UtilityMap | None = None):
    """Candidate actions, poses and their (J_G, J_P) costs."""
    umap = umap or UtilityMap(model, world)
    acts, poses = candidate_poses(state, config)
    xy = poses[..., :2]
    ok = _in_bounds(world, xy)
    j_goal = config.goal_weight * np.linalg.norm(xy[:, -1] - np.asarray(goal, float), axis=1)
    j_pref = np.full(len(acts), np.inf)
    if ok.any():
        u = umap.at(xy[ok])
        j_pref[ok] = np.exp(-u).sum(axis=1)
    return acts, poses, j_goal, j_pref


def plan(state: RobotState, goal, model, world: WorldMap, config: PlannerConfig,
         umap: UtilityMap | None = None) -> Trajectory:
    """Lowest-cost candidate; raises :class:`PlanningError` if none is in bounds."""
    umap = umap or UtilityMap(model, world)
    acts, poses, j_goal, j_pref = evaluate(state, goal, model, world, config, umap)
    total = j_goal + j_pref
    if not np.isfinite(total).any():
        raise PlanningError(f"every candidate from {state} leaves the world")
    k = int(np.argmin(total))
    return Trajectory(poses[k], action=tuple(acts[k]), utilities=umap.at(poses[k][:, :2]))


# --------------------------------------------------------------------------
# Episodes
# --------------------------------------------------------------------------

@dataclass
class EpisodeResult:
    trajectory: Trajectory
    actions: np.ndarray         # (N, 2) action that produced each state; zeros for the start
    goal_reached: bool
    patches: np.ndarray | None = None
    features: np.ndarray | None = None
    u_vis: np.ndarray | None = None
    u_pro: np.ndarray | None = None

    @property
    def final_distance(self) -> float:
        return self._final

    def rows(self):
        t = self.trajectory
        for i, (pose, act) in enumerate(zip(t.poses, self.actions)):
            u = float(self.u_vis[i]) if self.u_vis is not None else float("nan")
            yield (i, pose[0], pose[1], pose[2], act[0], act[1], int(t.terrain_ids[i]), u, math.exp(-u))


def run_episode(world: WorldMap, model, config: PlannerConfig, seed=0, start: RobotState | None = None,
                observe: bool = True) -> EpisodeResult:
    """Plan, execute the first ``replan_period`` states, repeat until the goal
    is within tolerance or ``max_steps`` states have been executed.

    With ``observe`` every executed state gets a paired patch and proprio
    feature vector (seeded by ``(seed, step)``) plus both utilities.
    """
    seed = [int(s) for s in np.atleast_1d(seed)]
    s = start or world.start
    goal = world.goal
    umap = UtilityMap(model, world, [*seed, 0])
    states, actions = [s], [(0.0, 0.0)]
    reached = math.dist((s.x, s.y), goal) <= config.goal_tolerance
    while not reached and len(states) - 1 < config.max_steps:
        best = plan(s, goal, model, world, config, umap)
        for pose in best.poses[:config.replan_period]:
            s = RobotState(*pose)
            states.append(s)
            actions.append(best.action)
            if math.dist((s.x, s.y), goal) <= config.goal_tolerance:
                reached = True
                break
            if len(states) - 1 >= config.max_steps:
                break
    traj = Trajectory.from_states(states)
    traj.terrain_ids = np.array([terrain_at(world, st) for st in states], dtype=np.int64)
    result = EpisodeResult(traj, np.asarray(actions, dtype=float), reached)
    result._final = math.dist((s.x, s.y), goal)
    if observe:
        patches, feats = [], []
        for i, st in enumerate(states):
            patches.append(generate_patch(world, st, [*seed, 1, i, 0]).pixels)
            feats.append(featurize(generate_proprio(world, st, [*seed, 1, i, 1])))
        result.patches = np.stack(patches)
        result.features = np.stack(feats)
        result.u_vis = model.patch_utilities(result.patches)
        result.u_pro = model.proprio_utilities(result.features)
        traj.utilities = result.u_vis
    return result


def write_episode_csv(path, result: EpisodeResult) -> None:
    """One row per executed state: ``step,x,y,theta,v,omega,terrain_id,u_vis,cost``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in result.rows():
            i, x, y, th, v, om, tid, u, c = row
            w.writerow([i, f"{x:.6f}", f"{y:.6f}", f"{th:.6f}", f"{v:.6f}", f"{om:.6f}", tid,
                        f"{u:.6f}", f"{c:.6f}"])
