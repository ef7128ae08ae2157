"""Scenario catalog and runner.

Every scenario is a two-corridor world: the robot starts and finishes in the
left corridor, and the right corridor is known grass. The left corridor holds
the terrain under test, so only a model that ranks it above grass keeps to
the left. A scenario runs trials of the pre-adaptation model, collects the
records its novelty detector flags, extrapolates a preference for them and,
on a match, adapts and runs the same trials again.
"""

from __future__ import annotations

import csv
import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import ModelBundle, train_bundle
from .catalog import BUSH, CONCRETE, GRASS, PEBBLE_PAVEMENT, TERRAINS
from .config import ExperimentConfig
from .data import gen_data
from .errors import NoMatchError, ValidationError
from .extrapolation import (
    AdaptationSet, Extrapolation, _jsonable, adapt, build_known_clusters, extrapolate_preference,
)
from .metrics import aligned_percentage, hausdorff
from .planner import EpisodeResult, PlannerConfig, run_episode, write_episode_csv
from .world import (
    DAYLIGHT, NIGHT, HalfPlaneShadow, LightingCondition, RobotState, WorldMap, apply_lighting, write_ppm,
)

logger = logging.getLogger(__name__)

WIDTH, HEIGHT, CELL = 16.0, 20.0, 0.5
START = RobotState(7.5, 1.0, math.pi / 2)
GOAL = (7.5, 19.0)
START_JITTER = (0.2, 0.1)  # max |dx| in metres and |dtheta| in radians
METRIC_COLUMNS = ("scenario", "phase", "trial", "hausdorff", "aligned_percentage", "goal_reached",
                  "interventions", "steps", "final_distance")
MINUS, PLUS = "minus", "plus"


def two_corridor_world(left: int, right: int = GRASS, lighting: LightingCondition = DAYLIGHT,
                       terrains=None, name="two-corridor") -> WorldMap:
    """``left`` covers x < WIDTH/2, ``right`` the rest."""
    terrains = terrains or TERRAINS
    cols, rows = int(WIDTH / CELL), int(HEIGHT / CELL)
    grid = np.full((rows, cols), right, dtype=np.int64)
    grid[:, : cols // 2] = left
    used = {t: terrains[t] for t in (left, right)}
    return WorldMap(used, grid, CELL, START, GOAL, lighting, name=name)


@dataclass(frozen=True)
class Scenario:
    name: str
    world: WorldMap
    acceptable: frozenset
    expected_match: int | None  # known terrain the novel records should map to
    n_clusters: int | str = 1
    description: str = ""


def scenario_catalog(terrains=None) -> dict[str, Scenario]:
    t = terrains or TERRAINS
    shadow = LightingCondition(shadow=HalfPlaneShadow((WIDTH / 2, 0.0), (-1.0, 0.0), 0.45))
    items = [
        Scenario("known-terrains", two_corridor_world(CONCRETE, terrains=t, name="known-terrains"),
                 frozenset({CONCRETE}), None, description="concrete left, grass right, daylight"),
        Scenario("novel-terrain-day",
                 two_corridor_world(PEBBLE_PAVEMENT, terrains=t, name="novel-terrain-day"),
                 frozenset({CONCRETE, PEBBLE_PAVEMENT}), CONCRETE,
                 description="pebble pavement left (feels like concrete), grass right"),
        Scenario("night-known", two_corridor_world(CONCRETE, lighting=NIGHT, terrains=t, name="night-known"),
                 frozenset({CONCRETE}), CONCRETE, n_clusters="auto",
                 description="concrete left, grass right, night lighting"),
        Scenario("shadows", two_corridor_world(CONCRETE, lighting=shadow, terrains=t, name="shadows"),
                 frozenset({CONCRETE}), CONCRETE, n_clusters="auto",
                 description="concrete left in shadow, grass right"),
        Scenario("no-match", two_corridor_world(BUSH, CONCRETE, terrains=t, name="no-match"),
                 frozenset({CONCRETE}), None,
                 description="bush left (feels like nothing known), concrete right"),
    ]
    return {s.name: s for s in items}


def get_scenario(name: str, terrains=None) -> Scenario:
    catalog = scenario_catalog(terrains)
    if name not in catalog:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(catalog)}")
    return catalog[name]


def trial_start(seed, trial: int) -> RobotState:
    rng = np.random.default_rng([*_seed_list(seed), 5, trial])
    dx, dth = START_JITTER
    return RobotState(START.x + rng.uniform(-dx, dx), START.y, START.theta + rng.uniform(-dth, dth))


def _seed_list(seed):
    return [int(s) for s in np.atleast_1d(seed)]


# --------------------------------------------------------------------------
# Reference paths
# --------------------------------------------------------------------------

def reference_path(world: WorldMap, preferred, start=None, goal=None, spacing=0.05) -> np.ndarray:
    """Scripted stand-in for a human demonstration.

    Cheapest 8-connected cell path from start to goal where steps into
    non-preferred cells cost 1000 times their length, returned as a
    densified (M, 2) polyline from the start point to the goal point.
    """
    start = start or world.start
    goal = goal or world.goal
    preferred = {int(p) for p in preferred}
    h, w = world.grid.shape
    src = world.cell_of(start.x, start.y)
    dst = world.cell_of(*goal)
    dist = {src: 0.0}
    prev = {}
    heap = [(0.0, src)]
    steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    while heap:
        d, cell = heapq.heappop(heap)
        if cell == dst:
            break
        if d > dist[cell]:
            continue
        for dr, dc in steps:
            r, c = cell[0] + dr, cell[1] + dc
            if not (0 <= r < h and 0 <= c < w):
                continue
            step_len = math.hypot(dr, dc) * (1.0 if world.grid[r, c] in preferred else 1000.0)
            nd = d + step_len
            if nd < dist.get((r, c), math.inf):
                dist[(r, c)] = nd
                prev[(r, c)] = cell
                heapq.heappush(heap, (nd, (r, c)))
    cells = [dst]
    while cells[-1] != src:
        cells.append(prev[cells[-1]])
    cells.reverse()
    pts = [(start.x, start.y)] + [world.cell_center(r, c) for r, c in cells[1:-1]] + [tuple(goal)]
    return densify(np.asarray(pts, dtype=float), spacing)


def densify(points: np.ndarray, spacing: float) -> np.ndarray:
    out = [points[:1]]
    for a, b in zip(points[:-1], points[1:]):
        n = max(1, int(math.ceil(math.dist(a, b) / spacing)))
        t = np.arange(1, n + 1)[:, None] / n
        out.append(a + t * (b - a))
    return np.concatenate(out)


# --------------------------------------------------------------------------
# Novelty collection
# --------------------------------------------------------------------------

@dataclass
class NoveltyScan:
    flagged_windows: int
    total_windows: int
    records: np.ndarray  # indices kept for adaptation


def scan_episode(model: ModelBundle, result: EpisodeResult, window: int) -> NoveltyScan:
    """Flag windows of ``window`` consecutive records whose mean squared
    utility gap exceeds tau; keep the records of flagged windows whose own
    gap also exceeds tau."""
    sq = (result.u_vis - result.u_pro) ** 2
    keep, flagged, total = [], 0, 0
    for i in range(0, len(sq), window):
        chunk = sq[i:i + window]
        total += 1
        if chunk.mean() > model.tau:
            flagged += 1
            keep.extend(i + np.flatnonzero(chunk > model.tau))
    return NoveltyScan(flagged, total, np.asarray(keep, dtype=np.int64))


def collect_adaptation(model: ModelBundle, results, window: int, session_id: str):
    """Adaptation set from a list of observed episodes plus per-episode scans."""
    scans = [scan_episode(model, r, window) for r in results]
    parts = []
    for r, s in zip(results, scans):
        idx = s.records
        parts.append(AdaptationSet(r.patches[idx], r.features[idx], r.trajectory.poses[idx],
                                   session_id, r.trajectory.terrain_ids[idx]))
    return AdaptationSet.concat(parts, session_id), scans


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

@dataclass
class TrialMetrics:
    scenario: str
    phase: str
    trial: int
    hausdorff: float
    aligned_percentage: float
    goal_reached: bool
    interventions: int
    steps: int
    final_distance: float

    def row(self):
        return [self.scenario, self.phase, self.trial, f"{self.hausdorff:.6f}",
                f"{self.aligned_percentage:.6f}", int(self.goal_reached), self.interventions,
                self.steps, f"{self.final_distance:.6f}"]


@dataclass
class ScenarioResult:
    scenario: str
    metrics: list[TrialMetrics]
    manifest: dict
    plus: ModelBundle | None = None
    episodes: dict = field(default_factory=dict)

    def phase(self, name) -> list[TrialMetrics]:
        return [m for m in self.metrics if m.phase == name]

    @property
    def outcome(self) -> str:
        return self.manifest["outcome"]


def run_trials(scenario: Scenario, model: ModelBundle, planner: PlannerConfig, seed, phase: str,
               trials: int, reference=None):
    out, episodes = [], []
    for t in range(trials):
        start = trial_start(seed, t)
        ep = run_episode(scenario.world, model, planner, seed=[*_seed_list(seed), t], start=start)
        ref = reference if reference is not None else reference_path(scenario.world, scenario.acceptable, start)
        traj = ep.trajectory
        out.append(TrialMetrics(scenario.name, phase, t, hausdorff(traj, ref),
                                aligned_percentage(traj, scenario.world, scenario.acceptable),
                                ep.goal_reached, int(not ep.goal_reached), len(traj) - 1,
                                ep.final_distance))
        episodes.append(ep)
    return out, episodes


def run_scenario(name: str, model: ModelBundle, pre_data, config: ExperimentConfig, out_dir=None,
                 trials: int | None = None, scenario: Scenario | None = None) -> ScenarioResult:
    """Pre-adaptation trials, novelty collection, extrapolation and, on a
    match, adaptation and post-adaptation trials.

    With ``out_dir`` writes ``metrics.csv``, ``manifest.json``, per-trial
    episode logs, trajectory plots and the adapted checkpoint.
    """
    scenario = scenario or get_scenario(name, config.terrains)
    trials = trials or config.trials
    seed = [config.seed, _name_code(scenario.name)]
    nov = config.novelty
    minus_rows, minus_eps = run_trials(scenario, model, config.planner, seed, MINUS, trials)
    adaptation, scans = collect_adaptation(model, minus_eps, nov.window, scenario.name)
    manifest = {
        "scenario": scenario.name, "description": scenario.description, "seed": config.seed,
        "trials": trials, "acceptable": sorted(scenario.acceptable),
        "flagged_windows": [s.flagged_windows for s in scans],
        "total_windows": [s.total_windows for s in scans],
        "adaptation_records": len(adaptation),
        "adaptation_truth": _histogram(adaptation.truth),
        "tau": model.tau,
    }
    plus, plus_rows, plus_eps = None, [], []
    if len(adaptation) == 0:
        manifest["outcome"] = "not-flagged"
    else:
        known = build_known_clusters(model, pre_data.train)
        k = scenario.n_clusters if nov.n_clusters == 1 else nov.n_clusters
        res = extrapolate_preference(adaptation, model, known, nov.mu, n_clusters=k, seed=seed,
                                     max_clusters=nov.max_clusters)
        results = res if isinstance(res, list) else [res]
        manifest["extrapolation"] = [_extrapolation_summary(r, adaptation) for r in results]
        try:
            outcome = adapt(model, adaptation, res, pre_data, config.training, nov, seed=seed)
        except NoMatchError:
            manifest["outcome"] = "refused"
            for row, s in zip(minus_rows, scans):
                row.interventions += int(s.flagged_windows > 0)
        else:
            plus = outcome.model
            manifest["outcome"] = "adapted"
            manifest["novel_labels"] = {str(k): v for k, v in outcome.novel_labels.items()}
            plus_rows, plus_eps = run_trials(scenario, plus, config.planner, seed, PLUS, trials)
    result = ScenarioResult(scenario.name, minus_rows + plus_rows, manifest, plus,
                            {MINUS: minus_eps, PLUS: plus_eps})
    if out_dir is not None:
        write_scenario(result, scenario, out_dir, seed)
    return result


def _name_code(name: str) -> int:
    # stable across interpreter runs, unlike hash()
    return int.from_bytes(name.encode(), "little") % (2 ** 31)


def _histogram(labels) -> dict:
    if labels is None or len(labels) == 0:
        return {}
    ids, counts = np.unique(labels, return_counts=True)
    return {str(int(i)): int(c) for i, c in zip(ids, counts)}


def _extrapolation_summary(r: Extrapolation, adaptation: AdaptationSet) -> dict:
    d = r.to_dict()
    d["records"] = int(len(r.members)) if r.members is not None else len(adaptation)
    if adaptation.truth is not None and r.members is not None:
        d["truth"] = _histogram(adaptation.truth[r.members])
    return d


# --------------------------------------------------------------------------
# Artifacts
# --------------------------------------------------------------------------

def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r.row())


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_scenario(result: ScenarioResult, scenario: Scenario, out_dir, seed) -> Path:
    d = Path(out_dir) / scenario.name
    (d / "episodes").mkdir(parents=True, exist_ok=True)
    write_metrics_csv(d / "metrics.csv", result.metrics)
    files = ["metrics.csv"]
    for phase, eps in result.episodes.items():
        if not eps:
            continue
        for t, ep in enumerate(eps):
            name = f"episodes/{phase}_{t}.csv"
            write_episode_csv(d / name, ep)
            files.append(name)
        refs = [reference_path(scenario.world, scenario.acceptable, trial_start(seed, t))
                for t in range(len(eps))]
        write_ppm(d / f"{phase}.ppm", render_trajectories(scenario.world, [e.trajectory.xy for e in eps], refs))
        files.append(f"{phase}.ppm")
    if result.plus is not None:
        result.plus.save(d / "plus.ckpt")
        files.append("plus.ckpt")
    manifest = dict(result.manifest, files=sorted(files))
    (d / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    return d


def render_trajectories(world: WorldMap, paths, references=(), px_per_cell=8) -> np.ndarray:
    """Top-down image (north up) of the terrain grid with reference paths in
    white and executed paths in red."""
    colors = {tid: np.asarray(t.base_color, dtype=np.float32) for tid, t in world.terrains.items()}
    base = np.stack([colors[int(v)] for v in world.grid.ravel()]).reshape(*world.grid.shape, 3)
    base = apply_lighting(base, LightingCondition(world.lighting.brightness_scale, world.lighting.color_shift))
    img = np.repeat(np.repeat(base[::-1], px_per_cell, axis=0), px_per_cell, axis=1).copy()
    scale = px_per_cell / world.cell_size
    for pts, color in [(r, (1.0, 1.0, 1.0)) for r in references] + [(p, (0.9, 0.1, 0.1)) for p in paths]:
        pts = densify(np.asarray(pts, dtype=float), world.cell_size / px_per_cell)
        cols = np.clip((pts[:, 0] * scale).astype(int), 0, img.shape[1] - 1)
        rows = np.clip(img.shape[0] - 1 - (pts[:, 1] * scale).astype(int), 0, img.shape[0] - 1)
        img[rows, cols] = color
    return img


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

def train_minus(config: ExperimentConfig, out_dir=None):
    """Generate the known-terrain dataset and train the pre-adaptation bundle."""
    data = gen_data(config.known_terrains(), config.data.trajectories_per_terrain, config.seed,
                    states_per_trajectory=config.data.states_per_trajectory)
    data = data.split(config.seed, config.training.train_fraction)
    model = train_bundle(data, config.ranking, config.training, config.novelty, seed=config.seed)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        model.save(Path(out_dir) / "minus.ckpt")
    return model, data


def run_suite(names, config: ExperimentConfig, out_dir=None, model=None, data=None) -> dict:
    if model is None or data is None:
        model, data = train_minus(config, out_dir)
    return {n: run_scenario(n, model, data, config, out_dir) for n in names}


@dataclass
class SessionOutcome:
    session: int
    flagged_records: int
    matched: int | None
    distance: float | None


def extrapolation_sessions(name: str, model: ModelBundle, pre_data, config: ExperimentConfig,
                           n_sessions=20) -> list[SessionOutcome]:
    """Independent single-episode deployments of the pre-adaptation model,
    each followed by one extrapolation of whatever it flagged."""
    scenario = get_scenario(name, config.terrains)
    known = build_known_clusters(model, pre_data.train)
    out = []
    for s in range(n_sessions):
        seed = [config.seed, _name_code(name), 7, s]
        ep = run_episode(scenario.world, model, config.planner, seed=seed, start=trial_start(seed, 0))
        adaptation, _ = collect_adaptation(model, [ep], config.novelty.window, f"{name}-{s}")
        if len(adaptation) == 0:
            out.append(SessionOutcome(s, 0, None, None))
            continue
        r = extrapolate_preference(adaptation, model, known, config.novelty.mu, n_clusters=1)
        out.append(SessionOutcome(s, len(adaptation), r.matched, r.distance))
    return out
