"""Command-line front door.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 training
error, 4 planning failure, 5 no known terrain matched (``adapt``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bundle import ModelBundle, train_bundle
from .config import ExperimentConfig, load_experiment, to_dict
from .data import gen_data, load_dataset
from .errors import (
    ConfigError, NoMatchError, PlanningError, PrefnavError, TrainingError, ValidationError,
)
from .extrapolation import AdaptationSet, _jsonable, adapt, build_known_clusters, extrapolate_preference
from .planner import run_episode, write_episode_csv
from .report import report
from .scenarios import collect_adaptation, get_scenario, run_scenario, scenario_catalog, train_minus
from .world import load_world

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_TRAINING, EXIT_PLANNING, EXIT_NO_MATCH = 0, 1, 2, 3, 4, 5

logger = logging.getLogger("prefnav")


def _config(args) -> ExperimentConfig:
    return load_experiment(getattr(args, "config", None), seed=getattr(args, "seed", None))


def _out(args, cfg) -> Path:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario(name, cfg):
    try:
        return get_scenario(name, cfg.terrains)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from None


def _pre_data(args, cfg):
    if getattr(args, "data", None):
        data = load_dataset(args.data)
    else:
        data = gen_data(cfg.known_terrains(), cfg.data.trajectories_per_terrain, cfg.seed,
                        states_per_trajectory=cfg.data.states_per_trajectory)
    return data.split(cfg.seed, cfg.training.train_fraction)


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _config(args)
    n = cfg.data.trajectories_per_terrain if args.trajectories is None else args.trajectories
    out = _out(args, cfg)
    data = gen_data(cfg.known_terrains(), n, cfg.seed, out,
                    states_per_trajectory=cfg.data.states_per_trajectory)
    print(f"wrote {len(data)} records ({n} trajectories per terrain) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    data = _pre_data(args, cfg)
    out = _out(args, cfg)
    model = train_bundle(data, cfg.ranking, cfg.training, cfg.novelty, seed=cfg.seed)
    model.save(out / "model.ckpt")
    _write_json(out / "training.json", {"seed": cfg.seed, "ranking": cfg.ranking, "tau": model.tau,
                                        "eps_known": model.eps_known,
                                        "class_means": model.u_vis.class_means_,
                                        "epochs": model.metadata["epochs"],
                                        "training": to_dict(cfg.training)})
    print(f"trained model: tau={model.tau:.4g}, saved to {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_deploy(args) -> int:
    cfg = _config(args)
    model = ModelBundle.load(args.model)
    if args.world:
        world = load_world(args.world)
    else:
        world = _scenario(args.scenario, cfg).world
    out = _out(args, cfg)
    episodes = []
    for t in range(args.trials):
        ep = run_episode(world, model, cfg.planner, seed=[cfg.seed, t])
        write_episode_csv(out / f"episode_{t}.csv", ep)
        episodes.append(ep)
        print(f"episode {t}: {len(ep.trajectory) - 1} steps, goal reached: {ep.goal_reached}")
    adaptation, scans = collect_adaptation(model, episodes, cfg.novelty.window, args.session_id)
    _write_json(out / "novelty.json", {
        "tau": model.tau, "window": cfg.novelty.window,
        "flagged_windows": [s.flagged_windows for s in scans],
        "total_windows": [s.total_windows for s in scans],
        "adaptation_records": len(adaptation)})
    if len(adaptation):
        adaptation.save(out)
        print(f"novelty flagged; {len(adaptation)} records saved as session {args.session_id!r}")
    else:
        print("no novelty flagged")
    return EXIT_OK


def cmd_adapt(args) -> int:
    cfg = _config(args)
    model = ModelBundle.load(args.model)
    session = Path(args.session)
    adaptation = AdaptationSet.load(session.parent if session.suffix else session,
                                    session.stem if session.suffix else args.session_id)
    pre = _pre_data(args, cfg)
    known = build_known_clusters(model, pre.train)
    res = extrapolate_preference(adaptation, model, known, cfg.novelty.mu,
                                 n_clusters=cfg.novelty.n_clusters, seed=cfg.seed,
                                 max_clusters=cfg.novelty.max_clusters)
    out = _out(args, cfg)
    results = res if isinstance(res, list) else [res]
    _write_json(out / "extrapolation.json", [r.to_dict() for r in results])
    outcome = adapt(model, adaptation, res, pre, cfg.training, cfg.novelty, seed=cfg.seed)
    outcome.model.save(out / "model.ckpt")
    print(f"adapted: novel labels {outcome.novel_labels}; saved to {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_scenario(args) -> int:
    cfg = _config(args)
    names = args.names or cfg.scenarios or list(scenario_catalog(cfg.terrains))
    for n in names:
        _scenario(n, cfg)
    out = _out(args, cfg)
    if args.model:
        model, data = ModelBundle.load(args.model), _pre_data(args, cfg)
    else:
        model, data = train_minus(cfg, out)
    for n in names:
        res = run_scenario(n, model, data, cfg, out, trials=args.trials)
        for phase in ("minus", "plus"):
            rows = res.phase(phase)
            if rows:
                aligned = sum(r.aligned_percentage for r in rows) / len(rows)
                reached = sum(r.goal_reached for r in rows)
                print(f"{n:18s} {phase:5s} aligned {aligned:6.2f}%  goal {reached}/{len(rows)}")
        print(f"{n:18s} outcome: {res.outcome}")
    return EXIT_OK


def cmd_report(args) -> int:
    text, _ = report(args.results, args.out)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prefnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, model=False, data=False):
        sp.add_argument("--config", help="experiment TOML file")
        sp.add_argument("--seed", type=int, help="global seed (overrides the config's)")
        sp.add_argument("--out", help="output directory")
        if model:
            sp.add_argument("--model", required=model == "required", help="checkpoint file")
        if data:
            sp.add_argument("--data", help="dataset directory (default: regenerate from the config)")
        return sp

    g = common(sub.add_parser("gen-data", help="generate labeled single-terrain trajectories"))
    g.add_argument("--trajectories", type=int, help="trajectories per terrain")
    g.set_defaults(func=cmd_gen_data)

    t = common(sub.add_parser("train", help="train the pre-adaptation model"), data=True)
    t.set_defaults(func=cmd_train)

    d = common(sub.add_parser("deploy", help="run episodes and collect flagged records"), model="required")
    where = d.add_mutually_exclusive_group(required=True)
    where.add_argument("--scenario", help="world from the scenario catalog")
    where.add_argument("--world", help="world TOML file")
    d.add_argument("--trials", type=int, default=1)
    d.add_argument("--session-id", default="session")
    d.set_defaults(func=cmd_deploy)

    a = common(sub.add_parser("adapt", help="extrapolate preferences and retrain"), model="required", data=True)
    a.add_argument("--session", required=True, help="deploy output directory or session file")
    a.add_argument("--session-id", default="session")
    a.set_defaults(func=cmd_adapt)

    s = common(sub.add_parser("scenario", help="run catalog scenarios"), model=True, data=True)
    s.add_argument("names", nargs="*", help="scenario names (default: all)")
    s.add_argument("--trials", type=int)
    s.set_defaults(func=cmd_scenario)

    r = sub.add_parser("report", help="tabulate scenario results")
    r.add_argument("results", help="directory holding scenario outputs")
    r.add_argument("--out", help="write report.txt and report.csv here")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PrefnavError, OSError) as exc:
        print(f"prefnav: error: {exc}", file=sys.stderr)
        for kind, code in _EXIT_CODES:
            if isinstance(exc, kind):
                return code
        return EXIT_OTHER


_EXIT_CODES = ((ConfigError, EXIT_CONFIG), (TrainingError, EXIT_TRAINING),
               (PlanningError, EXIT_PLANNING), (NoMatchError, EXIT_NO_MATCH))

if __name__ == "__main__":
    sys.exit(main())
