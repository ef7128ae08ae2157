from pathlib import Path

import pytest

from prefnav.config import (
    ExperimentConfig, NoveltyConfig, TrainingConfig, experiment_from_dict, load_experiment, to_dict,
)
from prefnav.errors import ConfigError
from prefnav.scenarios import scenario_catalog

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_default_file_matches_builtin_defaults():
    cfg = load_experiment(DEFAULT)
    ref = ExperimentConfig(seed=0)
    for name in ("seed", "ranking", "training", "novelty", "planner", "data", "terrains", "trials"):
        assert getattr(cfg, name) == getattr(ref, name), name
    assert set(cfg.scenarios) == set(scenario_catalog())


def test_seed_override():
    assert load_experiment(DEFAULT, seed=7).seed == 7
    assert experiment_from_dict({}, seed=3).seed == 3


def test_seed_is_required():
    with pytest.raises(ConfigError):
        experiment_from_dict({})


@pytest.mark.parametrize("d", [
    {"seed": -1},
    {"seed": True},
    {"seed": 0, "ranking": [0, 1, 1]},
    {"seed": 0, "ranking": [0, 1]},
    {"seed": 0, "ranking": [0, 1, 9], "data": {"terrains": [0, 1, 9]}},
    {"seed": 0, "trials": 0},
    {"seed": 0, "bogus": 1},
    {"seed": 0, "training": {"bogus": 1}},
    {"seed": 0, "novelty": 3},
    {"seed": 0, "data": {"trajectories_per_terrain": -1}},
])
def test_invalid_configs(d):
    with pytest.raises(ConfigError):
        experiment_from_dict(d)


def test_unreadable_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = = 1\n")
    with pytest.raises(ConfigError):
        load_experiment(bad)


def test_sections_fill_from_tables():
    cfg = experiment_from_dict({"seed": 1, "training": {"lr": 0.01}, "novelty": {"n_clusters": "auto"}})
    assert cfg.training == TrainingConfig(lr=0.01)
    assert cfg.novelty == NoveltyConfig(n_clusters="auto")
    assert to_dict(cfg.training)["lr"] == 0.01
    assert "triplets_per_epoch" not in to_dict(cfg.training)


def test_known_terrains_follow_data_section():
    cfg = ExperimentConfig(seed=0)
    assert sorted(cfg.known_terrains()) == [0, 1, 2]
