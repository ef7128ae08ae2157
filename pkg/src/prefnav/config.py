"""Configuration objects and TOML loading."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


@dataclass
class TrainingConfig:
    # optimizer
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    # encoders
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 20
    triplets_per_epoch: int | None = None
    margin: float = 1.0
    normalize_embeddings: bool = False
    adapt_epochs: int = 10  # cap on warm-started encoder fine-tuning
    # utility heads
    ranking_margin: float = 1.0
    utility_anchor: float = 0.05
    utility_lr: float = 3e-3
    utility_epochs: int = 200
    utility_patience: int = 20
    pairs_per_epoch: int = 512
    mse_epochs: int = 300
    mse_patience: int = 30
    # data
    train_fraction: float = 0.75

    def optimizer_kwargs(self, lr=None):
        return dict(lr=self.lr if lr is None else lr, beta1=self.beta1, beta2=self.beta2,
                    eps=self.eps, weight_decay=self.weight_decay)


@dataclass
class NoveltyConfig:
    window: int = 10
    tau_percentile: float = 95.0
    mu: float = 1.0
    n_clusters: int | str = 1  # or "auto"
    max_clusters: int = 4
    max_records_per_cluster: int = 160  # subsample cap when adapting


def _fill(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**data)


def training_from_dict(d) -> TrainingConfig:
    return _fill(TrainingConfig, d or {})


def novelty_from_dict(d) -> NoveltyConfig:
    return _fill(NoveltyConfig, d or {})


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def to_dict(cfg) -> dict:
    return {k: v for k, v in asdict(cfg).items() if v is not None}


@dataclass
class DataConfig:
    terrains: list[int] = field(default_factory=lambda: [0, 1, 2])
    trajectories_per_terrain: int = 8
    states_per_trajectory: int = 20

    def __post_init__(self):
        if self.trajectories_per_terrain < 0 or self.states_per_trajectory < 1:
            raise ConfigError("trajectory counts must be non-negative and lengths positive")


@dataclass
class ExperimentConfig:
    """Everything one reproducible run needs; ``seed`` has no default."""

    seed: int
    ranking: list[int] = field(default_factory=lambda: [0, 1, 2])
    training: TrainingConfig = field(default_factory=TrainingConfig)
    novelty: NoveltyConfig = field(default_factory=NoveltyConfig)
    planner: object = None
    data: DataConfig = field(default_factory=DataConfig)
    terrains: dict = field(default_factory=dict)
    world: str | None = None
    scenarios: list[str] = field(default_factory=list)
    trials: int = 5
    out_dir: str = "results"

    def __post_init__(self):
        from .catalog import TERRAINS
        from .planner import PlannerConfig

        if self.planner is None:
            self.planner = PlannerConfig()
        if not self.terrains:
            self.terrains = dict(TERRAINS)
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if len(set(self.ranking)) != len(self.ranking):
            raise ConfigError(f"ranking {self.ranking} has ties or duplicates")
        if set(self.ranking) != set(self.data.terrains):
            raise ConfigError(f"ranking {self.ranking} must cover exactly the known terrains "
                              f"{sorted(self.data.terrains)}")
        missing = set(self.ranking) - set(self.terrains)
        if missing:
            raise ConfigError(f"ranking refers to undefined terrains {sorted(missing)}")
        if self.trials < 1:
            raise ConfigError("trials must be positive")

    def known_terrains(self) -> dict:
        return {i: self.terrains[i] for i in self.data.terrains}


def experiment_from_dict(d, seed=None) -> ExperimentConfig:
    """Build from a parsed TOML table; ``seed`` overrides the file's."""
    from .planner import planner_from_dict
    from .world import terrains_from_list

    d = dict(d or {})
    for key in ("training", "novelty", "planner", "data"):
        if key in d and not isinstance(d[key], dict):
            raise ConfigError(f"[{key}] must be a table")
    kw = {}
    if seed is not None:
        d["seed"] = seed
    if "seed" not in d:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    kw["training"] = training_from_dict(d.pop("training", {}))
    kw["novelty"] = novelty_from_dict(d.pop("novelty", {}))
    kw["planner"] = planner_from_dict(d.pop("planner", {}))
    kw["data"] = _fill(DataConfig, d.pop("data", {}))
    if "terrain" in d:
        from .catalog import TERRAINS
        kw["terrains"] = {**TERRAINS, **terrains_from_list(d.pop("terrain"))}
    names = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return ExperimentConfig(**d, **kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_experiment(path=None, seed=None) -> ExperimentConfig:
    return experiment_from_dict(load_toml(path) if path else {}, seed=seed)
