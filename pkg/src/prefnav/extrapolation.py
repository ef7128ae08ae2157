"""Novelty detection, preference extrapolation and adaptation.

A deployed bundle scores windows of paired observations by the mean squared
gap between its visual and proprioceptive utilities. Flagged records form an
adaptation set; its proprio centroid is matched against the known terrain
centroids and, within ``mu``, inherits the matched terrain's preference
level. The bundle is then retrained on the aggregated data.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .bundle import ModelBundle, train_bundle
from .config import NoveltyConfig, TrainingConfig
from .data import read_arrays, write_arrays
from .encoders import LabeledDataset, split_mask
from .errors import NoMatchError, ValidationError

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Novelty
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoveltyReport:
    score: float
    tau: float
    flagged: bool
    window: int

    @classmethod
    def from_differences(cls, diffs, tau) -> "NoveltyReport":
        """Report for per-sample utility differences ``u_vis - u_pro``."""
        diffs = np.asarray(diffs, dtype=np.float64)
        if diffs.size == 0:
            raise ValidationError("a novelty window needs at least one record")
        score = float(np.mean(diffs ** 2))
        return cls(score, float(tau), score > tau, int(diffs.size))


def utility_differences(model: ModelBundle, patches, features) -> np.ndarray:
    if len(patches) != len(features):
        raise ValidationError("novelty windows need paired patches and features")
    return model.patch_utilities(patches) - model.proprio_utilities(features)


def novelty_score(model: ModelBundle, patches, features) -> NoveltyReport:
    """Score one window of K paired records against the stored threshold."""
    return NoveltyReport.from_differences(utility_differences(model, patches, features), model.tau)


def scan_novelty(model: ModelBundle, patches, features, window=10) -> list[NoveltyReport]:
    """Reports over consecutive non-overlapping windows (the last may be short)."""
    diffs = utility_differences(model, patches, features)
    return [NoveltyReport.from_differences(diffs[i:i + window], model.tau)
            for i in range(0, len(diffs), window)]


# --------------------------------------------------------------------------
# Clusters and extrapolation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TerrainCluster:
    terrain_id: int
    centroid: np.ndarray
    count: int
    level: int


def build_known_clusters(model: ModelBundle, data: LabeledDataset) -> list[TerrainCluster]:
    """One proprio-embedding centroid per ranked terrain."""
    emb = model.proprio_embedding(data.features) if len(data) else np.zeros((0, 8))
    out = []
    for tid in model.ranking:
        members = emb[data.labels == tid]
        if len(members) == 0:
            raise ValidationError(f"no records for known terrain {tid}")
        out.append(TerrainCluster(int(tid), members.mean(axis=0), len(members), model.levels[tid]))
    return out


@dataclass
class Extrapolation:
    """Outcome for one adaptation cluster; ``matched`` is None on refusal."""

    matched: int | None
    level: int | None
    distance: float
    centroid: np.ndarray
    distances: dict[int, float]
    members: np.ndarray | None = None

    @property
    def is_match(self) -> bool:
        return self.matched is not None

    def to_dict(self) -> dict:
        return {"matched": self.matched, "level": self.level, "distance": self.distance,
                "distances": {str(k): v for k, v in self.distances.items()},
                "centroid": [float(v) for v in self.centroid]}


def match_centroid(centroid, known: list[TerrainCluster], mu: float) -> Extrapolation:
    if mu <= 0:
        raise ValidationError("mu must be positive")
    dists = {c.terrain_id: float(np.linalg.norm(centroid - c.centroid)) for c in known}
    best = min(known, key=lambda c: (dists[c.terrain_id], c.level))
    d = dists[best.terrain_id]
    if d <= mu:
        return Extrapolation(best.terrain_id, best.level, d, centroid, dists)
    return Extrapolation(None, None, d, centroid, dists)


def cluster_embeddings(emb, n_clusters=1, max_clusters=4, seed=0, min_silhouette=0.5) -> np.ndarray:
    """Cluster assignment of adaptation embeddings.

    ``n_clusters='auto'`` runs k-means for k = 2..``max_clusters`` and keeps
    the k with the best silhouette if that score reaches ``min_silhouette``;
    otherwise everything is one cluster.
    """
    emb = np.asarray(emb)
    single = np.zeros(len(emb), dtype=np.int64)
    rs = int(np.atleast_1d(seed)[0])
    if n_clusters == "auto":
        best, best_score = single, -1.0
        for k in range(2, min(max_clusters, len(emb) - 1) + 1):
            assign = KMeans(n_clusters=k, n_init=10, random_state=rs).fit_predict(emb)
            score = silhouette_score(emb, assign)
            if score > best_score:
                best, best_score = assign, score
        return best if best_score >= min_silhouette else single
    if not isinstance(n_clusters, (int, np.integer)) or n_clusters < 1:
        raise ValidationError(f"n_clusters must be a positive int or 'auto', got {n_clusters!r}")
    if n_clusters == 1 or len(emb) <= 1:
        return single
    return KMeans(n_clusters=min(int(n_clusters), len(emb)), n_init=10, random_state=rs).fit_predict(emb)


def extrapolate_preference(adaptation: "AdaptationSet", model: ModelBundle,
                           known: list[TerrainCluster], mu=1.0, n_clusters=1, seed=0,
                           max_clusters=4, min_cluster_size=5):
    """Match the adaptation set (or each of its clusters) to a known terrain.

    Returns one :class:`Extrapolation` for ``n_clusters == 1`` and a list
    otherwise; each element carries the indices of its member records.
    Clusters smaller than ``min_cluster_size`` are left out of the list.
    """
    if len(adaptation) == 0:
        raise ValidationError("adaptation set is empty")
    emb = model.proprio_embedding(adaptation.features)
    if n_clusters == 1:
        res = match_centroid(emb.mean(axis=0), known, mu)
        res.members = np.arange(len(emb))
        return res
    assign = cluster_embeddings(emb, n_clusters, max_clusters, seed)
    out = []
    for c in np.unique(assign):
        idx = np.flatnonzero(assign == c)
        if len(idx) < min_cluster_size:
            continue
        res = match_centroid(emb[idx].mean(axis=0), known, mu)
        res.members = idx
        out.append(res)
    return out


# --------------------------------------------------------------------------
# Adaptation sets
# --------------------------------------------------------------------------

@dataclass
class AdaptationSet:
    """Paired records collected on flagged segments of one deployment session."""

    patches: np.ndarray
    features: np.ndarray
    poses: np.ndarray
    session_id: str = "session"
    truth: np.ndarray | None = None  # simulator-only, kept for evaluation
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.patches) == len(self.features) == len(self.poses):
            raise ValidationError("adaptation records must carry both modalities")

    def __len__(self):
        return len(self.features)

    def subset(self, idx) -> "AdaptationSet":
        truth = None if self.truth is None else self.truth[idx]
        return AdaptationSet(self.patches[idx], self.features[idx], self.poses[idx],
                             self.session_id, truth, dict(self.manifest))

    @classmethod
    def concat(cls, parts, session_id="session") -> "AdaptationSet":
        parts = list(parts)
        truths = [p.truth for p in parts]
        truth = None if any(t is None for t in truths) else np.concatenate(truths)
        return cls(np.concatenate([p.patches for p in parts]),
                   np.concatenate([p.features for p in parts]),
                   np.concatenate([p.poses for p in parts]), session_id, truth)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        arrays = {"patches": self.patches.astype(np.float32), "features": self.features,
                  "poses": self.poses}
        if self.truth is not None:
            arrays["truth"] = np.asarray(self.truth, dtype=np.int64)
        write_arrays(directory / f"{self.session_id}.npz", arrays)
        manifest = {"session_id": self.session_id, "records": len(self), **self.manifest}
        path = directory / f"{self.session_id}.json"
        path.write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory, session_id) -> "AdaptationSet":
        directory = Path(directory)
        arrays = read_arrays(directory / f"{session_id}.npz")
        manifest = json.loads((directory / f"{session_id}.json").read_text())
        manifest.pop("session_id", None)
        manifest.pop("records", None)
        return cls(arrays["patches"], arrays["features"], arrays["poses"], session_id,
                   arrays.get("truth"), manifest)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# Adaptation
# --------------------------------------------------------------------------

@dataclass
class AdaptationOutcome:
    model: ModelBundle
    novel_labels: dict[int, int]  # novel label -> matched terrain
    results: list[Extrapolation]


def adapt(model: ModelBundle, adaptation: AdaptationSet, extrapolation, pre_data: LabeledDataset,
          config: TrainingConfig | None = None, novelty: NoveltyConfig | None = None,
          seed=0) -> AdaptationOutcome:
    """Retrain ``model`` with the adaptation set added under fresh labels.

    Each matched cluster becomes a new label at its match's preference level
    (no ranking pair between the two); clusters larger than
    ``novelty.max_records_per_cluster`` are subsampled. f_vis warm-starts from ``model``;
    u_vis and u_pro are refit. Raises :class:`NoMatchError` when nothing
    matched.
    """
    config = config or TrainingConfig()
    novelty = novelty or NoveltyConfig()
    results = extrapolation if isinstance(extrapolation, list) else [extrapolation]
    matched = [r for r in results if r.is_match]
    if not matched:
        raise NoMatchError("extrapolation found no known terrain within mu; adaptation refused")
    levels = dict(model.levels)
    next_label = max(max(levels), int(pre_data.labels.max(initial=0))) + 1
    parts, novel = [pre_data], {}
    for r in matched:
        idx = np.arange(len(adaptation)) if r.members is None else np.asarray(r.members)
        label = next_label
        cap = novelty.max_records_per_cluster
        if len(idx) > cap:
            rng = np.random.default_rng([*np.atleast_1d(seed).tolist(), label, 1])
            idx = np.sort(rng.choice(idx, cap, replace=False))
        next_label += 1
        levels[label] = levels[r.matched]
        novel[label] = r.matched
        sub = adaptation.subset(idx)
        labels = np.full(len(sub), label, dtype=np.int64)
        mask = split_mask(labels, [*np.atleast_1d(seed).tolist(), label], config.train_fraction)
        parts.append(LabeledDataset(sub.patches, sub.features, labels, sub.poses, mask))
    aggregated = LabeledDataset.concat(parts)
    plus = train_bundle(aggregated, model.ranking, config, novelty, seed=seed, levels=levels,
                        warm_start=model)
    plus.metadata.update(
        adapted_from=model.metadata.get("seed"),
        session_id=adaptation.session_id,
        novel_labels={str(k): v for k, v in novel.items()},
        extrapolation=[r.to_dict() for r in matched],
    )
    return AdaptationOutcome(plus, novel, results)
