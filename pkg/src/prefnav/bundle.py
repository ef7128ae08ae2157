"""The four learned functions plus the statistics deployment needs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import NoveltyConfig, TrainingConfig
from .encoders import PROPRIO, VISUAL, LabeledDataset, TripletEncoder, train_encoder
from .errors import CheckpointError, TrainingError, ValidationError
from .features import FeatureNormalizer
from .nn import Checkpoint, load_checkpoint, save_checkpoint
from .utility import UtilityHead, levels_from_ranking, train_u_pro, train_u_vis

logger = logging.getLogger(__name__)

NET_NAMES = ("f_vis", "f_pro", "u_vis", "u_pro")


@dataclass
class ModelBundle:
    """f_vis, f_pro, u_vis, u_pro with the preference table and novelty stats.

    ``levels`` maps every terrain label the heads were trained on to its
    preference level; ``ranking`` is the operator's order of known terrains.
    ``tau`` is the novelty threshold on mean squared utility disagreement
    and ``eps_known`` the mean per-sample disagreement on validation data.
    """

    f_vis: TripletEncoder
    f_pro: TripletEncoder
    u_vis: UtilityHead
    u_pro: UtilityHead
    ranking: list[int]
    levels: dict[int, int]
    tau: float = float("nan")
    eps_known: float = float("nan")
    metadata: dict = field(default_factory=dict)

    # -- inference --------------------------------------------------------

    def visual_embedding(self, patches):
        return self.f_vis.transform(np.asarray(patches))

    def proprio_embedding(self, features):
        return self.f_pro.transform(np.asarray(features))

    def patch_utilities(self, patches) -> np.ndarray:
        return self.u_vis.predict(self.visual_embedding(patches))

    def proprio_utilities(self, features) -> np.ndarray:
        return self.u_pro.predict(self.proprio_embedding(features))

    def utility_of_patch(self, patch) -> float:
        patch = np.asarray(getattr(patch, "pixels", patch))
        return float(self.patch_utilities(patch[None])[0])

    def utility_of_proprio(self, features) -> float:
        return float(self.proprio_utilities(np.asarray(features)[None])[0])

    def disagreement(self, patches, features) -> np.ndarray:
        """Per-sample squared utility disagreement ``(u_vis - u_pro)^2``."""
        if len(patches) != len(features):
            raise ValidationError("patches and features must be paired one to one")
        return (self.patch_utilities(patches) - self.proprio_utilities(features)) ** 2

    def calibrate(self, val: LabeledDataset, novelty: NoveltyConfig) -> "ModelBundle":
        d = self.disagreement(val.patches, val.features)
        self.tau = max(float(np.percentile(d, novelty.tau_percentile)), np.finfo(float).tiny)
        self.eps_known = float(d.mean())
        return self

    # -- persistence --------------------------------------------------------

    def to_checkpoint(self) -> Checkpoint:
        norm = self.f_pro.normalizer_
        meta = dict(self.metadata)
        meta.update(levels={str(k): int(v) for k, v in self.levels.items()},
                    tau=self.tau, eps_known=self.eps_known,
                    encoder_params={"visual": _enc_params(self.f_vis), "proprio": _enc_params(self.f_pro)})
        nets = {"f_vis": self.f_vis.network_, "f_pro": self.f_pro.network_,
                "u_vis": self.u_vis.network_, "u_pro": self.u_pro.network_}
        return Checkpoint(nets, norm.mean_, norm.scale_, list(self.ranking), meta)

    def to_bytes(self) -> bytes:
        return save_checkpoint(self.to_checkpoint())

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ModelBundle":
        missing = set(NET_NAMES) - set(ckpt.networks)
        if missing:
            raise CheckpointError(f"checkpoint lacks networks {sorted(missing)}")
        meta = dict(ckpt.metadata)
        levels = {int(k): int(v) for k, v in meta.pop("levels", {}).items()} or levels_from_ranking(ckpt.ranking)
        tau = float(meta.pop("tau", "nan"))
        eps_known = float(meta.pop("eps_known", "nan"))
        enc = meta.pop("encoder_params", {})
        norm = FeatureNormalizer.from_stats(ckpt.norm_mean, ckpt.norm_scale)
        f_vis = TripletEncoder.from_network(VISUAL, ckpt.networks["f_vis"], **enc.get("visual", {}))
        f_pro = TripletEncoder.from_network(PROPRIO, ckpt.networks["f_pro"], norm, **enc.get("proprio", {}))
        return cls(f_vis, f_pro, UtilityHead.from_network(ckpt.networks["u_vis"], levels=levels),
                   UtilityHead.from_network(ckpt.networks["u_pro"], objective="mse"),
                   list(ckpt.ranking), levels, tau, eps_known, meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelBundle":
        return cls.from_checkpoint(load_checkpoint(data))

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
        return cls.from_bytes(data)


def _enc_params(enc: TripletEncoder) -> dict:
    return {"normalize_embeddings": bool(enc.normalize_embeddings), "margin": float(enc.margin)}


def train_bundle(data: LabeledDataset, ranking, config: TrainingConfig | None = None,
                 novelty: NoveltyConfig | None = None, seed=0, levels=None,
                 warm_start: ModelBundle | None = None) -> ModelBundle:
    """Train all four functions on ``data`` (which must carry a split).

    With ``warm_start``, f_vis starts from the given bundle's visual encoder
    and f_pro is reused unchanged.
    """
    config = config or TrainingConfig()
    novelty = novelty or NoveltyConfig()
    levels = dict(levels) if levels is not None else levels_from_ranking(ranking)
    if len(data) == 0:
        raise TrainingError("training data is empty")
    if warm_start is None:
        f_pro, pro_log = train_encoder(PROPRIO, data, config, seed=seed)
        f_vis, vis_log = train_encoder(VISUAL, data, config, seed=seed)
    else:
        f_pro, pro_log = warm_start.f_pro, []
        f_vis, vis_log = train_encoder(VISUAL, data, config, seed=seed, warm_start=warm_start.f_vis)
    u_vis = train_u_vis(f_vis, data, levels, config, seed=seed)
    u_pro = train_u_pro(u_vis, f_vis, f_pro, data, config, seed=seed)
    meta = {"seed": _jsonable_seed(seed),
            "epochs": {"f_vis": len(vis_log), "f_pro": len(pro_log),
                       "u_vis": len(u_vis.history_), "u_pro": len(u_pro.history_)}}
    bundle = ModelBundle(f_vis, f_pro, u_vis, u_pro, [int(r) for r in ranking], levels, metadata=meta)
    bundle.calibrate(data.val, novelty)
    logger.info("trained bundle: tau=%.4g eps_known=%.4g", bundle.tau, bundle.eps_known)
    return bundle


def _jsonable_seed(seed):
    return [int(s) for s in np.atleast_1d(seed)] if np.ndim(seed) else int(seed)
