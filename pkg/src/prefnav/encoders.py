"""Triplet-trained terrain encoders for the visual and proprioceptive modalities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainingConfig
from .errors import TrainingError, ValidationError
from .features import FeatureNormalizer
from .nn import AdamW, Conv2D, Dense, Network, NetworkSpec, ReLU, Tape, backward, forward
from .world import PATCH_PIXELS

logger = logging.getLogger(__name__)

EMBED_DIM = 8
VISUAL, PROPRIO = "visual", "proprio"
PIXEL_CENTER = 0.5


def visual_spec() -> NetworkSpec:
    return NetworkSpec(
        (PATCH_PIXELS, PATCH_PIXELS, 3),
        (Conv2D(16, 5, 2, 2), ReLU(), Conv2D(48, 5, 2, 2), ReLU(),
         Conv2D(128, 5, 2, 2), ReLU(), Dense(EMBED_DIM)),
    )


def proprio_spec(n_features: int) -> NetworkSpec:
    return NetworkSpec((n_features,), (Dense(32), ReLU(), Dense(32), ReLU(), Dense(EMBED_DIM)))


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------

@dataclass
class LabeledDataset:
    """Paired records: patch, raw feature vector, terrain label, source pose."""

    patches: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    poses: np.ndarray
    train_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.labels)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.patches) == len(self.features) == len(self.poses) == n):
            raise ValidationError("dataset arrays must have equal length")

    def __len__(self):
        return len(self.labels)

    def split(self, seed, train_fraction=0.75) -> "LabeledDataset":
        """Stratified train/validation assignment; pure in (labels, seed)."""
        self.train_mask = split_mask(self.labels, seed, train_fraction)
        return self

    def subset(self, mask) -> "LabeledDataset":
        mask = np.asarray(mask)
        sub_mask = None if self.train_mask is None else self.train_mask[mask]
        return LabeledDataset(self.patches[mask], self.features[mask], self.labels[mask],
                              self.poses[mask], sub_mask, dict(self.meta))

    @property
    def train(self) -> "LabeledDataset":
        return self.subset(self._mask())

    @property
    def val(self) -> "LabeledDataset":
        return self.subset(~self._mask())

    def _mask(self):
        if self.train_mask is None:
            raise ValidationError("dataset has no train/validation split")
        return self.train_mask

    @classmethod
    def concat(cls, parts) -> "LabeledDataset":
        parts = list(parts)
        masks = [p.train_mask for p in parts]
        mask = None if any(m is None for m in masks) else np.concatenate(masks)
        return cls(np.concatenate([p.patches for p in parts]),
                   np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]),
                   np.concatenate([p.poses for p in parts]), mask)


def split_mask(labels, seed, train_fraction=0.75) -> np.ndarray:
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    mask = np.zeros(len(labels), dtype=bool)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_fraction * len(idx)))
        if len(idx) >= 2:
            n_train = min(max(n_train, 2), len(idx))
        mask[idx[:n_train]] = True
    return mask


# --------------------------------------------------------------------------
# Triplets
# --------------------------------------------------------------------------

def sample_triplets(labels, count, rng_seed) -> np.ndarray:
    """``count`` uniformly drawn (anchor, positive, negative) index triplets.

    Anchors are drawn among records whose label has at least two members,
    positives uniformly from the rest of the anchor's label, negatives
    uniformly from all other labels.
    """
    if isinstance(labels, LabeledDataset):
        labels = labels.labels
    labels = np.asarray(labels)
    uniq, counts = np.unique(labels, return_counts=True)
    if len(uniq) < 2:
        raise TrainingError("triplets need at least two distinct labels")
    anchor_pool = np.flatnonzero(np.isin(labels, uniq[counts >= 2]))
    if len(anchor_pool) == 0:
        raise TrainingError("no label has two records; triplets are infeasible")
    if count == 0:
        return np.zeros((0, 3), dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    by_label = {lab: np.flatnonzero(labels == lab) for lab in uniq}
    out = np.empty((count, 3), dtype=np.int64)
    anchors = anchor_pool[rng.integers(0, len(anchor_pool), size=count)]
    for i, a in enumerate(anchors):
        same = by_label[labels[a]]
        same = same[same != a]
        p = same[rng.integers(0, len(same))]
        other = np.flatnonzero(labels != labels[a])
        out[i] = (a, p, other[rng.integers(0, len(other))])
    return out


def triplet_loss(anchor, positive, negative, margin=1.0):
    """``max(0, |a - p| - |a - n| + margin)``, row-wise for batched input."""
    a, p, n = (np.asarray(v, dtype=np.float64) for v in (anchor, positive, negative))
    if not a.shape == p.shape == n.shape:
        raise ValidationError(f"embedding shapes differ: {a.shape}, {p.shape}, {n.shape}")
    d_ap = np.linalg.norm(a - p, axis=-1)
    d_an = np.linalg.norm(a - n, axis=-1)
    return np.maximum(0.0, d_ap - d_an + margin)


def triplet_loss_grad(a, p, n, margin=1.0):
    """Mean triplet loss over a batch and its gradient w.r.t. a, p and n."""
    diff_p, diff_n = a - p, a - n
    d_ap = np.linalg.norm(diff_p, axis=1, keepdims=True)
    d_an = np.linalg.norm(diff_n, axis=1, keepdims=True)
    losses = np.maximum(0.0, d_ap - d_an + margin)[:, 0]
    active = (losses > 0)[:, None] / len(a)
    # d|x|/dx = x/|x|, taken as 0 at x = 0
    unit_p = np.divide(diff_p, d_ap, out=np.zeros_like(diff_p), where=d_ap > 0)
    unit_n = np.divide(diff_n, d_an, out=np.zeros_like(diff_n), where=d_an > 0)
    ga = active * (unit_p - unit_n)
    return float(losses.mean()), ga, -active * unit_p, active * unit_n


def triplet_accuracy(embeddings, triplets) -> float:
    e = np.asarray(embeddings)
    t = np.asarray(triplets)
    d_ap = np.linalg.norm(e[t[:, 0]] - e[t[:, 1]], axis=1)
    d_an = np.linalg.norm(e[t[:, 0]] - e[t[:, 2]], axis=1)
    return float(np.mean(d_ap < d_an))


def class_centroids(embeddings, labels) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(lab): np.asarray(embeddings)[labels == lab].mean(axis=0) for lab in np.unique(labels)}


def nearest_centroid_accuracy(embeddings, labels, centroids) -> float:
    ids = list(centroids)
    c = np.stack([centroids[i] for i in ids])
    d = np.linalg.norm(np.asarray(embeddings)[:, None, :] - c[None], axis=2)
    pred = np.asarray(ids)[d.argmin(axis=1)]
    return float(np.mean(pred == np.asarray(labels)))


# --------------------------------------------------------------------------
# Estimator
# --------------------------------------------------------------------------

class TripletEncoder(TransformerMixin, BaseEstimator):
    """Encoder trained with the triplet loss on labeled records.

    ``modality='visual'`` consumes (N, 64, 64, 3) patches; ``'proprio'``
    consumes raw (N, F) feature vectors and z-scores them internally with
    moments from the training data.

    After ``fit``: ``network_``, ``history_`` (one dict per epoch) and, for
    proprio, ``normalizer_``.
    """

    def __init__(self, modality=VISUAL, margin=1.0, lr=3e-4, weight_decay=1e-2,
                 beta1=0.9, beta2=0.999, eps=1e-8, batch_size=64, max_epochs=200,
                 patience=20, triplets_per_epoch=None, normalize_embeddings=False,
                 random_state=0, warm_start=None):
        self.modality = modality
        self.margin = margin
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.triplets_per_epoch = triplets_per_epoch
        self.normalize_embeddings = normalize_embeddings
        self.random_state = random_state
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, modality, cfg: TrainingConfig, random_state=0, warm_start=None):
        return cls(modality=modality, margin=cfg.margin, lr=cfg.lr, weight_decay=cfg.weight_decay,
                   beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps, batch_size=cfg.batch_size,
                   max_epochs=cfg.max_epochs, patience=cfg.patience,
                   triplets_per_epoch=cfg.triplets_per_epoch,
                   normalize_embeddings=cfg.normalize_embeddings,
                   random_state=random_state, warm_start=warm_start)

    @classmethod
    def from_network(cls, modality, network, normalizer=None, **params):
        enc = cls(modality=modality, **params)
        enc.network_ = network
        if normalizer is not None:
            enc.normalizer_ = normalizer
        enc.history_ = []
        return enc

    # -- input handling ---------------------------------------------------

    def _prepare(self, X, fitting=False):
        X = np.asarray(X)
        if self.modality == VISUAL:
            if X.ndim != 4 or X.shape[1:] != (PATCH_PIXELS, PATCH_PIXELS, 3):
                raise ValidationError(f"visual input must be (N, 64, 64, 3), got {X.shape}")
            return X.astype(np.float32) - np.float32(PIXEL_CENTER)
        if self.modality != PROPRIO:
            raise ValidationError(f"unknown modality {self.modality!r}")
        if X.ndim != 2:
            raise ValidationError(f"proprio input must be (N, F), got {X.shape}")
        if fitting and not hasattr(self, "normalizer_"):
            self.normalizer_ = FeatureNormalizer().fit(X)
        return self.normalizer_.transform(X).astype(np.float32)

    def _embed(self, net, Xp, chunk=256):
        out = [forward(net, Xp[i:i + chunk]) for i in range(0, len(Xp), chunk)]
        e = np.concatenate(out).astype(np.float64) if out else np.zeros((0, EMBED_DIM))
        return self._post(e)

    def _post(self, e):
        if self.normalize_embeddings:
            e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
        return e

    # -- sklearn API -------------------------------------------------------

    def fit(self, X, y, X_val=None, y_val=None):
        y = np.asarray(y, dtype=np.int64)
        net = None
        if self.warm_start is not None:
            check_is_fitted(self.warm_start, "network_")
            net = self.warm_start.network_.copy()
            if hasattr(self.warm_start, "normalizer_"):
                self.normalizer_ = self.warm_start.normalizer_
        Xp = self._prepare(X, fitting=True)
        if net is None:
            spec = visual_spec() if self.modality == VISUAL else proprio_spec(Xp.shape[1])
            net = Network(spec, seed=self.random_state, name=f"f_{'vis' if self.modality == VISUAL else 'pro'}")
        sample_triplets(y, 0, 0)  # feasibility check
        has_val = X_val is not None and len(np.unique(y_val)) >= 2
        if has_val:
            Xv = self._prepare(X_val)
            yv = np.asarray(y_val, dtype=np.int64)
            val_trip = sample_triplets(yv, max(4 * len(yv), 64), [self.random_state, 1])

        def val_loss():
            e = self._embed(net, Xv)
            return float(triplet_loss(e[val_trip[:, 0]], e[val_trip[:, 1]], e[val_trip[:, 2]],
                                      self.margin).mean())

        opt = AdamW(net.parameters(), lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                    eps=self.eps, weight_decay=self.weight_decay)
        per_epoch = self.triplets_per_epoch or len(y)
        history = []
        best_loss = val_loss() if has_val else np.inf
        best_params = net.get_flat().copy()
        wait = 0
        for epoch in range(self.max_epochs):
            trip = sample_triplets(y, per_epoch, [self.random_state, 2, epoch])
            losses = []
            for start in range(0, len(trip), self.batch_size):
                losses.append(self._train_batch(net, opt, Xp, trip[start:start + self.batch_size]))
            record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if has_val:
                record["val_loss"] = val_loss()
            history.append(record)
            logger.debug("%s epoch %d %s", self.modality, epoch, record)
            current = record.get("val_loss", record["train_loss"])
            if not np.isfinite(current):
                self.history_ = history
                raise TrainingError(f"{self.modality} encoder diverged at epoch {epoch}", log=history)
            if not has_val:
                best_params = net.get_flat().copy()
                continue
            if current < best_loss:
                best_loss, best_params, wait = current, net.get_flat().copy(), 0
            else:
                wait += 1
            if best_loss == 0.0 or wait >= self.patience:
                break
        net.set_flat(best_params)
        self.network_ = net
        self.history_ = history
        return self

    def _train_batch(self, net, opt, Xp, batch):
        uniq, inv = np.unique(batch.ravel(), return_inverse=True)
        tape = Tape()
        emb = forward(net, Xp[uniq], tape).astype(np.float64)
        e = emb[inv].reshape(len(batch), 3, -1)
        if self.normalize_embeddings:
            raise NotImplementedError("training with normalized embeddings is not supported")
        loss, ga, gp, gn = triplet_loss_grad(e[:, 0], e[:, 1], e[:, 2], self.margin)
        g = np.zeros_like(emb)
        np.add.at(g, inv, np.stack([ga, gp, gn], axis=1).reshape(-1, emb.shape[1]))
        opt.step(backward(tape, g.astype(emb.dtype).astype(net.dtype)))
        return loss

    def transform(self, X):
        check_is_fitted(self, "network_")
        return self._embed(self.network_, self._prepare(X))


def train_encoder(modality, data: LabeledDataset, config: TrainingConfig, seed=0, warm_start=None):
    """Fit an encoder on ``data.train`` with early stopping on ``data.val``.

    Returns ``(encoder, history)``.
    """
    tr, va = data.train, data.val
    X = tr.patches if modality == VISUAL else tr.features
    Xv = va.patches if modality == VISUAL else va.features
    enc = TripletEncoder.from_config(modality, config, random_state=seed, warm_start=warm_start)
    if warm_start is not None:
        enc.set_params(max_epochs=config.adapt_epochs)
    enc.fit(X, tr.labels, Xv, va.labels)
    return enc, enc.history_


def embed(encoder: TripletEncoder, x) -> np.ndarray:
    """Embedding of a single input (patch or feature vector)."""
    return encoder.transform(np.asarray(x)[None])[0]
