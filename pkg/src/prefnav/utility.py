"""Utility heads: non-negative scores where larger means more preferred.

``u_vis`` is fit from an operator ranking with a pairwise hinge; ``u_pro``
regresses onto stop-gradiented ``u_vis`` targets at the same states.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import TrainingConfig
from .encoders import EMBED_DIM, PROPRIO, VISUAL, LabeledDataset, TripletEncoder
from .errors import TrainingError, ValidationError
from .nn import AdamW, Dense, Network, NetworkSpec, ReLU, Softplus, Tape, backward, forward, stop_gradient

logger = logging.getLogger(__name__)

RANKING, MSE = "ranking", "mse"
INITIAL_LOGIT = 2.0


def utility_spec(hidden=16) -> NetworkSpec:
    return NetworkSpec((EMBED_DIM,), (Dense(hidden), ReLU(), Dense(1), Softplus()))


def levels_from_ranking(ranking) -> dict[int, int]:
    """Preference level per terrain id (0 is most preferred)."""
    ranking = [int(t) for t in ranking]
    if len(set(ranking)) != len(ranking):
        raise ValidationError(f"ranking has duplicates: {ranking}")
    return {t: i for i, t in enumerate(ranking)}


def ranking_loss(u_preferred, u_less, margin=1.0):
    """``max(0, margin - (u_preferred - u_less))``."""
    return np.maximum(0.0, margin - (np.asarray(u_preferred, float) - np.asarray(u_less, float)))


def sample_ranking_pairs(labels, levels: dict, count: int, rng_seed) -> np.ndarray:
    """(preferred, less preferred) record-index pairs across distinct levels.

    The first record is uniform over all records, the second uniform over
    records at a different level; the pair is then ordered by level.
    """
    labels = np.asarray(labels)
    lv = np.array([levels[int(lab)] for lab in labels])
    if len(np.unique(lv)) < 2:
        raise TrainingError("ranking pairs need records from at least two preference levels")
    rng = np.random.default_rng(rng_seed)
    out = np.empty((count, 2), dtype=np.int64)
    first = rng.integers(0, len(labels), size=count)
    for i, a in enumerate(first):
        others = np.flatnonzero(lv != lv[a])
        b = others[rng.integers(0, len(others))]
        out[i] = (a, b) if lv[a] < lv[b] else (b, a)
    return out


def ranking_loss_grad(u, pairs, margin):
    """Mean hinge over ``pairs`` and its gradient w.r.t. ``u``."""
    up, ul = u[pairs[:, 0]], u[pairs[:, 1]]
    losses = ranking_loss(up, ul, margin)
    active = (losses > 0) / len(pairs)
    g = np.zeros_like(u)
    np.add.at(g, pairs[:, 0], -active)
    np.add.at(g, pairs[:, 1], active)
    return float(losses.mean()), g


def mse_grad(pred, target):
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / len(diff)


def mse_stop_gradient_loss(u_pro: Network, e_pro, u_vis: Network, e_vis):
    """``mean((sg(u_vis(e_vis)) - u_pro(e_pro))^2)`` and its parameter gradients.

    Both heads record onto one tape separated by a stop-gradient barrier, so
    the returned gradients contain entries for ``u_pro`` only.
    """
    tape = Tape()
    target = forward(u_vis, e_vis, tape)[:, 0].astype(np.float64)
    target = stop_gradient(target, tape)
    pred = forward(u_pro, e_pro, tape)
    loss, g = mse_grad(pred[:, 0].astype(np.float64), target)
    return loss, backward(tape, g[:, None].astype(pred.dtype))


def class_mean_utilities(u, labels) -> dict[int, float]:
    labels = np.asarray(labels)
    return {int(lab): float(np.mean(u[labels == lab])) for lab in np.unique(labels)}


def ordering_violations(means: dict, levels: dict) -> list[tuple[int, int]]:
    """Label pairs (a, b) with level(a) < level(b) but mean(a) <= mean(b)."""
    bad = []
    for a in means:
        for b in means:
            if levels[a] < levels[b] and not means[a] > means[b]:
                bad.append((a, b))
    return bad


class UtilityHead(RegressorMixin, BaseEstimator):
    """Two-layer utility head on 8-d embeddings with softplus output.

    ``objective='ranking'``: ``fit(E, labels)`` with ``levels`` mapping each
    label to its preference level. ``objective='mse'``: ``fit(E, targets)``.
    ``predict`` returns a 1-d array of non-negative utilities.

    ``anchor`` adds ``anchor * mean(u)`` over least-preferred records to the
    ranking objective, so that level settles near zero and the others sit
    about one margin apart above it instead of drifting upward.
    """

    def __init__(self, objective=RANKING, levels=None, margin=1.0, lr=3e-3, weight_decay=1e-2,
                 beta1=0.9, beta2=0.999, eps=1e-8, batch_size=64, max_epochs=200, patience=20,
                 pairs_per_epoch=512, anchor=0.0, check_order=True, random_state=0,
                 warm_start=None):
        self.objective = objective
        self.levels = levels
        self.margin = margin
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.pairs_per_epoch = pairs_per_epoch
        self.anchor = anchor
        self.check_order = check_order
        self.random_state = random_state
        self.warm_start = warm_start

    @classmethod
    def from_network(cls, network, **params):
        head = cls(**params)
        head.network_ = network
        head.history_ = []
        return head

    def _check_X(self, X):
        X = check_array(X, dtype=np.float64, ensure_min_samples=0)
        if X.shape[1] != EMBED_DIM:
            raise ValidationError(f"utility heads take {EMBED_DIM}-d embeddings, got {X.shape[1]}")
        return X

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = self._check_X(X)
        return forward(self.network_, X)[:, 0].astype(np.float64)

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._check_X(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise TrainingError("no training data for the utility head")
        if self.objective == RANKING:
            self._check_levels(y)
            worst = max(self.levels.values())
            self._bottom = np.zeros(int(y.max()) + 1, dtype=bool)
            for lab, lv in self.levels.items():
                if lv == worst and lab <= y.max():
                    self._bottom[lab] = True
        elif self.objective != MSE:
            raise ValidationError(f"unknown objective {self.objective!r}")
        if self.warm_start is not None:
            net = self.warm_start.network_.copy()
        else:
            net = Network(utility_spec(), seed=self.random_state, name="u")
            # every input starts at softplus(INITIAL_LOGIT), inside the linear
            # part of softplus; starting near zero lets whole classes sink
            # into the flat tail where no gradient brings them back
            w, b = net.layers[-2].params
            w.value = np.zeros_like(w.value)
            b.value = np.full_like(b.value, INITIAL_LOGIT)
            # data-dependent first layer: inputs scaled to unit spread and
            # each hidden hyperplane passing through a random training
            # embedding, so every unit splits the data from the start
            w1, b1 = net.layers[0].params
            w1.value = (w1.value / (X.std(axis=0) + 1e-6)[:, None]).astype(w1.value.dtype)
            pick = np.random.default_rng([self.random_state, 3]).integers(0, len(X), w1.value.shape[1])
            b1.value = (-np.einsum("ij,ji->i", X[pick], w1.value)).astype(b1.value.dtype)
        opt = AdamW(net.parameters(), lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                    eps=self.eps, weight_decay=self.weight_decay)
        has_val = X_val is not None and len(X_val) > 0
        if has_val:
            X_val = self._check_X(X_val)
            y_val = np.asarray(y_val)
            if self.objective == RANKING:
                val_pairs = sample_ranking_pairs(y_val, self.levels, max(4 * len(y_val), 64),
                                                 [self.random_state, 1])

        def val_loss():
            u = forward(net, X_val)[:, 0].astype(np.float64)
            if self.objective == RANKING:
                return float(ranking_loss(u[val_pairs[:, 0]], u[val_pairs[:, 1]], self.margin).mean())
            return float(np.mean((u - y_val) ** 2))

        best = val_loss() if has_val else np.inf
        best_params = net.get_flat().copy()
        wait = 0
        history = []
        for epoch in range(self.max_epochs):
            losses = [self._train_step(net, opt, X, y, b) for b in self._batches(y, epoch)]
            record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            if has_val:
                record["val_loss"] = val_loss()
            history.append(record)
            current = record.get("val_loss", record["train_loss"])
            if not np.isfinite(current):
                self.history_ = history
                raise TrainingError(f"utility head diverged at epoch {epoch}", log=history)
            if not has_val:
                best_params = net.get_flat().copy()
                continue
            if current < best:
                best, best_params, wait = current, net.get_flat().copy(), 0
            else:
                wait += 1
            if best == 0.0 or wait >= self.patience:
                break
        net.set_flat(best_params)
        self.network_ = net
        self.history_ = history
        if self.objective == RANKING and self.check_order:
            Xc, yc = (X_val, y_val) if has_val else (X, y)
            means = class_mean_utilities(self.predict(Xc), yc)
            bad = ordering_violations(means, self.levels)
            if bad:
                raise TrainingError(f"class-mean utilities violate the ranking at {bad}: {means}",
                                    log=history)
            self.class_means_ = means
        return self

    def _check_levels(self, y):
        if not self.levels:
            raise ValidationError("ranking objective needs preference levels")
        present = set(np.unique(y).tolist())
        missing = set(self.levels) - present
        if missing:
            raise TrainingError(f"no data for ranked terrains {sorted(missing)}")
        extra = present - set(self.levels)
        if extra:
            raise ValidationError(f"labels {sorted(extra)} have no preference level")

    def _batches(self, y, epoch):
        seed = [self.random_state, 2, epoch]
        if self.objective == RANKING:
            pairs = sample_ranking_pairs(y, self.levels, self.pairs_per_epoch, seed)
            return [pairs[i:i + self.batch_size] for i in range(0, len(pairs), self.batch_size)]
        order = np.random.default_rng(seed).permutation(len(y))
        return [order[i:i + self.batch_size] for i in range(0, len(order), self.batch_size)]

    def _train_step(self, net, opt, X, y, batch):
        if self.objective == RANKING:
            uniq, inv = np.unique(batch.ravel(), return_inverse=True)
            tape = Tape()
            u = forward(net, X[uniq], tape)[:, 0].astype(np.float64)
            loss, g = ranking_loss_grad(u, inv.reshape(batch.shape), self.margin)
            if self.anchor:
                # the hinge is blind to a common offset but exp(-u) costs are
                # not; a small pull on the least preferred level fixes it
                bottom = self._bottom[y[uniq]]
                if bottom.any():
                    loss += self.anchor * float(u[bottom].mean())
                    g = g + self.anchor * bottom / bottom.sum()
        else:
            tape = Tape()
            u = forward(net, X[batch], tape)[:, 0].astype(np.float64)
            loss, g = mse_grad(u, y[batch].astype(np.float64))
        opt.step(backward(tape, g[:, None].astype(net.dtype)))
        return loss


def _head_params(cfg: TrainingConfig, **kw):
    return dict(lr=cfg.utility_lr, weight_decay=cfg.weight_decay, beta1=cfg.beta1,
                beta2=cfg.beta2, eps=cfg.eps, batch_size=cfg.batch_size, **kw)


def train_u_vis(f_vis: TripletEncoder, data: LabeledDataset, levels: dict, config: TrainingConfig,
                seed=0, warm_start=None) -> UtilityHead:
    """Fit ``u_vis`` on frozen visual embeddings of ``data.train``.

    Raises :class:`TrainingError` when class-mean utilities on ``data.val``
    do not strictly follow ``levels``.
    """
    tr, va = data.train, data.val
    head = UtilityHead(**_head_params(config, objective=RANKING, levels=dict(levels),
                                      margin=config.ranking_margin,
                                      max_epochs=config.utility_epochs,
                                      patience=config.utility_patience,
                                      pairs_per_epoch=config.pairs_per_epoch,
                                      anchor=config.utility_anchor,
                                      random_state=seed, warm_start=warm_start))
    return head.fit(f_vis.transform(tr.patches), tr.labels,
                    f_vis.transform(va.patches), va.labels)


def visual_utilities(u_vis: UtilityHead, f_vis: TripletEncoder, patches) -> np.ndarray:
    return u_vis.predict(f_vis.transform(patches))


def train_u_pro(u_vis: UtilityHead, f_vis: TripletEncoder, f_pro: TripletEncoder,
                data: LabeledDataset, config: TrainingConfig, seed=0) -> UtilityHead:
    """Regress ``u_pro(f_pro(features))`` onto ``sg(u_vis(f_vis(patch)))``."""
    if len(data) == 0:
        raise TrainingError("train_u_pro needs paired records")
    if f_pro.modality != PROPRIO or f_vis.modality != VISUAL:
        raise ValidationError("encoder modalities are swapped")
    tr, va = data.train, data.val
    target_tr = stop_gradient(visual_utilities(u_vis, f_vis, tr.patches))
    target_va = stop_gradient(visual_utilities(u_vis, f_vis, va.patches))
    head = UtilityHead(**_head_params(config, objective=MSE, max_epochs=config.mse_epochs,
                                      patience=config.mse_patience, random_state=seed))
    return head.fit(f_pro.transform(tr.features), target_tr,
                    f_pro.transform(va.features), target_va)
