"""Fixed-length features from proprioceptive windows.

Layout is channel-major: for each channel ``[mean, std, min, max,
band_0 .. band_{B-1}]``, so a window with C channels yields ``C * (4 + B)``
values. Band powers come from the one-sided periodogram of the mean-removed
signal, ``P_k = |X_k|^2 / T`` with interior bins doubled, summed into B
equal-width bands from 0 Hz to Nyquist. With that normalization the bins
sum to ``T * var(x)`` (Parseval).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import ConfigError, ValidationError
from .world import SAMPLE_RATE, ProprioWindow

N_STATS = 4
DEFAULT_BANDS = 10


def periodogram(x: np.ndarray) -> np.ndarray:
    """One-sided periodogram of each row of ``x`` (mean removed)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    power = np.abs(np.fft.rfft(centered, axis=-1)) ** 2 / n
    interior = np.ones(power.shape[-1])
    interior[1:(n + 1) // 2] = 2.0
    return power * interior


def band_edges(n_samples: int, sample_rate: float, bands: int) -> np.ndarray:
    """Band index for every rfft bin."""
    freqs = np.arange(n_samples // 2 + 1) * sample_rate / n_samples
    width = (sample_rate / 2) / bands
    return np.minimum((freqs // width).astype(int), bands - 1)


def featurize(window, bands: int = DEFAULT_BANDS, sample_rate: float | None = None) -> np.ndarray:
    """Feature vector of one window (a :class:`ProprioWindow` or a (C, T) array)."""
    if isinstance(window, ProprioWindow):
        sample_rate = window.sample_rate
        x = window.channels
    else:
        x = window
    sample_rate = SAMPLE_RATE if sample_rate is None else sample_rate
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"expected a (channels, samples) window, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValidationError("window contains non-finite samples")
    n = x.shape[1]
    if bands < 1 or n < 2 * bands:
        raise ConfigError(f"{bands} bands need at least {2 * bands} samples, got {n}")
    stats = np.stack([x.mean(axis=1), x.std(axis=1), x.min(axis=1), x.max(axis=1)], axis=1)
    idx = band_edges(n, sample_rate, bands)
    power = periodogram(x)
    banded = np.zeros((x.shape[0], bands))
    for b in range(bands):
        banded[:, b] = power[:, idx == b].sum(axis=1)
    return np.concatenate([stats, banded], axis=1).ravel()


def feature_names(channels, bands: int = DEFAULT_BANDS) -> list[str]:
    stats = ["mean", "std", "min", "max"] + [f"band{b}" for b in range(bands)]
    return [f"{ch}.{s}" for ch in channels for s in stats]


class ProprioFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer: stack of windows (N, C, T) -> features (N, C*(4+B))."""

    def __init__(self, bands=DEFAULT_BANDS, sample_rate=SAMPLE_RATE):
        self.bands = bands
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([featurize(w, self.bands, self.sample_rate) for w in X])


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Per-dimension z-score with training-set moments.

    Zero-variance dimensions are centred but not scaled.
    """

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 0, std, 1.0)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_stats(cls, mean, scale):
        obj = cls()
        obj.mean_ = np.asarray(mean, dtype=np.float64)
        obj.scale_ = np.asarray(scale, dtype=np.float64)
        obj.n_features_in_ = obj.mean_.size
        return obj

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return (X - self.mean_) / self.scale_


def normalize(features, stats=None):
    """Functional form: returns ``(normalized, (mean, scale))``."""
    if stats is None:
        if len(features) == 0:
            raise ValidationError("cannot fit normalization on an empty batch")
        norm = FeatureNormalizer().fit(features)
    else:
        norm = FeatureNormalizer.from_stats(*stats)
    return norm.transform(features), (norm.mean_, norm.scale_)
