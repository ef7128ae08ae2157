import numpy as np
import pytest

from prefnav.errors import ConfigError, ValidationError
from prefnav.features import (
    FeatureNormalizer, ProprioFeaturizer, featurize, normalize, periodogram,
)

from oracles import dft_matrix_band_powers, naive_band_powers

FS = 200.0


def bands_of(vec, channels, bands=10):
    return vec.reshape(channels, 4 + bands)[:, 4:]


def test_constant_channel():
    x = np.full((1, 400), 3.5)
    f = featurize(x, 10, FS).reshape(1, 14)[0]
    assert f[0] == 3.5 and f[1] == 0.0 and f[2] == f[3] == 3.5
    assert not f[4:].any()


def test_pure_sine_power_in_first_band():
    t = np.arange(400) / FS
    x = np.sin(2 * np.pi * 5.0 * t + 0.7)[None, :]
    got = bands_of(featurize(x, 10, FS), 1)[0]
    expected = naive_band_powers(list(x[0]), FS, 10)
    np.testing.assert_allclose(got[0], expected[0], rtol=1e-9)
    assert got[0] == pytest.approx(200.0, rel=1e-9)  # A^2 T / 2
    assert np.all(np.abs(got[1:]) < 1e-9 * got[0])


def test_integer_period_shift_is_invariant():
    t = np.arange(400) / FS
    x = np.stack([np.sin(2 * np.pi * 5.0 * t), 0.3 * np.cos(2 * np.pi * 25.0 * t + 1.0)])
    shifted = np.roll(x, 40, axis=1)  # 40 samples = one 5 Hz period, five 25 Hz periods
    a = bands_of(featurize(x, 10, FS), 2)
    b = bands_of(featurize(shifted, 10, FS), 2)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * a.max())


def test_matches_dft_oracle_on_random_windows():
    rng = np.random.default_rng(0)
    for _ in range(20):
        c, n = rng.integers(1, 7), rng.integers(20, 401)
        x = rng.normal(size=(c, n)) * rng.uniform(0.1, 3, size=(c, 1))
        np.testing.assert_allclose(bands_of(featurize(x, 10, FS), c), dft_matrix_band_powers(x, FS, 10), rtol=1e-9)


def test_parseval():
    rng = np.random.default_rng(1)
    for n in (64, 101, 400):
        x = rng.normal(size=(3, n))
        np.testing.assert_allclose(periodogram(x).sum(axis=1), n * x.var(axis=1), rtol=1e-9)


def test_feature_length_and_layout():
    x = np.random.default_rng(2).normal(size=(6, 400))
    f = featurize(x, 10, FS)
    assert f.shape == (6 * 14,)
    np.testing.assert_allclose(f.reshape(6, 14)[:, 1], x.std(axis=1))
    np.testing.assert_array_equal(f, featurize(x, 10, FS))


def test_featurize_errors():
    with pytest.raises(ValidationError):
        featurize(np.array([[1.0, np.nan] * 20]))
    with pytest.raises(ConfigError):
        featurize(np.zeros((2, 15)), bands=10)


def test_featurizer_transformer():
    w = np.random.default_rng(3).normal(size=(4, 6, 400))
    out = ProprioFeaturizer().fit_transform(w)
    assert out.shape == (4, 84)
    np.testing.assert_array_equal(out[2], featurize(w[2]))


def test_normalize_examples():
    same = np.tile([[1.0, -2.0, 5.0]], (4, 1))
    out, _ = normalize(same)
    assert not out.any()
    out, stats = normalize(np.array([[0.0], [2.0]]))
    np.testing.assert_array_equal(out, [[-1.0], [1.0]])
    x = np.random.default_rng(4).normal(size=(10, 3))
    a, stats = normalize(x)
    b, _ = normalize(x, stats)
    assert a.tobytes() == b.tobytes()


def test_normalize_errors():
    norm = FeatureNormalizer().fit(np.ones((3, 4)))
    with pytest.raises(ValidationError):
        norm.transform(np.ones((2, 5)))
    with pytest.raises(ValidationError):
        normalize(np.zeros((0, 3)))
