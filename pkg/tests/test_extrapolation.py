from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefnav.catalog import CONCRETE, DEFAULT_RANKING
from prefnav.encoders import LabeledDataset
from prefnav.errors import NoMatchError, ValidationError
from prefnav.extrapolation import (
    AdaptationSet, NoveltyReport, TerrainCluster, adapt, build_known_clusters, cluster_embeddings,
    extrapolate_preference, match_centroid, novelty_score, scan_novelty,
)
from prefnav.utility import class_mean_utilities, levels_from_ranking, ordering_violations


def identity_model(ranking=(0, 1, 2)):
    return SimpleNamespace(proprio_embedding=lambda f: np.asarray(f, dtype=float),
                           ranking=list(ranking), levels=levels_from_ranking(ranking))


def dataset(features, labels):
    n = len(labels)
    return LabeledDataset(np.zeros((n, 1)), np.asarray(features, float), labels, np.zeros((n, 3)))


def adaptation(features):
    n = len(features)
    return AdaptationSet(np.zeros((n, 1)), np.asarray(features, float), np.zeros((n, 3)))


def e(i, scale=1.0):
    v = np.zeros(8)
    v[i] = scale
    return v


# -- novelty ------------------------------------------------------------------

def test_novelty_score_examples():
    r = NoveltyReport.from_differences([1.0, 3.0], tau=1.0)
    assert (r.score, r.window, r.flagged) == (5.0, 2, True)
    assert not NoveltyReport.from_differences([0.0, 0.0], tau=1e-9).flagged


def test_flag_threshold_is_strict():
    assert not NoveltyReport.from_differences([2.0], tau=4.0).flagged
    assert NoveltyReport.from_differences([2.0], tau=3.999).flagged


def test_empty_window_raises():
    with pytest.raises(ValidationError):
        NoveltyReport.from_differences([], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
def test_novelty_score_non_negative(diffs):
    assert NoveltyReport.from_differences(diffs, 1.0).score >= 0


def test_trained_novelty_windows(known_data, minus_model):
    va = known_data.val
    reps = scan_novelty(minus_model, va.patches, va.features, window=10)
    assert [r.window for r in reps][:-1] == [10] * (len(reps) - 1)
    assert sum(r.window for r in reps) == len(va)
    one = novelty_score(minus_model, va.patches[:10], va.features[:10])
    # float32 batches of different size may round differently
    assert one.score == pytest.approx(reps[0].score, rel=1e-5)
    with pytest.raises(ValidationError):
        novelty_score(minus_model, va.patches[:3], va.features[:2])


# -- clusters -----------------------------------------------------------------

def test_known_clusters_are_class_means():
    feats = [e(0, 0), e(0, 2), e(1), e(1), e(2)]
    clusters = build_known_clusters(identity_model(), dataset(feats, [0, 0, 1, 1, 2]))
    np.testing.assert_array_equal(clusters[0].centroid, e(0, 1))
    np.testing.assert_array_equal(clusters[1].centroid, e(1))
    assert [(c.terrain_id, c.count, c.level) for c in clusters] == [(0, 2, 0), (1, 2, 1), (2, 1, 2)]


def test_known_clusters_permutation_invariant():
    rng = np.random.default_rng(0)
    feats, labels = rng.normal(size=(30, 8)), np.repeat([0, 1, 2], 10)
    perm = rng.permutation(30)
    a = build_known_clusters(identity_model(), dataset(feats, labels))
    b = build_known_clusters(identity_model(), dataset(feats[perm], labels[perm]))
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.centroid, y.centroid, rtol=0, atol=1e-12)


def test_known_clusters_need_every_class():
    with pytest.raises(ValidationError):
        build_known_clusters(identity_model(), dataset([e(0), e(1)], [0, 1]))


# -- matching -----------------------------------------------------------------

KNOWN = [TerrainCluster(0, e(0, 0), 5, 0), TerrainCluster(1, e(0, 3), 5, 1), TerrainCluster(2, e(1, 6), 5, 2)]


def test_exact_centroid_matches_with_zero_distance():
    r = match_centroid(e(0, 3), KNOWN, 1.0)
    assert (r.matched, r.level, r.distance) == (1, 1, 0.0)


def test_threshold_is_closed():
    r = match_centroid(e(0, 4), KNOWN, 1.0)
    assert r.distance == 1.0 and r.matched == 1
    assert match_centroid(e(0, 4.0001), KNOWN, 1.0).matched is None


def test_far_centroid_is_refused():
    r = match_centroid(e(3, 50), KNOWN, 1.0)
    assert not r.is_match and r.level is None and r.distance > 1.0
    assert set(r.to_dict()["distances"]) == {"0", "1", "2"}


def test_equidistant_tie_goes_to_preferred_level():
    assert match_centroid(e(0, 1.5), KNOWN, 2.0).matched == 0


def test_mu_must_be_positive():
    with pytest.raises(ValidationError):
        match_centroid(e(0), KNOWN, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_duplicating_records_keeps_the_match(seed, copies):
    rng = np.random.default_rng(seed)
    feats = rng.normal(0, 0.5, (6, 8)) + e(0, 3 * rng.integers(0, 2))
    model = identity_model()
    a = extrapolate_preference(adaptation(feats), model, KNOWN, 1.0)
    b = extrapolate_preference(adaptation(np.tile(feats, (copies, 1))), model, KNOWN, 1.0)
    np.testing.assert_allclose(a.centroid, b.centroid, atol=1e-12)
    assert a.matched == b.matched


def test_empty_adaptation_set_raises():
    with pytest.raises(ValidationError):
        extrapolate_preference(adaptation(np.zeros((0, 8))), identity_model(), KNOWN)


def test_multi_cluster_extrapolation():
    rng = np.random.default_rng(1)
    feats = np.concatenate([rng.normal(0, 0.1, (20, 8)) + e(0, 3),
                            rng.normal(0, 0.1, (20, 8)) + e(3, 40),
                            rng.normal(0, 0.1, (2, 8)) + e(5, 80)])
    res = extrapolate_preference(adaptation(feats), identity_model(), KNOWN, 1.0, n_clusters="auto")
    assert sorted((r.matched is None, len(r.members)) for r in res) == [(False, 20), (True, 20)]


def test_cluster_embeddings():
    rng = np.random.default_rng(2)
    blob = rng.normal(size=(40, 8))
    np.testing.assert_array_equal(cluster_embeddings(blob, "auto"), 0)
    two = np.concatenate([blob[:20], blob[20:] + e(0, 30)])
    assign = cluster_embeddings(two, "auto")
    assert len(set(assign[:20])) == 1 and len(set(assign[20:])) == 1 and assign[0] != assign[-1]
    assert len(np.unique(cluster_embeddings(two, 2))) == 2
    for bad in (0, -1, 1.5, "many"):
        with pytest.raises(ValidationError):
            cluster_embeddings(two, bad)


# -- adaptation sets ------------------------------------------------------------

def test_adaptation_set_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a = AdaptationSet(rng.random((4, 64, 64, 3)).astype(np.float32), rng.normal(size=(4, 84)),
                      rng.normal(size=(4, 3)), "s1", np.array([3, 3, 1, 3]), {"tau": 0.5})
    path = a.save(tmp_path)
    b = AdaptationSet.load(tmp_path, "s1")
    for name in ("patches", "features", "poses", "truth"):
        assert getattr(b, name).tobytes() == getattr(a, name).tobytes()
    assert b.manifest == {"tau": 0.5}
    assert path.read_text() == AdaptationSet.load(tmp_path, "s1").save(tmp_path / "again").read_text()


def test_adaptation_records_must_be_paired():
    with pytest.raises(ValidationError):
        AdaptationSet(np.zeros((3, 1)), np.zeros((2, 8)), np.zeros((3, 3)))


def test_adapt_refuses_without_match(known_data, minus_model):
    refused = match_centroid(e(3, 50), KNOWN, 1.0)
    with pytest.raises(NoMatchError):
        adapt(minus_model, adaptation(np.zeros((3, 84))), refused, known_data)


def test_noop_adaptation_keeps_known_order(known_data, minus_model):
    va = known_data.val
    idx = np.flatnonzero(va.labels == CONCRETE)
    ad = AdaptationSet(va.patches[idx], va.features[idx], va.poses[idx], "noop")
    known = build_known_clusters(minus_model, known_data.train)
    res = extrapolate_preference(ad, minus_model, known, 1.0)
    assert res.matched == CONCRETE
    out = adapt(minus_model, ad, res, known_data, seed=0)
    assert out.novel_labels == {3: CONCRETE}
    plus = out.model
    assert plus.levels[3] == plus.levels[CONCRETE]
    assert plus.metadata["session_id"] == "noop"
    assert plus.metadata["extrapolation"][0]["matched"] == res.matched
    assert plus.metadata["extrapolation"][0]["distance"] == res.distance
    means = class_mean_utilities(plus.patch_utilities(va.patches), va.labels)
    assert ordering_violations(means, levels_from_ranking(DEFAULT_RANKING)) == []
    # the bundle it started from is untouched
    assert plus.f_vis.network_ is not minus_model.f_vis.network_
