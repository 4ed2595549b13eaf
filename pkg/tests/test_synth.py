import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chunkcascade.cascade import run_cascade, run_single_level
from chunkcascade.pyramid import PyramidSpec
from chunkcascade.stats import CascadeModel, two_level_metrics
from chunkcascade.synth import (
    SynthSceneConfig,
    ThresholdChunkClassifier,
    area_filter,
    chunk_stack,
    connected_components,
    detection_metrics,
    generate_scene,
    mean_pool,
    segment_detections,
    threshold_chunk_classifier,
)
from oracles import flood_fill_components

SPEC3 = PyramidSpec(3, 2, (4, 4, 4))


def cfg(spec=SPEC3, **kw):
    base = dict(
        pixels_per_chunk_axis=8, object_prevalence=0.2, object_radius_px=2.5,
        foreground_intensity=1.0, background_intensity=0.0, noise_std=0.2, seed=1,
    )
    base.update(kw)
    return SynthSceneConfig(spec, **base)


def test_empty_scene():
    scene = generate_scene(cfg(object_prevalence=0.0))
    assert not scene.l0_chunk_labels.any()
    assert not scene.segmentation_mask.any()
    assert scene.images[0].mean() == pytest.approx(0.0, abs=0.01)


def test_full_noiseless_scene():
    scene = generate_scene(cfg(object_prevalence=1.0, noise_std=0.0))
    assert scene.l0_chunk_labels.all()
    chunks = scene.chunks(0)
    assert (chunks.reshape(len(chunks), -1).max(axis=1) == 1.0).all()


def test_mean_pool_preserves_global_mean():
    scene = generate_scene(cfg())
    for lo, hi in zip(scene.images, scene.images[1:]):
        assert hi.shape == tuple(s // 2 for s in lo.shape)
        assert hi.mean() == pytest.approx(lo.mean(), abs=1e-9)


def test_mean_pool_values():
    img = np.arange(16.0).reshape(4, 4)
    assert np.array_equal(mean_pool(img), [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(ValueError):
        mean_pool(np.ones((3, 4)))


def test_scene_deterministic():
    a, b = generate_scene(cfg(seed=4)), generate_scene(cfg(seed=4))
    assert np.array_equal(a.images[0], b.images[0])
    assert not np.array_equal(a.images[0], generate_scene(cfg(seed=5)).images[0])


def test_labels_match_centroids():
    scene = generate_scene(cfg())
    idx = (scene.centroids // 8).astype(int)
    marked = np.zeros(SPEC3.shape(0), dtype=bool)
    marked[tuple(idx.T)] = True
    assert np.array_equal(marked, scene.l0_chunk_labels)
    assert len(scene.centroids) == scene.l0_chunk_labels.sum()


def test_chunk_labels_bernoulli():
    spec = PyramidSpec(2, 2, (32, 32))
    fracs = [generate_scene(cfg(spec, object_prevalence=0.1, seed=s)).l0_chunk_labels.mean()
             for s in range(20)]
    se = math.sqrt(0.1 * 0.9 / (spec.n * 20))
    assert abs(np.mean(fracs) - 0.1) <= 4 * se


@pytest.mark.parametrize(
    "kw", [dict(foreground_intensity=0.0), dict(object_radius_px=8.0), dict(noise_std=-1.0),
           dict(object_prevalence=1.5)]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        cfg(**kw)


def test_chunk_stack_row_major():
    img = np.arange(24).reshape(4, 6)
    stack = chunk_stack(img, (2, 3))
    assert stack.shape == (6, 2, 2)
    assert np.array_equal(stack[4], img[2:4, 2:4])


def test_threshold_classifier_rules():
    chunk = np.full((4, 4), 0.5)
    assert threshold_chunk_classifier(0.1, 16).classify(chunk)
    assert not threshold_chunk_classifier(1.1, 1).classify(chunk)
    chunk[0, :3] = 2.0
    assert threshold_chunk_classifier(1.0, 3).classify(chunk)
    assert not threshold_chunk_classifier(1.0, 4).classify(chunk)


def test_threshold_classifier_predict_matches_classify():
    rng = np.random.default_rng(0)
    X = rng.random((50, 4, 4))
    clf = threshold_chunk_classifier(0.9, 2)
    assert np.array_equal(clf.predict(X), [clf.classify(x) for x in X])


def test_threshold_classifier_area_filter_before_count():
    chunk = np.zeros((6, 6))
    chunk[0, 0] = 1.0            # isolated pixel
    chunk[3:5, 3:5] = 1.0        # 4-pixel blob
    assert ThresholdChunkClassifier(0.5, min_hot_pixels=5).classify(chunk) is True
    assert ThresholdChunkClassifier(0.5, min_hot_pixels=5, min_area_px=2).classify(chunk) is False
    assert ThresholdChunkClassifier(0.5, min_hot_pixels=4, min_area_px=2).classify(chunk) is True
    assert ThresholdChunkClassifier(0.5, min_hot_pixels=1, min_area_px=5).classify(chunk) is False


def test_threshold_classifier_fit_strategies():
    rng = np.random.default_rng(1)
    y = rng.random(400) < 0.3
    X = rng.normal(0, 0.2, (400, 5, 5))
    X[y, 2, 2] += 1.0
    youden = ThresholdChunkClassifier().fit(X, y)
    assert youden.profile_.tpr - youden.profile_.fpr > 0.7
    strict = ThresholdChunkClassifier(min_tpr=0.99).fit(X, y)
    assert strict.profile_.tpr >= 0.99
    lax = ThresholdChunkClassifier(max_fpr=0.01).fit(X, y)
    assert lax.profile_.fpr <= 0.01
    fixed = ThresholdChunkClassifier(threshold=0.5).fit(X, y)
    assert fixed.threshold_ == 0.5
    pred = fixed.predict(X)
    assert fixed.profile_.tpr == pytest.approx(pred[y].mean())


def test_unfitted_threshold_classifier_errors():
    with pytest.raises(ValueError):
        ThresholdChunkClassifier().classify(np.zeros(3))


def test_calibrated_profiles_predict_calls():
    spec = PyramidSpec(3, 2, (16, 16, 16))
    c = cfg(spec, object_prevalence=0.05, noise_std=0.25, seed=10)
    calib = generate_scene(c.with_seed(11))
    clfs = [
        ThresholdChunkClassifier(min_hot_pixels=3, level=0).fit(calib.chunks(0), calib.labels(0).ravel()),
        ThresholdChunkClassifier(min_hot_pixels=2, min_tpr=0.97, level=1).fit(
            calib.chunks(1), calib.labels(1).ravel()
        ),
    ]
    test = generate_scene(c)
    r = run_cascade(clfs, test.source(), spec)
    predicted = two_level_metrics(
        CascadeModel(3, 0.05, (clfs[0].profile_, clfs[1].profile_))
    ).expected_calls_per_l0_chunk[0]
    actual = r.calls_per_level[0] / spec.n
    n1 = spec.n // 8
    assert abs(actual - predicted) <= 4 * math.sqrt(predicted * (1 - predicted) / n1)


def test_cascade_on_scene_subset_and_savings():
    spec = PyramidSpec(2, 2, (16, 16))
    scene = generate_scene(cfg(spec, object_prevalence=0.05, seed=3))
    l0, l1 = threshold_chunk_classifier(0.8, 3, level=0), threshold_chunk_classifier(0.5, 2, level=1)
    s = run_single_level(l0, scene.source(), spec)
    c = run_cascade([l0, l1], scene.source(), spec)
    assert not (c.predictions & ~s.predictions).any()
    assert c.calls_per_level[0] <= spec.n


def test_connected_components_basic():
    assert connected_components(np.zeros((4, 4), bool)) == []
    diag = np.zeros((3, 3), bool)
    diag[0, 0] = diag[1, 1] = True
    assert len(connected_components(diag, "face")) == 2
    assert len(connected_components(diag, "full")) == 1
    sq = np.zeros((6, 6), bool)
    sq[1:4, 2:5] = True
    (comp,) = connected_components(sq)
    assert comp.area == 9
    assert comp.centroid == pytest.approx((2.0, 3.0))
    with pytest.raises(ValueError):
        connected_components(sq, "corner")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1), st.sampled_from(["face", "full"]))
def test_components_match_flood_fill(dim, seed, conn):
    rng = np.random.default_rng(seed)
    mask = rng.random((7,) * dim) < 0.35
    comps = connected_components(mask, conn)
    assert sorted(c.area for c in comps) == flood_fill_components(mask, conn == "full")
    assert sum(c.area for c in comps) == mask.sum()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 4), st.integers(0, 4))
def test_components_translation_invariant(seed, dx, dy):
    rng = np.random.default_rng(seed)
    small = rng.random((6, 6)) < 0.4
    big = np.zeros((12, 12), bool)
    big[dx : dx + 6, dy : dy + 6] = small
    a = connected_components(small)
    b = connected_components(big)
    assert [c.area for c in a] == [c.area for c in b]
    for ca, cb in zip(a, b):
        assert np.allclose(np.add(ca.centroid, (dx, dy)), cb.centroid)


def _comps_with_areas(areas):
    mask = np.zeros((len(areas), max(areas) + 1), bool)
    for row, a in enumerate(areas):
        mask[row, :a] = True
    # separate rows are face-disjoint only if an empty row sits between them
    spaced = np.zeros((2 * len(areas), mask.shape[1]), bool)
    spaced[::2] = mask
    return connected_components(spaced)


def test_area_filter():
    comps = _comps_with_areas([4, 9, 1000])
    assert area_filter(comps, 0) == comps
    assert [c.area for c in area_filter(comps, 1000)] == [1000]
    assert [c.area for c in area_filter(comps, 9)] == [9, 1000]


def test_detection_metrics():
    truth = [(i * 10.0, 0.0) for i in range(7)]
    assert detection_metrics(truth[:6], truth, 2.0) == (pytest.approx(6 / 7), 1.0)
    assert round(6 / 7, 2) == 0.86
    assert detection_metrics([], truth, 2.0) == (0.0, None)
    assert detection_metrics(truth, truth, 0.5) == (1.0, 1.0)
    assert detection_metrics([(0.0, 0.0)], [], 1.0) == (None, 0.0)


def test_detection_metrics_greedy_one_to_one():
    truth = [(0.0, 0.0), (3.0, 0.0)]
    dets = [(1.0, 0.0)]
    assert detection_metrics(dets, truth, 2.5) == (0.5, 1.0)
    dets = [(1.0, 0.0), (1.2, 0.0)]
    # closest pair (1.0 -> 0.0) wins, second detection falls to the other truth
    assert detection_metrics(dets, truth, 2.0) == (1.0, 1.0)


def test_segment_detections_restricted_to_positive_chunks():
    img = np.zeros((8, 8))
    img[1:3, 1:3] = 1.0
    img[5:7, 5:7] = 1.0
    preds = np.array([[True, False], [False, False]])
    dets = segment_detections(img, preds, 0.5)
    assert [d.centroid for d in dets] == [pytest.approx((1.5, 1.5))]
    assert segment_detections(img, np.ones((2, 2), bool), 0.5, min_area_px=5) == []
