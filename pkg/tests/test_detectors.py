import dataclasses

import numpy as np
import pytest

from advbench3d.detectors import (REGISTRY, ToyDetector, ToyDetectorConfig, UnsupportedOperation,
                                  make_detector)
from advbench3d.gradcheck import finite_difference_check
from advbench3d.objectives import Objective, normalize_scores
from advbench3d.synth import synth_generate


def test_registry():
    assert {"toy-a", "toy-b", "toy-temporal"} <= set(REGISTRY)
    with pytest.raises(KeyError):
        make_detector("nope")


def test_deterministic(toy_a, scene):
    d1, _ = toy_a.forward(scene[0])
    d2, _ = toy_a.forward(scene[0])
    assert len(d1) == len(d2) > 0
    for a, b in zip(d1, d2):
        np.testing.assert_array_equal(a.class_scores, b.class_scores)
        np.testing.assert_array_equal(a.location, b.location)


def test_weights_depend_on_seed(toy_a, toy_b, scene):
    toy_a.forward(scene[0])
    toy_b.forward(scene[0])
    assert not np.allclose(toy_a.W1, toy_b.W1)


def test_nearest_anchor_peaks_on_single_object(toy_a):
    f = synth_generate(0, n_objects=1)[0]
    heads, _ = toy_a.raw_outputs(f)
    scores = normalize_scores(heads["logits"]).max(axis=1)
    c = f.annotations[0].center
    a = toy_a.anchors(f.cameras)
    nearest = int(np.argmin(np.hypot(a[:, 0] - c[0], a[:, 1] - c[1])))
    assert int(np.argmax(scores)) == nearest
    black = f.with_images(np.zeros_like(im) for im in f.images)
    heads_b, _ = toy_a.raw_outputs(black)
    assert scores[nearest] > normalize_scores(heads_b["logits"]).max(axis=1)[nearest]


def test_detections_are_local_peaks(toy_a, scene):
    dets, _ = toy_a.forward(scene[0])
    locs = np.array([toy_a.anchors(scene[0].cameras)[d.anchor_id] for d in dets])
    d = np.hypot(*(locs[:, None, :] - locs[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert d.min() > toy_a.cfg.peak_radius


def test_zero_fusion_matches_single_frame(scene):
    single = ToyDetector(ToyDetectorConfig(weight_seed=4))
    temporal = ToyDetector(ToyDetectorConfig(weight_seed=4, temporal=True, fusion=0.0))
    d1, _ = single.forward(scene[0])
    _, st0 = temporal.forward(scene[0])
    d2, st1 = temporal.forward(scene[1], st0)
    d1, _ = single.forward(scene[1])
    assert [d.anchor_id for d in d1] == [d.anchor_id for d in d2]
    for a, b in zip(d1, d2):
        np.testing.assert_array_equal(a.class_scores, b.class_scores)
    np.testing.assert_array_equal(temporal.bev_feature(st1), single.pooled_features(scene[1]))


def test_bev_feature(toy_temporal, toy_a, scene):
    with pytest.raises(UnsupportedOperation):
        toy_temporal.bev_feature(None)
    _, st = toy_a.forward(scene[0])
    with pytest.raises(UnsupportedOperation):
        toy_a.bev_feature(st)
    _, s1 = toy_temporal.forward(scene[0])
    _, s2 = toy_temporal.forward(scene[0])
    np.testing.assert_array_equal(toy_temporal.bev_feature(s1), toy_temporal.bev_feature(s2))


def test_fusion_uses_history(toy_temporal, scene):
    _, s0 = toy_temporal.forward(scene[0])
    _, with_hist = toy_temporal.forward(scene[1], s0)
    _, without = toy_temporal.forward(scene[1])
    lam = toy_temporal.cfg.fusion
    np.testing.assert_allclose(toy_temporal.bev_feature(with_hist),
                               (1 - lam) * toy_temporal.bev_feature(without) + lam * toy_temporal.bev_feature(s0))


def test_constant_loss_zero_gradient(toy_a, scene):
    f = scene[0]
    _, spec = Objective("cls")([], f.annotations, toy_a.classes)
    assert all(not g.any() for g in toy_a.input_gradient(f, None, spec))


def test_gradient_additive_over_targets(toy_a, scene):
    f = scene[0]
    dets, _ = toy_a.forward(f)
    _, spec = Objective("cls")(dets, f.annotations, toy_a.classes)
    assert len(spec.anchor_ids) >= 2
    total = toy_a.input_gradient(f, None, spec)
    parts = []
    for k in range(len(spec.anchor_ids)):
        sub = dataclasses.replace(spec, anchor_ids=(spec.anchor_ids[k],),
                                  true_labels=spec.true_labels[k:k + 1],
                                  matches=dataclasses.replace(spec.matches, pairs=(spec.matches.pairs[k],)))
        parts.append(toy_a.input_gradient(f, None, sub))
    for c in range(len(total)):
        np.testing.assert_allclose(total[c], sum(p[c] for p in parts), atol=1e-15)


def test_bad_spec_rejected(toy_a, scene):
    f = scene[0]
    dets, _ = toy_a.forward(f)
    _, spec = Objective("cls")(dets, f.annotations, toy_a.classes)
    bad = dataclasses.replace(spec, anchor_ids=(10 ** 7,) + spec.anchor_ids[1:])
    with pytest.raises(ValueError):
        toy_a.input_gradient(f, None, bad)


@pytest.mark.parametrize("objective", ["cls", "targeted", "loc", "cw"])
def test_finite_differences_temporal(toy_temporal, scene, objective):
    _, st = toy_temporal.forward(scene[0])
    f = scene[1]
    dets, _ = toy_temporal.forward(f, st)
    _, spec = Objective(objective)(dets, f.annotations, toy_temporal.classes)
    r = finite_difference_check(toy_temporal, f, st, spec, n_probes=30, rng=1)
    assert r["probes"] == 30 and r["skipped"] <= 3
    assert r["rel_error"] < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        ToyDetectorConfig(stride=0)
    with pytest.raises(ValueError):
        ToyDetectorConfig(fusion=1.0)


def test_rigs_do_not_interfere(scene):
    fresh = ToyDetector(ToyDetectorConfig(weight_seed=0))
    mixed = ToyDetector(ToyDetectorConfig(weight_seed=0))
    mixed.forward(synth_generate(5, n_cameras=2, n_objects=3)[0])
    a, _ = fresh.forward(scene[0])
    b, _ = mixed.forward(scene[0])
    assert [d.anchor_id for d in a] == [d.anchor_id for d in b]
