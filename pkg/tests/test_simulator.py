import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from protodetect.numeric import make_rng
from protodetect.simulator import (IGNORE, Box, WorldConfig, augment_feature,
                                   generate_world, iou, label_proposals,
                                   load_world, save_world, world_from_dict,
                                   world_to_dict)


def test_iou_identical_and_disjoint():
    a = Box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 5, 6, 6)) == 0.0


def test_iou_hand_case():
    # areas 4 + 4, intersection 1 -> 1/7
    assert iou(Box(0, 0, 2, 2), Box(1, 1, 3, 3)) == pytest.approx(1.0 / 7.0)


def test_degenerate_box_rejected():
    with pytest.raises(ValueError):
        Box(0, 0, 0, 1)
    with pytest.raises(ValueError):
        Box(0, 5, 1, 5)
    with pytest.raises(ValueError):
        Box(0, 0, float("nan"), 1)


boxes = st.tuples(st.floats(0, 50), st.floats(0, 50),
                  st.floats(0.1, 50), st.floats(0.1, 50)).map(
    lambda t: Box(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= min(a.area, b.area) / max(a.area, b.area) + 1e-12


def small_world_cfg(**kw):
    defaults = dict(c_seen=3, c_unseen=2, d=8, delta=6.0, sigma_f=0.5,
                    n_train_scenes=4, n_test_scenes=4, seed=5)
    defaults.update(kw)
    return WorldConfig(**defaults)


def test_world_mean_separation():
    world = generate_world(small_world_cfg())
    means = [m.mean for m in world.class_models.values()]
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            assert np.linalg.norm(means[i] - means[j]) >= world.config.delta


def test_world_zero_noise_features_equal_class_mean():
    world = generate_world(small_world_cfg(sigma_f=1e-300))
    scene = world.train_scenes[0]
    for (gbox, cid), (pbox, feat) in zip(scene.gt, scene.proposals[:len(scene.gt)]):
        assert np.allclose(feat, world.class_models[cid].mean, atol=1e-290)


def test_world_without_background_proposals():
    cfg = small_world_cfg(objects_per_scene=3, proposals_per_scene=3)
    world = generate_world(cfg)
    from protodetect.trainer import scene_background_features
    # GT-aligned proposals only; with zero jitter none fall below IoU 0.3
    assert scene_background_features(world.train_scenes[0]) == []


def test_world_determinism_byte_identical(tmp_path):
    cfg = small_world_cfg()
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_world(p1, generate_world(cfg))
    save_world(p2, generate_world(small_world_cfg()))
    assert p1.read_bytes() == p2.read_bytes()


def test_world_roundtrip(tmp_path):
    world = generate_world(small_world_cfg())
    path = tmp_path / "w.json"
    save_world(path, world)
    w2 = load_world(path)
    assert world_to_dict(w2) == world_to_dict(world)
    assert w2.seen_ids == [1, 2, 3] and w2.unseen_ids == [4, 5]


def test_world_rejects_bad_config():
    with pytest.raises(ValueError):
        generate_world(small_world_cfg(proposals_per_scene=1, objects_per_scene=4))
    with pytest.raises(ValueError):
        generate_world(small_world_cfg(delta=-1.0))


def test_world_separation_failure_raises():
    # 30 classes at delta equal to the placement radius cannot all fit
    with pytest.raises(RuntimeError):
        generate_world(small_world_cfg(c_seen=300, d=2, delta=6.0))


def test_augment_zero_strength_is_identity():
    rng = make_rng(0)
    v = rng.normal(size=10)
    assert np.allclose(augment_feature(rng, v, 0.0), v, atol=1e-15)


def test_augment_rejects_negative_strength():
    with pytest.raises(ValueError):
        augment_feature(make_rng(0), np.zeros(3), -0.1)


def test_augment_displacement_grows_with_strength():
    rng = make_rng(1)
    v = rng.normal(size=16) * 3.0
    means = []
    for strength in [0.1, 0.5, 1.0]:
        d = [np.linalg.norm(augment_feature(rng, v, strength) - v)
             for _ in range(1000)]
        means.append(np.mean(d))
    assert means[0] < means[1] < means[2]


def test_augment_rotation_only_preserves_norm():
    # gamma fixed at 1 and no additive noise when sigma_f = 0 and the
    # scale range collapses: emulate via strength>0, sigma_f=0 and
    # checking the rotation component alone
    rng = make_rng(2)
    v = rng.normal(size=8)
    # strength controls gamma too, so compare against gamma*|v|
    for _ in range(100):
        state = rng.bit_generator.state
        out = augment_feature(rng, v, 0.3, sigma_f=0.0)
        rng.bit_generator.state = state
        gamma = rng.uniform(0.7, 1.3)
        rng.choice(8, size=2, replace=False)
        rng.uniform(-0.3 * np.pi / 8, 0.3 * np.pi / 8)
        rng.normal(size=8)
        assert np.linalg.norm(out) == pytest.approx(gamma * np.linalg.norm(v), abs=1e-9)


def test_label_proposals_bands():
    gt_box = Box(0, 0, 10, 10)
    scene_gt = [(gt_box, 3)]
    exact = (Box(0, 0, 10, 10), np.zeros(2))
    disjoint = (Box(50, 50, 60, 60), np.zeros(2))
    # width shrunk to give IoU = 0.4 (area 40 vs 100, fully inside)
    band = (Box(0, 0, 4.0, 10), np.zeros(2))
    from protodetect.simulator import Scene
    scene = Scene(gt=scene_gt, proposals=[exact, disjoint, band])
    labels = dict(label_proposals(scene))
    assert labels[0] == 3
    assert labels[1] == 0
    assert labels[2] == IGNORE


def test_label_proposals_picks_best_gt():
    from protodetect.simulator import Scene
    scene = Scene(gt=[(Box(0, 0, 10, 10), 1), (Box(8, 0, 18, 10), 2)],
                  proposals=[(Box(7, 0, 17, 10), np.zeros(1))])
    labels = dict(label_proposals(scene))
    assert labels[0] == 2
