import numpy as np
import pytest

import tubule


def test_phantom_scores_itself_perfectly():
    ph = tubule.phantom(seed=3)
    assert ph["ct"].shape == (32, 32, 32)
    scores = tubule.airway_scores(ph["label"], ph["label"])
    assert scores["dsc"] == 100.0
    assert scores["bd"] == 100.0
    assert scores["fpr"] == 0.0


def test_single_voxel_wall_and_distance():
    lumen = np.zeros((7, 7, 7), np.uint8)
    lumen[3, 3, 3] = 1
    assert int(tubule.airway_wall(lumen).sum()) == 18
    d = tubule.distance_map(lumen, spacing=(2.0, 1.0, 1.0))
    assert d[3, 3, 3] == 0.0
    assert d[4, 3, 3] == pytest.approx(2.0)
    assert d[3, 0, 3] == pytest.approx(3.0)


def test_skeleton_of_a_line():
    line = np.zeros((1, 1, 9), np.uint8)
    line[:] = 1
    s = tubule.skeleton_summary(tubule.skeletonize(line))
    assert s["terminals"] == 2
    assert s["branches"] == 1
    assert s["length"] == pytest.approx(8.0)


def test_graph_cut_at_zero_smoothing_is_argmax():
    rng = np.random.default_rng(0)
    p = rng.uniform(0.01, 1.0, (3, 3, 4, 5)).astype(np.float32)
    p /= p.sum(axis=0, keepdims=True)
    p[2] = 1.0 - p[0] - p[1]
    mask = np.ones((3, 4, 5), np.uint8)
    out = tubule.refine_artery_vein(p, np.zeros((3, 4, 5), np.float32), mask, kappa=0.0)
    expect = np.where(p[1] >= p[2], 1, 2)
    assert np.array_equal(out, expect)


def test_metaimage_roundtrip(tmp_path):
    a = (np.arange(60, dtype=np.float32).reshape(3, 4, 5) - 30) * 1.5
    path = str(tmp_path / "v.mha")
    tubule.write_volume(a, path, spacing=(1.0, 0.5, 0.5))
    back, spacing, origin = tubule.read_image(path)
    assert np.array_equal(back, a)
    assert tuple(spacing) == (1.0, 0.5, 0.5)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        tubule.airway_wall(np.zeros((2, 2), np.uint8))
    with pytest.raises(ValueError):
        tubule.phantom(kind="tree")


def test_gradient_suite_passes():
    results = tubule.gradient_suite(0)
    assert len(results) > 20
    assert max(err for _, err in results) < 1e-4


def test_train_and_infer(tmp_path):
    ph = tubule.phantom(dims=(16, 16, 16), rmin=1.0, rmax=2.0, seed=1)
    ckpt = str(tmp_path / "m.ckpt")
    hist = tubule.train_airway([ph["ct"]], [ph["label"]], ckpt, epochs=2, seed=2, augment=False, patch=(16, 16, 16))
    assert [h["epoch"] for h in hist] == [1, 2]
    probs = tubule.infer(ckpt, ph["ct"], stride=16)
    assert probs.shape == (1, 16, 16, 16)
    assert np.all((probs >= 0) & (probs <= 1))
    assert tubule.postprocess_airway(probs[0]).dtype == np.uint8
