"""Synthetic data generation, dataset IO, and annotation handling."""

import json
import shutil

import numpy as np
import pytest

from omrfit import data_synth as D
from omrfit.body_model import MeshParams
from omrfit.errors import ConfigError, DataError


# --- samplers ---


def test_truncated_normal_respects_bound(rng):
    out = D.truncated_normal(rng, 5000, bound=2.5)
    assert np.all(np.abs(out) <= 2.5)


def test_sample_shape_obese_shifts_girth_axis(model):
    a = D.sample_shape(np.random.default_rng(5), model, "normal")
    b = D.sample_shape(np.random.default_rng(5), model, "obese")
    np.testing.assert_allclose(b[0], a[0] + 3.0, atol=1e-15)
    np.testing.assert_allclose(b[1:], a[1:], atol=1e-15)


def test_sample_shape_rejects_unknown_distribution(model, rng):
    with pytest.raises(ConfigError):
        D.sample_shape(rng, model, "gaunt")


def test_spine_joints_are_the_branching_chain(model):
    assert D.spine_joints(model) == {0, 1}


def test_sample_pose_ranges(model, rng):
    spine = D.spine_joints(model)
    for _ in range(20):
        theta = D.sample_pose(rng, model)
        for j in range(model.n_joints):
            seg = theta[3 * j : 3 * j + 3]
            limit = 0.3 if j in spine else 0.6
            assert np.all(np.abs(seg) <= limit)


def test_sample_camera_ranges(rng):
    for _ in range(50):
        cam = D.sample_camera(rng)
        assert 0.6 <= cam.scale <= 1.1
        assert np.all(np.abs(cam.trans) <= 0.2)


# --- observations ---


def test_synth_observation_fields(model):
    obs = D.synth_observation(model, np.random.default_rng(3), "x1", "normal", 0.02, 32)
    assert obs.sample_id == "x1"
    assert obs.keypoints2d.shape == (model.n_joints, 2)
    assert obs.visibility.all()
    assert obs.mask.shape == (32, 32)
    assert obs.mask.max() <= 6
    assert obs.gt_params is not None
    assert obs.noise == 0.02


def test_synth_observation_deterministic(model):
    a = D.synth_observation(model, np.random.default_rng(11), "s", "obese", 0.01, 32)
    b = D.synth_observation(model, np.random.default_rng(11), "s", "obese", 0.01, 32)
    np.testing.assert_array_equal(a.keypoints2d, b.keypoints2d)
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_array_equal(a.gt_params.beta, b.gt_params.beta)


def test_synth_observation_noise_perturbs_keypoints(model):
    clean = D.synth_observation(model, np.random.default_rng(4), "s", "normal", 0.0, 32)
    noisy = D.synth_observation(model, np.random.default_rng(4), "s", "normal", 0.05, 32)
    assert np.abs(noisy.keypoints2d - clean.keypoints2d).max() > 1e-3


# --- dataset round trip ---


def test_synth_dataset_round_trip(model, tmp_path):
    ds = D.synth_dataset(model, 4, tmp_path / "d", distribution="obese", noise=0.01,
                         seed=9, resolution=32)
    again = D.load_dataset(tmp_path / "d")
    assert again.ids() == ds.ids()
    assert again.manifest["distribution"] == "obese"
    for a, b in zip(ds.samples, again.samples):
        np.testing.assert_allclose(b.keypoints2d, a.keypoints2d, atol=1e-12)
        np.testing.assert_array_equal(b.mask, a.mask)
        np.testing.assert_allclose(b.gt_params.beta, a.gt_params.beta, atol=1e-12)
        np.testing.assert_allclose(b.gt_params.theta, a.gt_params.theta, atol=1e-12)


def test_synth_dataset_bytes_deterministic(model, tmp_path):
    D.synth_dataset(model, 3, tmp_path / "a", seed=7, resolution=32)
    D.synth_dataset(model, 3, tmp_path / "b", seed=7, resolution=32)
    for rel in ("manifest.json", "samples/s0000.json", "masks/s0000_labels.pgm"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_load_dataset_detects_tampering(model, tmp_path):
    D.synth_dataset(model, 2, tmp_path / "d", seed=1, resolution=32)
    target = tmp_path / "d" / "samples" / "s0001.json"
    doc = json.loads(target.read_text())
    doc["keypoints2d"][0][0] += 0.25
    target.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="content hash"):
        D.load_dataset(tmp_path / "d")
    # verification can be skipped explicitly
    ds = D.load_dataset(tmp_path / "d", verify=False)
    assert len(ds) == 2


def test_synth_dataset_rejects_empty(model, tmp_path):
    with pytest.raises(ConfigError):
        D.synth_dataset(model, 0, tmp_path / "d")


def test_dataset_sample_lookup(model, tmp_path):
    ds = D.synth_dataset(model, 2, tmp_path / "d", seed=2, resolution=32)
    assert ds.sample("s0001").sample_id == "s0001"
    with pytest.raises(DataError):
        ds.sample("missing")


# --- annotations ---


def _annotation_for(obs, model):
    return D.Annotation(
        sample_id=obs.sample_id,
        params=MeshParams(
            beta=np.linspace(0, 1, model.n_shape),
            theta=np.zeros(3 * model.n_joints),
            scale=1.1,
            trans=np.array([0.05, -0.02]),
        ),
        method="omr",
        schedule="5P4Q",
        seed=3,
        final_losses={"l2d": 0.01},
    )


def test_annotations_round_trip(model, tmp_path):
    ds = D.synth_dataset(model, 2, tmp_path / "d", seed=3, resolution=32)
    anns = [_annotation_for(o, model) for o in ds.samples]
    D.save_annotations(anns, tmp_path / "ann")
    again = D.load_annotations(tmp_path / "ann")
    assert [a.sample_id for a in again] == [a.sample_id for a in anns]
    np.testing.assert_allclose(again[0].params.beta, anns[0].params.beta, atol=1e-12)
    assert again[0].schedule == "5P4Q"
    assert again[0].final_losses == {"l2d": 0.01}


def test_annotation_bytes_deterministic(model, tmp_path):
    ds = D.synth_dataset(model, 1, tmp_path / "d", seed=3, resolution=32)
    anns = [_annotation_for(ds.samples[0], model)]
    D.save_annotations(anns, tmp_path / "a1")
    D.save_annotations(anns, tmp_path / "a2")
    assert (tmp_path / "a1" / "s0000.json").read_bytes() == (tmp_path / "a2" / "s0000.json").read_bytes()


def test_merge_annotations(model, tmp_path):
    ds = D.synth_dataset(model, 2, tmp_path / "d", seed=4, resolution=32)
    anns = [_annotation_for(ds.samples[0], model)]
    assert D.merge_annotations(ds, anns) == 1
    assert ds.samples[0].ann_params is not None
    with pytest.raises(DataError, match="already annotated"):
        D.merge_annotations(ds, anns)
    assert D.merge_annotations(ds, anns, force=True) == 1

    stray = _annotation_for(ds.samples[0], model)
    stray = D.Annotation("ghost", stray.params, "omr", None, 0, {})
    with pytest.raises(DataError, match="does not match"):
        D.merge_annotations(ds, [stray])


def test_load_annotations_rejects_bad_version(model, tmp_path):
    ds = D.synth_dataset(model, 1, tmp_path / "d", seed=5, resolution=32)
    D.save_annotations([_annotation_for(ds.samples[0], model)], tmp_path / "ann")
    target = tmp_path / "ann" / "s0000.json"
    doc = json.loads(target.read_text())
    doc["version"] = "bogus/9"
    target.write_text(json.dumps(doc))
    from omrfit.errors import FormatError

    with pytest.raises(FormatError):
        D.load_annotations(tmp_path / "ann")
