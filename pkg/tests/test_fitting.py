"""Schedule parsing, fit configs, and the three fitting methods."""

import dataclasses
import json
from types import SimpleNamespace

import numpy as np
import pytest

from omrfit import fitting as F
from omrfit import regressor as R
from omrfit.body_model import MeshParams
from omrfit.data_synth import load_annotations
from omrfit.errors import ConfigError, DataError, FormatError, IoError, ScheduleError
from omrfit.losses import LossWeights


@pytest.fixture(scope="module")
def arch_alpha(model):
    arch = R.RegressorArch.for_model(model, hidden=(16,))
    return arch, R.init_alpha(arch, seed=0)


@pytest.fixture(scope="module")
def prior(model):
    return F.default_pose_prior(model, seed=0, n_samples=64)


# --- schedules ---


def test_parse_schedule_phase_order():
    s = F.parse_schedule("5P4Q")
    assert (s.n_p, s.n_q) == (5, 4)
    assert s.phases == ("P0", "Q", "P", "Q", "P", "Q", "P", "Q", "P")
    assert F.parse_schedule("1P1Q").phases == ("P0", "Q")
    assert F.parse_schedule("2P2Q").phases == ("P0", "Q", "P", "Q")
    # already-parsed schedules pass through
    assert F.parse_schedule(s) is s


@pytest.mark.parametrize("text", ["3P1Q", "0P1Q", "5P0Q", "PQ", "2Q3P", "5p4q", ""])
def test_parse_schedule_rejects(text):
    with pytest.raises(ScheduleError):
        F.parse_schedule(text)


# --- config ---


def test_fit_config_validation():
    with pytest.raises(ConfigError):
        F.FitConfig(method="hmr")
    with pytest.raises(ConfigError):
        F.FitConfig(iters=-1)
    with pytest.raises(ConfigError):
        F.FitConfig(iters_per_phase=0)
    with pytest.raises(ConfigError):
        F.FitConfig(lr_q=0.0)
    with pytest.raises(ScheduleError):
        F.FitConfig(method="omr", schedule="9P2Q")
    # non-omr methods never validate the schedule string
    F.FitConfig(method="smplify", schedule="junk")


def test_config_hash_tracks_content():
    a = F.FitConfig(method="smplify", iters=20)
    b = F.FitConfig(method="smplify", iters=20)
    assert a.config_hash() == b.config_hash()
    assert len(a.config_hash()) == 16
    assert a.with_(gamma=80.0).config_hash() != a.config_hash()
    assert a.with_(weights=LossWeights(sigma=0.5)).config_hash() != a.config_hash()
    # the schedule only matters for omr
    assert a.with_(schedule="1P1Q").config_hash() == a.config_hash()


# --- smplify ---


def test_smplify_reduces_objective(model, observation, prior):
    cfg = F.FitConfig(method="smplify", iters=40, lr_q=0.03)
    res = F.fit_smplify(model, observation, cfg, prior=prior)
    assert [p.kind for p in res.phases] == ["smplify"]
    assert res.final_losses["objective"] < res.phases[0].losses[0]
    assert res.sample_id == observation.sample_id
    assert set(res.final_losses) >= {"l2d", "pose_prior", "beta_reg", "objective"}
    assert res.provenance["config_hash"] == cfg.config_hash()


def test_smplify_freeze_cam(model, observation, prior):
    init = MeshParams.neutral(model.n_shape, model.n_joints)
    cfg = F.FitConfig(method="smplify", iters=5, lr_q=0.03, freeze_cam=True)
    res = F.fit_smplify(model, observation, cfg, init=init, prior=prior)
    assert res.params.scale == init.scale
    np.testing.assert_array_equal(res.params.trans, init.trans)
    assert np.abs(res.params.theta - init.theta).max() > 0


# --- eft ---


def test_eft_zero_iters_is_pretrained_prediction(model, observation, arch_alpha, prior):
    arch, alpha = arch_alpha
    cfg = F.FitConfig(method="eft", iters=0)
    res = F.fit_eft(model, arch, alpha, observation, cfg, prior=prior)
    expected = R.predict(arch, alpha, R.featurize(observation, model.n_joints))
    np.testing.assert_array_equal(res.params.beta, expected.beta)
    np.testing.assert_array_equal(res.params.theta, expected.theta)
    assert res.phases == []


def test_eft_fine_tunes_weights(model, observation, arch_alpha, prior):
    arch, alpha = arch_alpha
    cfg = F.FitConfig(method="eft", iters=10, lr_p=1e-3)
    res = F.fit_eft(model, arch, alpha, observation, cfg, prior=prior)
    assert [p.kind for p in res.phases] == ["eft"]
    assert res.final_losses["objective"] < res.phases[0].losses[0]
    baseline = R.predict(arch, alpha, R.featurize(observation, model.n_joints))
    assert np.abs(res.params.theta - baseline.theta).max() > 0


# --- omr ---


def test_omr_phase_sequence(model, observation, arch_alpha, prior):
    arch, alpha = arch_alpha
    cfg = F.FitConfig(method="omr", schedule="2P2Q", iters_per_phase=3,
                      lr_q=0.03, lr_p=1e-3)
    res = F.fit_omr(model, arch, alpha, observation, cfg, prior=prior)
    assert [p.kind for p in res.phases] == ["P0", "Q", "P", "Q"]
    assert res.provenance["n_phases"] == 4
    assert res.provenance["schedule"] == "2P2Q"
    assert all(len(p.losses) == 3 for p in res.phases)


def test_omr_final_params_come_from_last_phase(model, observation, arch_alpha, prior):
    # 1P1Q ends on a mesh phase, so the result ignores the regressor weights
    arch, alpha = arch_alpha
    cfg = F.FitConfig(method="omr", schedule="1P1Q", iters_per_phase=2,
                      lr_q=0.03, lr_p=1e-3)
    res = F.fit_omr(model, arch, alpha, observation, cfg, prior=prior)
    assert res.phases[-1].kind == "Q"
    assert res.final_losses["objective"] == res.phases[-1].final_loss


# --- dispatch ---


def test_run_fit_requires_regressor_for_network_methods(model, observation):
    for method in ("eft", "omr"):
        with pytest.raises(ConfigError, match="pretrained regressor"):
            F.run_fit(model, observation, F.FitConfig(method=method))


def test_run_fit_smplify_inits_from_regressor(model, observation, arch_alpha, prior):
    arch, alpha = arch_alpha
    cfg = F.FitConfig(method="smplify", iters=0)
    bare = F.run_fit(model, observation, cfg, prior=prior)
    seeded = F.run_fit(model, observation, cfg, arch=arch, alpha=alpha, prior=prior)
    np.testing.assert_array_equal(bare.params.beta, np.zeros(model.n_shape))
    expected = R.predict(arch, alpha, R.featurize(observation, model.n_joints))
    np.testing.assert_array_equal(seeded.params.beta, expected.beta)


# --- annotation ---


def test_annotate_dataset(model, observations, prior, tmp_path):
    blind = dataclasses.replace(
        observations[0], sample_id="blind",
        visibility=np.zeros(model.n_joints, dtype=bool))
    dataset = SimpleNamespace(samples=[observations[0], observations[1], blind])
    cfg = F.FitConfig(method="smplify", iters=2, lr_q=0.03)
    anns, summary = F.annotate_dataset(model, dataset, cfg, prior=prior,
                                       out_dir=tmp_path / "ann")
    assert [a.sample_id for a in anns] == [o.sample_id for o in observations[:2]]
    assert summary["n_annotated"] == 2
    assert summary["n_failed"] == 1
    assert summary["failures"][0]["sample_id"] == "blind"
    assert "mean_final_losses" in summary

    again = load_annotations(tmp_path / "ann")
    assert [a.sample_id for a in again] == [a.sample_id for a in anns]
    manifest = json.loads((tmp_path / "ann" / "manifest.json").read_text())
    assert manifest["version"] == "omrfit-ann-manifest/1"
    assert manifest["config_hash"] == cfg.config_hash()


# --- fit files ---


def test_fit_file_round_trip(model, observation, prior, tmp_path):
    cfg = F.FitConfig(method="smplify", iters=2, lr_q=0.03)
    res = F.fit_smplify(model, observation, cfg, prior=prior)
    F.save_fit(tmp_path / "fit.json", res)
    sid, params, doc = F.load_fit(tmp_path / "fit.json")
    assert sid == observation.sample_id
    np.testing.assert_allclose(params.beta, res.params.beta, atol=1e-12)
    np.testing.assert_allclose(params.theta, res.params.theta, atol=1e-12)
    assert doc["version"] == F.FIT_FORMAT

    fits = F.load_fits(tmp_path)
    assert set(fits) == {observation.sample_id}


def test_load_fit_rejects_bad_files(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        F.load_fit(tmp_path / "bad.json")
    (tmp_path / "bad.json").write_text(json.dumps({"version": "other/1"}))
    with pytest.raises(FormatError, match="version"):
        F.load_fit(tmp_path / "bad.json")
    with pytest.raises(IoError):
        F.load_fits(tmp_path / "nowhere")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DataError, match="no fit files"):
        F.load_fits(empty)


def test_load_fits_rejects_duplicate_sample(model, observation, prior, tmp_path):
    cfg = F.FitConfig(method="smplify", iters=1, lr_q=0.03)
    res = F.fit_smplify(model, observation, cfg, prior=prior)
    F.save_fit(tmp_path / "a.json", res)
    F.save_fit(tmp_path / "b.json", res)
    with pytest.raises(DataError, match="duplicate"):
        F.load_fits(tmp_path)
