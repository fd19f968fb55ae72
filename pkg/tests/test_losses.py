"""Robust losses, prior, silhouette term, and the Q/P objectives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omrfit import autodiff as ad
from omrfit import losses as L
from omrfit import regressor as R
from omrfit.errors import ConfigError, DimensionError
from omrfit.fitting import MeshParams
from omrfit.renderer import RenderConfig


# --- geman_mcclure ---


def test_gm_half_sigma_squared_at_sigma():
    assert L.geman_mcclure(100.0, 100.0) == pytest.approx(5000.0, abs=1e-9)


def test_gm_is_quadratic_for_small_errors():
    e = 1e-3 * 0.78
    val = L.geman_mcclure(e, 0.78)
    assert val == pytest.approx(e**2, rel=1e-5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(1e-3, 1e3))
def test_gm_bounded_and_symmetric(err, sigma):
    val = L.geman_mcclure(err, sigma)
    assert 0.0 <= val < sigma**2 + 1e-12
    assert val == pytest.approx(L.geman_mcclure(-err, sigma), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e3, allow_nan=False), st.floats(1e-6, 1e3), st.floats(0.1, 10))
def test_gm_monotone_in_magnitude(err, step, sigma):
    assert L.geman_mcclure(err + step, sigma) >= L.geman_mcclure(err, sigma)


def test_gm_var_path_matches_array_path(rng):
    e = rng.normal(size=(5, 3))
    out = L.geman_mcclure(ad.Var(e), 0.78)
    assert isinstance(out, ad.Var)
    np.testing.assert_allclose(out.value, L.geman_mcclure(e, 0.78), atol=1e-14)


def test_gm_rejects_bad_sigma():
    with pytest.raises(ConfigError):
        L.geman_mcclure(1.0, 0.0)


# --- reprojection_loss ---


def test_reprojection_ignores_invisible():
    pred = np.array([[0.0, 0.0], [100.0, 100.0]])
    gt = np.zeros((2, 2))
    loss = L.reprojection_loss(pred, gt, [True, False])
    assert float(loss.value) == pytest.approx(0.0, abs=1e-15)


def test_reprojection_per_keypoint_vs_per_coord():
    sigma = 0.78
    pred = np.array([[3.0, 4.0]])
    gt = np.zeros((1, 2))
    per_kp = float(L.reprojection_loss(pred, gt, [True], sigma, "keypoint").value)
    per_coord = float(L.reprojection_loss(pred, gt, [True], sigma, "coord").value)
    s2 = sigma**2
    assert per_kp == pytest.approx(s2 * 25 / (s2 + 25), rel=1e-12)
    assert per_coord == pytest.approx(s2 * 9 / (s2 + 9) + s2 * 16 / (s2 + 16), rel=1e-12)


def test_reprojection_averages_over_visible():
    pred = np.array([[0.1, 0.0], [0.1, 0.0], [5.0, 5.0]])
    gt = np.zeros((3, 2))
    both = float(L.reprojection_loss(pred, gt, [True, True, False]).value)
    one = float(L.reprojection_loss(pred[:1], gt[:1], [True]).value)
    assert both == pytest.approx(one, rel=1e-12)


def test_reprojection_warns_when_nothing_visible():
    with pytest.warns(RuntimeWarning):
        loss = L.reprojection_loss(np.ones((2, 2)), np.zeros((2, 2)), [False, False])
    assert float(loss.value) == 0.0


def test_reprojection_validates_shapes():
    with pytest.raises(DimensionError):
        L.reprojection_loss(np.ones((2, 3)), np.ones((2, 3)), [True, True])
    with pytest.raises(DimensionError):
        L.reprojection_loss(np.ones((2, 2)), np.ones((2, 2)), [True])
    with pytest.raises(ConfigError):
        L.reprojection_loss(np.ones((2, 2)), np.ones((2, 2)), [True, True], per="pixel")


# --- pose prior ---


def test_pose_prior_zero_at_mean(rng):
    samples = rng.normal(size=(80, 48))
    prior = L.PosePrior.fit(samples, latent_dim=12)
    assert float(L.pose_prior_loss(prior.mean, prior).value) == pytest.approx(0.0, abs=1e-18)


def test_pose_prior_whitening_normalizes_training_energy(rng):
    # mean penalty over the fitting sample equals the latent dimension
    mixing = rng.normal(size=(48, 48)) * 0.3
    samples = rng.normal(size=(500, 48)) @ mixing + rng.normal(size=48)
    prior = L.PosePrior.fit(samples, latent_dim=12)
    vals = [float(L.pose_prior_loss(s, prior).value) for s in samples]
    assert np.mean(vals) == pytest.approx(prior.latent_dim, rel=1e-6)


def test_pose_prior_validation(rng):
    with pytest.raises(ConfigError):
        L.PosePrior.fit(np.zeros((1, 48)))
    with pytest.raises(ConfigError):
        L.PosePrior.fit(rng.normal(size=(10, 48)), latent_dim=0)
    prior = L.PosePrior.fit(rng.normal(size=(10, 48)))
    with pytest.raises(DimensionError):
        L.pose_prior_loss(np.zeros(47), prior)


# --- shape loss ---


def _stack(rng=None, fill=None):
    data = np.zeros((6, 8, 8))
    if fill is not None:
        data[:] = fill
    elif rng is not None:
        data = (rng.uniform(size=(6, 8, 8)) > 0.5).astype(np.float64)
    return data


def test_shape_loss_zero_on_identical(rng):
    stack = _stack(rng)
    stack[0, 0, 0] = 1.0  # ensure no all-empty ambiguity
    assert float(L.shape_loss(stack, stack).value) == pytest.approx(0.0, abs=1e-12)


def test_shape_loss_six_on_disjoint():
    pred = _stack()
    gt = _stack()
    pred[:, :4, :] = 1.0
    gt[:, 4:, :] = 1.0
    assert float(L.shape_loss(pred, gt).value) == pytest.approx(6.0, rel=1e-12)


def test_shape_loss_skips_channels_empty_in_both():
    pred = _stack()
    gt = _stack()
    pred[0, :2, :] = 1.0
    gt[0, :2, :] = 1.0
    # channels 1..5 empty on both sides: no contribution
    assert float(L.shape_loss(pred, gt).value) == pytest.approx(0.0, abs=1e-12)


def test_shape_loss_full_mismatch_for_one_sided_channel():
    pred = _stack()
    pred[2, 1:3, 1:3] = 1.0
    assert float(L.shape_loss(pred, _stack()).value) == pytest.approx(1.0, rel=1e-12)


def test_shape_loss_validates_shapes():
    with pytest.raises(DimensionError):
        L.shape_loss(np.zeros((5, 8, 8)), np.zeros((5, 8, 8)))
    with pytest.raises(DimensionError):
        L.shape_loss(np.zeros((6, 8, 8)), np.zeros((6, 4, 4)))


def test_shape_loss_gradient_matches_fd(rng):
    gt = (rng.uniform(size=(6, 4, 4)) > 0.5).astype(np.float64)
    pred0 = rng.uniform(0.2, 0.8, size=(6, 4, 4))
    params = ad.ParamVector.concat([("p", pred0)])

    def obj(segs):
        return L.shape_loss(segs["p"].reshape((6, 4, 4)), gt)

    report = ad.fd_check(obj, params, h=1e-6, coords=np.arange(0, 96, 7), tol=1e-5)
    assert report.max_rel_err < 1e-5, report


# --- anchor ---


def test_anchor_loss_zero_at_anchor(neutral):
    assert float(L.anchor_loss(neutral, neutral).value) == pytest.approx(0.0, abs=1e-15)


def test_anchor_loss_sums_squared_differences(model, rng):
    a = MeshParams(
        beta=rng.normal(size=model.n_shape),
        theta=rng.normal(size=3 * model.n_joints),
        scale=1.3,
        trans=rng.normal(size=2),
    )
    b = MeshParams(
        beta=rng.normal(size=model.n_shape),
        theta=rng.normal(size=3 * model.n_joints),
        scale=0.9,
        trans=rng.normal(size=2),
    )
    expected = (
        ((a.beta - b.beta) ** 2).sum()
        + ((a.theta - b.theta) ** 2).sum()
        + (a.scale - b.scale) ** 2
        + ((a.trans - b.trans) ** 2).sum()
    )
    assert float(L.anchor_loss(a, b).value) == pytest.approx(expected, rel=1e-12)


# --- weights ---


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        L.LossWeights(lambda_2d=-1.0)
    with pytest.raises(ConfigError):
        L.LossWeights(sigma=0.0)
    with pytest.raises(ConfigError):
        L.LossWeights(gm_per="pixel")
    w = L.LossWeights().with_(lambda_shape=2.0)
    assert w.lambda_shape == 2.0 and w.lambda_2d == 1.0


# --- objectives ---


@pytest.fixture(scope="module")
def prior(rng_module):
    return L.PosePrior.fit(rng_module.normal(scale=0.2, size=(60, 48)), latent_dim=12)


@pytest.fixture(scope="module")
def rng_module():
    return np.random.default_rng(17)


def _param_vector(model, rng):
    return ad.ParamVector.concat(
        [
            ("beta", 0.3 * rng.normal(size=model.n_shape)),
            ("theta", 0.1 * rng.normal(size=3 * model.n_joints)),
            ("scale", np.array([1.0])),
            ("trans", 0.05 * rng.normal(size=2)),
        ]
    )


def test_q_objective_requires_prior(model, observation):
    w = L.LossWeights(lambda_shape=0.0)
    with pytest.raises(ConfigError):
        L.q_objective(model, MeshParams.neutral(model.n_shape, model.n_joints), observation, None, w)


def test_q_objective_gradient_matches_fd(model, observation, prior, rng):
    w = L.LossWeights(lambda_shape=1.0)
    cfg = RenderConfig(resolution=32, gamma=200.0)
    pv = _param_vector(model, rng)

    def obj(segs):
        return L.q_objective(model, segs, observation, prior, w, cfg)

    coords = np.asarray([0, 5, 12, 30, 45, 58, 59, 60], dtype=int)
    report = ad.fd_check(obj, pv, h=1e-6, coords=coords, tol=1e-3)
    assert report.max_rel_err < 1e-3, report


def test_p_objective_anchor_shifts_value(model, observation, rng):
    arch = R.RegressorArch.for_model(model)
    alpha = R.init_alpha(arch, seed=4)
    w = L.LossWeights(lambda_shape=0.0, lambda_anchor=1.0)

    def run(anchor):
        def obj(segs):
            return L.p_objective(model, arch, segs, observation, w, anchor=anchor)

        val, _ = ad.value_and_grad(obj, alpha)
        return float(val)

    base = run(None)
    pred = R.predict(arch, alpha, R.featurize(observation))
    shifted = MeshParams(
        beta=pred.beta + 1.0, theta=pred.theta, scale=pred.scale, trans=pred.trans
    )
    with_anchor = run(shifted)
    assert with_anchor == pytest.approx(base + float(L.anchor_loss(pred, shifted).value), rel=1e-9)


def test_p_objective_gradient_matches_fd(model, observation):
    arch = R.RegressorArch.for_model(model)
    alpha = R.init_alpha(arch, seed=4)
    w = L.LossWeights(lambda_shape=1.0)
    cfg = RenderConfig(resolution=32, gamma=200.0)
    anchor = MeshParams.neutral(model.n_shape, model.n_joints)

    def obj(segs):
        return L.p_objective(model, arch, segs, observation, w, anchor=anchor, render_cfg=cfg)

    coords = np.arange(0, alpha.values.size, alpha.values.size // 7)
    report = ad.fd_check(obj, alpha, h=1e-6, coords=coords, tol=1e-3)
    assert report.max_rel_err < 1e-3, report


def test_loss_components_reports_each_term(model, observation, prior):
    w = L.LossWeights(lambda_shape=1.0)
    params = MeshParams.neutral(model.n_shape, model.n_joints)
    comps = L.loss_components(model, params, observation, prior, w)
    assert set(comps) == {"l2d", "pose_prior", "beta_reg", "shape"}
    assert comps["l2d"] >= 0.0 and comps["shape"] >= 0.0
    assert comps["beta_reg"] == pytest.approx(0.0, abs=1e-15)
