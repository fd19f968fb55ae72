"""Fitting objectives.

All loss functions build autodiff graphs and return a scalar :class:`Var`
(use ``.value`` for the plain number); inputs may be Vars or arrays. The two
phase objectives are:

* ``q_objective`` - optimized over mesh parameters: robust keypoint
  reprojection, a whitened pose prior, an L2 shape-coefficient regularizer,
  and optionally the per-part soft-IoU silhouette term.
* ``p_objective`` - optimized over regressor weights: reprojection of the
  regressor's prediction, optionally the silhouette term and a quadratic
  anchor pulling the prediction toward a previous mesh estimate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .body_model import MeshParams, forward_vars
from .errors import CameraError, ConfigError, DimensionError
from .renderer import N_PARTS, PartMaskStack, RenderConfig, rasterize_soft_vars


@dataclass(frozen=True)
class LossWeights:
    lambda_2d: float = 1.0
    lambda_theta: float = 1e-2
    lambda_beta: float = 1e-3
    lambda_shape: float = 1.0
    lambda_anchor: float = 1.0
    sigma: float = 0.78  # robust-loss scale in normalized image units
    gm_per: str = "keypoint"  # robustify per keypoint or per coordinate

    def __post_init__(self):
        for name in ("lambda_2d", "lambda_theta", "lambda_beta", "lambda_shape", "lambda_anchor"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.gm_per not in ("keypoint", "coord"):
            raise ConfigError(f"gm_per must be 'keypoint' or 'coord', got {self.gm_per!r}")

    def with_(self, **kw):
        return replace(self, **kw)


def geman_mcclure(err, sigma):
    """Geman-McClure penalty sigma^2 e^2 / (sigma^2 + e^2), elementwise.

    Bounded above by sigma^2; approximately quadratic for |e| << sigma.
    Accepts arrays (returns arrays) or Vars (returns Vars).
    """
    if not sigma > 0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    s2 = float(sigma) ** 2
    if isinstance(err, ad.Var):
        e2 = err * err
        return s2 * e2 / (s2 + e2)
    e2 = np.asarray(err, dtype=np.float64) ** 2
    return s2 * e2 / (s2 + e2)


def _gm_of_square(e2, sigma):
    """Geman-McClure from an already-squared residual (Var graph form)."""
    s2 = float(sigma) ** 2
    return s2 * e2 / (s2 + e2)


def reprojection_loss(pred2d, gt2d, visibility, sigma=0.78, per="keypoint"):
    """Robustified keypoint error, averaged over visible keypoints.

    ``per='keypoint'`` robustifies the 2-norm of each keypoint residual,
    ``per='coord'`` robustifies x and y independently and sums them. With no
    visible keypoint the loss is 0 and a RuntimeWarning is emitted.
    """
    pred = ad.asvar(pred2d)
    gt = np.asarray(gt2d, dtype=np.float64)
    vis = np.asarray(visibility, dtype=bool).ravel()
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise DimensionError(f"keypoint arrays must both be (r, 2), got {pred.shape} vs {gt.shape}")
    if vis.size != gt.shape[0]:
        raise DimensionError("visibility must have one entry per keypoint")
    n_vis = int(vis.sum())
    if n_vis == 0:
        warnings.warn("reprojection_loss: no visible keypoints", RuntimeWarning, stacklevel=2)
        return ad.asvar(0.0)
    diff = pred - gt
    if per == "keypoint":
        vals = _gm_of_square((diff * diff).sum(axis=1), sigma)
    elif per == "coord":
        vals = _gm_of_square(diff * diff, sigma).sum(axis=1)
    else:
        raise ConfigError(f"per must be 'keypoint' or 'coord', got {per!r}")
    return (vals * (vis.astype(np.float64) / n_vis)).sum()


@dataclass(frozen=True)
class PosePrior:
    """Whitened Gaussian pose prior: ||A (theta - mu)||^2.

    ``whiten`` maps pose space to a decorrelated, unit-variance latent, so
    the expected penalty over the training pose distribution equals the
    latent dimension.
    """

    mean: np.ndarray  # (3K,)
    whiten: np.ndarray  # (m, 3K)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).ravel())
        object.__setattr__(self, "whiten", np.asarray(self.whiten, dtype=np.float64))
        if self.whiten.ndim != 2 or self.whiten.shape[1] != self.mean.size:
            raise DimensionError("whitening matrix must be (m, 3K)")

    @property
    def latent_dim(self):
        return self.whiten.shape[0]

    @classmethod
    def fit(cls, theta_samples, latent_dim=12):
        """PCA-whitening fit on pose samples (M, 3K)."""
        samples = np.asarray(theta_samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 2:
            raise ConfigError("pose prior needs a (M >= 2, 3K) sample matrix")
        m = min(int(latent_dim), samples.shape[1])
        if m < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {latent_dim}")
        mean = samples.mean(axis=0)
        centered = samples - mean
        cov = centered.T @ centered / samples.shape[0]
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:m]
        lam = np.maximum(evals[order], 1e-12)
        whiten = (evecs[:, order] / np.sqrt(lam)).T
        return cls(mean=mean, whiten=whiten)


def pose_prior_loss(theta, prior):
    """Squared norm of the whitened pose: ||A (theta - mu)||^2."""
    theta = ad.asvar(theta)
    if theta.size != prior.mean.size:
        raise DimensionError(f"theta has {theta.size} entries, prior expects {prior.mean.size}")
    z = ad.einsum("ms,s->m", prior.whiten, theta - prior.mean)
    return (z * z).sum()


def _stack_data(stack):
    if isinstance(stack, PartMaskStack):
        return stack.data
    if isinstance(stack, ad.Var):
        return stack
    return np.asarray(stack, dtype=np.float64)


def shape_loss(pred_stack, gt_stack):
    """Sum over the six parts of (1 - soft IoU) against a binary target.

    Soft IoU uses sum(pred * gt) / sum(pred + gt - pred * gt) per channel.
    Channels empty in both prediction and target are skipped; a channel
    present in exactly one contributes its full mismatch.
    """
    pred = _stack_data(pred_stack)
    gt = _stack_data(gt_stack)
    if isinstance(gt, ad.Var):
        gt = gt.value
    pred_v = pred if isinstance(pred, ad.Var) else ad.asvar(pred)
    if pred_v.shape != gt.shape:
        raise DimensionError(f"mask stacks disagree: {pred_v.shape} vs {gt.shape}")
    if pred_v.shape[0] != N_PARTS:
        raise DimensionError(f"mask stacks must have {N_PARTS} channels")
    total = ad.asvar(0.0)
    for i in range(N_PARTS):
        chan = pred_v[i]
        target = gt[i]
        inter = (chan * target).sum()
        union = chan.sum() + float(target.sum()) - inter
        if union.value <= 0.0:
            continue  # part absent in both: perfect by convention
        total = total + (1.0 - inter / union)
    return total


def anchor_loss(params, anchor):
    """Squared distance between two full parameter sets (shape, pose, camera)."""
    segs = params if isinstance(params, dict) else _params_to_segs(params)
    ref = anchor if isinstance(anchor, MeshParams) else MeshParams(**anchor)
    total = ((segs["beta"] - ref.beta) ** 2).sum()
    total = total + ((segs["theta"] - ref.theta) ** 2).sum()
    total = total + ((segs["scale"] - np.array([ref.scale])) ** 2).sum()
    total = total + ((segs["trans"] - ref.trans) ** 2).sum()
    return total


def _params_to_segs(params):
    return {
        "beta": ad.asvar(params.beta),
        "theta": ad.asvar(params.theta),
        "scale": ad.asvar(np.array([params.scale])),
        "trans": ad.asvar(params.trans),
    }


def _gt_stack(obs):
    mask = np.asarray(obs.mask)
    return np.stack([(mask == d).astype(np.float64) for d in range(1, N_PARTS + 1)])


def _data_terms(model, segs, obs, weights, render_cfg):
    """Shared reprojection (+ optional silhouette) terms of both objectives."""
    scale = segs["scale"]
    if float(scale.value.ravel()[0]) <= 0.0:
        raise CameraError(f"camera scale must be positive, got {float(scale.value.ravel()[0])}")
    verts, joints = forward_vars(model, segs["beta"], segs["theta"])
    pred_kp = scale * joints[:, :2] + segs["trans"]
    l2d = reprojection_loss(pred_kp, obs.keypoints2d, obs.visibility, weights.sigma, weights.gm_per)
    l_shape = None
    if weights.lambda_shape > 0 and getattr(obs, "mask", None) is not None:
        cfg = render_cfg or RenderConfig(resolution=obs.mask.shape[0])
        if cfg.resolution != obs.mask.shape[0]:
            raise DimensionError(
                f"render resolution {cfg.resolution} does not match mask {obs.mask.shape}"
            )
        verts2d = scale * verts[:, :2] + segs["trans"]
        soft = rasterize_soft_vars(verts2d, model.faces, model.face_part, cfg)
        l_shape = shape_loss(soft, _gt_stack(obs))
    return l2d, l_shape


def q_objective(model, params, obs, prior, weights, render_cfg=None):
    """Mesh-phase objective over (beta, theta, scale, trans).

    lambda_2d * reprojection + lambda_theta * pose prior
    + lambda_beta * ||beta||^2 [+ lambda_shape * silhouette mismatch].
    """
    segs = params if isinstance(params, dict) else _params_to_segs(params)
    if prior is None and weights.lambda_theta > 0:
        raise ConfigError("q_objective needs a pose prior when lambda_theta > 0")
    l2d, l_shape = _data_terms(model, segs, obs, weights, render_cfg)
    total = weights.lambda_2d * l2d
    if weights.lambda_theta > 0:
        total = total + weights.lambda_theta * pose_prior_loss(segs["theta"], prior)
    if weights.lambda_beta > 0:
        total = total + weights.lambda_beta * (segs["beta"] * segs["beta"]).sum()
    if l_shape is not None:
        total = total + weights.lambda_shape * l_shape
    return total


def p_objective(model, arch, alpha_segs, obs, weights, anchor=None, render_cfg=None, features=None):
    """Regressor-phase objective over the regressor weights.

    The mesh parameters are the regressor's prediction on ``obs``;
    lambda_2d * reprojection [+ lambda_shape * silhouette]
    [+ lambda_anchor * squared distance to ``anchor`` when given].
    No pose prior or shape regularizer: those act only on mesh phases.
    """
    from .regressor import featurize, predict_vars

    feats = featurize(obs, model.n_joints) if features is None else features
    segs = predict_vars(arch, alpha_segs, feats)
    l2d, l_shape = _data_terms(model, segs, obs, weights, render_cfg)
    total = weights.lambda_2d * l2d
    if l_shape is not None:
        total = total + weights.lambda_shape * l_shape
    if anchor is not None:
        total = total + weights.lambda_anchor * anchor_loss(segs, anchor)
    return total


def loss_components(model, params, obs, prior, weights, render_cfg=None):
    """Plain-number breakdown of every loss term at fixed parameters."""
    segs = _params_to_segs(params)
    l2d, l_shape = _data_terms(model, segs, obs, weights, render_cfg)
    out = {
        "l2d": float(l2d.value),
        "pose_prior": float(pose_prior_loss(segs["theta"], prior).value) if prior else 0.0,
        "beta_reg": float((params.beta**2).sum()),
    }
    if l_shape is not None:
        out["shape"] = float(l_shape.value)
    return out
