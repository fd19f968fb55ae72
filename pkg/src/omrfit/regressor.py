"""Small MLP that maps an observation to mesh parameters.

Features are the visibility-masked 2D keypoints, the visibility flags, and a
16x16 block-mean pooling of the foreground mask. The network is a tanh MLP
whose output splits into (beta, theta, raw scale, trans); the camera scale
goes through softplus + 1e-3 so predictions always yield a valid camera, and
the shape head is tanh-bounded to ``beta_bound`` so predictions interpolate
within the training shape range instead of extrapolating beyond it.

Weights live in a flat :class:`ParamVector` so the same code path serves
plain prediction, the differentiable prediction used by the regressor-phase
objective, and supervised (pre/re)training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .body_model import MeshParams
from .errors import DataError, DimensionError, FormatError, IoError
from .optim import AdamState, adam_step

REGRESSOR_FORMAT = "omrfit-reg/1"
MASK_POOL = 16  # foreground mask is pooled to MASK_POOL x MASK_POOL block means
_SOFTPLUS_INV_ONE = 0.5413248546129181  # softplus(x) = 1 at this x


@dataclass(frozen=True)
class RegressorArch:
    n_features: int
    n_shape: int
    n_joints: int
    hidden: tuple = (64, 64)
    beta_bound: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "beta_bound", float(self.beta_bound))
        if self.n_features < 1 or self.n_shape < 1 or self.n_joints < 1:
            raise DimensionError("architecture sizes must be positive")
        if any(h < 1 for h in self.hidden):
            raise DimensionError("hidden widths must be positive")
        if not self.beta_bound > 0.0:
            raise DimensionError("beta_bound must be positive")

    @classmethod
    def for_model(cls, model, hidden=(64, 64), beta_bound=3.0):
        return cls(
            n_features=3 * model.n_joints + MASK_POOL * MASK_POOL,
            n_shape=model.n_shape,
            n_joints=model.n_joints,
            hidden=tuple(hidden),
            beta_bound=beta_bound,
        )

    @property
    def n_out(self):
        # beta + theta + raw scale + trans
        return self.n_shape + 3 * self.n_joints + 1 + 2

    def layout(self):
        widths = (self.n_features, *self.hidden, self.n_out)
        entries = []
        for i in range(len(widths) - 1):
            entries.append((f"w{i}", (widths[i], widths[i + 1])))
            entries.append((f"b{i}", (widths[i + 1],)))
        return ad.ParamLayout(tuple(entries))

    def to_dict(self):
        return {
            "n_features": self.n_features,
            "n_shape": self.n_shape,
            "n_joints": self.n_joints,
            "hidden": list(self.hidden),
            "beta_bound": self.beta_bound,
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                d["n_features"],
                d["n_shape"],
                d["n_joints"],
                tuple(d["hidden"]),
                d.get("beta_bound", 2.5),
            )
        except KeyError as e:
            raise FormatError(f"regressor arch missing field {e.args[0]!r}") from e


def featurize(obs, n_joints=None):
    """Observation -> feature vector (2K keypoints, K visibilities, 256 mask means).

    Invisible keypoints are zeroed. A missing mask contributes zeros. The mask
    must be square with side divisible by 16.
    """
    kp = np.asarray(obs.keypoints2d, dtype=np.float64).copy()
    vis = np.asarray(obs.visibility, dtype=bool).ravel()
    if kp.ndim != 2 or kp.shape[1] != 2 or vis.size != kp.shape[0]:
        raise DimensionError(f"bad keypoint/visibility shapes: {kp.shape}, {vis.shape}")
    if n_joints is not None and kp.shape[0] != n_joints:
        raise DimensionError(f"expected {n_joints} keypoints, got {kp.shape[0]}")
    kp[~vis] = 0.0
    mask = getattr(obs, "mask", None)
    if mask is None:
        pooled = np.zeros((MASK_POOL, MASK_POOL))
    else:
        mask = np.asarray(mask)
        h, w = mask.shape
        if h != w or h % MASK_POOL != 0:
            raise DataError(f"mask must be square with side divisible by {MASK_POOL}, got {mask.shape}")
        fg = (mask > 0).astype(np.float64)
        pooled = fg.reshape(MASK_POOL, h // MASK_POOL, MASK_POOL, w // MASK_POOL).mean(axis=(1, 3))
    return np.concatenate([kp.ravel(), vis.astype(np.float64), pooled.ravel()])


def init_alpha(arch, seed=0):
    """He-ish random init; final layer small and biased to predict scale 1."""
    rng = np.random.default_rng(seed)
    layout = arch.layout()
    pairs = []
    n_layers = len(arch.hidden) + 1
    for i in range(n_layers):
        fan_in, fan_out = layout.segment_shape(f"w{i}")
        w = rng.normal(size=(fan_in, fan_out)) / np.sqrt(fan_in)
        if i == n_layers - 1:
            w *= 0.05
        b = np.zeros(fan_out)
        if i == n_layers - 1:
            b[arch.n_shape + 3 * arch.n_joints] = _SOFTPLUS_INV_ONE
        pairs.append((f"w{i}", w))
        pairs.append((f"b{i}", b))
    return ad.ParamVector.concat(pairs)


def _mlp_batch(arch, segs, feats):
    """Differentiable MLP on a (B, F) feature batch -> (B, n_out) Var."""
    if feats.shape[1] != arch.n_features:
        raise DimensionError(f"regressor expects {arch.n_features} features, got {feats.shape[1]}")
    h = ad.asvar(np.asarray(feats, dtype=np.float64))
    n_layers = len(arch.hidden) + 1
    for i in range(n_layers):
        h = h @ segs[f"w{i}"] + segs[f"b{i}"]
        if i < n_layers - 1:
            h = ad.tanh(h)
    return h


def _split_single(arch, out):
    s, k = arch.n_shape, 3 * arch.n_joints
    b = arch.beta_bound
    flat = out.reshape((arch.n_out,))
    return {
        "beta": ad.tanh(flat[:s] * (1.0 / b)) * b,
        "theta": flat[s : s + k],
        "scale": ad.softplus(flat[s + k : s + k + 1]) + 1e-3,
        "trans": flat[s + k + 1 :],
    }


def predict_vars(arch, alpha_segs, features):
    """Differentiable single-observation prediction as named parameter Vars."""
    out = _mlp_batch(arch, alpha_segs, np.asarray(features, dtype=np.float64)[None, :])
    return _split_single(arch, out)


def predict(arch, alpha, features):
    """Plain prediction -> MeshParams (no graph)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.size != arch.n_features:
        raise DimensionError(f"regressor expects {arch.n_features} features, got {feats.size}")
    h = feats
    n_layers = len(arch.hidden) + 1
    for i in range(n_layers):
        h = h @ alpha.segment(f"w{i}") + alpha.segment(f"b{i}")
        if i < n_layers - 1:
            h = np.tanh(h)
    s, k = arch.n_shape, 3 * arch.n_joints
    raw_s = h[s + k]
    scale = float(np.logaddexp(0.0, raw_s) + 1e-3)
    beta = arch.beta_bound * np.tanh(h[:s] / arch.beta_bound)
    return MeshParams(beta=beta, theta=h[s : s + k], scale=scale, trans=h[s + k + 1 :])


def params_target(params):
    """Supervision vector [beta, theta, scale, trans] matching the output head."""
    return np.concatenate([params.beta, params.theta, [params.scale], params.trans])


def _batch_prediction(arch, segs, feats):
    out = _mlp_batch(arch, segs, feats)
    s, k = arch.n_shape, 3 * arch.n_joints
    beta = ad.tanh(out[:, :s] * (1.0 / arch.beta_bound)) * arch.beta_bound
    scale_col = ad.softplus(out[:, s + k : s + k + 1]) + 1e-3
    return ad.concatenate([beta, out[:, s : s + k], scale_col, out[:, s + k + 1 :]], axis=1)


def _train(arch, alpha, feats, targets, epochs, lr, seed, batch_size):
    """Adam on mean squared parameter error; returns (alpha, per-epoch losses)."""
    feats = np.asarray(feats, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if feats.shape[0] != targets.shape[0] or feats.shape[0] == 0:
        raise DataError("training needs matching, non-empty feature/target arrays")
    rng = np.random.default_rng(seed)
    state = AdamState.init(alpha.values.size, lr=lr)
    pv = alpha.copy()
    curve = []
    for _ in range(int(epochs)):
        perm = rng.permutation(feats.shape[0])
        batch_losses = []
        for lo in range(0, feats.shape[0], batch_size):
            idx = perm[lo : lo + batch_size]

            def objective(segs, idx=idx):
                pred = _batch_prediction(arch, segs, feats[idx])
                d = pred - targets[idx]
                return (d * d).mean()

            val, grad = ad.value_and_grad(objective, pv)
            batch_losses.append(val)
            new_vals, state = adam_step(state, pv.values, grad)
            pv = pv.replace(new_vals)
        curve.append(float(np.mean(batch_losses)))
    return pv, curve


def _gt_pairs(dataset):
    feats, targets = [], []
    for obs in dataset.samples:
        if obs.gt_params is None:
            raise DataError(f"sample {obs.sample_id!r} has no ground-truth parameters")
        feats.append(featurize(obs))
        targets.append(params_target(obs.gt_params))
    return feats, targets


def pretrain(model, dataset, *, arch=None, alpha=None, epochs=60, lr=1e-3, seed=0, batch_size=16):
    """Supervised fit of the regressor on ground-truth parameters.

    Returns (arch, trained alpha, per-epoch loss curve).
    """
    arch = arch or RegressorArch.for_model(model)
    alpha = alpha if alpha is not None else init_alpha(arch, seed)
    feats, targets = _gt_pairs(dataset)
    alpha, curve = _train(arch, alpha, feats, targets, epochs, lr, seed, batch_size)
    return arch, alpha, curve


def retrain(model, dataset, arch, alpha, *, epochs=60, lr=1e-3, seed=0, batch_size=16, mix=None):
    """Continue training on the dataset's annotations (fitted parameters).

    Samples without annotations are skipped. ``mix`` optionally appends the
    ground-truth pairs of a second dataset. Returns (arch, alpha, curve).
    """
    feats, targets = [], []
    for obs in dataset.samples:
        if obs.ann_params is None:
            continue
        feats.append(featurize(obs))
        targets.append(params_target(obs.ann_params))
    if not feats:
        raise DataError("retrain: dataset has no annotated samples")
    if mix is not None:
        mf, mt = _gt_pairs(mix)
        feats.extend(mf)
        targets.extend(mt)
    alpha, curve = _train(arch, alpha, feats, targets, epochs, lr, seed, batch_size)
    return arch, alpha, curve


def save_alpha(path, arch, alpha, seed=None):
    doc = {
        "version": REGRESSOR_FORMAT,
        "arch": arch.to_dict(),
        "seed": seed,
        "weights": alpha.values.tolist(),
    }
    try:
        with open(path, "w", encoding="ascii") as f:
            json.dump(doc, f)
    except OSError as e:
        raise IoError(f"cannot write regressor file {path}: {e}") from e


def load_alpha(path):
    """Read a regressor file -> (arch, alpha, seed)."""
    try:
        with open(path, "r", encoding="ascii") as f:
            raw = f.read()
    except OSError as e:
        raise IoError(f"cannot read regressor file {path}: {e}") from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise FormatError(f"regressor file is not valid JSON: {e.msg}", offset=e.pos) from e
    if not isinstance(doc, dict) or doc.get("version") != REGRESSOR_FORMAT:
        raise FormatError(f"expected version {REGRESSOR_FORMAT!r}, got {doc.get('version')!r}")
    arch = RegressorArch.from_dict(doc.get("arch", {}))
    weights = np.asarray(doc.get("weights", []), dtype=np.float64)
    layout = arch.layout()
    if weights.size != layout.total:
        raise FormatError(f"weight vector has {weights.size} entries, arch needs {layout.total}")
    return arch, ad.ParamVector(weights, layout), doc.get("seed")
